//! Loads a market from CSV (or the bundled six-asset data) and prints a summary.
//!
//!     cargo run --example load_market
//!     cargo run --example load_market -- mu.csv sigma.csv

use std::path::Path;

use hjb_portfolio::market::{dax6, MarketOptions, MarketSpec};

fn main() -> hjb_portfolio::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let market = match args.as_slice() {
        [mu, sigma] => MarketSpec::load_csv(Path::new(mu), Path::new(sigma), MarketOptions::default())?,
        [] => dax6::market(MarketOptions::default()),
        _ => {
            eprintln!("usage: load_market [MU_CSV SIGMA_CSV]");
            std::process::exit(2);
        }
    };

    println!("{} assets, smallest covariance eigenvalue {:.3e}", market.n_assets(), market.min_eigenvalue());
    println!("{:<10} {:>10} {:>10}", "asset", "mean", "stdev");
    for (i, name) in market.asset_names.iter().enumerate() {
        println!("{name:<10} {:>10.4} {:>10.4}", market.mu[i], market.sigma[(i, i)].sqrt());
    }
    let n = market.n_assets();
    let equal = vec![1.0 / n as f64; n];
    println!(
        "equal weights: mean {:.4}, variance {:.5}",
        market.mean_return(&equal),
        market.variance(&equal)
    );
    Ok(())
}
