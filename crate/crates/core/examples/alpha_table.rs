//! Tabulates the optimal value `α̃(φ)` of the simplex-constrained mean-variance
//! problem and the optimal weights, then reports where the active set changes.
//!
//!     cargo run --release --example alpha_table -- [out.csv]

use hjb_portfolio::alpha::{AlphaTable, QpSettings};
use hjb_portfolio::market::{dax6, MarketOptions};

fn main() -> hjb_portfolio::Result<()> {
    let market = dax6::market(MarketOptions::default());
    let table = AlphaTable::build(&market, &QpSettings::default())?;

    println!("{} nodes on [{}, {}]", table.len(), table.phi_min(), table.phi_max());
    print!("{:>6} {:>10} {:>10}", "phi", "alpha", "alpha'");
    for name in &table.asset_names {
        print!(" {name:>8}");
    }
    println!();
    for phi in [-1.0, 0.0, 1.0, 3.0, 6.0, 9.0, 12.0, 15.0] {
        let p = table.eval(phi)?;
        print!("{phi:>6} {:>10.5} {:>10.5}", p.alpha, p.alpha_prime);
        for w in &p.theta {
            print!(" {w:>8.4}");
        }
        println!();
    }

    let kinks = table.kink_nodes();
    println!("support changes near phi = {:?}", kinks.iter().map(|&i| table.phi_grid[i]).collect::<Vec<_>>());

    if let Some(path) = std::env::args().nth(1) {
        std::fs::write(&path, table.to_csv("alpha table, bundled six-asset market"))?;
        println!("wrote {path}");
    }
    Ok(())
}
