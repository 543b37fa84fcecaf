//! Simulates terminal log-wealth under the optimal feedback strategy.
//!
//!     cargo run --release --example simulate_wealth -- [risk_aversion] [paths]

use hjb_portfolio::alpha::{AlphaTable, QpSettings};
use hjb_portfolio::market::{dax6, MarketOptions};
use hjb_portfolio::pde::{self, BoundaryKind, GridSpec};
use hjb_portfolio::simulation::{simulate, SimConfig};
use hjb_portfolio::utility::UtilitySpec;

fn main() -> hjb_portfolio::Result<()> {
    let mut args = std::env::args().skip(1);
    let a: f64 = args.next().map_or(Ok(9.0), |s| s.parse()).expect("risk aversion must be a number");
    let n_paths: usize = args.next().map_or(Ok(5000), |s| s.parse()).expect("path count must be an integer");

    let market = dax6::market(MarketOptions::default());
    let table = AlphaTable::build(&market, &QpSettings::default())?;
    let grid = GridSpec::default();
    let cfg = SimConfig { n_paths, ..Default::default() };
    let spec = UtilitySpec::cara(a)?;
    let field = pde::solve(&spec, &table, &market, &grid, BoundaryKind::RobinNeumann, &pde::uniform_times(grid.horizon, cfg.dt))?;
    let batch = simulate(&field, &table, &market, &cfg)?;

    let mut sorted = batch.terminal_wealth.clone();
    sorted.sort_by(f64::total_cmp);
    let q = |p: f64| sorted[((p * (sorted.len() - 1) as f64).round()) as usize];
    println!("{} paths, a = {a}", batch.terminal_wealth.len());
    println!("mean x_T {:.4}, quartiles {:.4} / {:.4} / {:.4}", batch.mean(), q(0.25), q(0.5), q(0.75));
    let lo = batch.stats.iter().map(|s| s.phi_min).fold(f64::INFINITY, f64::min);
    let hi = batch.stats.iter().map(|s| s.phi_max).fold(f64::NEG_INFINITY, f64::max);
    println!("risk aversion seen along paths: [{lo:.3}, {hi:.3}]");
    Ok(())
}
