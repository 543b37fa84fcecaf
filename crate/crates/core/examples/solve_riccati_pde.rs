//! Solves for the risk-aversion field `φ(x, τ)` under a constant and a stepped
//! absolute risk aversion and prints both profiles at integer times.
//!
//!     cargo run --release --example solve_riccati_pde

use hjb_portfolio::alpha::{AlphaTable, QpSettings};
use hjb_portfolio::market::{dax6, MarketOptions};
use hjb_portfolio::pde::{self, BoundaryKind, GridSpec};
use hjb_portfolio::utility::UtilitySpec;

fn main() -> hjb_portfolio::Result<()> {
    let market = dax6::market(MarketOptions::default());
    let table = AlphaTable::build(&market, &QpSettings::default())?;
    let grid = GridSpec::default();
    let times = pde::uniform_times(grid.horizon, 1.0);
    let probes = [-4.0, -2.0, 0.0, 1.0, 2.0, 3.0, 5.0, 8.0];

    for spec in [UtilitySpec::Cara { a: 9.0 }, UtilitySpec::Dara { a0: 9.0, a1: 6.0, x_star: 2.0 }] {
        let field = pde::solve(&spec, &table, &market, &grid, BoundaryKind::RobinNeumann, &times)?;
        println!("\n{}: phi ranged over [{:.4}, {:.4}]", spec.label(), field.min, field.max);
        print!("{:>5}", "tau");
        for x in probes {
            print!(" {:>8}", format!("x={x}"));
        }
        println!();
        for (tau, row) in field.tau.iter().zip(&field.values) {
            print!("{tau:>5}");
            for x in probes {
                print!(" {:>8.4}", row[grid.nearest_node(x)]);
            }
            println!();
        }
    }
    Ok(())
}
