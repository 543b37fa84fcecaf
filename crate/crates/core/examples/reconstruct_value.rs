//! Rebuilds the value function from the risk-aversion field and checks the
//! result against a closed form and the HJB equation.
//!
//!     cargo run --release --example reconstruct_value

use hjb_portfolio::alpha::{AlphaTable, QpSettings};
use hjb_portfolio::market::{dax6, MarketOptions, MarketSpec};
use hjb_portfolio::pde::{self, BoundaryKind, GridSpec};
use hjb_portfolio::utility::UtilitySpec;
use hjb_portfolio::value::{self, check_hjb_residual};
use nalgebra::DMatrix;

fn main() -> hjb_portfolio::Result<()> {
    let grid = GridSpec::default();
    let times = value::reconstruction_times(grid.horizon, 0.05);
    let x0 = value::default_anchor(&grid);

    let market = dax6::market(MarketOptions::default());
    let table = AlphaTable::build(&market, &QpSettings::default())?;
    let spec = UtilitySpec::Cara { a: 9.0 };
    let field = pde::solve(&spec, &table, &market, &grid, BoundaryKind::RobinNeumann, &times)?;
    let vf = value::reconstruct(&field, &spec, &table, &market, x0)?;
    println!("anchor x0 = {x0:.4}");
    println!("{:>5} {:>14} {:>14}", "t", "a(t) = V(x0,t)", "b(t) = dV/dx");
    for j in (0..vf.t.len()).filter(|&j| vf.t[j].fract().abs() < 1e-9 && vf.t[j] as i64 % 2 == 0) {
        println!("{:>5.1} {:>14.6e} {:>14.6e}", vf.t[j], vf.a[j], vf.b[j]);
    }

    // One asset, no inflow: V(x, t) = -exp(-a x + a α̃(a) (T - t)).
    let single = MarketSpec::from_parts(
        vec![0.05],
        DMatrix::from_element(1, 1, 0.04),
        MarketOptions { epsilon: 0.0, ..Default::default() },
    )?;
    let t1 = AlphaTable::build(&single, &QpSettings::default())?;
    let u = UtilitySpec::Cara { a: 1.0 };
    let f1 = pde::solve(&u, &t1, &single, &grid, BoundaryKind::NeumannBoth, &times)?;
    let v1 = value::reconstruct(&f1, &u, &t1, &single, x0)?;
    let (alpha, _) = t1.value_and_slope(1.0)?;
    let j = v1.t.len() - 1;
    let worst = (0..grid.node_count())
        .map(|i| {
            let exact = -(-grid.x(i) + alpha * grid.horizon).exp();
            ((v1.v[j][i] - exact) / exact).abs()
        })
        .fold(0.0, f64::max);
    let res = check_hjb_residual(&v1, &t1, &single)?;
    println!("closed form at t = 0: worst relative error {worst:.2e}");
    println!("HJB residual: max {:.2e}, mean {:.2e} over {} points", res.max_abs, res.mean_abs, res.points);
    Ok(())
}
