//! Value function recovered from the risk-aversion field.
//!
//! For an anchor `x0`,
//!
//! ```text
//! V(x, t) = a(t) + b(t) ∫_{x0}^{x} exp(−∫_{x0}^{ξ} φ(η, t) dη) dξ
//! b(t)    = U′(x0) exp(−∫_t^T ω)
//! a(t)    = U(x0) − ∫_t^T γ b
//! γ(t)    = α(x0, t, φ(x0, t))
//! ω(t)    = ∂xα − α φ   at x0
//! ```
//!
//! Time integrals use the trapezoid rule over the stored layers. The inner
//! space integral uses the trapezoid rule on the grid; the outer one integrates
//! the exponential of the piecewise-linear inner integral exactly per cell.

use std::fmt::Write as _;

use crate::alpha::AlphaTable;
use crate::error::{Error, Result};
use crate::market::MarketSpec;
use crate::pde::{GridSpec, PhiField};
use crate::utility::UtilitySpec;

/// `V(x_i, t_j)` on the stored layers of a [`PhiField`].
#[derive(Debug, Clone, PartialEq)]
pub struct ValueField {
    pub grid: GridSpec,
    pub x0: f64,
    pub x0_index: usize,
    /// Calendar times `t = T − τ`, decreasing (first entry is `T`).
    pub t: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub gamma: Vec<f64>,
    pub omega: Vec<f64>,
    /// `v[j][i] = V(x_i, t_j)`.
    pub v: Vec<Vec<f64>>,
    /// `∂xV = b e^{−∫φ}` on the same nodes.
    pub dvdx: Vec<Vec<f64>>,
    pub warnings: Vec<String>,
}

/// Grid node nearest to zero log-wealth, the default anchor.
pub fn default_anchor(grid: &GridSpec) -> f64 {
    grid.x(grid.nearest_node(0.0))
}

/// Layer times for [`reconstruct`]: steps of 0.001 up to `τ = 1`, where the
/// field moves fastest near the terminal time, then steps of `dt`.
pub fn reconstruction_times(horizon: f64, dt: f64) -> Vec<f64> {
    let fine_end = horizon.min(1.0);
    let fine = (fine_end / 1e-3).round() as usize;
    let mut t: Vec<f64> = (0..=fine).map(|j| j as f64 * 1e-3).collect();
    let coarse = (horizon / dt).round() as usize;
    t.extend((0..=coarse).map(|j| j as f64 * dt).filter(|&v| v > fine_end + 1e-12));
    t
}

pub fn reconstruct(
    phi: &PhiField,
    spec: &UtilitySpec,
    table: &AlphaTable,
    market: &MarketSpec,
    x0: f64,
) -> Result<ValueField> {
    let grid = phi.grid;
    let idx = grid.nearest_node(x0);
    if (grid.x(idx) - x0).abs() > 1e-9 * (1.0 + x0.abs()) {
        return Err(Error::Input(format!(
            "anchor x0 = {x0} is not a grid node (nearest {})",
            grid.x(idx)
        )));
    }
    let layers = phi.tau.len();
    if layers < 2 || phi.tau[0] != 0.0 {
        return Err(Error::Input(
            "reconstruction needs the terminal layer and at least one more stored layer".into(),
        ));
    }
    let mut warnings = Vec::new();
    let coarsest = phi.tau.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    if coarsest > 0.1 + 1e-12 {
        warnings.push(format!(
            "stored layers are up to {coarsest} apart; time quadrature is coarse"
        ));
    }
    if (phi.tau[layers - 1] - grid.horizon).abs() > 1e-9 {
        warnings.push(format!(
            "last stored layer at tau = {} does not reach T = {}",
            phi.tau[layers - 1],
            grid.horizon
        ));
    }

    let h = grid.h;
    let m = grid.intervals();
    let inflow = market.epsilon * (-x0).exp();

    let mut gamma = Vec::with_capacity(layers);
    let mut omega = Vec::with_capacity(layers);
    for layer in &phi.values {
        let p0 = layer[idx];
        let dphi = if idx == 0 {
            (layer[1] - layer[0]) / h
        } else if idx == m {
            (layer[m] - layer[m - 1]) / h
        } else {
            (layer[idx + 1] - layer[idx - 1]) / (2.0 * h)
        };
        let (at, slope) = table.value_and_slope(p0)?;
        let alpha = at - inflow - market.r;
        let dx_alpha = inflow + slope * dphi;
        gamma.push(alpha);
        omega.push(dx_alpha - alpha * p0);
    }

    // Integrals from t to T become integrals over τ from 0.
    let mut b = Vec::with_capacity(layers);
    let mut a = Vec::with_capacity(layers);
    let mut w_int = 0.0;
    let mut gb_int = 0.0;
    let (u0, du0) = (spec.value(x0), spec.derivative(x0));
    for j in 0..layers {
        if j > 0 {
            let dt = phi.tau[j] - phi.tau[j - 1];
            w_int += 0.5 * dt * (omega[j] + omega[j - 1]);
        }
        b.push(du0 * (-w_int).exp());
        if j > 0 {
            let dt = phi.tau[j] - phi.tau[j - 1];
            gb_int += 0.5 * (gamma[j] + gamma[j - 1]) * exp_segment(b[j - 1], b[j], dt);
        }
        a.push(u0 - gb_int);
    }

    let mut v = Vec::with_capacity(layers);
    let mut dvdx = Vec::with_capacity(layers);
    for (j, layer) in phi.values.iter().enumerate() {
        let inner = cumulative_trapezoid(layer, h, idx);
        let outer = outer_integral(&inner, h, idx);
        v.push(outer.iter().map(|&o| a[j] + b[j] * o).collect());
        dvdx.push(inner.iter().map(|&s| b[j] * (-s).exp()).collect());
    }

    Ok(ValueField {
        grid,
        x0,
        x0_index: idx,
        t: phi.tau.iter().map(|tau| grid.horizon - tau).collect(),
        a,
        b,
        gamma,
        omega,
        v,
        dvdx,
        warnings,
    })
}

/// Integral over a step of length `dt` of a positive function that is
/// exponential between the end values `b0` and `b1`.
fn exp_segment(b0: f64, b1: f64, dt: f64) -> f64 {
    let d = (b0 / b1).ln();
    let factor = if d.abs() < 1e-12 { 1.0 - 0.5 * d } else { -(-d).exp_m1() / d };
    dt * b0 * factor
}

/// `∫_{x_anchor}^{x_i} f` by the trapezoid rule, signed.
fn cumulative_trapezoid(f: &[f64], h: f64, anchor: usize) -> Vec<f64> {
    let mut out = vec![0.0; f.len()];
    for i in anchor + 1..f.len() {
        out[i] = out[i - 1] + 0.5 * h * (f[i] + f[i - 1]);
    }
    for i in (0..anchor).rev() {
        out[i] = out[i + 1] - 0.5 * h * (f[i] + f[i + 1]);
    }
    out
}

/// `∫_{x_anchor}^{x_i} e^{−I(ξ)} dξ` with `I` linear on each cell.
fn outer_integral(inner: &[f64], h: f64, anchor: usize) -> Vec<f64> {
    // ∫ over one cell of e^{−(I_l + Δ s/h)} = h e^{−I_l} (1 − e^{−Δ})/Δ.
    let cell = |il: f64, ir: f64| {
        let d = ir - il;
        let factor = if d.abs() < 1e-12 { 1.0 - 0.5 * d } else { -(-d).exp_m1() / d };
        h * (-il).exp() * factor
    };
    let mut out = vec![0.0; inner.len()];
    for i in anchor + 1..inner.len() {
        out[i] = out[i - 1] + cell(inner[i - 1], inner[i]);
    }
    for i in (0..anchor).rev() {
        out[i] = out[i + 1] - cell(inner[i], inner[i + 1]);
    }
    out
}

/// Summary of `∂tV − α(x, t, −∂x²V/∂xV) ∂xV` over interior nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualReport {
    pub max_abs: f64,
    pub mean_abs: f64,
    /// Location of the largest residual as (layer, node).
    pub argmax: (usize, usize),
    pub points: usize,
}

/// Evaluates the transformed HJB residual by central differences.
///
/// `∂tV` comes from `V` on neighbouring layers. The risk aversion
/// `−∂x²V/∂xV = −∂x ln ∂xV` is a central difference of `ln ∂xV`.
pub fn check_hjb_residual(vf: &ValueField, table: &AlphaTable, market: &MarketSpec) -> Result<ResidualReport> {
    let layers = vf.t.len();
    if layers < 3 {
        return Err(Error::Input("HJB residual needs at least three stored layers".into()));
    }
    let h = vf.grid.h;
    let m = vf.grid.intervals();
    for (j, row) in vf.dvdx.iter().enumerate() {
        if let Some((i, &d)) = row.iter().enumerate().find(|(_, &d)| !(d > 0.0)) {
            return Err(Error::NotIncreasing {
                node: i,
                layer: j,
                value: d,
            });
        }
    }

    let mut max_abs = 0.0f64;
    let mut argmax = (0, 0);
    let mut sum = 0.0;
    let mut points = 0;
    for j in 1..layers - 1 {
        let dt = vf.t[j - 1] - vf.t[j + 1];
        for i in 1..m {
            let x = vf.grid.x(i);
            let vt = (vf.v[j - 1][i] - vf.v[j + 1][i]) / dt;
            let vx = vf.dvdx[j][i];
            let phi = -(vf.dvdx[j][i + 1].ln() - vf.dvdx[j][i - 1].ln()) / (2.0 * h);
            let phi = phi.clamp(table.phi_min(), table.phi_max());
            let (at, _) = table.value_and_slope(phi)?;
            let alpha = at - market.epsilon * (-x).exp() - market.r;
            let res = (vt - alpha * vx).abs();
            if res > max_abs {
                max_abs = res;
                argmax = (j, i);
            }
            sum += res;
            points += 1;
        }
    }
    Ok(ResidualReport {
        max_abs,
        mean_abs: sum / points.max(1) as f64,
        argmax,
        points,
    })
}

impl ValueField {
    /// Drops every stored layer whose calendar time fails `keep`.
    pub fn retain_layers(&mut self, keep: impl Fn(f64) -> bool) {
        let mask: Vec<bool> = self.t.iter().map(|&t| keep(t)).collect();
        let filter = |v: &mut Vec<f64>| {
            let mut it = mask.iter();
            v.retain(|_| *it.next().unwrap());
        };
        for v in [&mut self.t, &mut self.a, &mut self.b, &mut self.gamma, &mut self.omega] {
            filter(v);
        }
        let mut it = mask.iter();
        self.v.retain(|_| *it.next().unwrap());
        let mut it = mask.iter();
        self.dvdx.retain(|_| *it.next().unwrap());
    }

    /// `−∂x²V/∂xV` recovered from the reconstruction on interior nodes of layer `j`.
    pub fn recovered_phi(&self, j: usize) -> Vec<f64> {
        let h = self.grid.h;
        let d = &self.dvdx[j];
        (1..d.len() - 1)
            .map(|i| -(d[i + 1].ln() - d[i - 1].ln()) / (2.0 * h))
            .collect()
    }

    pub fn to_csv(&self, header: &str) -> String {
        let mut s = String::new();
        for line in header.lines() {
            let _ = writeln!(s, "# {line}");
        }
        s.push_str("t,x,V\n");
        let xs = self.grid.nodes();
        for (t, row) in self.t.iter().zip(&self.v) {
            for (x, v) in xs.iter().zip(row) {
                let _ = writeln!(s, "{t},{x},{v}");
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reconstruction_times_are_fine_then_coarse() {
        let t = reconstruction_times(10.0, 0.05);
        assert_eq!(t.len(), 1001 + 180);
        assert!(t.windows(2).all(|w| w[1] > w[0]));
        assert!((t[1000] - 1.0).abs() < 1e-12 && (t[1001] - 1.05).abs() < 1e-12);
        assert!((t[t.len() - 1] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn trapezoid_is_signed_from_anchor() {
        let f = vec![1.0, 2.0, 3.0, 4.0];
        let out = cumulative_trapezoid(&f, 0.5, 1);
        assert_eq!(out, vec![-0.75, 0.0, 1.25, 3.0]);
    }

    #[test]
    fn exp_segment_matches_closed_form() {
        let (rate, dt) = (0.3f64, 0.5);
        let exact = (1.0 - (-rate * dt).exp()) / rate;
        assert!((exp_segment(1.0, (-rate * dt).exp(), dt) - exact).abs() < 1e-15);
        assert_eq!(exp_segment(2.0, 2.0, 0.25), 0.5);
    }

    #[test]
    fn outer_integral_is_exact_for_linear_exponent() {
        let h = 0.1;
        let a = 3.0;
        let inner: Vec<f64> = (0..21).map(|i| a * (i as f64 - 5.0) * h).collect();
        let out = outer_integral(&inner, h, 5);
        for (i, o) in out.iter().enumerate() {
            let x = (i as f64 - 5.0) * h;
            let exact = (1.0 - (-a * x).exp()) / a;
            assert!((o - exact).abs() < 1e-14 * (1.0 + exact.abs()), "{i}: {o} vs {exact}");
        }
    }
}
