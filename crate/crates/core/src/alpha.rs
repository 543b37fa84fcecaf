//! Parametric simplex-constrained QP and its value-function table.
//!
//! For a risk-aversion level `φ` the program
//!
//! ```text
//! α̃(φ) = min_{θ ≥ 0, 1ᵀθ = 1}  −μᵀθ + (φ + 1)/2 · θᵀΣθ
//! ```
//!
//! has a unique minimizer `θ̂(φ)` whenever `φ > −1` and `Σ` is positive
//! definite. `α̃` is increasing and concave in `φ`, with `α̃′(φ) = ½ θ̂ᵀΣθ̂`.
//! The table stores `α̃`, `α̃′` and `θ̂` on a uniform `φ` grid.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::market::MarketSpec;

/// Settings for the parametric QP sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    pub phi_min: f64,
    pub phi_max: f64,
    pub phi_step: f64,
    /// Scaled KKT residual accepted at termination.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            phi_min: -1.0,
            phi_max: 15.0,
            phi_step: 0.005,
            tolerance: 1e-10,
            max_iterations: 500,
        }
    }
}

impl QpSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.phi_min < self.phi_max) {
            return Err(Error::Config(format!(
                "phi_min ({}) must be below phi_max ({})",
                self.phi_min, self.phi_max
            )));
        }
        if !(self.phi_step > 0.0) {
            return Err(Error::Config(format!("phi_step must be > 0, got {}", self.phi_step)));
        }
        if self.phi_min < -1.0 {
            return Err(Error::Config(format!(
                "phi_min = {} makes the QP non-convex (needs phi >= -1)",
                self.phi_min
            )));
        }
        if !(self.tolerance > 0.0) || self.max_iterations == 0 {
            return Err(Error::Config("solver tolerance and iteration cap must be positive".into()));
        }
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        ((self.phi_max - self.phi_min) / self.phi_step).round() as usize + 1
    }
}

/// Minimizer and optimal value of the QP at one `φ`.
#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub theta: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub kkt_residual: f64,
}

/// Objective `−μᵀθ + (φ+1)/2 · θᵀΣθ`.
pub fn qp_objective(market: &MarketSpec, phi: f64, theta: &[f64]) -> f64 {
    -market.mean_return(theta) + 0.5 * (phi + 1.0) * market.variance(theta)
}

pub fn solve_qp(market: &MarketSpec, phi: f64, settings: &QpSettings) -> Result<QpSolution> {
    solve_qp_warm(market, phi, settings, None)
}

/// Solves the QP at `phi`, starting from a feasible `warm` point when given.
pub fn solve_qp_warm(
    market: &MarketSpec,
    phi: f64,
    settings: &QpSettings,
    warm: Option<&[f64]>,
) -> Result<QpSolution> {
    if !phi.is_finite() || phi < settings.phi_min - 1e-12 {
        return Err(Error::PhiOutOfRange {
            phi,
            min: settings.phi_min,
            max: f64::INFINITY,
        });
    }
    let n = market.n_assets();
    let scale = phi + 1.0;

    if scale <= 0.0 {
        // Linear program: best vertex, lowest index on ties.
        let mut best = 0;
        for i in 1..n {
            if market.mu[i] > market.mu[best] {
                best = i;
            }
        }
        let mut theta = vec![0.0; n];
        theta[best] = 1.0;
        return Ok(QpSolution {
            value: qp_objective(market, phi, &theta),
            kkt_residual: 0.0,
            iterations: 0,
            theta,
        });
    }

    let q = &market.sigma * scale;
    let c = -&market.mu;
    let start = match warm {
        Some(w) if w.len() == n => w.to_vec(),
        _ => vec![1.0 / n as f64; n],
    };
    let (theta, iterations) = active_set(&q, &c, start, settings.tolerance, settings.max_iterations)
        .ok_or(Error::QpNonConvergence {
            phi,
            iterations: settings.max_iterations,
        })?;
    let kkt_residual = kkt_residual(&q, &c, &theta);
    if kkt_residual > settings.tolerance.sqrt() {
        return Err(Error::QpNonConvergence { phi, iterations });
    }
    Ok(QpSolution {
        value: qp_objective(market, phi, &theta),
        theta,
        iterations,
        kkt_residual,
    })
}

/// Primal active-set method for `min ½xᵀQx + cᵀx` over the unit simplex.
///
/// The working set holds indices pinned at zero; the equality constraint is
/// kept in every subproblem through its multiplier.
fn active_set(
    q: &DMatrix<f64>,
    c: &DVector<f64>,
    start: Vec<f64>,
    tol: f64,
    max_iter: usize,
) -> Option<(Vec<f64>, usize)> {
    let n = c.len();
    let mut x = start;
    for v in x.iter_mut() {
        if *v < 1e-14 {
            *v = 0.0;
        }
    }
    let total: f64 = x.iter().sum();
    if total <= 0.0 || !total.is_finite() {
        x = vec![1.0 / n as f64; n];
    } else {
        x.iter_mut().for_each(|v| *v /= total);
    }
    let mut pinned: Vec<bool> = x.iter().map(|&v| v == 0.0).collect();

    let gscale = 1.0 + c.amax() + q.amax();

    for iter in 0..max_iter {
        let free: Vec<usize> = (0..n).filter(|&i| !pinned[i]).collect();
        let (y, lambda) = solve_eqp(q, c, &free)?;

        let mut step_norm = 0.0f64;
        for (k, &i) in free.iter().enumerate() {
            step_norm = step_norm.max((y[k] - x[i]).abs());
        }

        if step_norm <= 1e-13 {
            for (k, &i) in free.iter().enumerate() {
                x[i] = y[k];
            }
            // Multipliers of pinned bounds: z_i = g_i − λ must be nonnegative.
            let mut worst = None;
            let mut worst_z = -tol * gscale;
            for i in (0..n).filter(|&i| pinned[i]) {
                let gi = (q.row(i) * DVector::from_column_slice(&x))[0] + c[i];
                let z = gi - lambda;
                if z < worst_z {
                    worst_z = z;
                    worst = Some(i);
                }
            }
            match worst {
                None => return Some((x, iter + 1)),
                Some(i) => pinned[i] = false,
            }
        } else {
            let mut t = 1.0;
            let mut blocking = None;
            for (k, &i) in free.iter().enumerate() {
                let p = y[k] - x[i];
                if p < 0.0 {
                    let ratio = x[i] / -p;
                    if ratio < t {
                        t = ratio;
                        blocking = Some(i);
                    }
                }
            }
            for (k, &i) in free.iter().enumerate() {
                x[i] += t * (y[k] - x[i]);
            }
            if let Some(i) = blocking {
                x[i] = 0.0;
                pinned[i] = true;
            }
            for v in x.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
    }
    None
}

/// Equality-constrained subproblem on the free indices.
///
/// Returns the free-block minimizer and the multiplier `λ` of `1ᵀx = 1`
/// (stationarity `Q_FF y + c_F = λ 1`).
fn solve_eqp(q: &DMatrix<f64>, c: &DVector<f64>, free: &[usize]) -> Option<(Vec<f64>, f64)> {
    let m = free.len();
    if m == 0 {
        return None;
    }
    let mut kkt = DMatrix::zeros(m + 1, m + 1);
    let mut rhs = DVector::zeros(m + 1);
    for (a, &i) in free.iter().enumerate() {
        for (b, &j) in free.iter().enumerate() {
            kkt[(a, b)] = q[(i, j)];
        }
        kkt[(a, m)] = -1.0;
        kkt[(m, a)] = 1.0;
        rhs[a] = -c[i];
    }
    rhs[m] = 1.0;
    let sol = kkt.lu().solve(&rhs)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some((sol.as_slice()[..m].to_vec(), sol[m]))
}

/// Scaled KKT residual of a feasible point.
fn kkt_residual(q: &DMatrix<f64>, c: &DVector<f64>, x: &[f64]) -> f64 {
    let xv = DVector::from_column_slice(x);
    let g = q * &xv + c;
    let lambda = g.min();
    let mut res = (x.iter().sum::<f64>() - 1.0).abs();
    for (i, &xi) in x.iter().enumerate() {
        res = res.max((-xi).max(0.0));
        if xi > 0.0 {
            res = res.max(xi * (g[i] - lambda));
        }
    }
    res / (1.0 + g.amax())
}

/// Interpolated table values at one `φ`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaPoint {
    pub alpha: f64,
    pub alpha_prime: f64,
    pub theta: Vec<f64>,
}

/// Tabulated `α̃`, `α̃′` and `θ̂` over a uniform `φ` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaTable {
    pub phi_grid: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_prime: Vec<f64>,
    /// One simplex weight vector per node.
    pub theta_hat: Vec<Vec<f64>>,
    pub asset_names: Vec<String>,
    phi_min: f64,
    phi_step: f64,
}

/// Nodes per independently warm-started chunk. Fixed so the table does not
/// depend on the number of worker threads.
const SWEEP_CHUNK: usize = 256;

impl AlphaTable {
    pub fn build(market: &MarketSpec, settings: &QpSettings) -> Result<Self> {
        settings.validate()?;
        let nodes = settings.node_count();
        let phis: Vec<f64> = (0..nodes)
            .map(|i| settings.phi_min + i as f64 * settings.phi_step)
            .collect();

        let chunks: Vec<Result<Vec<QpSolution>>> = phis
            .par_chunks(SWEEP_CHUNK)
            .map(|chunk| {
                let mut out = Vec::with_capacity(chunk.len());
                let mut warm: Option<Vec<f64>> = None;
                for &phi in chunk {
                    let sol = solve_qp_warm(market, phi, settings, warm.as_deref())?;
                    warm = Some(sol.theta.clone());
                    out.push(sol);
                }
                Ok(out)
            })
            .collect();

        let mut alpha = Vec::with_capacity(nodes);
        let mut alpha_prime = Vec::with_capacity(nodes);
        let mut theta_hat = Vec::with_capacity(nodes);
        for chunk in chunks {
            for sol in chunk? {
                alpha.push(sol.value);
                alpha_prime.push(0.5 * market.variance(&sol.theta));
                theta_hat.push(sol.theta);
            }
        }

        Ok(Self {
            phi_grid: phis,
            alpha,
            alpha_prime,
            theta_hat,
            asset_names: market.asset_names.clone(),
            phi_min: settings.phi_min,
            phi_step: settings.phi_step,
        })
    }

    pub fn len(&self) -> usize {
        self.phi_grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi_grid.is_empty()
    }

    pub fn n_assets(&self) -> usize {
        self.theta_hat.first().map_or(0, Vec::len)
    }

    pub fn phi_min(&self) -> f64 {
        self.phi_grid[0]
    }

    pub fn phi_max(&self) -> f64 {
        *self.phi_grid.last().unwrap()
    }

    pub fn phi_step(&self) -> f64 {
        self.phi_step
    }

    fn locate(&self, phi: f64) -> Result<(usize, f64)> {
        let (lo, hi) = (self.phi_min(), self.phi_max());
        let slack = 1e-12 * (1.0 + hi.abs());
        if !(phi >= lo - slack && phi <= hi + slack) {
            return Err(Error::PhiOutOfRange {
                phi,
                min: lo,
                max: hi,
            });
        }
        let last = self.len() - 1;
        if last == 0 {
            return Ok((0, 0.0));
        }
        let s = ((phi - self.phi_min) / self.phi_step).clamp(0.0, last as f64);
        let mut i = (s.floor() as usize).min(last - 1);
        let mut w = s - i as f64;
        // Snap onto nodes to return their values verbatim.
        if self.phi_grid[i] == phi {
            w = 0.0;
        } else if self.phi_grid[i + 1] == phi {
            i += 1;
            w = 0.0;
            if i == last {
                return Ok((last, 0.0));
            }
        }
        Ok((i, w))
    }

    /// `(α̃, α̃′)` by linear interpolation, without the weight vector.
    #[inline]
    pub fn value_and_slope(&self, phi: f64) -> Result<(f64, f64)> {
        let (i, w) = self.locate(phi)?;
        if w == 0.0 {
            return Ok((self.alpha[i], self.alpha_prime[i]));
        }
        let a = self.alpha[i] + w * (self.alpha[i + 1] - self.alpha[i]);
        let ap = self.alpha_prime[i] + w * (self.alpha_prime[i + 1] - self.alpha_prime[i]);
        Ok((a, ap))
    }

    /// Writes the interpolated, feasible weights at `phi` into `out`.
    pub fn theta_into(&self, phi: f64, out: &mut [f64]) -> Result<()> {
        let (i, w) = self.locate(phi)?;
        if w == 0.0 {
            out.copy_from_slice(&self.theta_hat[i]);
            return Ok(());
        }
        let (lo, hi) = (&self.theta_hat[i], &self.theta_hat[i + 1]);
        let mut total = 0.0;
        for k in 0..out.len() {
            let v = (lo[k] + w * (hi[k] - lo[k])).max(0.0);
            out[k] = v;
            total += v;
        }
        out.iter_mut().for_each(|v| *v /= total);
        Ok(())
    }

    pub fn eval(&self, phi: f64) -> Result<AlphaPoint> {
        let (alpha, alpha_prime) = self.value_and_slope(phi)?;
        let mut theta = vec![0.0; self.n_assets()];
        self.theta_into(phi, &mut theta)?;
        Ok(AlphaPoint {
            alpha,
            alpha_prime,
            theta,
        })
    }

    /// Nodes whose support (set of held assets) differs from a neighbour's.
    pub fn kink_nodes(&self) -> Vec<usize> {
        let support = |t: &[f64]| t.iter().map(|&v| v > 1e-12).collect::<Vec<_>>();
        let supports: Vec<_> = self.theta_hat.iter().map(|t| support(t)).collect();
        (0..self.len())
            .filter(|&i| {
                (i > 0 && supports[i - 1] != supports[i])
                    || (i + 1 < self.len() && supports[i + 1] != supports[i])
            })
            .collect()
    }

    /// Second differences of `α̃` along the grid (length `len − 2`).
    pub fn second_differences(&self) -> Vec<f64> {
        self.alpha
            .windows(3)
            .map(|w| w[2] - 2.0 * w[1] + w[0])
            .collect()
    }

    pub fn to_csv(&self, header: &str) -> String {
        let mut s = String::new();
        for line in header.lines() {
            let _ = writeln!(s, "# {line}");
        }
        s.push_str("phi,alpha,alpha_prime");
        for k in 1..=self.n_assets() {
            let _ = write!(s, ",theta_{k}");
        }
        s.push('\n');
        for i in 0..self.len() {
            let _ = write!(s, "{},{},{}", self.phi_grid[i], self.alpha[i], self.alpha_prime[i]);
            for v in &self.theta_hat[i] {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }

    /// Parses a table written by [`AlphaTable::to_csv`].
    pub fn from_csv(text: &str, path: &Path) -> Result<Self> {
        let perr = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
        let (hline, header) = lines.next().ok_or_else(|| perr(1, "empty table".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.len() < 4 || cols[..3] != ["phi", "alpha", "alpha_prime"] {
            return Err(perr(hline + 1, format!("unexpected header '{header}'")));
        }
        let n = cols.len() - 3;
        let (mut phi, mut alpha, mut alpha_prime, mut theta) = (vec![], vec![], vec![], vec![]);
        for (idx, line) in lines {
            let vals = line
                .split(',')
                .map(|c| c.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| perr(idx + 1, e.to_string()))?;
            if vals.len() != n + 3 {
                return Err(perr(idx + 1, format!("expected {} columns", n + 3)));
            }
            phi.push(vals[0]);
            alpha.push(vals[1]);
            alpha_prime.push(vals[2]);
            theta.push(vals[3..].to_vec());
        }
        if phi.len() < 2 {
            return Err(perr(hline + 1, "table needs at least two nodes".into()));
        }
        let step = (phi[phi.len() - 1] - phi[0]) / (phi.len() - 1) as f64;
        if phi.windows(2).any(|w| ((w[1] - w[0]) - step).abs() > 1e-9 * (1.0 + step)) {
            return Err(perr(hline + 1, "phi grid is not uniform".into()));
        }
        Ok(Self {
            phi_min: phi[0],
            phi_step: step,
            phi_grid: phi,
            alpha,
            alpha_prime,
            theta_hat: theta,
            asset_names: (1..=n).map(|k| format!("theta_{k}")).collect(),
        })
    }
}
