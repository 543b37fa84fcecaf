//! Semi-implicit finite-volume solver for the Riccati-transformed HJB equation.
//!
//! In forward time `τ = T − t` the risk-aversion field `φ(x, τ)` solves
//!
//! ```text
//! ∂τ φ = ∂x² A + ∂x B + C,   A = α(x, φ),  B = −α(x, φ) φ,  C = 0
//! ```
//!
//! with `α(x, φ) = α̃(φ) − ε e^{−x} − r`. Integrating over cells `(x_{i−}, x_{i+})`
//! and freezing the flux coefficients on the old layer gives one tridiagonal
//! system per time step:
//!
//! ```text
//! −λ D₊ φ_{i+1} + (1 + λ(D₊ + D₋)) φ_i − λ D₋ φ_{i−1}
//!     = (k/h)(E₊ − E₋ + F₊ − F₋) + k C_i + φ_i^old,     λ = k/h²
//! ```
//!
//! where `D = ∂φ α`, `E = ∂x α = ε e^{−x}` and `F = B`, all taken at cell faces
//! from the arithmetic mean of the two neighbouring nodes.

use std::fmt::Write as _;

use crate::alpha::AlphaTable;
use crate::error::{Error, Result};
use crate::market::MarketSpec;
use crate::utility::UtilitySpec;

/// Spatial and temporal discretization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub x_left: f64,
    /// Requested right bound; the last node is the first one at or beyond it.
    pub x_right: f64,
    pub h: f64,
    pub k: f64,
    pub horizon: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        let h = 0.05;
        Self {
            x_left: 0.01f64.ln(),
            x_right: 10.0,
            h,
            k: 0.05 * h * h,
            horizon: 10.0,
        }
    }
}

impl GridSpec {
    /// Same domain with spatial step `h` and the matching `k = 0.05 h²`.
    pub fn with_step(self, h: f64) -> Self {
        Self {
            h,
            k: 0.05 * h * h,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x_left < self.x_right) {
            return Err(Error::Config(format!(
                "x_left ({}) must be below x_right ({})",
                self.x_left, self.x_right
            )));
        }
        if !(self.h > 0.0 && self.k > 0.0 && self.horizon > 0.0) {
            return Err(Error::Config("h, k and T must be positive".into()));
        }
        if self.intervals() < 2 {
            return Err(Error::Config("grid needs at least three nodes".into()));
        }
        Ok(())
    }

    /// Number of cells between the first and last node.
    pub fn intervals(&self) -> usize {
        ((self.x_right - self.x_left) / self.h - 1e-9).ceil().max(0.0) as usize
    }

    pub fn node_count(&self) -> usize {
        self.intervals() + 1
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x_left + i as f64 * self.h
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.node_count()).map(|i| self.x(i)).collect()
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.k).round() as usize
    }

    /// Effective time step `T / steps`.
    pub fn dt(&self) -> f64 {
        self.horizon / self.steps() as f64
    }

    pub fn nearest_node(&self, x: f64) -> usize {
        (((x - self.x_left) / self.h).round().max(0.0) as usize).min(self.intervals())
    }
}

/// Boundary treatment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BoundaryKind {
    /// `∂xφ = 1 + φ` at the left end, `∂xφ = 0` at the right end.
    #[default]
    RobinNeumann,
    /// Zero slope at both ends; for inflow-free fixtures.
    NeumannBoth,
}

/// Stored layers of `φ(x, τ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiField {
    pub grid: GridSpec,
    /// Forward times of the stored layers, increasing, starting at 0.
    pub tau: Vec<f64>,
    /// `values[j][i] = φ(x_i, tau[j])`.
    pub values: Vec<Vec<f64>>,
    /// Smallest and largest value over every computed layer.
    pub min: f64,
    pub max: f64,
}

impl PhiField {
    /// A field constant in space and time. Useful for fixtures.
    pub fn constant(grid: GridSpec, value: f64, tau: Vec<f64>) -> Self {
        let n = grid.node_count();
        Self {
            grid,
            values: vec![vec![value; n]; tau.len()],
            tau,
            min: value,
            max: value,
        }
    }

    pub fn nearest_layer(&self, tau: f64) -> usize {
        match self
            .tau
            .binary_search_by(|t| t.partial_cmp(&tau).unwrap_or(std::cmp::Ordering::Less))
        {
            Ok(j) => j,
            Err(0) => 0,
            Err(j) if j >= self.tau.len() => self.tau.len() - 1,
            Err(j) => {
                if tau - self.tau[j - 1] <= self.tau[j] - tau {
                    j - 1
                } else {
                    j
                }
            }
        }
    }

    /// Linear in `x` on the nearest stored layer; `x` is clamped to the grid.
    pub fn interpolate(&self, x: f64, tau: f64) -> f64 {
        let layer = &self.values[self.nearest_layer(tau)];
        let g = &self.grid;
        let last = g.intervals();
        let s = ((x - g.x_left) / g.h).clamp(0.0, last as f64);
        let i = (s.floor() as usize).min(last - 1);
        let w = s - i as f64;
        layer[i] + w * (layer[i + 1] - layer[i])
    }

    pub fn to_csv(&self, header: &str) -> String {
        let mut s = String::new();
        for line in header.lines() {
            let _ = writeln!(s, "# {line}");
        }
        s.push_str("tau,x,phi\n");
        let xs = self.grid.nodes();
        for (tau, layer) in self.tau.iter().zip(&self.values) {
            for (x, v) in xs.iter().zip(layer) {
                let _ = writeln!(s, "{tau},{x},{v}");
            }
        }
        s
    }

    /// Parses a field written by [`PhiField::to_csv`] for a known grid.
    pub fn from_csv(text: &str, grid: GridSpec, path: &std::path::Path) -> Result<Self> {
        let perr = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let n = grid.node_count();
        let mut tau: Vec<f64> = Vec::new();
        let mut values: Vec<Vec<f64>> = Vec::new();
        let mut header_seen = false;
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if !header_seen {
                if line != "tau,x,phi" {
                    return Err(perr(idx + 1, format!("unexpected header '{line}'")));
                }
                header_seen = true;
                continue;
            }
            let cells: Vec<f64> = line
                .split(',')
                .map(|c| c.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| perr(idx + 1, e.to_string()))?;
            if cells.len() != 3 {
                return Err(perr(idx + 1, "expected 3 columns".into()));
            }
            if tau.last() != Some(&cells[0]) {
                tau.push(cells[0]);
                values.push(Vec::with_capacity(n));
            }
            let layer = values.last_mut().unwrap();
            if (grid.x(layer.len()) - cells[1]).abs() > 1e-9 {
                return Err(perr(idx + 1, format!("x = {} off the grid", cells[1])));
            }
            layer.push(cells[2]);
        }
        if values.is_empty() || values.iter().any(|l| l.len() != n) {
            return Err(perr(1, format!("every layer needs {n} nodes")));
        }
        let (min, max) = values
            .iter()
            .map(|l| extremes(l))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), (c, d)| (a.min(c), b.max(d)));
        Ok(Self {
            grid,
            tau,
            values,
            min,
            max,
        })
    }
}

/// Forward times `0, dt, 2dt, …, T`.
pub fn uniform_times(horizon: f64, dt: f64) -> Vec<f64> {
    let n = (horizon / dt).round() as usize;
    (0..=n).map(|j| j as f64 * dt).collect()
}

/// Initial layer `φ(x_i, 0) = −U″(x_i)/U′(x_i)`.
pub fn terminal_condition(spec: &UtilitySpec, grid: &GridSpec, table: &AlphaTable) -> Result<Vec<f64>> {
    let layer: Vec<f64> = grid.nodes().iter().map(|&x| spec.risk_aversion(x)).collect();
    for &v in &layer {
        if v < table.phi_min() || v > table.phi_max() {
            return Err(Error::PhiOutOfRange {
                phi: v,
                min: table.phi_min(),
                max: table.phi_max(),
            });
        }
    }
    Ok(layer)
}

/// Reaction term `C(x, τ, φ)`; zero for the portfolio problem.
pub type SourceTerm<'a> = &'a (dyn Fn(f64, f64, f64) -> f64 + Sync);

/// Time stepper bound to one table, market and grid.
pub struct PdeSolver<'a> {
    table: &'a AlphaTable,
    grid: GridSpec,
    bc: BoundaryKind,
    epsilon: f64,
    r: f64,
    source: Option<SourceTerm<'a>>,
    // ε e^{−x} at faces, fixed over time.
    inflow_face: Vec<f64>,
    x_face: Vec<f64>,
}

/// Scratch buffers reused across steps.
#[derive(Debug, Default, Clone)]
pub struct Workspace {
    d: Vec<f64>,
    flux: Vec<f64>,
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
    rhs: Vec<f64>,
    cprime: Vec<f64>,
}

impl<'a> PdeSolver<'a> {
    pub fn new(table: &'a AlphaTable, market: &MarketSpec, grid: GridSpec, bc: BoundaryKind) -> Result<Self> {
        grid.validate()?;
        let faces = grid.intervals();
        let x_face: Vec<f64> = (0..faces).map(|f| grid.x(f) + 0.5 * grid.h).collect();
        let inflow_face = x_face.iter().map(|&x| market.epsilon * (-x).exp()).collect();
        Ok(Self {
            table,
            grid,
            bc,
            epsilon: market.epsilon,
            r: market.r,
            source: None,
            inflow_face,
            x_face,
        })
    }

    pub fn with_source(mut self, source: SourceTerm<'a>) -> Self {
        self.source = Some(source);
        self
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// Advances `layer` from `tau` to `tau + k`, writing into `out`.
    pub fn step_into(&self, layer: &[f64], tau: f64, out: &mut Vec<f64>, ws: &mut Workspace) -> Result<()> {
        let g = &self.grid;
        let m = g.intervals();
        let n = m + 1;
        if layer.len() != n {
            return Err(Error::Dimension(format!("layer has {} nodes, grid has {n}", layer.len())));
        }
        let lambda = g.k / (g.h * g.h);
        let ratio = g.k / g.h;

        ws.d.resize(m, 0.0);
        ws.flux.resize(m, 0.0);
        for f in 0..m {
            let phi_face = 0.5 * (layer[f] + layer[f + 1]);
            let (at, slope) = self.table.value_and_slope(phi_face).map_err(|e| match e {
                Error::PhiOutOfRange { min, max, .. } => Error::MaximumPrinciple {
                    value: phi_face,
                    node: f,
                    tau,
                    min,
                    max,
                },
                other => other,
            })?;
            let alpha = at - self.inflow_face[f] - self.r;
            ws.d[f] = slope;
            // E + F at the face.
            ws.flux[f] = self.inflow_face[f] - alpha * phi_face;
        }

        for v in [&mut ws.lower, &mut ws.diag, &mut ws.upper, &mut ws.rhs] {
            v.resize(n, 0.0);
        }
        match self.bc {
            BoundaryKind::RobinNeumann => {
                ws.diag[0] = 1.0;
                ws.upper[0] = -1.0 / (1.0 + g.h);
                ws.rhs[0] = -g.h / (1.0 + g.h);
            }
            BoundaryKind::NeumannBoth => {
                ws.diag[0] = 1.0;
                ws.upper[0] = -1.0;
                ws.rhs[0] = 0.0;
            }
        }
        ws.lower[0] = 0.0;
        for i in 1..m {
            let (dm, dp) = (ws.d[i - 1], ws.d[i]);
            ws.lower[i] = -lambda * dm;
            ws.upper[i] = -lambda * dp;
            ws.diag[i] = 1.0 + lambda * (dp + dm);
            let mut rhs = ratio * (ws.flux[i] - ws.flux[i - 1]) + layer[i];
            if let Some(c) = self.source {
                rhs += g.k * c(g.x(i), tau, layer[i]);
            }
            ws.rhs[i] = rhs;
        }
        ws.lower[m] = -1.0;
        ws.diag[m] = 1.0;
        ws.upper[m] = 0.0;
        ws.rhs[m] = 0.0;

        for i in 0..n {
            if ws.diag[i].abs() + 1e-12 < ws.lower[i].abs() + ws.upper[i].abs() {
                return Err(Error::NotDiagonallyDominant { row: i, tau });
            }
        }

        out.resize(n, 0.0);
        thomas(&ws.lower, &ws.diag, &ws.upper, &ws.rhs, &mut ws.cprime, out);

        let (lo, hi) = (self.table.phi_min(), self.table.phi_max());
        for (i, &v) in out.iter().enumerate() {
            if !(v >= lo && v <= hi) {
                return Err(Error::MaximumPrinciple {
                    value: v,
                    node: i,
                    tau: tau + g.k,
                    min: lo,
                    max: hi,
                });
            }
        }
        Ok(())
    }

    pub fn step(&self, layer: &[f64], tau: f64) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        self.step_into(layer, tau, &mut out, &mut Workspace::default())?;
        Ok(out)
    }

    /// Marches from `initial` at `τ = 0` to `τ = T`, storing the layers nearest
    /// to each of `snapshot_times`.
    pub fn run(&self, initial: Vec<f64>, snapshot_times: &[f64]) -> Result<PhiField> {
        let g = &self.grid;
        let steps = g.steps();
        let dt = g.dt();
        for &t in snapshot_times {
            if !(t >= -1e-12 && t <= g.horizon + 1e-9) {
                return Err(Error::Config(format!("snapshot time {t} outside [0, {}]", g.horizon)));
            }
        }
        let mut wanted: Vec<usize> = snapshot_times
            .iter()
            .map(|&t| ((t / dt).round() as usize).min(steps))
            .collect();
        wanted.sort_unstable();
        wanted.dedup();

        let mut tau = Vec::with_capacity(wanted.len());
        let mut values = Vec::with_capacity(wanted.len());
        let mut next = wanted.iter().peekable();

        let (mut min, mut max) = extremes(&initial);
        let mut cur = initial;
        let mut buf = Vec::with_capacity(cur.len());
        let mut ws = Workspace::default();

        for j in 0..=steps {
            if next.peek() == Some(&&j) {
                next.next();
                tau.push(j as f64 * dt);
                values.push(cur.clone());
            }
            if j == steps {
                break;
            }
            self.step_into(&cur, j as f64 * dt, &mut buf, &mut ws)?;
            std::mem::swap(&mut cur, &mut buf);
            let (lo, hi) = extremes(&cur);
            min = min.min(lo);
            max = max.max(hi);
        }

        Ok(PhiField {
            grid: *g,
            tau,
            values,
            min,
            max,
        })
    }

    /// Total face flux `E + F` of a layer, for conservation checks.
    pub fn face_flux(&self, layer: &[f64]) -> Result<Vec<f64>> {
        (0..self.x_face.len())
            .map(|f| {
                let phi = 0.5 * (layer[f] + layer[f + 1]);
                let (at, _) = self.table.value_and_slope(phi)?;
                let inflow = self.epsilon * (-self.x_face[f]).exp();
                Ok(inflow - (at - inflow - self.r) * phi)
            })
            .collect()
    }
}

fn extremes(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)))
}

/// Solves a tridiagonal system by forward elimination and back substitution.
///
/// `lower[0]` and `upper[n−1]` are ignored.
pub fn thomas(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64], cprime: &mut Vec<f64>, out: &mut [f64]) {
    let n = diag.len();
    cprime.resize(n, 0.0);
    cprime[0] = upper[0] / diag[0];
    out[0] = rhs[0] / diag[0];
    for i in 1..n {
        let denom = diag[i] - lower[i] * cprime[i - 1];
        cprime[i] = if i + 1 < n { upper[i] / denom } else { 0.0 };
        out[i] = (rhs[i] - lower[i] * out[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        out[i] -= cprime[i] * out[i + 1];
    }
}

/// Terminal condition plus a full forward solve.
pub fn solve(
    spec: &UtilitySpec,
    table: &AlphaTable,
    market: &MarketSpec,
    grid: &GridSpec,
    bc: BoundaryKind,
    snapshot_times: &[f64],
) -> Result<PhiField> {
    let solver = PdeSolver::new(table, market, *grid, bc)?;
    let initial = terminal_condition(spec, grid, table)?;
    solver.run(initial, snapshot_times)
}
