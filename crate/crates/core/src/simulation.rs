//! Euler–Maruyama paths of log-wealth under the optimal feedback weights.

use std::fmt::Write as _;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::alpha::AlphaTable;
use crate::error::{Error, Result};
use crate::market::{ControlledProcess, MarketSpec, RegularSavingProcess};
use crate::pde::PhiField;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub n_paths: usize,
    pub x0: f64,
    pub horizon: f64,
    /// Integration and rebalancing step.
    pub dt: f64,
    pub seed: u64,
    pub store_paths: bool,
    /// Paths `2p` and `2p + 1` share noise with opposite signs.
    pub antithetic: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_paths: 5000,
            x0: 0.0,
            horizon: 10.0,
            dt: 0.05,
            seed: 20_180_601,
            store_paths: false,
            antithetic: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_paths == 0 {
            return Err(Error::Config("n_paths must be >= 1".into()));
        }
        if !(self.dt > 0.0 && self.dt <= self.horizon) {
            return Err(Error::Config(format!(
                "dt = {} must lie in (0, T = {}]",
                self.dt, self.horizon
            )));
        }
        let ratio = self.horizon / self.dt;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::Config(format!(
                "T / dt = {ratio} is not an integer"
            )));
        }
        if self.antithetic && self.n_paths % 2 == 1 {
            return Err(Error::Config(format!(
                "antithetic sampling needs an even path count, got {}",
                self.n_paths
            )));
        }
        if !self.x0.is_finite() {
            return Err(Error::Config("x0 must be finite".into()));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }
}

/// Switches a configuration to antithetic pairs.
pub fn antithetic_pairs(cfg: SimConfig) -> Result<SimConfig> {
    if cfg.n_paths % 2 == 1 {
        return Err(Error::Config(format!(
            "antithetic sampling needs an even path count, got {}",
            cfg.n_paths
        )));
    }
    Ok(SimConfig {
        antithetic: true,
        ..cfg
    })
}

/// Standard normal draw determined by `(seed, stream, step)` alone.
///
/// Each stream is a ChaCha8 stream; step `s` reads the four 32-bit words at
/// position `4s` and maps them through Box–Muller.
#[derive(Debug, Clone)]
pub struct CounterNormal {
    rng: ChaCha8Rng,
}

impl CounterNormal {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng }
    }

    pub fn at(&mut self, step: u64) -> f64 {
        self.rng.set_word_pos(step as u128 * 4);
        let u1 = 1.0 - (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// Range of `φ` queried and worst feasibility defect of `θ` along one path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathStats {
    pub phi_min: f64,
    pub phi_max: f64,
    pub max_weight_defect: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationBatch {
    pub terminal_wealth: Vec<f64>,
    /// `paths[p][s]` is `x` at step `s`, present when requested.
    pub paths: Option<Vec<Vec<f64>>>,
    pub config: SimConfig,
    pub stats: Vec<PathStats>,
}

impl SimulationBatch {
    pub fn mean(&self) -> f64 {
        self.terminal_wealth.iter().sum::<f64>() / self.terminal_wealth.len() as f64
    }

    pub fn terminal_csv(&self, header: &str) -> String {
        let mut s = String::new();
        for line in header.lines() {
            let _ = writeln!(s, "# {line}");
        }
        for v in &self.terminal_wealth {
            let _ = writeln!(s, "{v}");
        }
        s
    }

    pub fn paths_csv(&self, header: &str) -> Option<String> {
        let paths = self.paths.as_ref()?;
        let mut s = String::new();
        for line in header.lines() {
            let _ = writeln!(s, "# {line}");
        }
        s.push_str("path,t,x\n");
        for (p, path) in paths.iter().enumerate() {
            for (step, x) in path.iter().enumerate() {
                let _ = writeln!(s, "{p},{},{x}", step as f64 * self.config.dt);
            }
        }
        Some(s)
    }
}

/// Simulates the regular-saving process under `θ̂(φ(x, T − t))`.
pub fn simulate(phi: &PhiField, table: &AlphaTable, market: &MarketSpec, cfg: &SimConfig) -> Result<SimulationBatch> {
    simulate_process(phi, table, &RegularSavingProcess::new(market), cfg)
}

/// Same as [`simulate`] for any drift/volatility model.
pub fn simulate_process<P: ControlledProcess>(
    phi: &PhiField,
    table: &AlphaTable,
    process: &P,
    cfg: &SimConfig,
) -> Result<SimulationBatch> {
    cfg.validate()?;
    if (phi.grid.horizon - cfg.horizon).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "simulation horizon {} differs from solved horizon {}",
            cfg.horizon, phi.grid.horizon
        )));
    }
    let steps = cfg.steps();
    let dt = cfg.horizon / steps as f64;
    let sqrt_dt = dt.sqrt();
    let n_assets = table.n_assets();

    let run_path = |p: usize| -> Result<(f64, Option<Vec<f64>>, PathStats)> {
        let (stream, sign) = if cfg.antithetic {
            ((p / 2) as u64, if p % 2 == 0 { 1.0 } else { -1.0 })
        } else {
            (p as u64, 1.0)
        };
        let mut noise = CounterNormal::new(cfg.seed, stream);
        let mut theta = vec![0.0; n_assets];
        let mut x = cfg.x0;
        let mut trace = cfg.store_paths.then(|| {
            let mut v = Vec::with_capacity(steps + 1);
            v.push(x);
            v
        });
        let mut stats = PathStats {
            phi_min: f64::INFINITY,
            phi_max: f64::NEG_INFINITY,
            max_weight_defect: 0.0,
        };
        for s in 0..steps {
            let t = s as f64 * dt;
            let level = phi.interpolate(x, cfg.horizon - t);
            stats.phi_min = stats.phi_min.min(level);
            stats.phi_max = stats.phi_max.max(level);
            table.theta_into(level, &mut theta)?;
            let defect = (theta.iter().sum::<f64>() - 1.0)
                .abs()
                .max(theta.iter().fold(0.0f64, |m, &v| m.max(-v)));
            stats.max_weight_defect = stats.max_weight_defect.max(defect);

            let drift = process.drift(x, t, &theta);
            let vol2 = process.vol2(x, t, &theta);
            let z = sign * noise.at(s as u64);
            x += drift * dt + (vol2.max(0.0)).sqrt() * sqrt_dt * z;
            if !x.is_finite() {
                return Err(Error::NonFinite {
                    path: p,
                    step: s,
                    value: x,
                });
            }
            if let Some(tr) = trace.as_mut() {
                tr.push(x);
            }
        }
        Ok((x, trace, stats))
    };

    let results: Vec<_> = (0..cfg.n_paths).into_par_iter().map(run_path).collect();

    let mut terminal_wealth = Vec::with_capacity(cfg.n_paths);
    let mut paths = cfg.store_paths.then(|| Vec::with_capacity(cfg.n_paths));
    let mut stats = Vec::with_capacity(cfg.n_paths);
    for r in results {
        let (x, trace, st) = r?;
        terminal_wealth.push(x);
        if let (Some(all), Some(tr)) = (paths.as_mut(), trace) {
            all.push(tr);
        }
        stats.push(st);
    }

    Ok(SimulationBatch {
        terminal_wealth,
        paths,
        config: *cfg,
        stats,
    })
}
