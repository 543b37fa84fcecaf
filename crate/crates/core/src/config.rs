//! Run configuration, read from a TOML file with one table per stage.
//!
//! Every key is optional; omitted keys take the defaults of the owning module.
//! Market file paths are resolved relative to the configuration file. When no
//! market files are given, the bundled six-asset DAX sample is used.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::alpha::QpSettings;
use crate::error::{Error, Result};
use crate::market::{dax6, MarketOptions, MarketSpec};
use crate::pde::{BoundaryKind, GridSpec};
use crate::simulation::SimConfig;
use crate::utility::UtilitySpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarketSection {
    pub mu: Option<PathBuf>,
    pub sigma: Option<PathBuf>,
    pub epsilon: f64,
    pub r: f64,
    pub degenerate_ok: bool,
}

impl Default for MarketSection {
    fn default() -> Self {
        let o = MarketOptions::default();
        Self {
            mu: None,
            sigma: None,
            epsilon: o.epsilon,
            r: o.r,
            degenerate_ok: o.degenerate_ok,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub x_left: f64,
    pub x_right: f64,
    pub h: f64,
    /// Time step as a multiple of `h²`.
    pub k_factor: f64,
    pub horizon: f64,
    pub boundary: Boundary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    #[default]
    Robin,
    Neumann,
}

impl From<Boundary> for BoundaryKind {
    fn from(b: Boundary) -> Self {
        match b {
            Boundary::Robin => BoundaryKind::RobinNeumann,
            Boundary::Neumann => BoundaryKind::NeumannBoth,
        }
    }
}

impl Default for GridSection {
    fn default() -> Self {
        let g = GridSpec::default();
        Self {
            x_left: g.x_left,
            x_right: g.x_right,
            h: g.h,
            k_factor: 0.05,
            horizon: g.horizon,
            boundary: Boundary::Robin,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QpSection {
    pub phi_min: f64,
    pub phi_max: f64,
    pub phi_step: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for QpSection {
    fn default() -> Self {
        let q = QpSettings::default();
        Self {
            phi_min: q.phi_min,
            phi_max: q.phi_max,
            phi_step: q.phi_step,
            tolerance: q.tolerance,
            max_iterations: q.max_iterations,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSection {
    pub n_paths: usize,
    pub x0: f64,
    pub dt: f64,
    pub seed: u64,
    pub store_paths: bool,
    pub antithetic: bool,
}

impl Default for SimulationSection {
    fn default() -> Self {
        let s = SimConfig::default();
        Self {
            n_paths: s.n_paths,
            x0: s.x0,
            dt: s.dt,
            seed: s.seed,
            store_paths: s.store_paths,
            antithetic: s.antithetic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSection {
    pub beta: f64,
}

impl Default for ReportSection {
    fn default() -> Self {
        Self { beta: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub cara_a: Vec<f64>,
    pub dara_a0: Vec<f64>,
    /// `a1 = a0 − dara_drop`.
    pub dara_drop: f64,
    pub x_star: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        let levels: Vec<f64> = (4..=12).map(f64::from).collect();
        Self {
            cara_a: levels.clone(),
            dara_a0: levels,
            dara_drop: 3.0,
            x_star: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub cache: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            cache: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub market: MarketSection,
    pub utility: UtilitySpec,
    pub grid: GridSection,
    pub qp: QpSection,
    pub simulation: SimulationSection,
    pub report: ReportSection,
    pub sweep: SweepSection,
    pub output: OutputSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            market: MarketSection::default(),
            utility: UtilitySpec::Cara { a: 9.0 },
            grid: GridSection::default(),
            qp: QpSection::default(),
            simulation: SimulationSection::default(),
            report: ReportSection::default(),
            sweep: SweepSection::default(),
            output: OutputSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file and resolves relative market paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.market.mu, &mut cfg.market.sigma].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn market_options(&self) -> MarketOptions {
        MarketOptions {
            epsilon: self.market.epsilon,
            r: self.market.r,
            degenerate_ok: self.market.degenerate_ok,
        }
    }

    pub fn qp_settings(&self) -> QpSettings {
        QpSettings {
            phi_min: self.qp.phi_min,
            phi_max: self.qp.phi_max,
            phi_step: self.qp.phi_step,
            tolerance: self.qp.tolerance,
            max_iterations: self.qp.max_iterations,
        }
    }

    pub fn grid_spec(&self) -> GridSpec {
        GridSpec {
            x_left: self.grid.x_left,
            x_right: self.grid.x_right,
            h: self.grid.h,
            k: self.grid.k_factor * self.grid.h * self.grid.h,
            horizon: self.grid.horizon,
        }
    }

    pub fn boundary(&self) -> BoundaryKind {
        self.grid.boundary.into()
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            n_paths: self.simulation.n_paths,
            x0: self.simulation.x0,
            horizon: self.grid.horizon,
            dt: self.simulation.dt,
            seed: self.simulation.seed,
            store_paths: self.simulation.store_paths,
            antithetic: self.simulation.antithetic,
        }
    }

    /// Checks every numeric field and that referenced files exist.
    pub fn validate(&self) -> Result<()> {
        match (&self.market.mu, &self.market.sigma) {
            (Some(mu), Some(sigma)) => {
                for p in [mu, sigma] {
                    if !p.is_file() {
                        return Err(Error::Config(format!("market file {} not found", p.display())));
                    }
                }
            }
            (None, None) => {}
            _ => return Err(Error::Config("give both market.mu and market.sigma or neither".into())),
        }
        self.utility.validate()?;
        self.qp_settings().validate()?;
        self.grid_spec().validate()?;
        self.sim_config().validate()?;
        if !(self.report.beta > 0.0 && self.report.beta < 1.0) {
            return Err(Error::Config(format!("beta must lie in (0, 1), got {}", self.report.beta)));
        }
        let (lo, hi) = self.utility.risk_aversion_range();
        if lo < self.qp.phi_min || hi > self.qp.phi_max {
            return Err(Error::Config(format!(
                "risk aversion range [{lo}, {hi}] exceeds the phi table [{}, {}]",
                self.qp.phi_min, self.qp.phi_max
            )));
        }
        for &a in &self.sweep.cara_a {
            UtilitySpec::cara(a)?;
        }
        for &a0 in &self.sweep.dara_a0 {
            UtilitySpec::dara(a0, a0 - self.sweep.dara_drop, self.sweep.x_star)?;
        }
        Ok(())
    }

    /// Raw market file contents, or the bundled sample.
    pub fn market_sources(&self) -> Result<(String, String)> {
        match (&self.market.mu, &self.market.sigma) {
            (Some(mu), Some(sigma)) => Ok((std::fs::read_to_string(mu)?, std::fs::read_to_string(sigma)?)),
            _ => Ok((dax6::MU_CSV.to_string(), dax6::SIGMA_CSV.to_string())),
        }
    }

    pub fn load_market(&self) -> Result<MarketSpec> {
        match (&self.market.mu, &self.market.sigma) {
            (Some(mu), Some(sigma)) => MarketSpec::load_csv(mu, sigma, self.market_options()),
            _ => Ok(dax6::market(self.market_options())),
        }
    }

    /// Content hash of the whole configuration plus market data.
    pub fn hash(&self) -> Result<String> {
        let (mu, sigma) = self.market_sources()?;
        let mut canonical = self.clone();
        canonical.market.mu = None;
        canonical.market.sigma = None;
        canonical.output = OutputSection::default();
        Ok(digest(&[canonical.to_toml().as_bytes(), mu.as_bytes(), sigma.as_bytes()]))
    }

    /// Key of the alpha table: market data and QP settings only.
    pub fn alpha_key(&self) -> Result<String> {
        let (mu, sigma) = self.market_sources()?;
        let qp = toml::to_string(&self.qp).expect("qp serializes");
        let flags = format!("degenerate_ok={}", self.market.degenerate_ok);
        Ok(digest(&[mu.as_bytes(), sigma.as_bytes(), qp.as_bytes(), flags.as_bytes()]))
    }

    /// Key of a PDE solve for `utility`.
    pub fn phi_key(&self, utility: &UtilitySpec, snapshot_times: &[f64]) -> Result<String> {
        let alpha = self.alpha_key()?;
        let grid = toml::to_string(&self.grid).expect("grid serializes");
        let extra = format!(
            "{}|{}|{}|{}",
            toml::to_string(utility).expect("utility serializes"),
            self.market.epsilon,
            self.market.r,
            alpha
        );
        let times: Vec<u8> = snapshot_times.iter().flat_map(|t| t.to_le_bytes()).collect();
        Ok(digest(&[grid.as_bytes(), extra.as_bytes(), &times]))
    }
}

fn digest(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}
