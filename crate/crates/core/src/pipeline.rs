//! Stage orchestration: alpha table → PDE → value function → simulation → report.
//!
//! Every file written carries a `#` header with the software version, the
//! configuration hash and the seed. The alpha table and PDE solutions are
//! cached under `<out>/cache/` keyed by a content hash of their inputs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::alpha::AlphaTable;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::market::MarketSpec;
use crate::pde::{self, PhiField};
use crate::risk::{self, fmt_opt, RiskReport};
use crate::simulation::{self, SimulationBatch};
use crate::utility::UtilitySpec;
use crate::value;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// What a command did, for the caller to print or assert on.
#[derive(Debug, Default, Clone)]
pub struct StageLog {
    pub alpha_cache_hit: bool,
    pub phi_cache_hits: usize,
    pub files: Vec<PathBuf>,
    pub notes: Vec<String>,
}

/// A validated configuration bound to its market data and output directory.
pub struct Pipeline {
    cfg: RunConfig,
    market: MarketSpec,
    hash: String,
    out_dir: PathBuf,
    cache: bool,
}

impl Pipeline {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let market = cfg.load_market().map_err(|e| e.in_stage("market"))?;
        let hash = cfg.hash()?;
        let out_dir = cfg.output.dir.clone();
        let cache = cfg.output.cache;
        Ok(Self {
            cfg,
            market,
            hash,
            out_dir,
            cache,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn market(&self) -> &MarketSpec {
        &self.market
    }

    pub fn out_dir(&self) -> &Path {
        &self.out_dir
    }

    pub fn header(&self) -> String {
        format!(
            "hjb-portfolio {VERSION}\nconfig {}\nseed {}",
            self.hash, self.cfg.simulation.seed
        )
    }

    fn write(&self, name: &str, content: &str, log: &mut StageLog) -> Result<PathBuf> {
        fs::create_dir_all(&self.out_dir)?;
        let path = self.out_dir.join(name);
        fs::write(&path, content)?;
        log.files.push(path.clone());
        Ok(path)
    }

    fn cache_path(&self, name: &str) -> PathBuf {
        self.out_dir.join("cache").join(name)
    }

    fn store_cache(&self, name: &str, content: &str) -> Result<()> {
        let path = self.cache_path(name);
        fs::create_dir_all(path.parent().unwrap())?;
        fs::write(path, content)?;
        Ok(())
    }

    /// Builds the alpha table or loads it from the cache.
    pub fn alpha_table(&self, log: &mut StageLog) -> Result<AlphaTable> {
        let key = self.cfg.alpha_key()?;
        let name = format!("alpha-{key}.csv");
        let path = self.cache_path(&name);
        if self.cache && path.is_file() {
            let text = fs::read_to_string(&path)?;
            if let Ok(table) = AlphaTable::from_csv(&text, &path) {
                log.alpha_cache_hit = true;
                return Ok(table);
            }
        }
        let table = AlphaTable::build(&self.market, &self.cfg.qp_settings())
            .map_err(|e| e.in_stage("alpha"))?;
        self.store_cache(&name, &table.to_csv(&format!("alpha cache {key}")))?;
        Ok(table)
    }

    /// Solves the PDE for `utility`, storing a layer at every simulation step.
    pub fn phi_field(&self, table: &AlphaTable, utility: &UtilitySpec, log: &mut StageLog) -> Result<PhiField> {
        let grid = self.cfg.grid_spec();
        self.phi_field_at(table, utility, &pde::uniform_times(grid.horizon, self.cfg.simulation.dt), log)
    }

    /// Solves the PDE for `utility`, storing the layers nearest to `times`.
    pub fn phi_field_at(
        &self,
        table: &AlphaTable,
        utility: &UtilitySpec,
        times: &[f64],
        log: &mut StageLog,
    ) -> Result<PhiField> {
        let grid = self.cfg.grid_spec();
        let key = self.cfg.phi_key(utility, times)?;
        let name = format!("phi-{key}.csv");
        let path = self.cache_path(&name);
        if self.cache && path.is_file() {
            let text = fs::read_to_string(&path)?;
            if let Ok(field) = PhiField::from_csv(&text, grid, &path) {
                log.phi_cache_hits += 1;
                return Ok(field);
            }
        }
        let field = pde::solve(utility, table, &self.market, &grid, self.cfg.boundary(), times)
            .map_err(|e| e.in_stage("pde"))?;
        self.store_cache(&name, &field.to_csv(&format!("phi cache {key}")))?;
        Ok(field)
    }

    pub fn cmd_alpha(&self) -> Result<StageLog> {
        let mut log = StageLog::default();
        let table = self.alpha_table(&mut log)?;
        let header = self.header();
        self.write("alpha_table.csv", &table.to_csv(&header), &mut log)?;
        self.write("alpha_plot.csv", &alpha_plot_csv(&table, &header), &mut log)?;
        let kinks = table.kink_nodes().len();
        log.notes.push(format!(
            "{} nodes on [{}, {}], {kinks} nodes at support changes",
            table.len(),
            table.phi_min(),
            table.phi_max()
        ));
        Ok(log)
    }

    /// Alpha table, PDE solution, value function and weight profiles.
    pub fn cmd_solve(&self) -> Result<(StageLog, AlphaTable, PhiField)> {
        let mut log = StageLog::default();
        let table = self.alpha_table(&mut log)?;
        let field = self.phi_field(&table, &self.cfg.utility, &mut log)?;
        let header = self.header();
        self.write("phi.csv", &field.to_csv(&header), &mut log)?;

        let x0 = value::default_anchor(&field.grid);
        let dt = self.cfg.simulation.dt;
        let dense = self.phi_field_at(
            &table,
            &self.cfg.utility,
            &value::reconstruction_times(field.grid.horizon, dt),
            &mut log,
        )?;
        let mut vf = value::reconstruct(&dense, &self.cfg.utility, &table, &self.market, x0)
            .map_err(|e| e.in_stage("value"))?;
        log.notes.extend(vf.warnings.iter().cloned());
        vf.retain_layers(|t| ((field.grid.horizon - t) / dt - ((field.grid.horizon - t) / dt).round()).abs() < 1e-6);
        self.write("value.csv", &vf.to_csv(&header), &mut log)?;

        let horizon = field.grid.horizon;
        let taus = [0.0, 1.0_f64.min(horizon), 0.5 * horizon];
        self.write("weights.csv", &weights_csv(&field, &table, &taus, &header)?, &mut log)?;
        log.notes.push(format!("phi range over all steps [{}, {}]", field.min, field.max));
        Ok((log, table, field))
    }

    pub fn cmd_simulate(&self) -> Result<(StageLog, SimulationBatch)> {
        let (mut log, table, field) = self.cmd_solve()?;
        let batch = simulation::simulate(&field, &table, &self.market, &self.cfg.sim_config())
            .map_err(|e| e.in_stage("simulate"))?;
        let header = self.header();
        self.write("terminal_wealth.csv", &batch.terminal_csv(&header), &mut log)?;
        if let Some(paths) = batch.paths_csv(&header) {
            self.write("paths.csv", &paths, &mut log)?;
        }
        Ok((log, batch))
    }

    pub fn cmd_pipeline(&self) -> Result<(StageLog, RiskReport)> {
        let (mut log, batch) = self.cmd_simulate()?;
        let rep = risk::report(&batch.terminal_wealth, self.cfg.report.beta, self.market.r)
            .map_err(|e| e.in_stage("report"))?;
        self.write("report.csv", &rep.to_csv(&self.header()), &mut log)?;
        Ok((log, rep))
    }

    /// One solve, simulation and report per sweep entry, `jobs` entries at a time.
    pub fn cmd_sweep(&self, jobs: usize) -> Result<(StageLog, SweepResult)> {
        let mut log = StageLog::default();
        let table = self.alpha_table(&mut log)?;
        let s = &self.cfg.sweep;
        let mut entries: Vec<UtilitySpec> = s.cara_a.iter().map(|&a| UtilitySpec::Cara { a }).collect();
        entries.extend(s.dara_a0.iter().map(|&a0| UtilitySpec::Dara {
            a0,
            a1: a0 - s.dara_drop,
            x_star: s.x_star,
        }));

        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        let sim = self.cfg.sim_config();
        let beta = self.cfg.report.beta;
        let outcomes: Vec<(Result<SweepRow>, StageLog)> = pool.install(|| {
            entries
                .par_iter()
                .map(|u| {
                    let mut entry_log = StageLog::default();
                    let row = self.phi_field(&table, u, &mut entry_log).and_then(|field| {
                        let batch = simulation::simulate(&field, &table, &self.market, &sim)
                            .map_err(|e| e.in_stage("simulate"))?;
                        let report = risk::report(&batch.terminal_wealth, beta, self.market.r)
                            .map_err(|e| e.in_stage("report"))?;
                        Ok(SweepRow { utility: *u, report })
                    });
                    (row, entry_log)
                })
                .collect()
        });

        let mut rows = Vec::new();
        let mut first_err = None;
        for (row, entry_log) in outcomes {
            log.phi_cache_hits += entry_log.phi_cache_hits;
            match row {
                Ok(r) => rows.push(r),
                Err(e) => {
                    first_err.get_or_insert(e);
                }
            }
        }
        let result = SweepResult { rows };
        let header = self.header();
        self.write("sweep_cara.csv", &result.cara_csv(&header), &mut log)?;
        self.write("sweep_dara.csv", &result.dara_csv(&header), &mut log)?;
        self.write("sweep_checks.csv", &result.checks_csv(&header), &mut log)?;
        match first_err {
            Some(e) => Err(e.in_stage("sweep")),
            None => Ok((log, result)),
        }
    }
}

/// `phi, alpha, alpha_prime, alpha_second_diff` where the last column is the
/// central difference of `alpha_prime`.
pub fn alpha_plot_csv(table: &AlphaTable, header: &str) -> String {
    let mut s = String::new();
    for line in header.lines() {
        let _ = writeln!(s, "# {line}");
    }
    s.push_str("phi,alpha,alpha_prime,alpha_second_diff\n");
    let n = table.len();
    let step = table.phi_step();
    for i in 0..n {
        let second = if i == 0 || i + 1 == n {
            "NA".to_string()
        } else {
            ((table.alpha_prime[i + 1] - table.alpha_prime[i - 1]) / (2.0 * step)).to_string()
        };
        let _ = writeln!(
            s,
            "{},{},{},{second}",
            table.phi_grid[i], table.alpha[i], table.alpha_prime[i]
        );
    }
    s
}

/// Optimal weights `θ̂(φ(x, τ))` along `x` at the requested forward times.
pub fn weights_csv(field: &PhiField, table: &AlphaTable, taus: &[f64], header: &str) -> Result<String> {
    let mut s = String::new();
    for line in header.lines() {
        let _ = writeln!(s, "# {line}");
    }
    s.push_str("tau,x");
    for name in &table.asset_names {
        let _ = write!(s, ",{name}");
    }
    s.push('\n');
    let mut theta = vec![0.0; table.n_assets()];
    for &tau in taus {
        let j = field.nearest_layer(tau);
        for (i, x) in field.grid.nodes().iter().enumerate() {
            table.theta_into(field.values[j][i], &mut theta)?;
            let _ = write!(s, "{},{x}", field.tau[j]);
            for v in &theta {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
    }
    Ok(s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub utility: UtilitySpec,
    pub report: RiskReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

/// Number of strict decreases along a sequence.
pub fn inversions(values: &[f64]) -> usize {
    values.windows(2).filter(|w| w[1] < w[0]).count()
}

impl SweepResult {
    pub fn cara(&self) -> Vec<(f64, RiskReport)> {
        self.rows
            .iter()
            .filter_map(|r| match r.utility {
                UtilitySpec::Cara { a } => Some((a, r.report)),
                _ => None,
            })
            .collect()
    }

    pub fn dara(&self) -> Vec<(f64, f64, f64, RiskReport)> {
        self.rows
            .iter()
            .filter_map(|r| match r.utility {
                UtilitySpec::Dara { a0, a1, x_star } => Some((a0, a1, x_star, r.report)),
                _ => None,
            })
            .collect()
    }

    /// `(CARA, DARA)` reports with `a = a0`.
    pub fn matched(&self) -> Vec<(f64, RiskReport, RiskReport)> {
        let dara = self.dara();
        self.cara()
            .into_iter()
            .filter_map(|(a, c)| {
                dara.iter()
                    .find(|(a0, ..)| *a0 == a)
                    .map(|(_, _, _, d)| (a, c, *d))
            })
            .collect()
    }

    fn row_fields(r: &RiskReport) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            r.mean,
            r.std,
            r.var_beta,
            r.cvar_beta,
            r.cvard_beta,
            fmt_opt(r.sr),
            fmt_opt(r.sr_cvar),
            fmt_opt(r.sr_cvard),
            r.std / (r.n as f64).sqrt()
        )
    }

    const COLUMNS: &'static str = "mean,std,var,cvar,cvard,sr,sr_cvar,sr_cvard,std_error";

    pub fn cara_csv(&self, header: &str) -> String {
        let mut s = comment(header);
        let _ = writeln!(s, "a,{}", Self::COLUMNS);
        for (a, r) in self.cara() {
            let _ = writeln!(s, "{a},{}", Self::row_fields(&r));
        }
        s
    }

    pub fn dara_csv(&self, header: &str) -> String {
        let mut s = comment(header);
        let _ = writeln!(s, "a0,a1,x_star,{}", Self::COLUMNS);
        for (a0, a1, xs, r) in self.dara() {
            let _ = writeln!(s, "{a0},{a1},{xs},{}", Self::row_fields(&r));
        }
        s
    }

    /// Trend diagnostics; informational only.
    pub fn checks_csv(&self, header: &str) -> String {
        let mut s = comment(header);
        s.push_str("check,value\n");
        let cara = self.cara();
        let sr: Vec<f64> = cara.iter().filter_map(|(_, r)| r.sr).collect();
        let sr_cvard: Vec<f64> = cara.iter().filter_map(|(_, r)| r.sr_cvard).collect();
        let _ = writeln!(s, "cara_sr_inversions,{}", inversions(&sr));
        let _ = writeln!(s, "cara_sr_cvard_inversions,{}", inversions(&sr_cvard));
        let _ = writeln!(s, "cara_sr_monotone,{}", inversions(&sr) == 0);
        let _ = writeln!(s, "cara_sr_cvard_monotone,{}", inversions(&sr_cvard) == 0);
        let matched = self.matched();
        let mean_ok = matched
            .iter()
            .filter(|(_, c, d)| d.mean >= c.mean - c.std / (c.n as f64).sqrt())
            .count();
        let std_ok = matched.iter().filter(|(_, c, d)| d.std >= c.std).count();
        let sr_ok = matched
            .iter()
            .filter(|(_, c, d)| matches!((d.sr_cvard, c.sr_cvard), (Some(x), Some(y)) if x <= y))
            .count();
        let _ = writeln!(s, "matched_levels,{}", matched.len());
        let _ = writeln!(s, "dara_mean_at_least_cara,{mean_ok}");
        let _ = writeln!(s, "dara_std_at_least_cara,{std_ok}");
        let _ = writeln!(s, "dara_sr_cvard_at_most_cara,{sr_ok}");
        s
    }
}

fn comment(header: &str) -> String {
    let mut s = String::new();
    for line in header.lines() {
        let _ = writeln!(s, "# {line}");
    }
    s
}

/// Reads one terminal-wealth value per line; `#` lines and blanks are skipped.
pub fn read_wealth_csv(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path)?;
    parse_wealth(&text, path)
}

pub fn parse_wealth(text: &str, path: &Path) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let cell = line.trim();
        if cell.is_empty() || cell.starts_with('#') {
            continue;
        }
        let cell = cell.split(',').next_back().unwrap_or(cell).trim();
        match cell.parse::<f64>() {
            Ok(v) if v.is_finite() => out.push(v),
            Ok(_) | Err(_) if out.is_empty() && cell.chars().any(char::is_alphabetic) && !cell.eq_ignore_ascii_case("nan") && !cell.contains("inf") => {
                // Header line before any value.
                continue;
            }
            _ => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: idx + 1,
                    msg: format!("not a finite number: '{cell}'"),
                })
            }
        }
    }
    Ok(out)
}

/// Standalone report over a wealth file.
pub fn cmd_report(wealth: &Path, beta: f64, r: f64, out_dir: &Path) -> Result<(RiskReport, PathBuf)> {
    let v = read_wealth_csv(wealth)?;
    let rep = risk::report(&v, beta, r)?;
    fs::create_dir_all(out_dir)?;
    let path = out_dir.join("report.csv");
    let header = format!("hjb-portfolio {VERSION}\nsource {}", wealth.display());
    fs::write(&path, rep.to_csv(&header))?;
    Ok((rep, path))
}
