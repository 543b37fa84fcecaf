//! Empirical tail measures and Sharpe-type ratios of terminal wealth.
//!
//! Wealth is "higher is better", so the risky tail is the lower one:
//! `VaR_β` is the `⌈βN⌉`-th smallest sample and `CVaR_β` the mean of the
//! `⌈βN⌉` smallest samples. The deviation `CVaRD_β = E − CVaR_β` replaces the
//! standard deviation in `SR_CVaRD = (E − r) / CVaRD_β`.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Denominators below this are treated as zero and the ratio is not reported.
pub const RATIO_GUARD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskReport {
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator).
    pub std: f64,
    pub var_beta: f64,
    pub cvar_beta: f64,
    pub cvard_beta: f64,
    /// `(E − r) / StD`; `None` when the sample has no spread.
    pub sr: Option<f64>,
    /// `(E − r) / CVaR_β`; `None` when `CVaR_β` is numerically zero.
    pub sr_cvar: Option<f64>,
    /// `(E − r) / CVaRD_β`; `None` when the deviation vanishes.
    pub sr_cvard: Option<f64>,
    pub beta: f64,
    pub r: f64,
    pub n: usize,
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::Input(format!("beta must lie in (0, 1), got {beta}")));
    }
    Ok(())
}

/// Lower-tail `(VaR_β, CVaR_β)` of a sample.
pub fn var_cvar(v: &[f64], beta: f64) -> Result<(f64, f64)> {
    check_beta(beta)?;
    if v.is_empty() {
        return Err(Error::Input("empty sample".into()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Input("sample contains non-finite values".into()));
    }
    let mut sorted = v.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = tail_count(v.len(), beta);
    let var = sorted[k - 1];
    let cvar = sorted[..k].iter().sum::<f64>() / k as f64;
    Ok((var, cvar))
}

/// `⌈βN⌉`, at least one. Guards against `β·N` landing a hair above an integer.
pub fn tail_count(n: usize, beta: f64) -> usize {
    let raw = beta * n as f64;
    let rounded = raw.round();
    let k = if (raw - rounded).abs() < 1e-9 * raw.max(1.0) {
        rounded
    } else {
        raw.ceil()
    };
    (k as usize).clamp(1, n)
}

pub fn report(v: &[f64], beta: f64, r: f64) -> Result<RiskReport> {
    if v.len() < 2 {
        return Err(Error::Input(format!(
            "risk report needs at least two samples, got {}",
            v.len()
        )));
    }
    let (var_beta, cvar_beta) = var_cvar(v, beta)?;
    let n = v.len();
    let mean = v.iter().sum::<f64>() / n as f64;
    let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let cvard_beta = (mean - cvar_beta).max(0.0);
    let excess = mean - r;
    let ratio = |den: f64| (den.abs() >= RATIO_GUARD).then(|| excess / den);
    Ok(RiskReport {
        mean,
        std,
        var_beta,
        cvar_beta,
        cvard_beta,
        sr: ratio(std),
        sr_cvar: ratio(cvar_beta),
        sr_cvard: ratio(cvard_beta),
        beta,
        r,
        n,
    })
}

/// Formats an optional ratio, `NA` when absent.
pub fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

impl RiskReport {
    /// Flat `key,value` CSV.
    pub fn to_csv(&self, header: &str) -> String {
        let mut s = String::new();
        for line in header.lines() {
            let _ = writeln!(s, "# {line}");
        }
        s.push_str("key,value\n");
        let rows: [(&str, String); 12] = [
            ("n", self.n.to_string()),
            ("beta", self.beta.to_string()),
            ("r", self.r.to_string()),
            ("mean", self.mean.to_string()),
            ("std", self.std.to_string()),
            ("var_beta", self.var_beta.to_string()),
            ("cvar_beta", self.cvar_beta.to_string()),
            ("cvard_beta", self.cvard_beta.to_string()),
            ("sr", fmt_opt(self.sr)),
            ("sr_cvar", fmt_opt(self.sr_cvar)),
            ("sr_cvard", fmt_opt(self.sr_cvard)),
            ("std_error", (self.std / (self.n as f64).sqrt()).to_string()),
        ];
        for (k, v) in rows {
            let _ = writeln!(s, "{k},{v}");
        }
        s
    }
}
