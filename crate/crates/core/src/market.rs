//! Market data and the controlled log-wealth process.
//!
//! The log-wealth `x = ln y` of a portfolio with regular saving follows
//!
//! ```text
//! dx = ( muᵀθ − ½ θᵀΣθ + ε e^{−x} + r ) dt + sqrt(θᵀΣθ) dW
//! ```
//!
//! where `θ` is a weight vector on the unit simplex.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Smallest admissible eigenvalue of the covariance matrix in normal mode.
pub const PD_THRESHOLD: f64 = 1e-12;

/// Asset universe with mean returns, covariance, inflow rate and risk-free rate.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketSpec {
    pub asset_names: Vec<String>,
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    /// Inflow into the portfolio per unit time.
    pub epsilon: f64,
    pub r: f64,
    min_eigenvalue: f64,
}

/// Options for building or loading a [`MarketSpec`].
#[derive(Debug, Clone, Copy)]
pub struct MarketOptions {
    pub epsilon: f64,
    pub r: f64,
    /// Accept positive semidefinite covariance matrices. Meant for analytic fixtures.
    pub degenerate_ok: bool,
}

impl Default for MarketOptions {
    fn default() -> Self {
        Self {
            epsilon: 1.0,
            r: 0.0,
            degenerate_ok: false,
        }
    }
}

impl MarketSpec {
    /// Validates dimensions, symmetrizes `sigma` and checks definiteness.
    pub fn new(
        asset_names: Vec<String>,
        mu: Vec<f64>,
        sigma: DMatrix<f64>,
        opts: MarketOptions,
    ) -> Result<Self> {
        let n = mu.len();
        if n == 0 {
            return Err(Error::Dimension("market has no assets".into()));
        }
        if sigma.nrows() != n || sigma.ncols() != n {
            return Err(Error::Dimension(format!(
                "mu has {n} entries but covariance is {}x{}",
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        if asset_names.len() != n {
            return Err(Error::Dimension(format!(
                "{} asset names for {n} assets",
                asset_names.len()
            )));
        }
        if mu.iter().chain(sigma.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Input("non-finite market parameter".into()));
        }
        if !(opts.epsilon >= 0.0 && opts.epsilon.is_finite()) {
            return Err(Error::Input(format!("inflow rate must be >= 0, got {}", opts.epsilon)));
        }
        if !(opts.r >= 0.0 && opts.r.is_finite()) {
            return Err(Error::Input(format!("interest rate must be >= 0, got {}", opts.r)));
        }

        let sigma = (&sigma + sigma.transpose()) * 0.5;
        let min_eigenvalue = SymmetricEigen::new(sigma.clone())
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        let threshold = if opts.degenerate_ok { -PD_THRESHOLD } else { PD_THRESHOLD };
        if min_eigenvalue <= threshold {
            return Err(Error::NotPositiveDefinite {
                eigenvalue: min_eigenvalue,
                threshold,
            });
        }

        Ok(Self {
            asset_names,
            mu: DVector::from_vec(mu),
            sigma,
            epsilon: opts.epsilon,
            r: opts.r,
            min_eigenvalue,
        })
    }

    /// Convenience constructor with generated asset names.
    pub fn from_parts(mu: Vec<f64>, sigma: DMatrix<f64>, opts: MarketOptions) -> Result<Self> {
        let names = (1..=mu.len()).map(|i| format!("asset{i}")).collect();
        Self::new(names, mu, sigma, opts)
    }

    pub fn n_assets(&self) -> usize {
        self.mu.len()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.min_eigenvalue
    }

    pub fn is_positive_definite(&self) -> bool {
        self.min_eigenvalue > PD_THRESHOLD
    }

    /// `θᵀΣθ`.
    pub fn variance(&self, theta: &[f64]) -> f64 {
        let n = self.n_assets();
        let mut acc = 0.0;
        for i in 0..n {
            let mut row = 0.0;
            for j in 0..n {
                row += self.sigma[(i, j)] * theta[j];
            }
            acc += theta[i] * row;
        }
        acc
    }

    /// `μᵀθ`.
    pub fn mean_return(&self, theta: &[f64]) -> f64 {
        self.mu.iter().zip(theta).map(|(m, t)| m * t).sum()
    }

    /// Same market with different inflow and rate.
    pub fn with_rates(&self, epsilon: f64, r: f64) -> Self {
        Self {
            epsilon,
            r,
            ..self.clone()
        }
    }

    /// Loads mean returns and covariance from two CSV files.
    pub fn load_csv(mu_path: &Path, sigma_path: &Path, opts: MarketOptions) -> Result<Self> {
        let mu_text = std::fs::read_to_string(mu_path)?;
        let sigma_text = std::fs::read_to_string(sigma_path)?;
        Self::parse_csv(&mu_text, mu_path, &sigma_text, sigma_path, opts)
    }

    /// Parses the two CSV payloads; paths are used for error messages only.
    pub fn parse_csv(
        mu_text: &str,
        mu_path: &Path,
        sigma_text: &str,
        sigma_path: &Path,
        opts: MarketOptions,
    ) -> Result<Self> {
        let sigma = parse_sigma(sigma_text, sigma_path)?;
        let mu = parse_mu(mu_text, mu_path)?;
        let n = sigma.values.len();

        if mu.values.len() != n {
            return Err(Error::Dimension(format!(
                "{} mean returns but {n}x{n} covariance",
                mu.values.len()
            )));
        }

        let (names, mu_values) = match (&sigma.names, &mu.names) {
            (Some(snames), Some(mnames)) => {
                let lookup: HashMap<String, f64> = mnames
                    .iter()
                    .map(|s| s.to_lowercase())
                    .zip(mu.values.iter().copied())
                    .collect();
                let mut ordered = Vec::with_capacity(n);
                for name in snames {
                    let v = lookup.get(&name.to_lowercase()).ok_or_else(|| {
                        Error::Input(format!(
                            "asset '{name}' in {} has no mean return in {}",
                            sigma_path.display(),
                            mu_path.display()
                        ))
                    })?;
                    ordered.push(*v);
                }
                (snames.clone(), ordered)
            }
            (Some(snames), None) => (snames.clone(), mu.values),
            (None, Some(mnames)) => (mnames.clone(), mu.values),
            (None, None) => ((1..=n).map(|i| format!("asset{i}")).collect(), mu.values),
        };

        let flat: Vec<f64> = sigma.values.into_iter().flatten().collect();
        let matrix = DMatrix::from_row_slice(n, n, &flat);
        Self::new(names, mu_values, matrix, opts)
    }
}

struct Labelled<T> {
    names: Option<Vec<String>>,
    values: T,
}

/// Non-comment, non-blank rows with their 1-based line numbers.
fn csv_rows(text: &str) -> Vec<(usize, Vec<String>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    reader
        .records()
        .filter_map(|rec| rec.ok())
        .filter(|rec| rec.iter().any(|c| !c.is_empty()))
        .map(|rec| {
            let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
            (line, rec.iter().map(str::to_string).collect())
        })
        .collect()
}

fn parse_cell(cell: &str, path: &Path, line: usize) -> Result<f64> {
    cell.parse::<f64>().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: format!("non-numeric cell '{cell}'"),
    })
}

fn is_numeric(cell: &str) -> bool {
    cell.parse::<f64>().is_ok()
}

fn parse_sigma(text: &str, path: &Path) -> Result<Labelled<Vec<Vec<f64>>>> {
    let mut rows = csv_rows(text);
    if rows.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: "empty covariance file".into(),
        });
    }

    // A header row has at least one non-numeric cell after the (optional) corner cell.
    let header = if rows[0].1.iter().skip(1).any(|c| !is_numeric(c))
        || (rows[0].1.len() == 1 && !is_numeric(&rows[0].1[0]))
    {
        Some(rows.remove(0))
    } else {
        None
    };
    let row_labels = rows.iter().all(|(_, r)| !r.is_empty() && !is_numeric(&r[0]));

    let mut names = Vec::new();
    let mut values = Vec::new();
    for (line, row) in &rows {
        let cells = if row_labels {
            names.push(row[0].clone());
            &row[1..]
        } else {
            &row[..]
        };
        let parsed = cells
            .iter()
            .map(|c| parse_cell(c, path, *line))
            .collect::<Result<Vec<_>>>()?;
        values.push(parsed);
    }

    let n = values.len();
    for ((line, _), row) in rows.iter().zip(&values) {
        if row.len() != n {
            return Err(Error::Dimension(format!(
                "{}:{line}: covariance row has {} entries, expected {n}",
                path.display(),
                row.len()
            )));
        }
    }

    let header_names = header.map(|(line, h)| {
        let cells: Vec<String> = if h.len() == n + 1 { h[1..].to_vec() } else { h };
        (line, cells)
    });
    let names = match (header_names, row_labels) {
        (Some((line, h)), true) => {
            if h.len() != n {
                return Err(Error::Dimension(format!(
                    "{}:{line}: header has {} names, expected {n}",
                    path.display(),
                    h.len()
                )));
            }
            for (a, b) in h.iter().zip(&names) {
                if !a.eq_ignore_ascii_case(b) {
                    return Err(Error::Input(format!(
                        "{}: column '{a}' does not match row '{b}'",
                        path.display()
                    )));
                }
            }
            Some(h)
        }
        (Some((line, h)), false) => {
            if h.len() != n {
                return Err(Error::Dimension(format!(
                    "{}:{line}: header has {} names, expected {n}",
                    path.display(),
                    h.len()
                )));
            }
            Some(h)
        }
        (None, true) => Some(names),
        (None, false) => None,
    };

    Ok(Labelled { names, values })
}

fn parse_mu(text: &str, path: &Path) -> Result<Labelled<Vec<f64>>> {
    let mut rows = csv_rows(text);
    if rows.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: "empty mean-return file".into(),
        });
    }
    // Header: every cell non-numeric, and the file has more rows.
    if rows.len() > 1 && rows[0].1.iter().all(|c| !is_numeric(c)) {
        rows.remove(0);
    }

    let mut names = Vec::new();
    let mut values = Vec::new();
    let named = rows[0].1.len() >= 2;
    for (line, row) in &rows {
        match (named, row.len()) {
            (true, 2) => {
                names.push(row[0].clone());
                values.push(parse_cell(&row[1], path, *line)?);
            }
            (false, 1) => values.push(parse_cell(&row[0], path, *line)?),
            (_, len) => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: *line,
                    msg: format!("expected {} column(s), found {len}", if named { 2 } else { 1 }),
                })
            }
        }
    }
    Ok(Labelled {
        names: named.then_some(names),
        values,
    })
}

/// Drift and squared volatility of the controlled log-wealth process.
///
/// Other models (for instance worst-case drift over an uncertainty set) plug in
/// by implementing this trait.
pub trait ControlledProcess: Send + Sync {
    fn drift(&self, x: f64, t: f64, theta: &[f64]) -> f64;
    fn vol2(&self, x: f64, t: f64, theta: &[f64]) -> f64;
}

/// Portfolio with regular saving.
#[derive(Debug, Clone)]
pub struct RegularSavingProcess {
    market: MarketSpec,
}

impl RegularSavingProcess {
    pub fn new(market: &MarketSpec) -> Self {
        Self {
            market: market.clone(),
        }
    }

    pub fn market(&self) -> &MarketSpec {
        &self.market
    }
}

impl ControlledProcess for RegularSavingProcess {
    fn drift(&self, x: f64, _t: f64, theta: &[f64]) -> f64 {
        let m = &self.market;
        m.mean_return(theta) - 0.5 * m.variance(theta) + m.epsilon * (-x).exp() + m.r
    }

    fn vol2(&self, _x: f64, _t: f64, theta: &[f64]) -> f64 {
        self.market.variance(theta).max(0.0)
    }
}

/// Six DAX constituents (Merck, VW, SAP, Fresenius Medical, Linde, Fresenius),
/// August 2010 to April 2012.
pub mod dax6 {
    use super::*;

    pub const MU_CSV: &str = include_str!("../data/dax6_mu.csv");
    pub const SIGMA_CSV: &str = include_str!("../data/dax6_sigma.csv");

    pub fn market(opts: MarketOptions) -> MarketSpec {
        MarketSpec::parse_csv(
            MU_CSV,
            Path::new("dax6_mu.csv"),
            SIGMA_CSV,
            Path::new("dax6_sigma.csv"),
            opts,
        )
        .expect("bundled dax6 data is valid")
    }

    /// First `k` assets of the six-asset market.
    pub fn leading(k: usize, opts: MarketOptions) -> MarketSpec {
        let full = market(opts);
        MarketSpec::new(
            full.asset_names[..k].to_vec(),
            full.mu.as_slice()[..k].to_vec(),
            full.sigma.view((0, 0), (k, k)).into_owned(),
            opts,
        )
        .expect("leading principal submatrix of a PD matrix is PD")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("test.csv")
    }

    #[test]
    fn dax6_loads_symmetric_pd() {
        let m = dax6::market(MarketOptions::default());
        assert_eq!(m.n_assets(), 6);
        assert_eq!(m.asset_names[0], "Merck");
        assert!((m.mu[0] - 0.7315).abs() < 1e-15);
        assert!((m.mu[5] - 0.1351).abs() < 1e-15);
        assert!(m.is_positive_definite());
        for i in 0..6 {
            for j in 0..6 {
                assert!((m.sigma[(i, j)] - m.sigma[(j, i)]).abs() < 1e-10);
            }
        }
        // (Fres, SAP) is printed as 0.01430 and (SAP, Fres) as 0.0143: the same number.
        assert!((m.sigma[(5, 2)] - 0.0143).abs() < 1e-15);
    }

    #[test]
    fn asymmetric_input_is_averaged() {
        let sigma = "0.04,0.01\n0.02,0.09\n";
        let m = MarketSpec::parse_csv("0.1\n0.2\n", p(), sigma, p(), MarketOptions::default())
            .unwrap();
        assert!((m.sigma[(0, 1)] - 0.015).abs() < 1e-15);
        assert!((m.sigma[(1, 0)] - 0.015).abs() < 1e-15);
    }

    #[test]
    fn scalar_market() {
        let m = MarketSpec::parse_csv("0.1\n", p(), "0.04\n", p(), MarketOptions::default())
            .unwrap();
        assert_eq!(m.n_assets(), 1);
        assert_eq!(m.sigma[(0, 0)], 0.04);
        assert_eq!(m.asset_names, vec!["asset1"]);
    }

    #[test]
    fn headers_matched_case_insensitively_and_reordered() {
        let sigma = "# comment\n,A,B\na,0.04,0\nb,0,0.09\n";
        let mu = "name,mean\nB,0.2\nA,0.1\n";
        let m = MarketSpec::parse_csv(mu, p(), sigma, p(), MarketOptions::default()).unwrap();
        assert_eq!(m.asset_names, vec!["A", "B"]);
        assert_eq!(m.mu.as_slice(), &[0.1, 0.2]);
    }

    #[test]
    fn errors_are_reported() {
        let opts = MarketOptions::default();
        let err = MarketSpec::parse_csv("0.1\n0.2\n0.3\n", p(), "1,0\n0,1\n", p(), opts);
        assert!(matches!(err, Err(Error::Dimension(_))));

        let err = MarketSpec::parse_csv("0.1\n0.2\n", p(), "1,0\n0,x\n", p(), opts);
        assert!(matches!(err, Err(Error::Parse { line: 2, .. })), "{err:?}");

        let err = MarketSpec::parse_csv("0.1\n0.2\n", p(), "1,1\n1,1\n", p(), opts);
        match err {
            Err(Error::NotPositiveDefinite { eigenvalue, .. }) => assert!(eigenvalue.abs() < 1e-12),
            other => panic!("{other:?}"),
        }

        let err = MarketSpec::parse_csv("0.1\n0.2\n", p(), "1,0\n0\n", p(), opts);
        assert!(matches!(err, Err(Error::Dimension(_))));
    }

    #[test]
    fn degenerate_allowed_when_flagged() {
        let opts = MarketOptions {
            epsilon: 1.0,
            r: 0.0,
            degenerate_ok: true,
        };
        let m = MarketSpec::from_parts(vec![0.0], DMatrix::from_element(1, 1, 0.0), opts).unwrap();
        let proc = RegularSavingProcess::new(&m);
        for x in [-1.0, 0.0, 2.5] {
            assert!((proc.drift(x, 0.0, &[1.0]) - (-x as f64).exp()).abs() < 1e-15);
            assert_eq!(proc.vol2(x, 0.0, &[1.0]), 0.0);
        }
    }

    #[test]
    fn basis_vector_variance_is_diagonal() {
        let m = dax6::market(MarketOptions::default());
        let proc = RegularSavingProcess::new(&m);
        for i in 0..6 {
            let mut e = vec![0.0; 6];
            e[i] = 1.0;
            assert_eq!(proc.vol2(0.3, 1.0, &e), m.sigma[(i, i)]);
        }
    }

    #[test]
    fn uniform_weights_variance_matches_direct_sum() {
        let m = dax6::market(MarketOptions::default());
        // Oracle: sum of all 36 symmetrized entries, divided by 36.
        let rows: Vec<Vec<f64>> = dax6::SIGMA_CSV
            .lines()
            .skip(1)
            .map(|l| l.split(',').skip(1).map(|c| c.trim().parse().unwrap()).collect())
            .collect();
        let mut total = 0.0;
        for i in 0..6 {
            for j in 0..6 {
                total += 0.5 * (rows[i][j] + rows[j][i]);
            }
        }
        let theta = [1.0 / 6.0; 6];
        let proc = RegularSavingProcess::new(&m);
        assert!((proc.vol2(0.0, 0.0, &theta) - total / 36.0).abs() < 1e-15);
    }
}
