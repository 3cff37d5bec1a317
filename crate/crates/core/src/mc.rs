//! Replication studies: simulate Skellam-ARCH(p) series over a grid of
//! orders and sample sizes, fit each one, and aggregate.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::Family;
use crate::estimate::{self, build_regression, FitOptions, DEFAULT_OMEGA_MIN};
use crate::io::fmt_sig;
use crate::model::{simulate_with, ModelError, SimulationOptions, VolatilitySpec, DEFAULT_BURN_IN};
use crate::rng;
use crate::stats::mean_se;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum McError {
    #[error("invalid study configuration: {0}")]
    Config(String),
    #[error("order {p} needs {p} ARCH coefficients in true_theta, found {found}")]
    MissingCoefficients { p: usize, found: usize },
    #[error("standard-error decay needs at least two sample sizes for order {p}")]
    InsufficientGrid { p: usize },
    #[error("could not build a worker pool: {0}")]
    ThreadPool(String),
}

fn default_replications() -> usize {
    200
}

fn default_family() -> Family {
    Family::SkellamSym
}

fn default_omega_min() -> f64 {
    DEFAULT_OMEGA_MIN
}

fn default_burn_in() -> usize {
    DEFAULT_BURN_IN
}

/// Design of a replication study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub orders: Vec<usize>,
    pub sample_sizes: Vec<usize>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    /// `(omega, alpha_1, ..., alpha_P)`; order `p` uses the first `p` alphas.
    pub true_theta: Vec<f64>,
    #[serde(default = "default_family")]
    pub family: Family,
    pub seed: u64,
    #[serde(default)]
    pub constrained: bool,
    #[serde(default = "default_omega_min")]
    pub omega_min: f64,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    /// Compare the sample fourth moment of each cell with its bound; requires
    /// `sum alpha < 1/sqrt(3)`.
    #[serde(default)]
    pub check_fourth_moment: bool,
    /// Heteroskedasticity-consistent standard errors instead of the
    /// constant-variance ones.
    #[serde(default)]
    pub robust_se: bool,
}

impl StudyConfig {
    pub fn new(
        orders: Vec<usize>,
        sample_sizes: Vec<usize>,
        replications: usize,
        true_theta: Vec<f64>,
        seed: u64,
    ) -> Self {
        StudyConfig {
            orders,
            sample_sizes,
            replications,
            true_theta,
            family: Family::SkellamSym,
            seed,
            constrained: false,
            omega_min: DEFAULT_OMEGA_MIN,
            burn_in: DEFAULT_BURN_IN,
            check_fourth_moment: false,
            robust_se: false,
        }
    }

    pub fn omega(&self) -> f64 {
        self.true_theta[0]
    }

    pub fn alphas(&self, p: usize) -> &[f64] {
        &self.true_theta[1..=p]
    }

    pub fn validate(&self) -> Result<(), McError> {
        let bad = |m: &str| Err(McError::Config(m.to_string()));
        if self.orders.is_empty() || self.sample_sizes.is_empty() {
            return bad("orders and sample_sizes must be nonempty");
        }
        if self.replications == 0 {
            return bad("replications must be at least 1");
        }
        if self.orders.contains(&0) {
            return bad("orders must be at least 1");
        }
        if self.true_theta.is_empty() || !(self.true_theta[0] > 0.0) {
            return bad("true_theta must start with a positive omega");
        }
        if self.true_theta.iter().any(|x| !x.is_finite())
            || self.true_theta[1..].iter().any(|&a| a < 0.0)
        {
            return bad("true_theta entries must be finite and the alphas nonnegative");
        }
        let found = self.true_theta.len() - 1;
        for &p in &self.orders {
            if p > found {
                return Err(McError::MissingCoefficients { p, found });
            }
            for &t in &self.sample_sizes {
                if t <= 2 * p + 1 {
                    return Err(McError::Config(format!(
                        "sample size {t} is too small for order {p}"
                    )));
                }
            }
            if self.check_fourth_moment {
                let a: f64 = self.alphas(p).iter().sum();
                if 3.0 * a * a >= 1.0 {
                    return Err(McError::Config(format!(
                        "fourth-moment check needs sum alpha < 1/sqrt(3), order {p} has {a}"
                    )));
                }
            }
        }
        if self.constrained && !(self.omega_min > 0.0 && self.omega_min.is_finite()) {
            return bad("omega_min must be positive");
        }
        self.family
            .validate()
            .map_err(|e| McError::Config(e.to_string()))
    }

    pub fn spec(&self, p: usize) -> Result<VolatilitySpec, McError> {
        VolatilitySpec::arch(self.omega(), self.alphas(p).to_vec())
            .map_err(|e| McError::Config(e.to_string()))
    }
}

/// Why a replication did not produce a clean fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Failure {
    /// Normal equations singular; no estimate.
    Singular,
    /// Near-singular normal equations solved by pseudo-inverse.
    IllConditioned,
    /// Some estimate sits on (constrained fits) or beyond (unconstrained
    /// fits) the bounds `omega >= omega_min`, `alpha_i >= 0`.
    ConstraintBinding,
    /// The simulated path exceeded the explosion threshold; no estimate.
    Explosion,
    /// The volatility left the family's parameter range; no estimate.
    Domain,
}

impl Failure {
    /// Whether the replication still produced an estimate.
    pub fn keeps_estimate(self) -> bool {
        matches!(self, Failure::IllConditioned | Failure::ConstraintBinding)
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Failure::Singular => "singular",
            Failure::IllConditioned => "ill_conditioned",
            Failure::ConstraintBinding => "constraint_binding",
            Failure::Explosion => "explosion",
            Failure::Domain => "domain",
        })
    }
}

/// Outcome of one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct Replication {
    pub theta: Option<Vec<f64>>,
    pub se: Option<Vec<f64>>,
    pub failures: Vec<Failure>,
    /// Sample mean of `X_t^4` over the series, when simulated.
    pub fourth_moment: Option<f64>,
}

/// Aggregates for one `(p, T)` grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyCell {
    pub p: usize,
    pub t: usize,
    pub replications: usize,
    /// Replications that produced an estimate.
    pub fits: usize,
    /// Mean estimate over the fits, `(omega, alpha_1..alpha_p)`.
    pub theta_mean: Vec<f64>,
    /// Standard deviation of the estimates across fits.
    pub theta_sd: Vec<f64>,
    /// Mean reported standard error over the fits.
    pub se_mean: Vec<f64>,
    /// Mean absolute estimation error against the true parameters.
    pub abs_error_mean: Vec<f64>,
    /// Fraction of replications with a clean fit (no failure of any kind).
    pub success_rate: f64,
    pub failures: BTreeMap<Failure, usize>,
    /// Mean of the per-replication sample `E X^4`, its Monte-Carlo standard
    /// error, and the stationary bound, when the check is requested.
    pub fourth_moment: Option<FourthMomentCheck>,
}

impl StudyCell {
    /// A cell where every replication failed.
    pub fn is_empty(&self) -> bool {
        self.fits == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FourthMomentCheck {
    pub mean: f64,
    pub se: f64,
    pub bound4: f64,
}

impl FourthMomentCheck {
    pub fn passes(&self) -> bool {
        self.mean <= self.bound4 + 5.0 * self.se
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyResult {
    pub cells: Vec<StudyCell>,
}

impl StudyResult {
    pub fn cell(&self, p: usize, t: usize) -> Option<&StudyCell> {
        self.cells.iter().find(|c| c.p == p && c.t == t)
    }

    pub fn max_order(&self) -> usize {
        self.cells.iter().map(|c| c.p).max().unwrap_or(0)
    }

    /// Writes `p,T,omega_mean,omega_se,alpha1_mean,alpha1_se,...,success_rate`,
    /// leaving coefficients beyond a row's order empty.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let pmax = self.max_order();
        let mut header = vec![
            "p".to_string(),
            "T".into(),
            "omega_mean".into(),
            "omega_se".into(),
        ];
        for i in 1..=pmax {
            header.push(format!("alpha{i}_mean"));
            header.push(format!("alpha{i}_se"));
        }
        header.push("success_rate".into());
        writeln!(out, "{}", header.join(","))?;
        for c in &self.cells {
            let mut row = vec![c.p.to_string(), c.t.to_string()];
            for i in 0..=pmax {
                if i <= c.p && !c.is_empty() {
                    row.push(fmt_sig(c.theta_mean[i]));
                    row.push(fmt_sig(c.se_mean[i]));
                } else {
                    row.push(String::new());
                    row.push(String::new());
                }
            }
            row.push(fmt_sig(c.success_rate));
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

fn run_replication(
    cfg: &StudyConfig,
    spec: &VolatilitySpec,
    p: usize,
    t: usize,
    rep: usize,
) -> Replication {
    let mut rng = rng::stream(cfg.seed, &[p as u64, t as u64, rep as u64]);
    let opts = SimulationOptions::new(t).burn_in(cfg.burn_in);
    let failed = |f| Replication {
        theta: None,
        se: None,
        failures: vec![f],
        fourth_moment: None,
    };
    let series = match simulate_with(spec, &cfg.family, &opts, &mut rng) {
        Ok(s) => s,
        Err(ModelError::Explosion { .. }) => return failed(Failure::Explosion),
        Err(_) => return failed(Failure::Domain),
    };
    let xs: Vec<i64> = series.iter().map(|r| r.x).collect();
    let fourth_moment = Some(xs.iter().map(|&x| (x as f64).powi(4)).sum::<f64>() / xs.len() as f64);

    let fit_opts = FitOptions {
        constrained: cfg.constrained,
        omega_min: cfg.omega_min,
        robust_se: cfg.robust_se,
    };
    let fit = build_regression(&xs, p).and_then(|d| estimate::fit(&d, &fit_opts));
    match fit {
        Ok(f) => {
            let mut failures = Vec::new();
            if f.ill_conditioned {
                failures.push(Failure::IllConditioned);
            }
            let outside = f.theta[0] < cfg.omega_min || f.theta[1..].iter().any(|&a| a < 0.0);
            if !f.active_constraints.is_empty() || outside {
                failures.push(Failure::ConstraintBinding);
            }
            Replication {
                theta: Some(f.theta),
                se: Some(f.se),
                failures,
                fourth_moment,
            }
        }
        // Sample sizes are validated, so the only fit error left is singularity.
        Err(_) => Replication {
            fourth_moment,
            ..failed(Failure::Singular)
        },
    }
}

fn aggregate(cfg: &StudyConfig, p: usize, t: usize, reps: &[Replication]) -> StudyCell {
    let truth = &cfg.true_theta[..=p];
    let fits: Vec<&Replication> = reps.iter().filter(|r| r.theta.is_some()).collect();
    let k = p + 1;
    let column = |f: &dyn Fn(&Replication) -> f64| -> (f64, f64) {
        let vals: Vec<f64> = fits.iter().map(|r| f(r)).collect();
        let m = mean_se(&vals);
        (m.mean, m.se * (vals.len() as f64).sqrt())
    };
    let mut theta_mean = Vec::with_capacity(k);
    let mut theta_sd = Vec::with_capacity(k);
    let mut se_mean = Vec::with_capacity(k);
    let mut abs_error_mean = Vec::with_capacity(k);
    for i in 0..k {
        let (m, sd) = column(&|r| r.theta.as_ref().unwrap()[i]);
        theta_mean.push(m);
        theta_sd.push(sd);
        se_mean.push(column(&|r| r.se.as_ref().unwrap()[i]).0);
        abs_error_mean.push(column(&|r| (r.theta.as_ref().unwrap()[i] - truth[i]).abs()).0);
    }
    let mut failures = BTreeMap::new();
    for f in reps.iter().flat_map(|r| &r.failures) {
        *failures.entry(*f).or_insert(0) += 1;
    }
    let clean = reps.iter().filter(|r| r.failures.is_empty()).count();
    let fourth_moment = cfg.check_fourth_moment.then(|| {
        let vals: Vec<f64> = reps.iter().filter_map(|r| r.fourth_moment).collect();
        let m = mean_se(&vals);
        FourthMomentCheck {
            mean: m.mean,
            se: m.se,
            bound4: estimate::moment_bounds(cfg.omega(), cfg.alphas(p)).bound4,
        }
    });
    StudyCell {
        p,
        t,
        replications: reps.len(),
        fits: fits.len(),
        theta_mean,
        theta_sd,
        se_mean,
        abs_error_mean,
        success_rate: clean as f64 / reps.len() as f64,
        failures,
        fourth_moment,
    }
}

/// Runs the study on the current rayon pool.
///
/// Replication `rep` of cell `(p, T)` draws from the stream keyed by
/// `(seed, p, T, rep)`, and per-cell results are reduced in replication
/// order, so the output is identical for any number of workers.
pub fn run_study(cfg: &StudyConfig) -> Result<StudyResult, McError> {
    cfg.validate()?;
    let mut cells = Vec::new();
    for &p in &cfg.orders {
        let spec = cfg.spec(p)?;
        for &t in &cfg.sample_sizes {
            let reps: Vec<Replication> = (0..cfg.replications)
                .into_par_iter()
                .map(|rep| run_replication(cfg, &spec, p, t, rep))
                .collect();
            let cell = aggregate(cfg, p, t, &reps);
            if cell.is_empty() {
                log::warn!("no replication of cell p={p}, T={t} produced an estimate");
            }
            cells.push(cell);
        }
    }
    Ok(StudyResult { cells })
}

/// Runs the study on a dedicated pool with `threads` workers.
pub fn run_study_with_threads(cfg: &StudyConfig, threads: usize) -> Result<StudyResult, McError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| McError::ThreadPool(e.to_string()))?;
    pool.install(|| run_study(cfg))
}

/// Per-replication outcomes of one cell, for inspection.
pub fn run_cell(cfg: &StudyConfig, p: usize, t: usize) -> Result<Vec<Replication>, McError> {
    cfg.validate()?;
    let spec = cfg.spec(p)?;
    Ok((0..cfg.replications)
        .into_par_iter()
        .map(|rep| run_replication(cfg, &spec, p, t, rep))
        .collect())
}

/// Verdict on one `(p, parameter)` column of mean standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayColumn {
    pub p: usize,
    /// 0 for omega, `i` for alpha_i.
    pub param: usize,
    /// Consecutive sample-size pairs `(T, T')` where the SE did not decrease.
    pub inversions: Vec<(usize, usize)>,
    pub passes: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayReport {
    pub columns: Vec<DecayColumn>,
}

impl DecayReport {
    pub fn passes(&self) -> bool {
        self.columns.iter().all(|c| c.passes)
    }

    pub fn offending(&self) -> Vec<&DecayColumn> {
        self.columns.iter().filter(|c| !c.passes).collect()
    }
}

/// Sample size up to which one non-decrease per column is tolerated.
pub const SMALL_SAMPLE_T: usize = 100;

/// Checks that mean standard errors decrease strictly in `T` for every order
/// and parameter. One inversion per column is tolerated when the larger
/// sample size of the pair is at most [`SMALL_SAMPLE_T`].
pub fn se_decay_check(result: &StudyResult) -> Result<DecayReport, McError> {
    let mut orders: Vec<usize> = result.cells.iter().map(|c| c.p).collect();
    orders.sort_unstable();
    orders.dedup();
    let mut columns = Vec::new();
    for p in orders {
        let mut cells: Vec<&StudyCell> = result
            .cells
            .iter()
            .filter(|c| c.p == p && !c.is_empty())
            .collect();
        cells.sort_by_key(|c| c.t);
        if cells.len() < 2 {
            return Err(McError::InsufficientGrid { p });
        }
        for param in 0..=p {
            let inversions: Vec<(usize, usize)> = cells
                .windows(2)
                .filter(|w| w[1].se_mean[param] >= w[0].se_mean[param])
                .map(|w| (w[0].t, w[1].t))
                .collect();
            let small = inversions
                .iter()
                .filter(|(_, t)| *t <= SMALL_SAMPLE_T)
                .count();
            let passes = small <= 1 && inversions.len() == small;
            columns.push(DecayColumn {
                p,
                param,
                inversions,
                passes,
            });
        }
    }
    Ok(DecayReport { columns })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(p: usize, rows: &[(usize, &[f64])]) -> StudyResult {
        StudyResult {
            cells: rows
                .iter()
                .map(|&(t, se)| StudyCell {
                    p,
                    t,
                    replications: 1,
                    fits: 1,
                    theta_mean: vec![0.0; p + 1],
                    theta_sd: vec![0.0; p + 1],
                    se_mean: se.to_vec(),
                    abs_error_mean: vec![0.0; p + 1],
                    success_rate: 1.0,
                    failures: BTreeMap::new(),
                    fourth_moment: None,
                })
                .collect(),
        }
    }

    #[test]
    fn table_one_columns_decay() {
        let p2 = synthetic(
            2,
            &[
                (30, &[0.278, 0.209, 0.327]),
                (80, &[0.150, 0.123, 0.111]),
                (100, &[0.081, 0.099, 0.098]),
                (500, &[0.032, 0.042, 0.038]),
                (1000, &[0.022, 0.031, 0.021]),
            ],
        );
        let r = se_decay_check(&p2).unwrap();
        assert_eq!(r.columns.len(), 3);
        assert!(r.passes());

        let p1 = synthetic(
            1,
            &[
                (30, &[0.321, 0.211]),
                (80, &[0.151, 0.188]),
                (100, &[0.101, 0.124]),
                (500, &[0.087, 0.091]),
                (1000, &[0.075, 0.088]),
            ],
        );
        assert!(se_decay_check(&p1).unwrap().passes());
    }

    #[test]
    fn single_sample_size_is_insufficient() {
        let r = synthetic(1, &[(500, &[0.1, 0.1])]);
        assert_eq!(se_decay_check(&r), Err(McError::InsufficientGrid { p: 1 }));
    }

    #[test]
    fn increasing_se_fails_with_cells_listed() {
        let r = synthetic(
            1,
            &[
                (100, &[0.1, 0.1]),
                (500, &[0.2, 0.05]),
                (1000, &[0.3, 0.04]),
            ],
        );
        let rep = se_decay_check(&r).unwrap();
        assert!(!rep.passes());
        let bad = rep.offending();
        assert_eq!(bad.len(), 1);
        assert_eq!(bad[0].param, 0);
        assert_eq!(bad[0].inversions, vec![(100, 500), (500, 1000)]);
    }

    #[test]
    fn one_small_sample_inversion_is_tolerated() {
        let ok = synthetic(
            1,
            &[(30, &[0.2, 0.2]), (80, &[0.25, 0.1]), (500, &[0.1, 0.05])],
        );
        assert!(se_decay_check(&ok).unwrap().passes());
        let two = synthetic(
            1,
            &[
                (30, &[0.2, 0.2]),
                (80, &[0.25, 0.1]),
                (100, &[0.3, 0.09]),
                (500, &[0.1, 0.05]),
            ],
        );
        assert!(!se_decay_check(&two).unwrap().passes());
    }

    #[test]
    fn single_replication_reports_its_fit() {
        let cfg = StudyConfig::new(vec![1], vec![300], 1, vec![1.5, 0.26], 11);
        let res = run_study(&cfg).unwrap();
        let reps = run_cell(&cfg, 1, 300).unwrap();
        let c = &res.cells[0];
        assert_eq!(c.theta_mean, reps[0].theta.clone().unwrap());
        assert_eq!(c.se_mean, reps[0].se.clone().unwrap());
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let cfg = StudyConfig::new(vec![1, 2], vec![200, 400], 24, vec![1.5, 0.26, 0.16], 3);
        let a = run_study_with_threads(&cfg, 1).unwrap();
        let b = run_study_with_threads(&cfg, 4).unwrap();
        assert_eq!(a, b);
        let mut ba = Vec::new();
        let mut bb = Vec::new();
        a.write_csv(&mut ba).unwrap();
        b.write_csv(&mut bb).unwrap();
        assert_eq!(ba, bb);
    }

    #[test]
    fn csv_layout_pads_lower_orders() {
        let cfg = StudyConfig::new(vec![1, 2], vec![300], 5, vec![1.5, 0.26, 0.16], 3);
        let mut buf = Vec::new();
        run_study(&cfg).unwrap().write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "p,T,omega_mean,omega_se,alpha1_mean,alpha1_se,alpha2_mean,alpha2_se,success_rate"
        );
        assert_eq!(lines[1].split(',').nth(6), Some(""));
        assert_eq!(lines.len(), 3);
    }

    #[test]
    fn config_validation() {
        let mut cfg = StudyConfig::new(vec![3], vec![100], 5, vec![1.5, 0.26, 0.16], 3);
        assert!(matches!(
            cfg.validate(),
            Err(McError::MissingCoefficients { p: 3, found: 2 })
        ));
        cfg.orders = vec![2];
        cfg.check_fourth_moment = true;
        cfg.true_theta = vec![1.5, 0.4, 0.3];
        assert!(matches!(cfg.validate(), Err(McError::Config(_))));
        cfg.true_theta = vec![1.5, 0.26, 0.16];
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn config_parses_from_toml() {
        let cfg: StudyConfig = toml::from_str(
            "orders = [1]\nsample_sizes = [100, 500]\ntrue_theta = [1.5, 0.26]\nseed = 9\n",
        )
        .unwrap();
        assert_eq!(cfg.replications, 200);
        assert_eq!(cfg.family, Family::SkellamSym);
        assert!(toml::from_str::<StudyConfig>(
            "orders = [1]\nsample_sizes=[1]\ntrue_theta=[1.0]\nseed=1\nreps=3\n"
        )
        .is_err());
    }

    #[test]
    fn fourth_moment_within_bound() {
        let mut cfg = StudyConfig::new(vec![1], vec![2000], 40, vec![1.5, 0.26], 5);
        cfg.check_fourth_moment = true;
        let res = run_study(&cfg).unwrap();
        let chk = res.cells[0].fourth_moment.unwrap();
        assert!(chk.passes(), "{chk:?}");
    }
}
