//! Least squares for the squared-count regression of an ARCH(p) model
//!
//! ```text
//! X_t^2 = omega + alpha_1 X_{t-1}^2 + ... + alpha_p X_{t-p}^2 + eps_t,   E(eps_t | past) = 0,
//! ```
//!
//! with optional bounds `omega >= omega_min`, `alpha_i >= 0`, and normal
//! approximation standard errors.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::io::fmt_sig;

/// Default lower bound on the intercept in constrained fits.
pub const DEFAULT_OMEGA_MIN: f64 = 1e-8;

/// Normal equations whose smallest Cholesky pivot is below this fraction of
/// the largest are treated as singular or ill-conditioned.
pub const PIVOT_RATIO_TOL: f64 = 1e-10;

/// Largest order handled by the active-set enumeration.
pub const MAX_CONSTRAINED_ORDER: usize = 6;

const KKT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimateError {
    #[error("order p must be at least 1")]
    ZeroOrder,
    #[error("series of length {n} is too short for order {p}")]
    TooShort { n: usize, p: usize },
    #[error("normal equations are singular (pivot ratio {pivot_ratio:e})")]
    Singular { pivot_ratio: f64 },
    #[error("no residual degrees of freedom: {rows} rows for {params} parameters")]
    NoResidualDf { rows: usize, params: usize },
    #[error("omega_min must be positive and finite, got {0}")]
    BadOmegaMin(f64),
    #[error("constrained fits support p <= {MAX_CONSTRAINED_ORDER}, got {0}")]
    OrderTooLarge(usize),
    #[error("constrained problem has no feasible KKT point (largest violation {0:e})")]
    Infeasible(f64),
}

/// Response `y_t = X_t^2`, `t = p+1..n`, and design rows
/// `(1, X_{t-1}^2, ..., X_{t-p}^2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionData {
    pub p: usize,
    pub y: DVector<f64>,
    pub design: DMatrix<f64>,
}

impl RegressionData {
    pub fn rows(&self) -> usize {
        self.y.len()
    }

    pub fn params(&self) -> usize {
        self.p + 1
    }

    fn gram(&self) -> DMatrix<f64> {
        self.design.tr_mul(&self.design)
    }

    fn moment(&self) -> DVector<f64> {
        self.design.tr_mul(&self.y)
    }

    pub fn residuals(&self, theta: &[f64]) -> DVector<f64> {
        &self.y - &self.design * DVector::from_column_slice(theta)
    }

    pub fn rss(&self, theta: &[f64]) -> f64 {
        self.residuals(theta).norm_squared()
    }

    /// Gradient of `rss / 2`, `X'(X theta - y)`.
    pub fn half_gradient(&self, theta: &[f64]) -> DVector<f64> {
        -self.design.tr_mul(&self.residuals(theta))
    }
}

pub fn build_regression(series: &[i64], p: usize) -> Result<RegressionData, EstimateError> {
    if p == 0 {
        return Err(EstimateError::ZeroOrder);
    }
    let n = series.len();
    if n <= p {
        return Err(EstimateError::TooShort { n, p });
    }
    let sq: Vec<f64> = series.iter().map(|&x| (x as f64) * (x as f64)).collect();
    let rows = n - p;
    let y = DVector::from_iterator(rows, sq[p..].iter().copied());
    let design = DMatrix::from_fn(rows, p + 1, |r, c| if c == 0 { 1.0 } else { sq[p + r - c] });
    Ok(RegressionData { p, y, design })
}

/// Unconstrained least-squares estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct OlsSolution {
    pub theta: Vec<f64>,
    /// Smallest over largest Cholesky pivot of `X'X`.
    pub pivot_ratio: f64,
    /// The normal equations were near-singular and a pseudo-inverse was used.
    pub ill_conditioned: bool,
}

/// Solves `a x = b` for symmetric positive semidefinite `a`.
///
/// Uses Cholesky when the pivot ratio is acceptable; otherwise falls back to
/// the SVD pseudo-inverse unless `a` is numerically rank deficient.
fn solve_spd(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Result<(DVector<f64>, f64, bool), EstimateError> {
    let ratio = pivot_ratio(a);
    if ratio >= PIVOT_RATIO_TOL {
        if let Some(ch) = a.clone().cholesky() {
            return Ok((ch.solve(b), ratio, false));
        }
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = a.nrows() as f64 * f64::EPSILON * smax;
    if smax <= 0.0 || svd.singular_values.iter().any(|&s| s <= tol) {
        return Err(EstimateError::Singular { pivot_ratio: ratio });
    }
    let x = svd
        .solve(b, tol)
        .map_err(|_| EstimateError::Singular { pivot_ratio: ratio })?;
    Ok((x, ratio, true))
}

fn invert_spd(a: &DMatrix<f64>) -> Result<DMatrix<f64>, EstimateError> {
    let n = a.nrows();
    let mut inv = DMatrix::zeros(n, n);
    for j in 0..n {
        let (col, _, _) = solve_spd(a, &DVector::from_fn(n, |i, _| f64::from(u8::from(i == j))))?;
        inv.set_column(j, &col);
    }
    Ok((&inv + inv.transpose()) * 0.5)
}

/// `min L_ii^2 / max L_ii^2` for the Cholesky factor of `a`, or 0 when the
/// factorization breaks down.
fn pivot_ratio(a: &DMatrix<f64>) -> f64 {
    match a.clone().cholesky() {
        Some(ch) => {
            let d: Vec<f64> = ch.l_dirty().diagonal().iter().map(|x| x * x).collect();
            let max = d.iter().copied().fold(0.0, f64::max);
            let min = d.iter().copied().fold(f64::INFINITY, f64::min);
            if max > 0.0 {
                min / max
            } else {
                0.0
            }
        }
        None => 0.0,
    }
}

/// `theta = (X'X)^{-1} X'y`.
pub fn olse(data: &RegressionData) -> Result<OlsSolution, EstimateError> {
    let (theta, pivot_ratio, ill_conditioned) = solve_spd(&data.gram(), &data.moment())?;
    Ok(OlsSolution {
        theta: theta.iter().copied().collect(),
        pivot_ratio,
        ill_conditioned,
    })
}

/// Lower bound of coordinate `i`: `omega_min` for the intercept, 0 otherwise.
fn lower_bound(i: usize, omega_min: f64) -> f64 {
    if i == 0 {
        omega_min
    } else {
        0.0
    }
}

/// Minimizer of `||y - X theta||^2` over `omega >= omega_min`, `alpha_i >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstrainedSolution {
    pub theta: Vec<f64>,
    /// Coordinates held at their bound.
    pub active: Vec<usize>,
    pub ill_conditioned: bool,
    /// Largest KKT violation, scaled by the size of the gradient terms.
    pub kkt_violation: f64,
}

/// KKT residual at `theta` for the bound-constrained problem, scaled by
/// `1 + max |X'y|`.
pub fn kkt_violation(
    data: &RegressionData,
    theta: &[f64],
    active: &[usize],
    omega_min: f64,
) -> f64 {
    let g = data.half_gradient(theta);
    let scale = 1.0 + data.moment().amax();
    let mut worst: f64 = 0.0;
    for (i, &t) in theta.iter().enumerate() {
        let lb = lower_bound(i, omega_min);
        worst = worst.max((lb - t).max(0.0) / (1.0 + lb.abs()));
        if active.contains(&i) {
            // Multiplier of an active lower bound is the gradient itself.
            worst = worst.max(-g[i] / scale);
        } else {
            worst = worst.max(g[i].abs() / scale);
        }
    }
    worst
}

/// Enumerates the `2^{p+1}` active sets and keeps the feasible one with the
/// smallest residual sum of squares, then checks its KKT conditions.
pub fn constrained_olse(
    data: &RegressionData,
    omega_min: f64,
) -> Result<ConstrainedSolution, EstimateError> {
    if !(omega_min > 0.0 && omega_min.is_finite()) {
        return Err(EstimateError::BadOmegaMin(omega_min));
    }
    if data.p > MAX_CONSTRAINED_ORDER {
        return Err(EstimateError::OrderTooLarge(data.p));
    }
    let free_fit = olse(data)?;
    let k = data.params();
    if free_fit
        .theta
        .iter()
        .enumerate()
        .all(|(i, &t)| t >= lower_bound(i, omega_min))
    {
        return Ok(ConstrainedSolution {
            kkt_violation: kkt_violation(data, &free_fit.theta, &[], omega_min),
            theta: free_fit.theta,
            active: Vec::new(),
            ill_conditioned: free_fit.ill_conditioned,
        });
    }

    let gram = data.gram();
    let xty = data.moment();
    let mut best: Option<(f64, ConstrainedSolution)> = None;
    for mask in 1u32..(1 << k) {
        let active: Vec<usize> = (0..k).filter(|i| mask & (1 << i) != 0).collect();
        let free: Vec<usize> = (0..k).filter(|i| mask & (1 << i) == 0).collect();
        let mut theta: Vec<f64> = (0..k).map(|i| lower_bound(i, omega_min)).collect();
        let mut ill = false;
        if !free.is_empty() {
            let g_ff = DMatrix::from_fn(free.len(), free.len(), |r, c| gram[(free[r], free[c])]);
            let rhs = DVector::from_fn(free.len(), |r, _| {
                xty[free[r]]
                    - active
                        .iter()
                        .map(|&a| gram[(free[r], a)] * theta[a])
                        .sum::<f64>()
            });
            let Ok((sol, _, pinv)) = solve_spd(&g_ff, &rhs) else {
                continue;
            };
            ill = pinv;
            for (r, &i) in free.iter().enumerate() {
                theta[i] = sol[r];
            }
        }
        if free.iter().any(|&i| theta[i] < lower_bound(i, omega_min)) {
            continue;
        }
        let rss = data.rss(&theta);
        if best.as_ref().is_none_or(|(b, _)| rss < *b) {
            best = Some((
                rss,
                ConstrainedSolution {
                    kkt_violation: kkt_violation(data, &theta, &active, omega_min),
                    theta,
                    active,
                    ill_conditioned: ill || free_fit.ill_conditioned,
                },
            ));
        }
    }
    match best {
        Some((_, sol)) if sol.kkt_violation <= KKT_TOL => Ok(sol),
        Some((_, sol)) => Err(EstimateError::Infeasible(sol.kkt_violation)),
        None => Err(EstimateError::Infeasible(f64::INFINITY)),
    }
}

/// Moment matrix, residual variance and standard errors of a fit.
#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    /// `X'X / rows`.
    pub sigma_hat: DMatrix<f64>,
    /// `RSS / (rows - (p + 1))`.
    pub eta_sq: f64,
    /// `RSS / rows`.
    pub eta_sq_plain: f64,
    /// `sqrt(eta_sq (sigma_hat^{-1})_ii / rows)`.
    pub se: Vec<f64>,
}

fn check_df(data: &RegressionData) -> Result<(), EstimateError> {
    if data.rows() <= data.params() {
        return Err(EstimateError::NoResidualDf {
            rows: data.rows(),
            params: data.params(),
        });
    }
    Ok(())
}

/// Standard errors from the limit law `N(0, eta^2 Sigma^{-1})`, treating the
/// innovation variance as constant.
pub fn asymptotic_inference(
    data: &RegressionData,
    theta: &[f64],
) -> Result<Inference, EstimateError> {
    check_df(data)?;
    let rows = data.rows() as f64;
    let sigma_hat = data.gram() / rows;
    let inv = invert_spd(&sigma_hat)?;
    let rss = data.rss(theta);
    let eta_sq = rss / (data.rows() - data.params()) as f64;
    let se = (0..data.params())
        .map(|i| (eta_sq * inv[(i, i)] / rows).max(0.0).sqrt())
        .collect();
    Ok(Inference {
        sigma_hat,
        eta_sq,
        eta_sq_plain: rss / rows,
        se,
    })
}

/// Heteroskedasticity-consistent standard errors from
/// `Sigma^{-1} (sum_t x_t x_t' e_t^2 / rows) Sigma^{-1} / rows`, scaled by
/// `rows / (rows - (p + 1))`.
pub fn robust_inference(data: &RegressionData, theta: &[f64]) -> Result<Inference, EstimateError> {
    let mut base = asymptotic_inference(data, theta)?;
    let rows = data.rows() as f64;
    let inv = invert_spd(&base.sigma_hat)?;
    let e = data.residuals(theta);
    let k = data.params();
    let mut meat = DMatrix::zeros(k, k);
    for (t, row) in data.design.row_iter().enumerate() {
        meat += row.transpose() * row * (e[t] * e[t]);
    }
    meat /= rows;
    let dof = rows / (rows - k as f64);
    let cov = &inv * meat * &inv * (dof / rows);
    base.se = (0..k).map(|i| cov[(i, i)].max(0.0).sqrt()).collect();
    Ok(base)
}

/// Estimate with its inference and constraint bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    /// `(omega, alpha_1, ..., alpha_p)`.
    pub theta: Vec<f64>,
    pub se: Vec<f64>,
    pub sigma_hat: DMatrix<f64>,
    pub eta_sq: f64,
    pub eta_sq_plain: f64,
    /// Produced by the bound-constrained solver.
    pub constrained: bool,
    pub active_constraints: Vec<usize>,
    pub ill_conditioned: bool,
}

impl FitResult {
    pub fn p(&self) -> usize {
        self.theta.len() - 1
    }

    pub fn csv_header(p: usize) -> String {
        let mut cols = vec!["p".to_string(), "omega_hat".into()];
        cols.extend((1..=p).map(|i| format!("alpha_{i}")));
        cols.push("se_omega".into());
        cols.extend((1..=p).map(|i| format!("se_{i}")));
        cols.extend(["eta_sq".into(), "constrained".into()]);
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut cols = vec![self.p().to_string()];
        cols.extend(self.theta.iter().map(|&x| fmt_sig(x)));
        cols.extend(self.se.iter().map(|&x| fmt_sig(x)));
        cols.push(fmt_sig(self.eta_sq));
        cols.push(self.constrained.to_string());
        cols.join(",")
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{}", Self::csv_header(self.p()))?;
        writeln!(out, "{}", self.csv_row())
    }
}

/// How to fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub constrained: bool,
    pub omega_min: f64,
    /// Report heteroskedasticity-consistent standard errors.
    pub robust_se: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            constrained: false,
            omega_min: DEFAULT_OMEGA_MIN,
            robust_se: false,
        }
    }
}

pub fn fit(data: &RegressionData, opts: &FitOptions) -> Result<FitResult, EstimateError> {
    check_df(data)?;
    let (theta, active, ill) = if opts.constrained {
        let s = constrained_olse(data, opts.omega_min)?;
        (s.theta, s.active, s.ill_conditioned)
    } else {
        let s = olse(data)?;
        (s.theta, Vec::new(), s.ill_conditioned)
    };
    let inf = if opts.robust_se {
        robust_inference(data, &theta)?
    } else {
        asymptotic_inference(data, &theta)?
    };
    Ok(FitResult {
        theta,
        se: inf.se,
        sigma_hat: inf.sigma_hat,
        eta_sq: inf.eta_sq,
        eta_sq_plain: inf.eta_sq_plain,
        constrained: opts.constrained,
        active_constraints: active,
        ill_conditioned: ill,
    })
}

/// Bounds on the stationary second and fourth moments of a Skellam-ARCH(p)
/// process. Infinite when the corresponding moment condition fails.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentBounds {
    /// `omega / (1 - alpha)`, `alpha = sum alpha_i`.
    pub bound2: f64,
    /// `omega_bar / (1 - 3 alpha^2)` with
    /// `omega_bar = omega + 3 omega^2 + (1 + 6 omega) alpha omega / (1 - alpha)`.
    pub bound4: f64,
}

pub fn moment_bounds(omega: f64, alphas: &[f64]) -> MomentBounds {
    let a: f64 = alphas.iter().sum();
    if a >= 1.0 {
        return MomentBounds {
            bound2: f64::INFINITY,
            bound4: f64::INFINITY,
        };
    }
    let bound2 = omega / (1.0 - a);
    let bound4 = if 3.0 * a * a < 1.0 {
        let omega_bar = omega + 3.0 * omega * omega + (1.0 + 6.0 * omega) * a * omega / (1.0 - a);
        omega_bar / (1.0 - 3.0 * a * a)
    } else {
        f64::INFINITY
    };
    MomentBounds { bound2, bound4 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::Family;
    use crate::model::{simulate, SimulationOptions, VolatilitySpec};
    use crate::stats::mean_se;
    use proptest::prelude::*;

    const TOY: [i64; 5] = [1, 2, 1, 0, 3];

    fn toy() -> RegressionData {
        build_regression(&TOY, 1).unwrap()
    }

    #[test]
    fn regression_layout() {
        let d = toy();
        assert_eq!(d.y.as_slice(), &[4.0, 1.0, 0.0, 9.0]);
        let rows: Vec<Vec<f64>> = d
            .design
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect();
        assert_eq!(
            rows,
            vec![
                vec![1.0, 1.0],
                vec![1.0, 4.0],
                vec![1.0, 1.0],
                vec![1.0, 0.0]
            ]
        );
    }

    #[test]
    fn regression_boundaries() {
        let d = build_regression(&[1, 2, 3, -4], 3).unwrap();
        assert_eq!(d.rows(), 1);
        assert_eq!(
            d.design.row(0).iter().copied().collect::<Vec<_>>(),
            vec![1.0, 9.0, 4.0, 1.0]
        );
        assert_eq!(
            build_regression(&[1, 2], 2),
            Err(EstimateError::TooShort { n: 2, p: 2 })
        );
        assert_eq!(build_regression(&[1, 2], 0), Err(EstimateError::ZeroOrder));
    }

    #[test]
    fn toy_olse() {
        // Sxy = -13, Sxx = 9 around means (1.5, 3.5).
        let s = olse(&toy()).unwrap();
        assert!((s.theta[1] + 13.0 / 9.0).abs() < 1e-12);
        assert!((s.theta[0] - (3.5 + 1.5 * 13.0 / 9.0)).abs() < 1e-12);
        assert!((s.theta[0] - 5.6667).abs() < 1e-4);
        assert!((s.theta[1] + 1.4444).abs() < 1e-4);
        assert!(!s.ill_conditioned);
    }

    #[test]
    fn constant_series_is_singular() {
        let d = build_regression(&[2, -2, 2, 2, -2, 2], 1).unwrap();
        assert!(matches!(olse(&d), Err(EstimateError::Singular { .. })));
        assert!(matches!(
            fit(&d, &FitOptions::default()),
            Err(EstimateError::Singular { .. })
        ));
    }

    #[test]
    fn exact_linear_response_is_recovered() {
        // y = 2 + 0.5 x exactly with x = X_{t-1}^2 requires X_t^2 = 2 + 0.5 X_{t-1}^2.
        let series = [2, 3, 2, 3];
        let d = build_regression(&series, 1).unwrap();
        let s = olse(&d).unwrap();
        let r = d.residuals(&s.theta);
        assert!(r.amax() < 1e-9, "{r}");
        // Pairs (4 -> 9), (9 -> 4): slope -1, intercept 13.
        assert!((s.theta[0] - 13.0).abs() < 1e-9 && (s.theta[1] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn toy_constrained() {
        let d = toy();
        let s = constrained_olse(&d, DEFAULT_OMEGA_MIN).unwrap();
        assert_eq!(s.theta[1], 0.0);
        assert!((s.theta[0] - 3.5).abs() < 1e-12);
        assert_eq!(s.active, vec![1]);
        // Gradient of rss/2 in alpha at the optimum is nonnegative.
        assert!(d.half_gradient(&s.theta)[1] >= 0.0);
        assert!(s.kkt_violation <= 1e-12);
    }

    #[test]
    fn feasible_optimum_is_unchanged() {
        let spec = VolatilitySpec::arch(1.5, vec![0.26]).unwrap();
        let xs: Vec<i64> = simulate(&spec, &Family::SkellamSym, &SimulationOptions::new(2000), 7)
            .unwrap()
            .iter()
            .map(|r| r.x)
            .collect();
        let d = build_regression(&xs, 1).unwrap();
        let free = olse(&d).unwrap();
        assert!(free.theta.iter().all(|&t| t > 0.0));
        let c = constrained_olse(&d, DEFAULT_OMEGA_MIN).unwrap();
        assert_eq!(c.theta, free.theta);
        assert!(c.active.is_empty());
    }

    #[test]
    fn invalid_omega_min() {
        assert!(matches!(
            constrained_olse(&toy(), 0.0),
            Err(EstimateError::BadOmegaMin(_))
        ));
    }

    #[test]
    fn zero_residuals_give_zero_se() {
        let d = RegressionData {
            p: 1,
            y: DVector::from_vec(vec![3.0, 5.0, 9.0]),
            design: DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 1.0, 2.0, 1.0, 4.0]),
        };
        let s = olse(&d).unwrap();
        let inf = asymptotic_inference(&d, &s.theta).unwrap();
        assert!(inf.se.iter().all(|&x| x < 1e-7), "{:?}", inf.se);
    }

    #[test]
    fn inference_formulas() {
        let d = toy();
        let s = olse(&d).unwrap();
        let inf = asymptotic_inference(&d, &s.theta).unwrap();
        let rss = d.rss(&s.theta);
        assert!((inf.eta_sq - rss / 2.0).abs() < 1e-12);
        assert!((inf.eta_sq_plain - rss / 4.0).abs() < 1e-12);
        // Slope variance in simple regression is eta^2 / Sxx.
        assert!((inf.se[1] - (inf.eta_sq / 9.0).sqrt()).abs() < 1e-12);
        assert_eq!(inf.sigma_hat, inf.sigma_hat.transpose());
        assert!(matches!(
            asymptotic_inference(&build_regression(&[1, 2, 3], 1).unwrap(), &[0.0, 0.0]),
            Err(EstimateError::NoResidualDf { .. })
        ));
    }

    #[test]
    fn iid_intercept_se_matches_skellam_fourth_moment() {
        // alpha = 0: Var(X^2) = E X^4 - v^2 = v + 2 v^2.
        let v = 1.5;
        let spec = VolatilitySpec::arch(v, vec![0.0]).unwrap();
        let n = 4000;
        let mut ses = Vec::new();
        let mut omegas = Vec::new();
        for seed in 0..200 {
            let xs: Vec<i64> = simulate(
                &spec,
                &Family::SkellamSym,
                &SimulationOptions::new(n).burn_in(0),
                seed,
            )
            .unwrap()
            .iter()
            .map(|r| r.x)
            .collect();
            let f = fit(&build_regression(&xs, 1).unwrap(), &FitOptions::default()).unwrap();
            ses.push(f.se[0]);
            omegas.push(f.theta[0]);
        }
        let var_x2 = v + 2.0 * v * v;
        // With alpha_hat estimated alongside, se(omega) also carries the
        // slope uncertainty: Var = var_x2 (1 + mu^2 / var_x2) / n.
        let expected = ((var_x2 + v * v) / n as f64).sqrt();
        let m = mean_se(&ses);
        assert!(
            (m.mean - expected).abs() / expected < 0.05,
            "{} vs {}",
            m.mean,
            expected
        );
        let sd = mean_se(&omegas).se * (omegas.len() as f64).sqrt();
        assert!((sd - expected).abs() / expected < 0.2, "{sd} vs {expected}");
    }

    #[test]
    fn moment_bound_arithmetic() {
        let b = moment_bounds(1.5, &[0.26]);
        assert!((b.bound2 - 1.5 / 0.74).abs() < 1e-12);
        assert!((b.bound2 - 2.027027).abs() < 1e-6);
        let ob = 1.5 + 3.0 * 2.25 + (1.0 + 9.0) * 0.26 * 1.5 / 0.74;
        assert!((b.bound4 - ob / (1.0 - 3.0 * 0.26 * 0.26)).abs() < 1e-12);

        let b = moment_bounds(2.0, &[0.0]);
        assert_eq!(b.bound2, 2.0);
        assert_eq!(b.bound4, 2.0 + 12.0);

        let b = moment_bounds(1.0, &[0.6]);
        assert!((b.bound2 - 2.5).abs() < 1e-12);
        assert!(b.bound4.is_infinite());
        assert!(moment_bounds(1.0, &[0.5, 0.6]).bound2.is_infinite());
    }

    #[test]
    fn fit_csv_layout() {
        assert_eq!(
            FitResult::csv_header(2),
            "p,omega_hat,alpha_1,alpha_2,se_omega,se_1,se_2,eta_sq,constrained"
        );
        let f = fit(
            &toy(),
            &FitOptions {
                constrained: true,
                ..Default::default()
            },
        )
        .unwrap();
        let row = f.csv_row();
        assert!(row.starts_with("1,3.5,0,"), "{row}");
        assert!(row.ends_with(",true"));
    }

    fn series_strategy() -> impl Strategy<Value = (Vec<i64>, usize)> {
        (1usize..=3).prop_flat_map(|p| (prop::collection::vec(-6i64..=6, (p + 8)..60), Just(p)))
    }

    proptest! {
        #[test]
        fn residuals_are_orthogonal_to_design((xs, p) in series_strategy()) {
            let d = build_regression(&xs, p).unwrap();
            if let Ok(s) = olse(&d) {
                prop_assume!(!s.ill_conditioned);
                let g = d.half_gradient(&s.theta);
                let scale = 1.0 + d.moment().amax();
                prop_assert!(g.amax() / scale < 1e-8, "{}", g);
            }
        }

        #[test]
        fn constrained_fits_satisfy_kkt((xs, p) in series_strategy(), omega_min in 1e-8f64..2.0) {
            let d = build_regression(&xs, p).unwrap();
            if let Ok(s) = constrained_olse(&d, omega_min) {
                prop_assert!(s.theta[0] >= omega_min);
                prop_assert!(s.theta[1..].iter().all(|&a| a >= 0.0));
                prop_assert!(kkt_violation(&d, &s.theta, &s.active, omega_min) <= 1e-8);
                // No feasible point on a coarse grid beats the reported optimum.
                let best = d.rss(&s.theta);
                for step in [0.5, 1.0, 2.0] {
                    let mut t = s.theta.clone();
                    t[0] = (t[0] + step).max(omega_min);
                    prop_assert!(d.rss(&t) >= best - 1e-9 * (1.0 + best));
                }
            }
        }
    }
}
