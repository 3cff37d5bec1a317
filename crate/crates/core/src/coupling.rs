//! Two-chain coupling of the squared-state Markov chain
//! `Z_t = (X_t^2, ..., X_{t-p+1}^2, v_t, ..., v_{t-q+1})`.
//!
//! The squares of the two new counts are coupled comonotonically through one
//! shared uniform, and their signs are coupled so that `|X| = |X'|` with
//! `X != X'` is as unlikely as the marginals allow. Under a contractive
//! volatility map the weighted L1 distance
//!
//! ```text
//! Delta(z, z') = sum_i gamma_i |x_i^2 - x_i'^2| + sum_j delta_j |v_j - v_j'|
//! ```
//!
//! shrinks in expectation by the factor `kappa < 1` per step, which yields
//! geometric bounds on the beta-mixing coefficients of the count process.

use std::io::{self, Write};

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::dist::{DistError, Family, PmfTable, SquareLaw, DEFAULT_TAIL_EPS};
use crate::io::fmt_sig;
use crate::model::{Chain, ModelError, SquaredState, VolatilitySpec};
use crate::rng;
use crate::stats::{ls_slope, mean_se};

/// Burn-in used to approximate a stationary draw of the initial states.
pub const DEFAULT_WARMUP: usize = 1000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CouplingError {
    #[error("volatility recursion is not contractive: L = {0} >= 1")]
    NotContractive(f64),
    #[error("at least one squared-count lag is required")]
    NoLags,
    #[error("state dimensions ({got_p}, {got_q}) do not match weights ({p}, {q})")]
    Dimension {
        p: usize,
        q: usize,
        got_p: usize,
        got_q: usize,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("quantile level {u} beyond the truncated support of the law at v = {v}")]
    TruncationExhausted { u: f64, v: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dist(#[from] DistError),
}

/// Metric weights `(gamma, delta)` and contraction factor `kappa`.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingWeights {
    pub gamma: Vec<f64>,
    pub delta: Vec<f64>,
    pub kappa: f64,
    pub epsilon: f64,
}

impl CouplingWeights {
    /// Builds weights from Lipschitz constants `c` (squared counts) and `d`
    /// (volatilities) with `sum c + sum d < 1`.
    ///
    /// With `eps = (1 - L) / (p + q)` the weights solve the descending
    /// recursions `gamma_p = c_p + eps`, `gamma_i = c_i + gamma_{i+1} + eps`
    /// (likewise for `delta`), which forces `gamma_1 + delta_1 = 1`. `kappa` is
    /// the largest ratio `(c_i + gamma_{i+1}) / gamma_i`, `c_p / gamma_p`,
    /// `(d_j + delta_{j+1}) / delta_j`, `d_q / delta_q`, nudged up by ulps
    /// until every weight inequality holds in floating point.
    pub fn compute(c: &[f64], d: &[f64]) -> Result<Self, CouplingError> {
        if c.is_empty() {
            return Err(CouplingError::NoLags);
        }
        if let Some(bad) = c.iter().chain(d).find(|x| !(x.is_finite() && **x >= 0.0)) {
            return Err(CouplingError::Config(format!(
                "Lipschitz constants must be finite and nonnegative, got {bad}"
            )));
        }
        let total = c.iter().sum::<f64>() + d.iter().sum::<f64>();
        if total >= 1.0 {
            return Err(CouplingError::NotContractive(total));
        }
        let epsilon = (1.0 - total) / (c.len() + d.len()) as f64;
        let gamma = descending_weights(c, epsilon);
        let delta = descending_weights(d, epsilon);

        let ratio = |coef: &[f64], w: &[f64], i: usize| {
            (coef[i] + w.get(i + 1).copied().unwrap_or(0.0)) / w[i]
        };
        let kappa = (0..c.len())
            .map(|i| ratio(c, &gamma, i))
            .chain((0..d.len()).map(|j| ratio(d, &delta, j)))
            .fold(0.0, f64::max);

        let mut w = CouplingWeights {
            gamma,
            delta,
            kappa,
            epsilon,
        };
        while w.max_violation(c, d) > 0.0 {
            w.kappa = w.kappa.next_up();
        }
        Ok(w)
    }

    pub fn from_spec(spec: &VolatilitySpec) -> Result<Self, CouplingError> {
        let l = spec.lipschitz_constants();
        Self::compute(&l.c, &l.d)
    }

    pub fn p(&self) -> usize {
        self.gamma.len()
    }

    pub fn q(&self) -> usize {
        self.delta.len()
    }

    /// `gamma_1 + delta_1`, with `delta_1 = 0` when there are no volatility lags.
    pub fn leading_sum(&self) -> f64 {
        self.gamma[0] + self.delta.first().copied().unwrap_or(0.0)
    }

    /// Largest `lhs - kappa * rhs` over the `p + q` weight inequalities
    ///
    /// ```text
    /// (gamma_1 + delta_1) c_i + gamma_{i+1} <= kappa gamma_i   (gamma_{p+1} = 0)
    /// (gamma_1 + delta_1) d_j + delta_{j+1} <= kappa delta_j   (delta_{q+1} = 0)
    /// ```
    ///
    /// Nonpositive means all of them hold.
    pub fn max_violation(&self, c: &[f64], d: &[f64]) -> f64 {
        let s = self.leading_sum();
        let side = |coef: &[f64], w: &[f64]| {
            (0..coef.len())
                .map(|i| s * coef[i] + w.get(i + 1).copied().unwrap_or(0.0) - self.kappa * w[i])
                .fold(f64::NEG_INFINITY, f64::max)
        };
        let g = side(c, &self.gamma);
        if d.is_empty() {
            g
        } else {
            g.max(side(d, &self.delta))
        }
    }

    /// `Delta_{gamma,delta}(z, z')`.
    pub fn delta_metric(
        &self,
        z: &SquaredState,
        z_prime: &SquaredState,
    ) -> Result<f64, CouplingError> {
        for s in [z, z_prime] {
            if s.x_sq_lags.len() != self.p() || s.v_lags.len() != self.q() {
                return Err(CouplingError::Dimension {
                    p: self.p(),
                    q: self.q(),
                    got_p: s.x_sq_lags.len(),
                    got_q: s.v_lags.len(),
                });
            }
        }
        let xs: f64 = self
            .gamma
            .iter()
            .zip(z.x_sq_lags.iter().zip(&z_prime.x_sq_lags))
            .map(|(g, (&a, &b))| g * a.abs_diff(b) as f64)
            .sum();
        let vs: f64 = self
            .delta
            .iter()
            .zip(z.v_lags.iter().zip(&z_prime.v_lags))
            .map(|(d, (a, b))| d * (a - b).abs())
            .sum();
        Ok(xs + vs)
    }
}

fn descending_weights(coef: &[f64], epsilon: f64) -> Vec<f64> {
    let mut w = vec![0.0; coef.len()];
    let mut next = 0.0;
    for i in (0..coef.len()).rev() {
        w[i] = coef[i] + next + epsilon;
        next = w[i];
    }
    w
}

/// Free-function form of [`CouplingWeights::compute`].
pub fn compute_weights(c: &[f64], d: &[f64]) -> Result<CouplingWeights, CouplingError> {
    CouplingWeights::compute(c, d)
}

/// Free-function form of [`CouplingWeights::delta_metric`].
pub fn delta_metric(
    z: &SquaredState,
    z_prime: &SquaredState,
    w: &CouplingWeights,
) -> Result<f64, CouplingError> {
    w.delta_metric(z, z_prime)
}

/// Pair of squared-form states moved by the coupling kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledState {
    pub z: SquaredState,
    pub z_prime: SquaredState,
    /// `z == z_prime` componentwise; the diagonal is absorbing.
    pub coupled: bool,
}

impl CoupledState {
    pub fn new(z: SquaredState, z_prime: SquaredState) -> Self {
        let coupled = z == z_prime;
        CoupledState {
            z,
            z_prime,
            coupled,
        }
    }
}

/// One draw of the coupling kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoupledDraw {
    pub x: i64,
    pub x_prime: i64,
    pub v: f64,
    pub v_prime: f64,
}

/// Joint sign law of `(X, X')` on the event `W = W' = k^2`, as unnormalized
/// masses, plus the residual sign masses each chain keeps for the event where
/// the squares differ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignCoupling {
    /// `P(W = W' = k^2)`.
    pub overlap: f64,
    pub plus_plus: f64,
    pub minus_minus: f64,
    pub plus_minus: f64,
    pub minus_plus: f64,
    /// Whether the sign-agreement masses `p_k ^ p'_k + p_-k ^ p'_-k` fit
    /// inside the overlap (first branch) or had to be scaled down into it.
    pub full_agreement: bool,
}

impl SignCoupling {
    /// Couples signs at `|X| = |X'| = k` given the four point masses and the
    /// overlap mass `m`.
    ///
    /// If `(p_k ^ p'_k) + (p_-k ^ p'_-k) <= m`, equal signs get exactly those
    /// masses and the remainder goes to opposite signs within the marginal
    /// capacities. Otherwise equal-sign masses are scaled by
    /// `m / ((p_k ^ p'_k) + (p_-k ^ p'_-k))` and opposite signs get nothing.
    pub fn new(p_plus: f64, p_minus: f64, q_plus: f64, q_minus: f64, overlap: f64) -> Self {
        let a = p_plus.min(q_plus);
        let b = p_minus.min(q_minus);
        if a + b <= overlap {
            let rest = overlap - a - b;
            let cap_pm = (p_plus - a).min(q_minus - b).max(0.0);
            let plus_minus = rest.min(cap_pm);
            SignCoupling {
                overlap,
                plus_plus: a,
                minus_minus: b,
                plus_minus,
                minus_plus: (rest - plus_minus).max(0.0),
                full_agreement: true,
            }
        } else {
            let scale = overlap / (a + b);
            SignCoupling {
                overlap,
                plus_plus: a * scale,
                minus_minus: b * scale,
                plus_minus: 0.0,
                minus_plus: 0.0,
                full_agreement: false,
            }
        }
    }

    /// Masses of `X = +k`, `X = -k` inside the overlap.
    fn first_marginal(&self) -> (f64, f64) {
        (
            self.plus_plus + self.plus_minus,
            self.minus_minus + self.minus_plus,
        )
    }

    fn second_marginal(&self) -> (f64, f64) {
        (
            self.plus_plus + self.minus_plus,
            self.minus_minus + self.plus_minus,
        )
    }
}

/// Everything the kernel needs about `Q_v` for one step.
#[derive(Debug, Clone)]
pub struct StepLaw {
    pub v: f64,
    pub pmf: PmfTable,
    pub squares: SquareLaw,
}

impl StepLaw {
    pub fn new(family: &Family, v: f64, tail_eps: f64) -> Result<Self, DistError> {
        let pmf = family.pmf_table(v, tail_eps)?;
        let squares = SquareLaw::from_pmf(&pmf);
        Ok(StepLaw { v, pmf, squares })
    }
}

/// `P(W = W' = k^2)` under the shared-uniform coupling of the two square laws.
pub fn overlap_mass(a: &SquareLaw, b: &SquareLaw, k: u64) -> f64 {
    let hi = a.cdf_at_root(k).min(b.cdf_at_root(k));
    let lo = a.cdf_below_root(k).max(b.cdf_below_root(k));
    (hi - lo).max(0.0)
}

/// Sign coupling at `k >= 1` for the pair of laws.
pub fn sign_coupling(a: &StepLaw, b: &StepLaw, k: u64) -> SignCoupling {
    let k = k as i64;
    SignCoupling::new(
        a.pmf.at(k),
        a.pmf.at(-k),
        b.pmf.at(k),
        b.pmf.at(-k),
        overlap_mass(&a.squares, &b.squares, k as u64),
    )
}

fn pick_sign(plus: f64, minus: f64, u: f64) -> i64 {
    let total = plus + minus;
    if total <= 0.0 || u * total < plus {
        1
    } else {
        -1
    }
}

/// Draws `(X, X')` from the coupling of `a` and `b`.
///
/// Consumes exactly three uniforms: the shared level for the squares and two
/// sign variates.
pub fn draw_pair<R: Rng + ?Sized>(
    a: &StepLaw,
    b: &StepLaw,
    rng: &mut R,
) -> Result<(i64, i64), CouplingError> {
    let u: f64 = rng.random();
    let s1: f64 = rng.random();
    let s2: f64 = rng.random();

    let w = a.squares.quantile(u);
    if w.truncated {
        return Err(CouplingError::TruncationExhausted { u, v: a.v });
    }
    let k = w.root;
    let signed = |k: u64, sign: i64| sign * k as i64;

    if a.v.to_bits() == b.v.to_bits() {
        let x = if k == 0 {
            0
        } else {
            signed(k, pick_sign(a.pmf.at(k as i64), a.pmf.at(-(k as i64)), s1))
        };
        return Ok((x, x));
    }

    let w2 = b.squares.quantile(u);
    if w2.truncated {
        return Err(CouplingError::TruncationExhausted { u, v: b.v });
    }
    let k2 = w2.root;

    if k == k2 {
        if k == 0 {
            return Ok((0, 0));
        }
        let sc = sign_coupling(a, b, k);
        let cells = [
            (sc.plus_plus, 1, 1),
            (sc.minus_minus, -1, -1),
            (sc.plus_minus, 1, -1),
            (sc.minus_plus, -1, 1),
        ];
        let total: f64 = cells.iter().map(|c| c.0).sum();
        let mut target = s1 * total;
        for &(m, sx, sy) in &cells {
            if target < m {
                return Ok((signed(k, sx), signed(k, sy)));
            }
            target -= m;
        }
        // Rounding left the target past the last positive cell.
        let &(_, sx, sy) = cells.iter().rev().find(|c| c.0 > 0.0).unwrap_or(&cells[0]);
        return Ok((signed(k, sx), signed(k, sy)));
    }

    let residual_sign = |law: &StepLaw, k: u64, first: bool, s: f64| -> i64 {
        if k == 0 {
            return 1;
        }
        let sc = sign_coupling(a, b, k);
        let (in_plus, in_minus) = if first {
            sc.first_marginal()
        } else {
            sc.second_marginal()
        };
        let p_plus = law.pmf.at(k as i64);
        let p_minus = law.pmf.at(-(k as i64));
        let r_plus = (p_plus - in_plus).max(0.0);
        let r_minus = (p_minus - in_minus).max(0.0);
        if r_plus + r_minus > 0.0 {
            pick_sign(r_plus, r_minus, s)
        } else {
            pick_sign(p_plus, p_minus, s)
        }
    };
    let x = signed(k, residual_sign(a, k, true, s1));
    let x2 = signed(k2, residual_sign(b, k2, false, s2));
    Ok((x, x2))
}

/// Advances both chains one step with the coupling kernel.
pub fn coupled_step<R: Rng + ?Sized>(
    state: &CoupledState,
    spec: &VolatilitySpec,
    family: &Family,
    rng: &mut R,
) -> Result<(CoupledState, CoupledDraw), CouplingError> {
    coupled_step_with(state, spec, family, DEFAULT_TAIL_EPS, rng)
}

pub fn coupled_step_with<R: Rng + ?Sized>(
    state: &CoupledState,
    spec: &VolatilitySpec,
    family: &Family,
    tail_eps: f64,
    rng: &mut R,
) -> Result<(CoupledState, CoupledDraw), CouplingError> {
    let v = spec.eval_volatility(&state.z.x_sq_lags, &state.z.v_lags, family)?;
    let v_prime = if state.coupled {
        v
    } else {
        spec.eval_volatility(&state.z_prime.x_sq_lags, &state.z_prime.v_lags, family)?
    };
    let a = StepLaw::new(family, v, tail_eps)?;
    let b = if state.coupled {
        a.clone()
    } else {
        StepLaw::new(family, v_prime, tail_eps)?
    };
    let (x, x_prime) = draw_pair(&a, &b, rng)?;

    let mut z = state.z.clone();
    z.push(x.unsigned_abs().pow(2), v);
    let next = if state.coupled {
        CoupledState {
            z_prime: z.clone(),
            z,
            coupled: true,
        }
    } else {
        let mut z_prime = state.z_prime.clone();
        z_prime.push(x_prime.unsigned_abs().pow(2), v_prime);
        CoupledState::new(z, z_prime)
    };
    Ok((
        next,
        CoupledDraw {
            x,
            x_prime,
            v,
            v_prime,
        },
    ))
}

/// Which form of the geometric beta-mixing bound applies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundMode {
    /// Counts are nonnegative.
    Nonnegative,
    /// Conditional pmfs are symmetric about zero.
    Symmetric,
    /// General case, with `K` bounding the total variation between `Q_v`
    /// and `Q_v'` by `K |v - v'|`.
    Lipschitz(f64),
}

impl BoundMode {
    /// Nonnegative or symmetric when the family is, otherwise `None`.
    pub fn for_family(family: &Family) -> Option<Self> {
        if family.is_nonnegative() {
            Some(BoundMode::Nonnegative)
        } else if family.is_symmetric() {
            Some(BoundMode::Symmetric)
        } else {
            None
        }
    }
}

/// Geometric bound on `beta(n)`:
/// `C kappa^n / (1 - kappa) * E Delta(Z_0, Z_0')` with `C = 1 / gamma_1`, or
/// `C = 1 / gamma_1 + K / delta_1` in the Lipschitz case.
pub fn analytic_beta_bound(
    w: &CouplingWeights,
    n: usize,
    e_delta0: f64,
    mode: BoundMode,
) -> Result<f64, CouplingError> {
    if w.kappa >= 1.0 {
        return Err(CouplingError::NotContractive(w.kappa));
    }
    let lead = match mode {
        BoundMode::Nonnegative | BoundMode::Symmetric => 1.0 / w.gamma[0],
        BoundMode::Lipschitz(k) => {
            let d1 = w.delta.first().ok_or_else(|| {
                CouplingError::Config(
                    "the Lipschitz form of the bound needs at least one volatility lag".into(),
                )
            })?;
            1.0 / w.gamma[0] + k / d1
        }
    };
    Ok(lead * w.kappa.powi(n as i32) / (1.0 - w.kappa) * e_delta0)
}

/// `max_v TV(Q_v, Q_{v+h}) / h` over `v_grid`.
pub fn estimate_tv_lipschitz(
    family: &Family,
    v_grid: &[f64],
    h: f64,
) -> Result<f64, CouplingError> {
    if !(h > 0.0) {
        return Err(CouplingError::Config(format!(
            "step h = {h} must be positive"
        )));
    }
    let mut k_hat: f64 = 0.0;
    for &v in v_grid {
        let a = family.pmf_table(v, DEFAULT_TAIL_EPS)?;
        let b = family.pmf_table(v + h, DEFAULT_TAIL_EPS)?;
        k_hat = k_hat.max(a.total_variation(&b) / h);
    }
    Ok(k_hat)
}

/// Settings of an empirical mixing run.
#[derive(Debug, Clone)]
pub struct MixingOptions {
    pub n_max: usize,
    pub reps: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub tail_eps: f64,
    /// Bound form; chosen from the family when `None`.
    pub mode: Option<BoundMode>,
}

impl MixingOptions {
    pub fn new(n_max: usize, reps: usize, seed: u64) -> Self {
        MixingOptions {
            n_max,
            reps,
            burn_in: DEFAULT_WARMUP,
            seed,
            tail_eps: DEFAULT_TAIL_EPS,
            mode: None,
        }
    }
}

/// Analytic bound and Monte-Carlo coupling estimates per lag `n = 0..=n_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingReport {
    pub n_grid: Vec<usize>,
    pub analytic_bound: Vec<f64>,
    /// `P(X_n != X_n')`.
    pub empirical_disagree: Vec<f64>,
    pub empirical_disagree_se: Vec<f64>,
    /// `P(T > n)` for the first time `T` at which the full states coincide.
    pub empirical_uncoupled: Vec<f64>,
    pub empirical_uncoupled_se: Vec<f64>,
    /// `sum_{k=n}^{n_max} P(X_k != X_k')`, the truncated sum bound.
    pub disagree_tail_sum: Vec<f64>,
    pub disagree_tail_sum_se: Vec<f64>,
    /// Monte-Carlo estimate of `E Delta(Z_0, Z_0')` and its standard error.
    pub e_delta0: f64,
    pub e_delta0_se: f64,
    pub weights: CouplingWeights,
    pub mode: BoundMode,
    pub k_used: Option<f64>,
    pub reps: usize,
}

impl MixingReport {
    /// Lags where `empirical - z * se` exceeds the analytic bound, for the
    /// disagreement and uncoupled curves respectively.
    pub fn bound_violations(&self, z: f64) -> (Vec<usize>, Vec<usize>) {
        let check = |emp: &[f64], se: &[f64]| {
            self.n_grid
                .iter()
                .enumerate()
                .filter(|&(i, _)| emp[i] - z * se[i] > self.analytic_bound[i])
                .map(|(_, &n)| n)
                .collect()
        };
        (
            check(&self.empirical_disagree, &self.empirical_disagree_se),
            check(&self.empirical_uncoupled, &self.empirical_uncoupled_se),
        )
    }

    /// Least-squares slope of `log P(T > n)` over `lo..=hi`.
    ///
    /// The uncoupled curve is nonincreasing, so once it reaches an exact zero
    /// every later point is `log 0 = -inf`, and the slope is `-inf`.
    pub fn uncoupled_log_slope(&self, lo: usize, hi: usize) -> f64 {
        let pts: Vec<(f64, f64)> = self
            .n_grid
            .iter()
            .zip(&self.empirical_uncoupled)
            .filter(|(&n, _)| n >= lo && n <= hi)
            .map(|(&n, &p)| (n as f64, p))
            .collect();
        if pts.iter().any(|&(_, p)| p <= 0.0) {
            return f64::NEG_INFINITY;
        }
        let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
        ls_slope(&xs, &ys)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(
            out,
            "n,analytic,emp_disagree,emp_disagree_se,emp_uncoupled,emp_uncoupled_se"
        )?;
        for (i, n) in self.n_grid.iter().enumerate() {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                n,
                fmt_sig(self.analytic_bound[i]),
                fmt_sig(self.empirical_disagree[i]),
                fmt_sig(self.empirical_disagree_se[i]),
                fmt_sig(self.empirical_uncoupled[i]),
                fmt_sig(self.empirical_uncoupled_se[i]),
            )?;
        }
        Ok(())
    }
}

struct RepTrace {
    disagree: Vec<bool>,
    uncoupled: Vec<bool>,
    delta0: f64,
    v_range: (f64, f64),
}

fn warm_state<R: Rng + ?Sized>(
    spec: &VolatilitySpec,
    family: &Family,
    burn_in: usize,
    rng: &mut R,
) -> Result<(SquaredState, i64, (f64, f64)), CouplingError> {
    let mut chain = Chain::new(spec, family, &spec.default_state())?;
    let mut last = 0;
    let mut range = (f64::INFINITY, f64::NEG_INFINITY);
    for _ in 0..burn_in.max(1) {
        let r = chain.step(rng)?;
        last = r.x;
        range = (range.0.min(r.v), range.1.max(r.v));
    }
    Ok((chain.into_state(), last, range))
}

fn run_replication(
    spec: &VolatilitySpec,
    family: &Family,
    w: &CouplingWeights,
    opts: &MixingOptions,
    rep: usize,
) -> Result<RepTrace, CouplingError> {
    let mut rng = rng::stream(opts.seed, &[rep as u64]);
    let (z0, x0, r0) = warm_state(spec, family, opts.burn_in, &mut rng)?;
    let (z1, x1, r1) = warm_state(spec, family, opts.burn_in, &mut rng)?;
    let delta0 = w.delta_metric(&z0, &z1)?;

    let mut state = CoupledState::new(z0, z1);
    let mut disagree = Vec::with_capacity(opts.n_max + 1);
    let mut uncoupled = Vec::with_capacity(opts.n_max + 1);
    disagree.push(x0 != x1);
    uncoupled.push(!state.coupled);
    for _ in 0..opts.n_max {
        let (next, draw) = coupled_step_with(&state, spec, family, opts.tail_eps, &mut rng)?;
        state = next;
        disagree.push(draw.x != draw.x_prime);
        uncoupled.push(!state.coupled);
    }
    Ok(RepTrace {
        disagree,
        uncoupled,
        delta0,
        v_range: (r0.0.min(r1.0), r0.1.max(r1.1)),
    })
}

/// Runs `reps` independent coupled pairs started from independent warm-started
/// states and compares their disagreement curves to the analytic bound.
///
/// Replication `r` uses the random stream keyed by `(seed, r)`; the result
/// does not depend on the number of worker threads.
pub fn empirical_beta_estimate(
    spec: &VolatilitySpec,
    family: &Family,
    opts: &MixingOptions,
) -> Result<MixingReport, CouplingError> {
    if opts.reps == 0 {
        return Err(CouplingError::Config(
            "at least one replication is required".into(),
        ));
    }
    family.validate()?;
    let w = CouplingWeights::from_spec(spec)?;

    let traces: Vec<RepTrace> = (0..opts.reps)
        .into_par_iter()
        .map(|rep| run_replication(spec, family, &w, opts, rep))
        .collect::<Result<_, _>>()?;

    let (mode, k_used) = match opts.mode.or_else(|| BoundMode::for_family(family)) {
        Some(m) => (m, None),
        None => {
            let lo = traces
                .iter()
                .map(|t| t.v_range.0)
                .fold(f64::INFINITY, f64::min);
            let hi = traces.iter().map(|t| t.v_range.1).fold(0.0, f64::max);
            let grid: Vec<f64> = (0..=20).map(|i| lo + (hi - lo) * i as f64 / 20.0).collect();
            let k = estimate_tv_lipschitz(family, &grid, 1e-3)?;
            (BoundMode::Lipschitz(k), Some(k))
        }
    };

    let deltas: Vec<f64> = traces.iter().map(|t| t.delta0).collect();
    let e0 = mean_se(&deltas);
    let lags = opts.n_max + 1;
    let column = |f: &dyn Fn(&RepTrace) -> f64| mean_se(&traces.iter().map(f).collect::<Vec<_>>());

    let mut report = MixingReport {
        n_grid: (0..lags).collect(),
        analytic_bound: Vec::with_capacity(lags),
        empirical_disagree: Vec::with_capacity(lags),
        empirical_disagree_se: Vec::with_capacity(lags),
        empirical_uncoupled: Vec::with_capacity(lags),
        empirical_uncoupled_se: Vec::with_capacity(lags),
        disagree_tail_sum: Vec::with_capacity(lags),
        disagree_tail_sum_se: Vec::with_capacity(lags),
        e_delta0: e0.mean,
        e_delta0_se: e0.se,
        weights: w.clone(),
        mode,
        k_used,
        reps: opts.reps,
    };
    for n in 0..lags {
        report
            .analytic_bound
            .push(analytic_beta_bound(&w, n, e0.mean, mode)?);
        let d = column(&|t| f64::from(u8::from(t.disagree[n])));
        report.empirical_disagree.push(d.mean);
        report.empirical_disagree_se.push(d.se);
        let u = column(&|t| f64::from(u8::from(t.uncoupled[n])));
        report.empirical_uncoupled.push(u.mean);
        report.empirical_uncoupled_se.push(u.se);
        let s = column(&|t| t.disagree[n..].iter().filter(|&&b| b).count() as f64);
        report.disagree_tail_sum.push(s.mean);
        report.disagree_tail_sum_se.push(s.se);
    }
    Ok(report)
}
