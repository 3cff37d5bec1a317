//! Volatility recursions and simulation of the count process
//!
//! ```text
//! X_t | past ~ Q_{v_t},   v_t = f(X_{t-1}^2, ..., X_{t-p}^2, v_{t-1}, ..., v_{t-q}).
//! ```

use std::fmt;
use std::sync::Arc;

use log::warn;
use rand::Rng;
use thiserror::Error;

use crate::dist::{DistError, Family};
use crate::rng;

/// Volatility above which a simulated path is declared explosive.
pub const EXPLOSION_THRESHOLD: f64 = 1e12;

/// Burn-in used when none is given.
pub const DEFAULT_BURN_IN: usize = 500;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid volatility specification: {0}")]
    Spec(String),
    #[error("lag vectors have lengths ({got_p}, {got_q}), expected ({p}, {q})")]
    LagLength {
        p: usize,
        q: usize,
        got_p: usize,
        got_q: usize,
    },
    #[error("volatility {v} at t={t} leaves the domain of {family}")]
    DomainOverflow { t: i64, family: String, v: f64 },
    #[error("volatility {v} exceeded the explosion threshold at t={t}")]
    Explosion { t: i64, v: f64 },
    #[error(transparent)]
    Dist(#[from] DistError),
}

/// User-supplied volatility map `f(x_sq_lags, v_lags)`.
pub type VolatilityFn = Arc<dyn Fn(&[u64], &[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum VolatilityForm {
    /// `omega + sum alpha_i x_i^2 + sum beta_j v_j`.
    Linear {
        omega: f64,
        alpha: Vec<f64>,
        beta: Vec<f64>,
    },
    /// Arbitrary map with declared Lipschitz constants `c` (squared counts)
    /// and `d` (volatilities). The constants are taken on trust.
    Custom {
        f: VolatilityFn,
        c: Vec<f64>,
        d: Vec<f64>,
    },
}

impl fmt::Debug for VolatilityForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VolatilityForm::Linear { omega, alpha, beta } => f
                .debug_struct("Linear")
                .field("omega", omega)
                .field("alpha", alpha)
                .field("beta", beta)
                .finish(),
            VolatilityForm::Custom { c, d, .. } => f
                .debug_struct("Custom")
                .field("c", c)
                .field("d", d)
                .finish_non_exhaustive(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct VolatilitySpec {
    form: VolatilityForm,
}

/// Lipschitz constants of the volatility map and their total `L`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lipschitz {
    pub c: Vec<f64>,
    pub d: Vec<f64>,
    pub total: f64,
}

impl Lipschitz {
    pub fn is_contractive(&self) -> bool {
        self.total < 1.0
    }
}

fn check_coefficients(name: &str, xs: &[f64]) -> Result<(), ModelError> {
    match xs.iter().position(|x| !(x.is_finite() && *x >= 0.0)) {
        Some(i) => Err(ModelError::Spec(format!(
            "{name}[{}] = {} must be finite and nonnegative",
            i + 1,
            xs[i]
        ))),
        None => Ok(()),
    }
}

impl VolatilitySpec {
    pub fn linear(omega: f64, alpha: Vec<f64>, beta: Vec<f64>) -> Result<Self, ModelError> {
        if !(omega.is_finite() && omega > 0.0) {
            return Err(ModelError::Spec(format!(
                "omega = {omega} must be positive"
            )));
        }
        if alpha.is_empty() {
            return Err(ModelError::Spec(
                "at least one alpha coefficient is required".into(),
            ));
        }
        check_coefficients("alpha", &alpha)?;
        check_coefficients("beta", &beta)?;
        Ok(VolatilitySpec {
            form: VolatilityForm::Linear { omega, alpha, beta },
        })
    }

    /// Linear ARCH(p): no volatility lags.
    pub fn arch(omega: f64, alpha: Vec<f64>) -> Result<Self, ModelError> {
        Self::linear(omega, alpha, Vec::new())
    }

    pub fn custom(f: VolatilityFn, c: Vec<f64>, d: Vec<f64>) -> Result<Self, ModelError> {
        if c.is_empty() {
            return Err(ModelError::Spec(
                "at least one squared-count lag is required".into(),
            ));
        }
        check_coefficients("c", &c)?;
        check_coefficients("d", &d)?;
        Ok(VolatilitySpec {
            form: VolatilityForm::Custom { f, c, d },
        })
    }

    pub fn form(&self) -> &VolatilityForm {
        &self.form
    }

    /// Number of squared-count lags.
    pub fn p(&self) -> usize {
        match &self.form {
            VolatilityForm::Linear { alpha, .. } => alpha.len(),
            VolatilityForm::Custom { c, .. } => c.len(),
        }
    }

    /// Number of volatility lags.
    pub fn q(&self) -> usize {
        match &self.form {
            VolatilityForm::Linear { beta, .. } => beta.len(),
            VolatilityForm::Custom { d, .. } => d.len(),
        }
    }

    pub fn lipschitz_constants(&self) -> Lipschitz {
        let (c, d) = match &self.form {
            VolatilityForm::Linear { alpha, beta, .. } => (alpha.clone(), beta.clone()),
            VolatilityForm::Custom { c, d, .. } => (c.clone(), d.clone()),
        };
        let total = c.iter().sum::<f64>() + d.iter().sum::<f64>();
        Lipschitz { c, d, total }
    }

    pub fn is_contractive(&self) -> bool {
        self.lipschitz_constants().is_contractive()
    }

    /// Stationary mean `omega / (1 - sum alpha - sum beta)` of a contractive linear spec.
    pub fn stationary_mean(&self) -> Option<f64> {
        match &self.form {
            VolatilityForm::Linear { omega, alpha, beta } => {
                let l = alpha.iter().sum::<f64>() + beta.iter().sum::<f64>();
                (l < 1.0).then(|| omega / (1.0 - l))
            }
            VolatilityForm::Custom { .. } => None,
        }
    }

    /// Raw recursion value; lag lengths must match `(p, q)`.
    pub fn volatility(&self, x_sq_lags: &[u64], v_lags: &[f64]) -> f64 {
        debug_assert_eq!(x_sq_lags.len(), self.p());
        debug_assert_eq!(v_lags.len(), self.q());
        match &self.form {
            VolatilityForm::Linear { omega, alpha, beta } => {
                omega
                    + alpha
                        .iter()
                        .zip(x_sq_lags)
                        .map(|(a, &x)| a * x as f64)
                        .sum::<f64>()
                    + beta.iter().zip(v_lags).map(|(b, v)| b * v).sum::<f64>()
            }
            VolatilityForm::Custom { f, .. } => f(x_sq_lags, v_lags),
        }
    }

    /// Evaluates the recursion and checks the result against `family`'s domain.
    pub fn eval_volatility(
        &self,
        x_sq_lags: &[u64],
        v_lags: &[f64],
        family: &Family,
    ) -> Result<f64, ModelError> {
        self.check_lags(x_sq_lags.len(), v_lags.len())?;
        let v = self.volatility(x_sq_lags, v_lags);
        if family.domain().contains(v) {
            Ok(v)
        } else {
            Err(ModelError::DomainOverflow {
                t: 0,
                family: family.to_string(),
                v,
            })
        }
    }

    fn check_lags(&self, got_p: usize, got_q: usize) -> Result<(), ModelError> {
        if got_p == self.p() && got_q == self.q() {
            Ok(())
        } else {
            Err(ModelError::LagLength {
                p: self.p(),
                q: self.q(),
                got_p,
                got_q,
            })
        }
    }

    /// Zero count lags and volatility lags at the stationary mean (or at
    /// `omega` when that mean does not exist).
    pub fn default_state(&self) -> ChainState {
        let v0 = match &self.form {
            VolatilityForm::Linear { omega, .. } => self.stationary_mean().unwrap_or(*omega),
            VolatilityForm::Custom { f, .. } => f(&vec![0; self.p()], &vec![0.0; self.q()]),
        };
        ChainState {
            x_lags: vec![0; self.p()],
            v_lags: vec![v0; self.q()],
        }
    }
}

/// Markov state `(X_{t}, ..., X_{t-p+1}, v_t, ..., v_{t-q+1})`, most recent first.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub x_lags: Vec<i64>,
    pub v_lags: Vec<f64>,
}

impl ChainState {
    pub fn squared(&self) -> SquaredState {
        SquaredState {
            x_sq_lags: self
                .x_lags
                .iter()
                .map(|x| x.unsigned_abs().pow(2))
                .collect(),
            v_lags: self.v_lags.clone(),
        }
    }
}

/// Markov state with squared counts, `(X_t^2, ..., X_{t-p+1}^2, v_t, ..., v_{t-q+1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct SquaredState {
    pub x_sq_lags: Vec<u64>,
    pub v_lags: Vec<f64>,
}

impl SquaredState {
    /// Shifts in a new observation: `x_sq` and `v` become the most recent lags.
    pub fn push(&mut self, x_sq: u64, v: f64) {
        if !self.x_sq_lags.is_empty() {
            self.x_sq_lags.rotate_right(1);
            self.x_sq_lags[0] = x_sq;
        }
        if !self.v_lags.is_empty() {
            self.v_lags.rotate_right(1);
            self.v_lags[0] = v;
        }
    }
}

/// One simulated time point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesRecord {
    pub t: i64,
    pub x: i64,
    pub v: f64,
}

/// Single chain advanced one step at a time.
pub struct Chain<'a> {
    spec: &'a VolatilitySpec,
    family: &'a Family,
    state: SquaredState,
    t: i64,
}

impl<'a> Chain<'a> {
    pub fn new(
        spec: &'a VolatilitySpec,
        family: &'a Family,
        init: &ChainState,
    ) -> Result<Self, ModelError> {
        spec.check_lags(init.x_lags.len(), init.v_lags.len())?;
        for &v in &init.v_lags {
            family.check_v(v)?;
        }
        Ok(Chain {
            spec,
            family,
            state: init.squared(),
            t: 0,
        })
    }

    /// Starts the time counter at `t0` (the index of the current state).
    pub fn with_time(mut self, t0: i64) -> Self {
        self.t = t0;
        self
    }

    pub fn state(&self) -> &SquaredState {
        &self.state
    }

    pub fn into_state(self) -> SquaredState {
        self.state
    }

    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<SeriesRecord, ModelError> {
        self.t += 1;
        let v = self
            .spec
            .volatility(&self.state.x_sq_lags, &self.state.v_lags);
        if v > EXPLOSION_THRESHOLD {
            return Err(ModelError::Explosion { t: self.t, v });
        }
        if !self.family.domain().contains(v) {
            return Err(ModelError::DomainOverflow {
                t: self.t,
                family: self.family.to_string(),
                v,
            });
        }
        let x = self.family.sample(v, rng)?;
        self.state.push(x.unsigned_abs().pow(2), v);
        Ok(SeriesRecord { t: self.t, x, v })
    }
}

/// Length, burn-in and initial state of a simulation run.
#[derive(Debug, Clone)]
pub struct SimulationOptions {
    pub n: usize,
    pub burn_in: usize,
    pub init: Option<ChainState>,
}

impl SimulationOptions {
    pub fn new(n: usize) -> Self {
        SimulationOptions {
            n,
            burn_in: DEFAULT_BURN_IN,
            init: None,
        }
    }

    pub fn burn_in(mut self, burn_in: usize) -> Self {
        self.burn_in = burn_in;
        self
    }

    pub fn init(mut self, init: ChainState) -> Self {
        self.init = Some(init);
        self
    }
}

/// Simulates `burn_in + n` steps with a stream drawn from `rng` and keeps the
/// last `n`, indexed `t = 1..=n`. Burn-in steps carry `t <= 0`.
pub fn simulate_with<R: Rng + ?Sized>(
    spec: &VolatilitySpec,
    family: &Family,
    opts: &SimulationOptions,
    rng: &mut R,
) -> Result<Vec<SeriesRecord>, ModelError> {
    if opts.n == 0 {
        return Err(ModelError::Spec("series length must be at least 1".into()));
    }
    family.validate()?;
    if !spec.is_contractive() {
        warn!(
            "volatility recursion is not contractive (L = {}); no stationary regime exists",
            spec.lipschitz_constants().total
        );
    }
    let init = opts.init.clone().unwrap_or_else(|| spec.default_state());
    let mut chain = Chain::new(spec, family, &init)?.with_time(-(opts.burn_in as i64));
    for _ in 0..opts.burn_in {
        chain.step(rng)?;
    }
    (0..opts.n).map(|_| chain.step(rng)).collect()
}

/// Simulates a series reproducibly from `seed`.
pub fn simulate(
    spec: &VolatilitySpec,
    family: &Family,
    opts: &SimulationOptions,
    seed: u64,
) -> Result<Vec<SeriesRecord>, ModelError> {
    let mut rng = rng::stream(seed, &[]);
    simulate_with(spec, family, opts, &mut rng)
}
