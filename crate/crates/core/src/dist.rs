//! Conditional count laws `Q_v` on the integers, parametrized so that the
//! second moment of `Q_v` equals `v`.
//!
//! Every family exposes an exact probability mass function, the law of the
//! squared variate (used by the coupling kernel), and a sampler. The value
//! `v = 0` is accepted for every family and yields the point mass at zero.

use std::fmt;

use rand::Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use serde::{Deserialize, Serialize};
use statrs::function::factorial::{ln_binomial, ln_factorial};
use thiserror::Error;

/// Default tail mass left out when a law is truncated to a finite support.
pub const DEFAULT_TAIL_EPS: f64 = 1e-12;

/// Relative cut applied to Poisson weights inside the Skellam convolution.
const POISSON_REL_CUT: f64 = 1e-16;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistError {
    #[error("{family}: volatility {v} outside admissible domain {domain}")]
    Domain {
        family: String,
        v: f64,
        domain: VDomain,
    },
    #[error("invalid family parameter: {0}")]
    Parameter(String),
    #[error("tail tolerance {0} outside (0, 1e-6]")]
    TailTolerance(f64),
}

/// Admissible volatility values: `[0, upper)`, or `[0, inf)` when unbounded.
/// Zero is a boundary point where the law degenerates to the point mass at 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VDomain {
    pub upper: Option<f64>,
}

impl VDomain {
    pub fn contains(&self, v: f64) -> bool {
        v.is_finite() && v >= 0.0 && self.upper.is_none_or(|u| v < u)
    }
}

impl fmt::Display for VDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.upper {
            Some(u) => write!(f, "(0, {u})"),
            None => write!(f, "(0, inf)"),
        }
    }
}

/// A family `(Q_v)` of laws on the integers with `E X^2 = v` under `Q_v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FamilyDescriptor", into = "FamilyDescriptor")]
pub enum Family {
    /// `Skellam(v/2, v/2)`: difference of two independent `Poisson(v/2)`.
    SkellamSym,
    /// `B * S` with `B ~ Bernoulli(pi)` and `S ~ Skellam(v/(2 pi), v/(2 pi))`.
    ZeroInflatedSkellam { pi: f64 },
    /// `Poisson(lambda)` with `lambda^2 + lambda = v`.
    PoissonMapped,
    /// `Bin(n, g(v))` with `n g + n (n - 1) g^2 = v`, defined for `v < n^2`.
    Binomial { n: u32 },
    /// `R * |Y|` with `Y` drawn from `base` and an independent sign, `P(R = 1) = r`.
    SignFlipped { base: Box<Family>, r: f64 },
}

/// Flat on-disk form of a [`Family`]: `kind` plus the parameters that kind takes.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FamilyDescriptor {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    base: Option<Box<FamilyDescriptor>>,
}

impl TryFrom<FamilyDescriptor> for Family {
    type Error = String;

    fn try_from(d: FamilyDescriptor) -> Result<Self, Self::Error> {
        let allowed: &[&str] = match d.kind.as_str() {
            "skellam" | "poisson" => &[],
            "zero_inflated_skellam" => &["pi"],
            "binomial" => &["n"],
            "sign_flipped" => &["base", "r"],
            other => {
                return Err(format!(
                    "unknown family kind `{other}` (expected skellam, zero_inflated_skellam, \
                     poisson, binomial or sign_flipped)"
                ))
            }
        };
        let present = [
            ("pi", d.pi.is_some()),
            ("n", d.n.is_some()),
            ("r", d.r.is_some()),
            ("base", d.base.is_some()),
        ];
        for (key, set) in present {
            if set && !allowed.contains(&key) {
                return Err(format!("family kind `{}` does not take `{key}`", d.kind));
            }
        }
        let missing = |key: &str| format!("family kind `{}` requires `{key}`", d.kind);
        let family = match d.kind.as_str() {
            "skellam" => Family::SkellamSym,
            "poisson" => Family::PoissonMapped,
            "zero_inflated_skellam" => Family::ZeroInflatedSkellam {
                pi: d.pi.ok_or_else(|| missing("pi"))?,
            },
            "binomial" => Family::Binomial {
                n: d.n.ok_or_else(|| missing("n"))?,
            },
            _ => Family::SignFlipped {
                base: Box::new(Family::try_from(*d.base.ok_or_else(|| missing("base"))?)?),
                r: d.r.ok_or_else(|| missing("r"))?,
            },
        };
        family.validate().map_err(|e| e.to_string())?;
        Ok(family)
    }
}

impl From<Family> for FamilyDescriptor {
    fn from(f: Family) -> Self {
        let mut d = FamilyDescriptor {
            kind: String::new(),
            pi: None,
            n: None,
            r: None,
            base: None,
        };
        d.kind = match f {
            Family::SkellamSym => "skellam".into(),
            Family::PoissonMapped => "poisson".into(),
            Family::ZeroInflatedSkellam { pi } => {
                d.pi = Some(pi);
                "zero_inflated_skellam".into()
            }
            Family::Binomial { n } => {
                d.n = Some(n);
                "binomial".into()
            }
            Family::SignFlipped { base, r } => {
                d.r = Some(r);
                d.base = Some(Box::new((*base).into()));
                "sign_flipped".into()
            }
        };
        d
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Family::SkellamSym => write!(f, "skellam"),
            Family::ZeroInflatedSkellam { pi } => write!(f, "zero_inflated_skellam(pi={pi})"),
            Family::PoissonMapped => write!(f, "poisson"),
            Family::Binomial { n } => write!(f, "binomial(n={n})"),
            Family::SignFlipped { base, r } => write!(f, "sign_flipped({base}, r={r})"),
        }
    }
}

/// Probability masses of `Q_v` on a truncated support `[-K, K]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PmfTable {
    /// `nonneg[k] = P(X = k)` for `k = 0..=K`.
    pub nonneg: Vec<f64>,
    /// `neg[k - 1] = P(X = -k)` for `k = 1..=K`; empty for nonnegative laws.
    pub neg: Vec<f64>,
}

impl PmfTable {
    pub fn at(&self, k: i64) -> f64 {
        if k >= 0 {
            self.nonneg.get(k as usize).copied().unwrap_or(0.0)
        } else {
            self.neg.get((-k - 1) as usize).copied().unwrap_or(0.0)
        }
    }

    /// Largest `|k|` with a stored mass.
    pub fn max_abs(&self) -> usize {
        self.nonneg.len().max(self.neg.len() + 1) - 1
    }

    /// Iterates over `(k, P(X = k))` in increasing `k`.
    pub fn iter(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        let neg = self
            .neg
            .iter()
            .enumerate()
            .rev()
            .map(|(i, &m)| (-(i as i64) - 1, m));
        let pos = self.nonneg.iter().enumerate().map(|(k, &m)| (k as i64, m));
        neg.chain(pos)
    }

    pub fn total(&self) -> f64 {
        self.nonneg.iter().sum::<f64>() + self.neg.iter().sum::<f64>()
    }

    /// `sum_k |k|^power P(X = k)`.
    pub fn abs_moment(&self, power: i32) -> f64 {
        self.iter()
            .map(|(k, m)| (k.unsigned_abs() as f64).powi(power) * m)
            .sum()
    }

    /// Total-variation distance `(1/2) sum_k |p_k - q_k|`.
    pub fn total_variation(&self, other: &PmfTable) -> f64 {
        let kmax = self.max_abs().max(other.max_abs()) as i64;
        0.5 * (-kmax..=kmax)
            .map(|k| (self.at(k) - other.at(k)).abs())
            .sum::<f64>()
    }

    fn point_mass_at_zero() -> Self {
        PmfTable {
            nonneg: vec![1.0],
            neg: Vec::new(),
        }
    }
}

/// Law of `X^2` for `X ~ Q_v`, on the support `{0, 1, 4, 9, ...}` truncated at `K^2`.
///
/// Index `k` of `masses`/`cdf` refers to the support point `k^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareLaw {
    masses: Vec<f64>,
    cdf: Vec<f64>,
}

/// Result of a generalized-inverse lookup on a [`SquareLaw`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SquareQuantile {
    /// `|X|`, so the square is `root * root`.
    pub root: u64,
    /// The requested level exceeded the cumulative mass retained after truncation.
    pub truncated: bool,
}

impl SquareQuantile {
    pub fn square(&self) -> u64 {
        self.root * self.root
    }
}

impl SquareLaw {
    pub fn from_pmf(table: &PmfTable) -> Self {
        let len = table.max_abs() + 1;
        let masses: Vec<f64> = (0..len)
            .map(|k| {
                if k == 0 {
                    table.at(0)
                } else {
                    table.at(k as i64) + table.at(-(k as i64))
                }
            })
            .collect();
        let cdf = masses
            .iter()
            .scan(0.0, |acc, &m| {
                *acc += m;
                Some(*acc)
            })
            .collect();
        SquareLaw { masses, cdf }
    }

    /// Number of retained support points.
    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    /// `P(X^2 = k^2)`, zero beyond the truncation point.
    pub fn mass_at_root(&self, k: u64) -> f64 {
        self.masses.get(k as usize).copied().unwrap_or(0.0)
    }

    /// `P(X^2 <= k^2) = P(|X| <= k)`.
    pub fn cdf_at_root(&self, k: u64) -> f64 {
        match self.cdf.get(k as usize) {
            Some(&c) => c,
            None => self.cdf_max(),
        }
    }

    /// `P(|X| < k)`, the cdf just below the support point `k^2`.
    pub fn cdf_below_root(&self, k: u64) -> f64 {
        if k == 0 {
            0.0
        } else {
            self.cdf_at_root(k - 1)
        }
    }

    /// Cumulative mass retained after truncation.
    pub fn cdf_max(&self) -> f64 {
        self.cdf.last().copied().unwrap_or(0.0)
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn cdf(&self) -> &[f64] {
        &self.cdf
    }

    /// Generalized inverse `inf { w : G(w) >= u }` of the cdf of `X^2`.
    ///
    /// For `u = 0` this is the smallest support point with positive mass.
    /// Levels above the retained mass return the largest support point with
    /// `truncated` set.
    pub fn quantile(&self, u: f64) -> SquareQuantile {
        let mut idx = self.cdf.partition_point(|&c| c < u);
        if idx >= self.cdf.len() {
            let last = self.masses.iter().rposition(|&m| m > 0.0).unwrap_or(0);
            return SquareQuantile {
                root: last as u64,
                truncated: true,
            };
        }
        while self.masses[idx] <= 0.0 && idx + 1 < self.masses.len() {
            idx += 1;
        }
        SquareQuantile {
            root: idx as u64,
            truncated: false,
        }
    }
}

impl Family {
    /// Checks the family's own parameters.
    pub fn validate(&self) -> Result<(), DistError> {
        match self {
            Family::SkellamSym | Family::PoissonMapped => Ok(()),
            Family::ZeroInflatedSkellam { pi } => {
                if *pi > 0.0 && *pi < 1.0 {
                    Ok(())
                } else {
                    Err(DistError::Parameter(format!(
                        "zero-inflation probability pi={pi} must lie in (0, 1)"
                    )))
                }
            }
            Family::Binomial { n } => {
                if *n >= 1 {
                    Ok(())
                } else {
                    Err(DistError::Parameter("binomial n must be positive".into()))
                }
            }
            Family::SignFlipped { base, r } => {
                if !(0.0..=1.0).contains(r) {
                    return Err(DistError::Parameter(format!(
                        "sign probability r={r} must lie in [0, 1]"
                    )));
                }
                base.validate()
            }
        }
    }

    pub fn domain(&self) -> VDomain {
        match self {
            Family::Binomial { n } => VDomain {
                upper: Some(f64::from(*n) * f64::from(*n)),
            },
            Family::SignFlipped { base, .. } => base.domain(),
            _ => VDomain { upper: None },
        }
    }

    pub fn check_v(&self, v: f64) -> Result<(), DistError> {
        let domain = self.domain();
        if domain.contains(v) {
            Ok(())
        } else {
            Err(DistError::Domain {
                family: self.to_string(),
                v,
                domain,
            })
        }
    }

    /// True when every `Q_v` is supported on the nonnegative integers.
    pub fn is_nonnegative(&self) -> bool {
        match self {
            Family::PoissonMapped | Family::Binomial { .. } => true,
            Family::SignFlipped { r, .. } => *r == 1.0,
            _ => false,
        }
    }

    /// True when every `Q_v` has a pmf symmetric about zero.
    pub fn is_symmetric(&self) -> bool {
        match self {
            Family::SkellamSym | Family::ZeroInflatedSkellam { .. } => true,
            Family::SignFlipped { r, .. } => *r == 0.5,
            _ => false,
        }
    }

    /// `Q_v({k})`. Points outside the support have probability zero.
    pub fn pmf(&self, v: f64, k: i64) -> Result<f64, DistError> {
        self.check_v(v)?;
        if v == 0.0 {
            return Ok(if k == 0 { 1.0 } else { 0.0 });
        }
        Ok(match self {
            Family::SkellamSym => skellam_pmf(v / 2.0, k),
            Family::ZeroInflatedSkellam { pi } => {
                let base = pi * skellam_pmf(v / (2.0 * pi), k);
                if k == 0 {
                    base + (1.0 - pi)
                } else {
                    base
                }
            }
            Family::PoissonMapped => {
                if k < 0 {
                    0.0
                } else {
                    poisson_pmf(poisson_rate(v), k as u64)
                }
            }
            Family::Binomial { n } => {
                if k < 0 || k > i64::from(*n) {
                    0.0
                } else {
                    binomial_pmf(*n, solve_binomial_g(*n, v)?, k as u64)
                }
            }
            Family::SignFlipped { base, r } => {
                let abs = k.unsigned_abs() as i64;
                let m = if abs == 0 {
                    base.pmf(v, 0)?
                } else {
                    base.pmf(v, abs)? + base.pmf(v, -abs)?
                };
                match k.signum() {
                    0 => m,
                    1 => r * m,
                    _ => (1.0 - r) * m,
                }
            }
        })
    }

    /// Masses of `Q_v` on the smallest window `[-K, K]` leaving less than
    /// `tail_eps` outside (or the full computed support, when finite).
    pub fn pmf_table(&self, v: f64, tail_eps: f64) -> Result<PmfTable, DistError> {
        if !(tail_eps > 0.0 && tail_eps <= 1e-6) {
            return Err(DistError::TailTolerance(tail_eps));
        }
        self.check_v(v)?;
        if v == 0.0 {
            return Ok(PmfTable::point_mass_at_zero());
        }
        Ok(match self {
            Family::SkellamSym => skellam_table(v / 2.0, 1.0, tail_eps),
            Family::ZeroInflatedSkellam { pi } => {
                let mut t = skellam_table(v / (2.0 * pi), *pi, tail_eps);
                t.nonneg[0] += 1.0 - pi;
                t
            }
            Family::PoissonMapped => {
                let w = PoissonWeights::new(poisson_rate(v));
                let mut nonneg = Vec::new();
                let mut cum = 0.0;
                for k in 0..w.end() {
                    let m = w.get(k);
                    nonneg.push(m);
                    cum += m;
                    if cum >= 1.0 - tail_eps && k as f64 >= w.mu {
                        break;
                    }
                }
                PmfTable {
                    nonneg,
                    neg: Vec::new(),
                }
            }
            Family::Binomial { n } => {
                let g = solve_binomial_g(*n, v)?;
                PmfTable {
                    nonneg: (0..=u64::from(*n))
                        .map(|k| binomial_pmf(*n, g, k))
                        .collect(),
                    neg: Vec::new(),
                }
            }
            Family::SignFlipped { base, r } => {
                let b = base.pmf_table(v, tail_eps)?;
                let kmax = b.max_abs();
                let abs: Vec<f64> = (0..=kmax)
                    .map(|k| {
                        if k == 0 {
                            b.at(0)
                        } else {
                            b.at(k as i64) + b.at(-(k as i64))
                        }
                    })
                    .collect();
                let mut nonneg = Vec::with_capacity(kmax + 1);
                nonneg.push(abs[0]);
                nonneg.extend(abs[1..].iter().map(|m| r * m));
                let neg = if *r == 1.0 {
                    Vec::new()
                } else {
                    abs[1..].iter().map(|m| (1.0 - r) * m).collect()
                };
                PmfTable { nonneg, neg }
            }
        })
    }

    /// Law of `X^2` under `Q_v`, truncated so that less than `tail_eps` is lost.
    pub fn square_law(&self, v: f64, tail_eps: f64) -> Result<SquareLaw, DistError> {
        Ok(SquareLaw::from_pmf(&self.pmf_table(v, tail_eps)?))
    }

    /// Draws `X ~ Q_v`.
    pub fn sample<R: Rng + ?Sized>(&self, v: f64, rng: &mut R) -> Result<i64, DistError> {
        self.check_v(v)?;
        if v == 0.0 {
            return Ok(0);
        }
        match self {
            Family::SkellamSym => self.draw_skellam(v / 2.0, rng),
            Family::ZeroInflatedSkellam { pi } => {
                let keep = rng.random::<f64>() < *pi;
                let s = self.draw_skellam(v / (2.0 * pi), rng)?;
                Ok(if keep { s } else { 0 })
            }
            Family::PoissonMapped => self.draw_poisson(poisson_rate(v), rng),
            Family::Binomial { n } => {
                let g = solve_binomial_g(*n, v)?;
                let dist = Binomial::new(u64::from(*n), g)
                    .map_err(|e| DistError::Parameter(e.to_string()))?;
                Ok(dist.sample(rng) as i64)
            }
            Family::SignFlipped { base, r } => {
                let y = base.sample(v, rng)?.abs();
                let positive = rng.random::<f64>() < *r;
                Ok(if positive { y } else { -y })
            }
        }
    }

    fn draw_poisson<R: Rng + ?Sized>(&self, mu: f64, rng: &mut R) -> Result<i64, DistError> {
        let dist = Poisson::new(mu).map_err(|_| DistError::Domain {
            family: self.to_string(),
            v: mu,
            domain: self.domain(),
        })?;
        let draw: f64 = dist.sample(rng);
        Ok(draw as i64)
    }

    fn draw_skellam<R: Rng + ?Sized>(&self, mu: f64, rng: &mut R) -> Result<i64, DistError> {
        let a = self.draw_poisson(mu, rng)?;
        let b = self.draw_poisson(mu, rng)?;
        Ok(a - b)
    }
}

/// Success probability `g(v)` of `Bin(n, g)` with second moment `v`: the root
/// in `(0, 1)` of `n g + n (n - 1) g^2 = v`.
pub fn solve_binomial_g(n: u32, v: f64) -> Result<f64, DistError> {
    let nf = f64::from(n);
    if n == 0 || !(v > 0.0 && v < nf * nf) {
        return Err(DistError::Domain {
            family: format!("binomial(n={n})"),
            v,
            domain: VDomain {
                upper: Some(nf * nf),
            },
        });
    }
    if n == 1 {
        return Ok(v);
    }
    // Rationalized root avoids cancellation for small v.
    let a = 4.0 * (nf - 1.0) * v / nf;
    Ok(2.0 * (v / nf) / (1.0 + (1.0 + a).sqrt()))
}

/// Poisson rate `lambda` with `lambda^2 + lambda = v`.
pub fn poisson_rate(v: f64) -> f64 {
    // sqrt(v + 1/4) - 1/2, rationalized.
    v / ((v + 0.25).sqrt() + 0.5)
}

fn poisson_pmf(mu: f64, k: u64) -> f64 {
    (k as f64 * mu.ln() - mu - ln_factorial(k)).exp()
}

fn binomial_pmf(n: u32, g: f64, k: u64) -> f64 {
    let n = u64::from(n);
    (ln_binomial(n, k) + k as f64 * g.ln() + (n - k) as f64 * (1.0 - g).ln()).exp()
}

/// Poisson(mu) weights on `[start, start + len)`, cut where they fall below
/// `POISSON_REL_CUT` times the modal weight.
struct PoissonWeights {
    mu: f64,
    start: usize,
    w: Vec<f64>,
}

impl PoissonWeights {
    fn new(mu: f64) -> Self {
        let mode = mu.floor() as usize;
        let log_mode = poisson_pmf(mu, mode as u64).ln();
        let cut = log_mode + POISSON_REL_CUT.ln();
        let log_at = |j: usize| j as f64 * mu.ln() - mu - ln_factorial(j as u64);

        let mut start = mode;
        while start > 0 && log_at(start - 1) >= cut {
            start -= 1;
        }
        let mut end = mode + 1;
        while log_at(end) >= cut {
            end += 1;
        }
        let w = (start..end).map(|j| log_at(j).exp()).collect();
        PoissonWeights { mu, start, w }
    }

    fn get(&self, j: usize) -> f64 {
        if j < self.start {
            0.0
        } else {
            self.w.get(j - self.start).copied().unwrap_or(0.0)
        }
    }

    fn end(&self) -> usize {
        self.start + self.w.len()
    }

    /// `sum_j P(j + k) P(j)`, the Skellam(mu, mu) mass at `k >= 0`.
    fn self_convolution(&self, k: usize) -> f64 {
        if k >= self.w.len() {
            return 0.0;
        }
        self.w[k..]
            .iter()
            .zip(self.w.iter())
            .map(|(a, b)| a * b)
            .sum()
    }
}

fn skellam_pmf(mu: f64, k: i64) -> f64 {
    PoissonWeights::new(mu).self_convolution(k.unsigned_abs() as usize)
}

/// Symmetric Skellam(mu, mu) masses scaled by `scale`.
fn skellam_table(mu: f64, scale: f64, tail_eps: f64) -> PmfTable {
    let w = PoissonWeights::new(mu);
    let mut nonneg = Vec::new();
    let mut cum = 0.0;
    for k in 0..w.w.len() {
        let m = scale * w.self_convolution(k);
        nonneg.push(m);
        cum += if k == 0 { m } else { 2.0 * m };
        if cum >= 1.0 - tail_eps {
            break;
        }
    }
    let neg = nonneg[1..].to_vec();
    PmfTable { nonneg, neg }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Independent oracle: direct double sum of Poisson(mu) pmfs evaluated
    /// from the recurrence `P(j) = P(j - 1) mu / j`.
    fn skellam_oracle(mu: f64, k: i64) -> f64 {
        let k = k.unsigned_abs() as usize;
        let mut p = vec![(-mu).exp()];
        for j in 1..400 {
            p.push(p[j - 1] * mu / j as f64);
        }
        (0..400 - k).map(|j| p[j + k] * p[j]).sum()
    }

    fn families() -> Vec<Family> {
        vec![
            Family::SkellamSym,
            Family::ZeroInflatedSkellam { pi: 0.4 },
            Family::PoissonMapped,
            Family::Binomial { n: 6 },
            Family::SignFlipped {
                base: Box::new(Family::SkellamSym),
                r: 0.7,
            },
            Family::SignFlipped {
                base: Box::new(Family::PoissonMapped),
                r: 0.25,
            },
        ]
    }

    #[test]
    fn skellam_pmf_at_zero() {
        // e^{-2} I_0(2) = 0.30850832255...
        let p = Family::SkellamSym.pmf(2.0, 0).unwrap();
        assert_relative_eq!(p, skellam_oracle(1.0, 0), max_relative = 1e-13);
        assert!((p - 0.308508).abs() < 1e-6);
    }

    #[test]
    fn skellam_is_symmetric() {
        for k in 0..12 {
            let a = Family::SkellamSym.pmf(2.0, k).unwrap();
            let b = Family::SkellamSym.pmf(2.0, -k).unwrap();
            assert_eq!(a, b);
            assert_relative_eq!(a, skellam_oracle(1.0, k), max_relative = 1e-12);
        }
    }

    #[test]
    fn poisson_mapped_at_v2_is_poisson_one() {
        assert_relative_eq!(poisson_rate(2.0), 1.0, epsilon = 1e-15);
        for k in 0..10u64 {
            let expected = (-1.0f64).exp() / (1..=k).map(|i| i as f64).product::<f64>();
            let p = Family::PoissonMapped.pmf(2.0, k as i64).unwrap();
            assert_relative_eq!(p, expected, max_relative = 1e-13);
        }
        assert_eq!(Family::PoissonMapped.pmf(2.0, -1).unwrap(), 0.0);
    }

    #[test]
    fn binomial_root() {
        let g = solve_binomial_g(2, 1.0).unwrap();
        assert!((g - 0.3660254).abs() < 1e-7);
        assert!((2.0 * g + 2.0 * g * g - 1.0).abs() < 1e-12);
        assert_eq!(solve_binomial_g(1, 0.5).unwrap(), 0.5);
        assert!(solve_binomial_g(2, 0.5).unwrap() < g);
        assert!(solve_binomial_g(2, 4.0).is_err());
        assert!(solve_binomial_g(2, 0.0).is_err());
        for n in 1..20u32 {
            for &v in &[1e-9, 0.01, 0.7, 3.3, f64::from(n * n) * 0.999] {
                if v >= f64::from(n * n) {
                    continue;
                }
                let g = solve_binomial_g(n, v).unwrap();
                let nf = f64::from(n);
                let resid = nf * g + nf * (nf - 1.0) * g * g - v;
                assert!(
                    resid.abs() < 1e-12 * v.max(1.0),
                    "n={n} v={v} resid={resid}"
                );
            }
        }
    }

    #[test]
    fn square_law_of_skellam() {
        let sq = Family::SkellamSym
            .square_law(2.0, DEFAULT_TAIL_EPS)
            .unwrap();
        let p0 = skellam_oracle(1.0, 0);
        assert_relative_eq!(sq.mass_at_root(0), p0, max_relative = 1e-12);
        assert_relative_eq!(
            sq.mass_at_root(1),
            2.0 * skellam_oracle(1.0, 1),
            max_relative = 1e-12
        );
        assert!(sq.cdf_max() >= 1.0 - DEFAULT_TAIL_EPS);
        assert!(sq.cdf().windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(sq.quantile(0.30).root, 0);
        assert_eq!(sq.quantile(0.0).root, 0);
        assert_eq!(sq.quantile(0.31).root, 1);
    }

    #[test]
    fn square_law_of_binomial() {
        let g: f64 = 0.366_025_403_784_438_6; // (sqrt(3) - 1) / 2
        let sq = Family::Binomial { n: 2 }
            .square_law(1.0, DEFAULT_TAIL_EPS)
            .unwrap();
        assert_eq!(sq.len(), 3);
        assert_relative_eq!(sq.mass_at_root(0), (1.0 - g).powi(2), max_relative = 1e-12);
        assert_relative_eq!(
            sq.mass_at_root(1),
            2.0 * g * (1.0 - g),
            max_relative = 1e-12
        );
        assert_relative_eq!(sq.mass_at_root(2), g * g, max_relative = 1e-12);
    }

    #[test]
    fn quantile_skips_zero_mass_and_flags_truncation() {
        let law = SquareLaw::from_pmf(&PmfTable {
            nonneg: vec![0.0, 0.5, 0.25],
            neg: vec![0.0, 0.0],
        });
        assert_eq!(law.quantile(0.0).root, 1);
        assert_eq!(law.quantile(0.5).root, 1);
        assert_eq!(law.quantile(0.6).root, 2);
        let q = law.quantile(0.9);
        assert!(q.truncated);
        assert_eq!(q.root, 2);
    }

    #[test]
    fn normalization_and_second_moment() {
        for fam in families() {
            for &v in &[0.05, 0.5, 1.0, 2.0, 4.5, 9.0, 20.0, 35.0] {
                if !fam.domain().contains(v) {
                    continue;
                }
                let t = fam.pmf_table(v, DEFAULT_TAIL_EPS).unwrap();
                assert!(
                    (t.total() - 1.0).abs() < 1e-10,
                    "{fam} v={v} total={}",
                    t.total()
                );
                let m2 = t.abs_moment(2);
                assert!((m2 - v).abs() < 1e-8, "{fam} v={v} m2={m2}");
            }
        }
    }

    #[test]
    fn table_agrees_with_pointwise_pmf() {
        for fam in families() {
            let t = fam.pmf_table(3.0, DEFAULT_TAIL_EPS).unwrap();
            for (k, m) in t.iter() {
                assert_relative_eq!(
                    m,
                    fam.pmf(3.0, k).unwrap(),
                    max_relative = 1e-12,
                    epsilon = 1e-300
                );
            }
        }
    }

    #[test]
    fn skellam_fourth_moment() {
        for &v in &[0.3, 1.0, 2.0, 7.5, 15.0] {
            let t = Family::SkellamSym.pmf_table(v, 1e-15).unwrap();
            let m4 = t.abs_moment(4);
            assert!((m4 - (v + 3.0 * v * v)).abs() < 1e-6, "v={v} m4={m4}");
        }
    }

    #[test]
    fn zero_volatility_is_point_mass() {
        for fam in families() {
            assert_eq!(fam.pmf(0.0, 0).unwrap(), 1.0);
            assert_eq!(fam.pmf(0.0, 1).unwrap(), 0.0);
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            assert_eq!(fam.sample(0.0, &mut rng).unwrap(), 0);
        }
    }

    #[test]
    fn domain_errors() {
        assert!(Family::SkellamSym.pmf(-1.0, 0).is_err());
        assert!(Family::SkellamSym.pmf(f64::NAN, 0).is_err());
        assert!(Family::Binomial { n: 2 }.pmf(4.0, 0).is_err());
        assert!(Family::Binomial { n: 2 }.pmf(3.9, 0).is_ok());
        assert!(Family::SkellamSym.pmf_table(1.0, 1e-3).is_err());
        assert!(Family::ZeroInflatedSkellam { pi: 1.0 }.validate().is_err());
        assert!(Family::SignFlipped {
            base: Box::new(Family::SkellamSym),
            r: 1.5
        }
        .validate()
        .is_err());
    }

    #[test]
    fn degenerate_sign_law() {
        let fam = Family::SignFlipped {
            base: Box::new(Family::SkellamSym),
            r: 1.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..2000 {
            assert!(fam.sample(3.0, &mut rng).unwrap() >= 0);
        }
        assert!(fam.is_nonnegative());
    }

    #[test]
    fn skellam_sample_second_moment() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 1_000_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| (Family::SkellamSym.sample(2.0, &mut rng).unwrap() as f64).powi(2))
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        // Var(X^2) = E X^4 - v^2 = v + 2 v^2.
        let se = ((2.0 + 8.0) / n as f64).sqrt();
        assert!((mean - 2.0).abs() < 3.0 * se, "mean={mean}");
    }

    #[test]
    fn serde_round_trip_of_family() {
        let f: Family = toml::from_str("kind = \"binomial\"\nn = 4").unwrap();
        assert_eq!(f, Family::Binomial { n: 4 });
        let f: Family =
            toml::from_str("kind = \"sign_flipped\"\nr = 0.3\nbase = { kind = \"poisson\" }")
                .unwrap();
        assert_eq!(
            f,
            Family::SignFlipped {
                base: Box::new(Family::PoissonMapped),
                r: 0.3
            }
        );
        assert!(toml::from_str::<Family>("kind = \"skellam\"\nbogus = 1").is_err());
    }
}
