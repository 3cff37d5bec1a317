//! Summary statistics and goodness-of-fit helpers shared by the Monte-Carlo
//! checks.

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Sample mean and the standard error of the mean for i.i.d. values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
}

pub fn mean_se(values: &[f64]) -> MeanSe {
    let n = values.len() as f64;
    if values.is_empty() {
        return MeanSe {
            mean: f64::NAN,
            se: f64::NAN,
        };
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return MeanSe { mean, se: 0.0 };
    }
    let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    MeanSe {
        mean,
        se: (var / n).sqrt(),
    }
}

/// Mean of a serially dependent sequence with a batch-means standard error.
pub fn batch_mean_se(values: &[f64], batches: usize) -> MeanSe {
    let batches = batches.max(2).min(values.len().max(1));
    let size = values.len() / batches;
    if size == 0 {
        return mean_se(values);
    }
    let means: Vec<f64> = values
        .chunks_exact(size)
        .take(batches)
        .map(|c| c.iter().sum::<f64>() / size as f64)
        .collect();
    let overall = values.iter().sum::<f64>() / values.len() as f64;
    MeanSe {
        mean: overall,
        se: mean_se(&means).se,
    }
}

/// Outcome of a Pearson chi-square goodness-of-fit test.
#[derive(Debug, Clone, PartialEq)]
pub struct ChiSquareTest {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

impl ChiSquareTest {
    pub fn passes(&self, level: f64) -> bool {
        self.p_value >= level
    }
}

/// Pearson test of `observed` counts against cell probabilities `expected`.
///
/// Adjacent cells are pooled left to right until each pooled cell has an
/// expected count of at least 5; a trailing deficient cell joins its
/// predecessor. Probability not covered by `expected` is pooled into the
/// last cell together with any observations there.
pub fn chi_square_gof(observed: &[u64], expected: &[f64]) -> ChiSquareTest {
    assert_eq!(observed.len(), expected.len());
    let total: u64 = observed.iter().sum();
    let n = total as f64;
    let covered: f64 = expected.iter().sum();

    let mut cells: Vec<(f64, f64)> = Vec::new();
    let mut acc = (0.0, 0.0);
    for (i, (&o, &p)) in observed.iter().zip(expected).enumerate() {
        acc.0 += o as f64;
        acc.1 += p * n;
        if i + 1 == observed.len() {
            acc.1 += (1.0 - covered).max(0.0) * n;
        }
        if acc.1 >= 5.0 {
            cells.push(acc);
            acc = (0.0, 0.0);
        }
    }
    if acc.0 > 0.0 || acc.1 > 0.0 {
        match cells.last_mut() {
            Some(last) => {
                last.0 += acc.0;
                last.1 += acc.1;
            }
            None => cells.push(acc),
        }
    }
    let statistic: f64 = cells
        .iter()
        .map(|&(o, e)| if e > 0.0 { (o - e).powi(2) / e } else { 0.0 })
        .sum();
    let df = cells.len().saturating_sub(1);
    let p_value = if df == 0 {
        1.0
    } else {
        1.0 - ChiSquared::new(df as f64)
            .expect("positive degrees of freedom")
            .cdf(statistic)
    };
    ChiSquareTest {
        statistic,
        df,
        p_value,
    }
}

/// Pearson test that two samples of counts over the same cells come from one
/// law. Adjacent cells are pooled left to right until both samples have an
/// expected count of at least 5 in each pooled cell.
pub fn chi_square_two_sample(a: &[u64], b: &[u64]) -> ChiSquareTest {
    assert_eq!(a.len(), b.len());
    let na: u64 = a.iter().sum();
    let nb: u64 = b.iter().sum();
    let n = (na + nb) as f64;
    let (fa, fb) = (na as f64 / n, nb as f64 / n);

    let mut cells: Vec<(f64, f64)> = Vec::new();
    let mut acc = (0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        acc.0 += x as f64;
        acc.1 += y as f64;
        let total = acc.0 + acc.1;
        if total * fa.min(fb) >= 5.0 {
            cells.push(acc);
            acc = (0.0, 0.0);
        }
    }
    if acc.0 + acc.1 > 0.0 {
        match cells.last_mut() {
            Some(last) => {
                last.0 += acc.0;
                last.1 += acc.1;
            }
            None => cells.push(acc),
        }
    }
    let statistic: f64 = cells
        .iter()
        .map(|&(x, y)| {
            let t = x + y;
            let (ea, eb) = (t * fa, t * fb);
            (x - ea).powi(2) / ea + (y - eb).powi(2) / eb
        })
        .sum();
    let df = cells.len().saturating_sub(1);
    let p_value = if df == 0 {
        1.0
    } else {
        1.0 - ChiSquared::new(df as f64)
            .expect("positive degrees of freedom")
            .cdf(statistic)
    };
    ChiSquareTest {
        statistic,
        df,
        p_value,
    }
}

/// Least-squares slope of `ys` against `xs`.
pub fn ls_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}
