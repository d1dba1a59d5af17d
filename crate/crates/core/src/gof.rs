//! Goodness-of-fit checks for samples from discrete distributions.
//!
//! Kolmogorov–Smirnov testing needs a continuous reference. Event `i` of a
//! discrete distribution is spread uniformly over `(i-1, i]`; the converted
//! sample then has the piecewise linear CDF of [`ReferenceCdf`] and the usual
//! KS critical values apply. Pearson chi-square tests are provided as well.

use rand::Rng;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::multinomial::open01;

/// Significance levels reported by [`KsReport`].
pub const KS_ALPHAS: [f64; 3] = [0.1, 0.05, 0.01];
/// Categories with fewer expected counts are pooled in chi-square tests.
pub const MIN_EXPECTED: f64 = 5.0;

/// Continuous CDF over `(0, N]` for event probabilities `p_1..p_N`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceCdf {
    probs: Vec<f64>,
    /// `cumulative[i] = p_1 + … + p_i`, with `cumulative[0] = 0`.
    cumulative: Vec<f64>,
}

impl ReferenceCdf {
    /// Normalizes nonnegative weights to probabilities.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::EmptyPopulation);
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::InvalidQuery(format!("event weight {w} is not a finite nonnegative number")));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::ZeroTotalWeight);
        }
        let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let mut acc = 0.0;
        let mut cumulative = Vec::with_capacity(probs.len() + 1);
        cumulative.push(0.0);
        for p in &probs {
            acc += p;
            cumulative.push(acc);
        }
        // Pin the end so that F(N) = 1 exactly.
        *cumulative.last_mut().expect("nonempty") = 1.0;
        Ok(Self { probs, cumulative })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    /// `F(x) = p_c (x - c) + Σ_{i ≤ c} p_i` with `c = ⌈x⌉`.
    pub fn eval(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        let n = self.probs.len();
        if x >= n as f64 {
            return 1.0;
        }
        let c = x.ceil() as usize;
        self.probs[c - 1] * (x - c as f64) + self.cumulative[c]
    }
}

/// Spreads 1-based event indices uniformly over their unit intervals.
pub fn continuous_convert<R: Rng + ?Sized>(events: &[usize], size: usize, rng: &mut R) -> Result<Vec<f64>> {
    events
        .iter()
        .map(|&i| {
            if i == 0 || i > size {
                Err(Error::IndexOutOfRange { index: i, size })
            } else {
                Ok((i - 1) as f64 + open01(rng))
            }
        })
        .collect()
}

/// `sup |F_n(x) - F(x)|`, checked on both sides of every empirical step.
pub fn ks_statistic(values: &[f64], cdf: &ReferenceCdf) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut d = 0.0f64;
    for (j, &x) in sorted.iter().enumerate() {
        let f = cdf.eval(x);
        d = d.max((j + 1) as f64 / n - f).max(f - j as f64 / n);
    }
    Ok(d.clamp(0.0, 1.0))
}

/// Asymptotic critical value `sqrt(ln(2/α)/2) / sqrt(n)`.
pub fn ks_critical(alpha: f64, n: usize) -> f64 {
    ((2.0 / alpha).ln() / 2.0).sqrt() / (n as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KsLevel {
    pub alpha: f64,
    pub critical: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KsReport {
    pub d: f64,
    pub n: usize,
    pub levels: Vec<KsLevel>,
}

impl KsReport {
    pub fn new(d: f64, n: usize) -> Self {
        Self::with_alphas(d, n, &KS_ALPHAS)
    }

    pub fn with_alphas(d: f64, n: usize, alphas: &[f64]) -> Self {
        let levels = alphas
            .iter()
            .map(|&alpha| {
                let critical = ks_critical(alpha, n);
                KsLevel {
                    alpha,
                    critical,
                    pass: d < critical,
                }
            })
            .collect();
        Self { d, n, levels }
    }

    pub fn passes(&self, alpha: f64) -> bool {
        self.d < ks_critical(alpha, self.n)
    }
}

/// Converts 1-based events and runs the KS test against `cdf`.
pub fn ks_test_events<R: Rng + ?Sized>(events: &[usize], cdf: &ReferenceCdf, rng: &mut R) -> Result<KsReport> {
    let values = continuous_convert(events, cdf.len(), rng)?;
    Ok(KsReport::new(ks_statistic(&values, cdf)?, values.len()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChiSquare {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

impl ChiSquare {
    fn from_statistic(statistic: f64, dof: usize) -> Self {
        let p_value = if !statistic.is_finite() {
            0.0
        } else if dof == 0 {
            1.0
        } else {
            ChiSquared::new(dof as f64).map_or(f64::NAN, |d| d.sf(statistic))
        };
        Self {
            statistic,
            dof,
            p_value,
        }
    }
}

/// Consecutive categories are merged until each bin expects at least
/// [`MIN_EXPECTED`]; a short tail joins the last bin. Returns bin ids.
fn pool(expected: &[f64]) -> Vec<usize> {
    let mut bins = vec![0; expected.len()];
    let (mut bin, mut acc) = (0usize, 0.0);
    for (i, &e) in expected.iter().enumerate() {
        bins[i] = bin;
        acc += e;
        if acc >= MIN_EXPECTED {
            bin += 1;
            acc = 0.0;
        }
    }
    if acc > 0.0 && bin > 0 {
        for b in bins.iter_mut().filter(|b| **b == bin) {
            *b = bin - 1;
        }
    }
    bins
}

/// Pearson goodness-of-fit of observed counts against probabilities.
/// Counts on zero-probability categories give an infinite statistic.
pub fn chi_square_gof(observed: &[u64], probs: &[f64]) -> Result<ChiSquare> {
    if observed.len() != probs.len() {
        return Err(Error::InvalidQuery(format!(
            "{} observed categories but {} probabilities",
            observed.len(),
            probs.len()
        )));
    }
    let n: u64 = observed.iter().sum();
    if n == 0 {
        return Err(Error::EmptySample);
    }
    if observed.iter().zip(probs).any(|(&o, &p)| o > 0 && p <= 0.0) {
        return Ok(ChiSquare::from_statistic(f64::INFINITY, probs.len().saturating_sub(1)));
    }
    let expected: Vec<f64> = probs.iter().map(|p| p * n as f64).collect();
    let bins = pool(&expected);
    let k = bins.iter().max().map_or(0, |b| b + 1);
    let (mut o, mut e) = (vec![0.0; k], vec![0.0; k]);
    for i in 0..observed.len() {
        o[bins[i]] += observed[i] as f64;
        e[bins[i]] += expected[i];
    }
    let statistic = o
        .iter()
        .zip(&e)
        .filter(|(_, &e)| e > 0.0)
        .map(|(o, e)| (o - e).powi(2) / e)
        .sum();
    Ok(ChiSquare::from_statistic(statistic, k.saturating_sub(1)))
}

/// Two-sample chi-square test that both count vectors come from the same
/// distribution.
pub fn chi_square_homogeneity(a: &[u64], b: &[u64]) -> Result<ChiSquare> {
    if a.len() != b.len() {
        return Err(Error::InvalidQuery("count vectors differ in length".into()));
    }
    let (na, nb) = (a.iter().sum::<u64>() as f64, b.iter().sum::<u64>() as f64);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::EmptySample);
    }
    let n = na + nb;
    // Pool on the smaller expected count of the two samples.
    let pooled: Vec<f64> = a.iter().zip(b).map(|(&x, &y)| (x + y) as f64).collect();
    let smaller: Vec<f64> = pooled.iter().map(|t| t * na.min(nb) / n).collect();
    let bins = pool(&smaller);
    let k = bins.iter().max().map_or(0, |b| b + 1);
    let (mut ca, mut cb) = (vec![0.0; k], vec![0.0; k]);
    for i in 0..a.len() {
        ca[bins[i]] += a[i] as f64;
        cb[bins[i]] += b[i] as f64;
    }
    let mut statistic = 0.0;
    let mut used = 0usize;
    for (x, y) in ca.iter().zip(&cb) {
        let t = x + y;
        if t == 0.0 {
            continue;
        }
        used += 1;
        let (ea, eb) = (t * na / n, t * nb / n);
        statistic += (x - ea).powi(2) / ea + (y - eb).powi(2) / eb;
    }
    Ok(ChiSquare::from_statistic(statistic, used.saturating_sub(1)))
}
