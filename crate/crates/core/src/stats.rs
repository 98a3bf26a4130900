//! Goodness-of-fit machinery: Kolmogorov–Smirnov (one and two sample),
//! chi-square with rare-cell pooling, normal confidence intervals.

use serde::Serialize;
use statrs::distribution::{Beta, ChiSquared, ContinuousCDF};

pub const MIN_SAMPLES: usize = 50;
const MIN_EXPECTED: f64 = 5.0;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("invalid distribution parameter: {0}")]
    BadParameter(String),
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Asymptotic Kolmogorov tail `Q(λ) = 2 Σ (-1)^{k-1} e^{-2k²λ²}`.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=200 {
        let kf = k as f64;
        let term = sign * (-2.0 * kf * kf * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-16 * sum.abs().max(1e-300) {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn ks_p(d: f64, n_eff: f64) -> f64 {
    let sq = n_eff.sqrt();
    kolmogorov_q((sq + 0.12 + 0.11 / sq) * d)
}

fn require(n: usize) -> Result<(), StatsError> {
    if n < MIN_SAMPLES {
        Err(StatsError::TooFewSamples {
            need: MIN_SAMPLES,
            got: n,
        })
    } else {
        Ok(())
    }
}

fn sorted(samples: &[f64]) -> Vec<f64> {
    let mut v = samples.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

/// One-sample KS test against a continuous CDF.
pub fn ks_one_sample(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<KsResult, StatsError> {
    require(samples.len())?;
    let xs = sorted(samples);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max(((i + 1) as f64 / n - f).abs()).max((f - i as f64 / n).abs());
    }
    Ok(KsResult {
        statistic: d,
        p_value: ks_p(d, n),
        n: xs.len(),
    })
}

/// Two-sample KS test.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult, StatsError> {
    require(a.len().min(b.len()))?;
    let xa = sorted(a);
    let xb = sorted(b);
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < xa.len() && j < xb.len() {
        let x = xa[i].min(xb[j]);
        while i < xa.len() && xa[i] <= x {
            i += 1;
        }
        while j < xb.len() && xb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(KsResult {
        statistic: d,
        p_value: ks_p(d, na * nb / (na + nb)),
        n: xa.len() + xb.len(),
    })
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    pub cells: usize,
}

fn chi_p(stat: f64, dof: usize) -> f64 {
    if dof == 0 {
        return 1.0;
    }
    let dist = ChiSquared::new(dof as f64).expect("positive dof");
    (1.0 - dist.cdf(stat)).clamp(0.0, 1.0)
}

/// Pool cells (in order of increasing expected count) until each pooled cell
/// has expected count at least 5. Returns groups of original indices.
fn pool_groups(expected: &[f64]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..expected.len()).collect();
    order.sort_by(|&a, &b| expected[a].total_cmp(&expected[b]).then(a.cmp(&b)));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    let mut acc = 0.0;
    for idx in order {
        current.push(idx);
        acc += expected[idx];
        if acc >= MIN_EXPECTED {
            groups.push(std::mem::take(&mut current));
            acc = 0.0;
        }
    }
    if !current.is_empty() {
        match groups.last_mut() {
            Some(last) => last.extend(current),
            None => groups.push(current),
        }
    }
    groups
}

/// Goodness of fit of observed counts against cell probabilities.
pub fn chi_square_gof(observed: &[u64], probs: &[f64]) -> ChiSquareResult {
    assert_eq!(observed.len(), probs.len());
    let n: u64 = observed.iter().sum();
    let expected: Vec<f64> = probs.iter().map(|p| p * n as f64).collect();
    let groups = pool_groups(&expected);
    let mut stat = 0.0;
    for g in &groups {
        let o: f64 = g.iter().map(|&i| observed[i] as f64).sum();
        let e: f64 = g.iter().map(|&i| expected[i]).sum();
        if e > 0.0 {
            stat += (o - e) * (o - e) / e;
        }
    }
    let dof = groups.len().saturating_sub(1);
    ChiSquareResult {
        statistic: stat,
        dof,
        p_value: chi_p(stat, dof),
        cells: groups.len(),
    }
}

/// Chi-square test that two histograms over the same cells come from the
/// same distribution.
pub fn chi_square_two_sample(a: &[u64], b: &[u64]) -> ChiSquareResult {
    assert_eq!(a.len(), b.len());
    let na: f64 = a.iter().sum::<u64>() as f64;
    let nb: f64 = b.iter().sum::<u64>() as f64;
    let total = na + nb;
    let pooled: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| (x + y) as f64 / total)
        .collect();
    let expected_min: Vec<f64> = pooled.iter().map(|p| p * na.min(nb)).collect();
    let groups = pool_groups(&expected_min);
    let mut stat = 0.0;
    for g in &groups {
        let oa: f64 = g.iter().map(|&i| a[i] as f64).sum();
        let ob: f64 = g.iter().map(|&i| b[i] as f64).sum();
        let p = (oa + ob) / total;
        let (ea, eb) = (p * na, p * nb);
        if ea > 0.0 {
            stat += (oa - ea).powi(2) / ea;
        }
        if eb > 0.0 {
            stat += (ob - eb).powi(2) / eb;
        }
    }
    let dof = groups.len().saturating_sub(1);
    ChiSquareResult {
        statistic: stat,
        dof,
        p_value: chi_p(stat, dof),
        cells: groups.len(),
    }
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct MeanEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub variance: f64,
    pub n: usize,
}

impl MeanEstimate {
    pub fn ci(&self, z: f64) -> (f64, f64) {
        (self.mean - z * self.std_error, self.mean + z * self.std_error)
    }

    pub fn contains(&self, value: f64, z: f64) -> bool {
        let (lo, hi) = self.ci(z);
        lo <= value && value <= hi
    }
}

/// Pairwise summation; the result depends only on the order of `xs`.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

pub fn mean_estimate(xs: &[f64]) -> MeanEstimate {
    let n = xs.len();
    let mean = pairwise_sum(xs) / n as f64;
    let dev: Vec<f64> = xs.iter().map(|x| (x - mean).powi(2)).collect();
    let variance = if n > 1 {
        pairwise_sum(&dev) / (n - 1) as f64
    } else {
        0.0
    };
    MeanEstimate {
        mean,
        std_error: (variance / n as f64).sqrt(),
        variance,
        n,
    }
}

pub fn median(xs: &[f64]) -> f64 {
    let v = sorted(xs);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Reference distributions accepted by [`stat_tests`].
#[derive(Clone, Copy)]
pub enum Reference<'a> {
    KsAgainstCdf(&'a dyn Fn(f64) -> f64),
    BetaMarginal { alpha: f64, beta: f64 },
    /// CI at the given z-score must contain `value`.
    NormalCi { value: f64, z: f64 },
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct TestReport {
    pub kind: &'static str,
    pub statistic: f64,
    pub p_value: Option<f64>,
    pub estimate: Option<MeanEstimate>,
    pub n: usize,
}

impl TestReport {
    /// Accept at significance `alpha` (KS) or CI containment.
    pub fn passes(&self, alpha: f64) -> bool {
        match self.p_value {
            Some(p) => p > alpha,
            None => self.statistic == 0.0,
        }
    }
}

pub fn stat_tests(samples: &[f64], reference: Reference<'_>) -> Result<TestReport, StatsError> {
    require(samples.len())?;
    match reference {
        Reference::KsAgainstCdf(cdf) => {
            let r = ks_one_sample(samples, cdf)?;
            Ok(TestReport {
                kind: "ks_against_cdf",
                statistic: r.statistic,
                p_value: Some(r.p_value),
                estimate: None,
                n: r.n,
            })
        }
        Reference::BetaMarginal { alpha, beta } => {
            let dist = Beta::new(alpha, beta)
                .map_err(|e| StatsError::BadParameter(e.to_string()))?;
            let r = ks_one_sample(samples, |x| dist.cdf(x.clamp(0.0, 1.0)))?;
            Ok(TestReport {
                kind: "beta_marginal",
                statistic: r.statistic,
                p_value: Some(r.p_value),
                estimate: None,
                n: r.n,
            })
        }
        Reference::NormalCi { value, z } => {
            let est = mean_estimate(samples);
            // statistic 0 means the CI contains the value
            let statistic = if est.contains(value, z) { 0.0 } else { 1.0 };
            Ok(TestReport {
                kind: "normal_ci",
                statistic,
                p_value: None,
                n: est.n,
                estimate: Some(est),
            })
        }
    }
}
