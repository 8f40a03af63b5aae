//! Validation statistics: phrase bootstrap, exact binomial tests,
//! Clopper-Pearson intervals, confusion matrices, the always-zero baseline
//! and the sentence-level first-hit index.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{alignment, centroid, BasinSet, Embedding, GeometryError, Label};
use crate::predictor::{denominator, numerator_term, round_n_star, NStar};
use crate::rng;

pub const DEFAULT_RESAMPLES: usize = 200;
/// Largest `n` for which tails at `p0 = 1/2` are summed in exact integers.
pub const EXACT_BINOMIAL_MAX_N: u64 = 64;
const BISECTION_WIDTH: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("basin {label} has {count} phrases; bootstrap needs at least 2")]
    TooFewPhrases { label: Label, count: usize },
    #[error("n_resamples must be at least 1")]
    NoResamples,
    #[error("k = {k} exceeds n = {n}")]
    CountRange { k: u64, n: u64 },
    #[error("probability {0} must lie strictly inside (0, 1)")]
    Probability(f64),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("input is empty")]
    Empty,
}

/// `[lower, upper]`, closed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn spans_zero(&self) -> bool {
        self.lower <= 0.0 && self.upper >= 0.0
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }

    pub fn overlaps(&self, other: &Interval) -> bool {
        self.lower <= other.upper && other.lower <= self.upper
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub n_resamples: usize,
    pub seed: u64,
    pub t_eff: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            n_resamples: DEFAULT_RESAMPLES,
            seed: 0,
            t_eff: 1.0,
        }
    }
}

/// Metrics from one bootstrap resample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResampleOutcome {
    pub delta_hat: f64,
    pub delta_cos: Option<f64>,
    /// Closed-form `n*` for the prompt; `+∞` when `B` is stable.
    pub n_star: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpansZero {
    pub delta_hat: bool,
    pub delta_cos: Option<bool>,
    pub n_star: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub n_resamples: usize,
    pub ci_delta_hat: Interval,
    /// Absent when no resample had a defined cosine difference.
    pub ci_delta_cos: Option<Interval>,
    pub ci_n_star: Interval,
    pub spans_zero: SpansZero,
}

fn check_phrases(basins: &BasinSet) -> Result<(), StatsError> {
    let (b, d) = (Label::b(), Label::d());
    basins.tipping_pair()?;
    for (label, basin) in &basins.basins {
        let count = basin.phrases.len();
        let required = *label == b || *label == d;
        if (required || count > 0) && count < 2 {
            return Err(StatsError::TooFewPhrases {
                label: label.clone(),
                count,
            });
        }
    }
    Ok(())
}

/// Resample `index` of a bootstrap run. Basins with phrases are resampled
/// with replacement; basins without phrases keep their stored centroid.
///
/// Each index draws from its own ChaCha stream of `cfg.seed`, so resamples
/// can be computed in any order or in parallel.
pub fn bootstrap_resample(
    basins: &BasinSet,
    prompt: &Embedding,
    cfg: &BootstrapConfig,
    index: u64,
) -> Result<ResampleOutcome, StatsError> {
    let mut r = rng::seeded_stream(cfg.seed, index);
    let mut resampled = BasinSet::new(basins.dimension);
    for (label, basin) in &basins.basins {
        let c = if basin.phrases.is_empty() {
            basin.centroid.clone()
        } else {
            let n = basin.phrases.len();
            let draw: Vec<Embedding> = (0..n)
                .map(|_| basin.phrases[rng::index(&mut r, n)].embedding.clone())
                .collect();
            centroid(&draw)?
        };
        resampled.insert(label.clone(), crate::geometry::Basin::from_centroid(c))?;
    }
    let report = alignment(prompt, &resampled)?;
    let (b, d) = resampled.tipping_pair()?;
    let den = denominator(b, d, cfg.t_eff)?;
    let raw = numerator_term(prompt, b, d, cfg.t_eff)? / den;
    let n_star = if den > 0.0 {
        round_n_star(raw) as f64
    } else if den < 0.0 && raw >= 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(ResampleOutcome {
        delta_hat: report.delta_hat,
        delta_cos: report.delta_cos,
        n_star,
    })
}

/// Percentile bootstrap over basin phrases.
pub fn bootstrap(basins: &BasinSet, prompt: &Embedding, cfg: &BootstrapConfig) -> Result<BootstrapResult, StatsError> {
    if cfg.n_resamples == 0 {
        return Err(StatsError::NoResamples);
    }
    check_phrases(basins)?;
    let outcomes = (0..cfg.n_resamples as u64)
        .map(|i| bootstrap_resample(basins, prompt, cfg, i))
        .collect::<Result<Vec<_>, _>>()?;
    summarize_resamples(&outcomes)
}

/// 95% percentile intervals over precomputed resamples.
pub fn summarize_resamples(outcomes: &[ResampleOutcome]) -> Result<BootstrapResult, StatsError> {
    if outcomes.is_empty() {
        return Err(StatsError::NoResamples);
    }
    let ci = |mut v: Vec<f64>| {
        v.sort_by(f64::total_cmp);
        Interval {
            lower: quantile_sorted(&v, 0.025),
            upper: quantile_sorted(&v, 0.975),
        }
    };
    let ci_delta_hat = ci(outcomes.iter().map(|o| o.delta_hat).collect());
    let cos: Vec<f64> = outcomes.iter().filter_map(|o| o.delta_cos).collect();
    let ci_delta_cos = if cos.is_empty() { None } else { Some(ci(cos)) };
    let ci_n_star = ci(outcomes.iter().map(|o| o.n_star).collect());
    Ok(BootstrapResult {
        n_resamples: outcomes.len(),
        ci_delta_hat,
        ci_delta_cos,
        ci_n_star,
        spans_zero: SpansZero {
            delta_hat: ci_delta_hat.spans_zero(),
            delta_cos: ci_delta_cos.map(|c| c.spans_zero()),
            n_star: ci_n_star.spans_zero(),
        },
    })
}

/// Linear-interpolation quantile of sorted data (the "type 7" rule).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q;
    let lo = libm::floor(h) as usize;
    let hi = (lo + 1).min(n - 1);
    let (a, b) = (sorted[lo], sorted[hi]);
    let frac = h - lo as f64;
    if a == b || frac == 0.0 {
        a
    } else {
        a + (b - a) * frac
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sided {
    /// Upper tail `P(X ≥ k)`.
    #[default]
    One,
    Two,
}

/// An exact dyadic probability `numerator / 2^exponent`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dyadic {
    pub numerator: u128,
    pub exponent: u32,
}

impl Dyadic {
    pub fn to_f64(self) -> f64 {
        self.numerator as f64 / libm::pow(2.0, self.exponent as f64)
    }
}

fn choose_row(n: u64) -> Vec<u128> {
    let mut row = alloc::vec![1u128; n as usize + 1];
    for i in 1..n as usize {
        row[i] = row[i - 1] * (n as u128 - i as u128 + 1) / i as u128;
    }
    row
}

/// `P(X ≥ k)` for `X ~ Binomial(n, 1/2)`, exactly.
pub fn upper_tail_half(k: u64, n: u64) -> Result<Dyadic, StatsError> {
    exact_half_range(k, n, n)
}

/// `P(X ≤ k)` for `X ~ Binomial(n, 1/2)`, exactly.
pub fn lower_tail_half(k: u64, n: u64) -> Result<Dyadic, StatsError> {
    exact_half_range(0, k, n)
}

fn exact_half_range(from: u64, to: u64, n: u64) -> Result<Dyadic, StatsError> {
    if n > EXACT_BINOMIAL_MAX_N {
        return Err(StatsError::CountRange {
            k: n,
            n: EXACT_BINOMIAL_MAX_N,
        });
    }
    if from > n || to > n {
        return Err(StatsError::CountRange { k: from.max(to), n });
    }
    let row = choose_row(n);
    let numerator = if from > to {
        0
    } else {
        row[from as usize..=to as usize].iter().sum()
    };
    Ok(Dyadic {
        numerator,
        exponent: n as u32,
    })
}

fn ln_choose(n: u64, k: u64) -> f64 {
    libm::lgamma(n as f64 + 1.0) - libm::lgamma(k as f64 + 1.0) - libm::lgamma((n - k) as f64 + 1.0)
}

/// Binomial probability mass in floating point.
pub fn binomial_pmf(i: u64, n: u64, p: f64) -> f64 {
    if p == 0.0 {
        return if i == 0 { 1.0 } else { 0.0 };
    }
    if p == 1.0 {
        return if i == n { 1.0 } else { 0.0 };
    }
    libm::exp(ln_choose(n, i) + i as f64 * libm::log(p) + (n - i) as f64 * libm::log1p(-p))
}

fn upper_tail(k: u64, n: u64, p: f64) -> f64 {
    (k..=n).map(|i| binomial_pmf(i, n, p)).sum::<f64>().min(1.0)
}

fn lower_tail(k: u64, n: u64, p: f64) -> f64 {
    (0..=k).map(|i| binomial_pmf(i, n, p)).sum::<f64>().min(1.0)
}

/// Exact binomial test of `k` successes in `n` trials against `p0`.
///
/// One-sided is the upper tail `P(X ≥ k)`. Two-sided at `p0 = 1/2` doubles
/// the smaller tail; otherwise it sums every outcome no more likely than
/// `k`. At `p0 = 1/2` and `n ≤ 64` tails are exact integer sums.
pub fn binomial_test(k: u64, n: u64, p0: f64, sided: Sided) -> Result<f64, StatsError> {
    if k > n {
        return Err(StatsError::CountRange { k, n });
    }
    if !(p0 > 0.0 && p0 < 1.0) {
        return Err(StatsError::Probability(p0));
    }
    if p0 == 0.5 && n <= EXACT_BINOMIAL_MAX_N {
        let upper = upper_tail_half(k, n)?;
        return Ok(match sided {
            Sided::One => upper.to_f64(),
            Sided::Two => {
                let lower = lower_tail_half(k, n)?;
                let smaller = upper.numerator.min(lower.numerator);
                (Dyadic {
                    numerator: 2 * smaller,
                    exponent: n as u32,
                })
                .to_f64()
                .min(1.0)
            }
        });
    }
    Ok(match sided {
        Sided::One => upper_tail(k, n, p0),
        Sided::Two => {
            let observed = binomial_pmf(k, n, p0);
            let cutoff = observed * (1.0 + 1e-7);
            (0..=n)
                .map(|i| binomial_pmf(i, n, p0))
                .filter(|&p| p <= cutoff)
                .sum::<f64>()
                .min(1.0)
        }
    })
}

/// Bisection for the root of a monotone function on `[0, 1]`.
fn bisect<F: Fn(f64) -> f64>(f: F, increasing: bool) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while hi - lo > BISECTION_WIDTH {
        let mid = 0.5 * (lo + hi);
        let above = f(mid) > 0.0;
        if above == increasing {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Exact (Clopper-Pearson) `1 − alpha` interval for a binomial proportion.
///
/// The bounds are Beta quantiles, found here through the equivalent binomial
/// tail equations `P(X ≥ k | p_lo) = α/2` and `P(X ≤ k | p_hi) = α/2`.
pub fn clopper_pearson(k: u64, n: u64, alpha: f64) -> Result<Interval, StatsError> {
    if k > n {
        return Err(StatsError::CountRange { k, n });
    }
    if n == 0 {
        return Err(StatsError::Empty);
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(StatsError::Probability(alpha));
    }
    let half = alpha / 2.0;
    let lower = if k == 0 {
        0.0
    } else {
        bisect(|p| upper_tail(k, n, p) - half, true)
    };
    let upper = if k == n {
        1.0
    } else {
        bisect(|p| lower_tail(k, n, p) - half, false)
    };
    Ok(Interval { lower, upper })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub true_positive: u64,
    pub false_positive: u64,
    pub false_negative: u64,
    pub true_negative: u64,
}

/// Predicted versus observed D-tip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: ConfusionCounts,
    pub agreement: f64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        let c = &self.counts;
        c.true_positive + c.false_positive + c.false_negative + c.true_negative
    }

    pub fn agreements(&self) -> u64 {
        self.counts.true_positive + self.counts.true_negative
    }
}

pub fn confusion(predicted: &[bool], observed: &[bool]) -> Result<ConfusionMatrix, StatsError> {
    if predicted.len() != observed.len() {
        return Err(StatsError::LengthMismatch {
            left: predicted.len(),
            right: observed.len(),
        });
    }
    if predicted.is_empty() {
        return Err(StatsError::Empty);
    }
    let mut c = ConfusionCounts {
        true_positive: 0,
        false_positive: 0,
        false_negative: 0,
        true_negative: 0,
    };
    for (&p, &o) in predicted.iter().zip(observed) {
        match (p, o) {
            (true, true) => c.true_positive += 1,
            (true, false) => c.false_positive += 1,
            (false, true) => c.false_negative += 1,
            (false, false) => c.true_negative += 1,
        }
    }
    let agreement = (c.true_positive + c.true_negative) as f64 / predicted.len() as f64;
    Ok(ConfusionMatrix { counts: c, agreement })
}

/// Agreement under the ±1 tolerance: counts within one of each other, or a
/// stable prediction against an observation with no `D`.
pub fn within_one(predicted: NStar, observed: Option<u64>) -> bool {
    match (predicted, observed) {
        (NStar::Count(p), Some(o)) => p.abs_diff(o) <= 1,
        (NStar::Stable, None) => true,
        _ => false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineComparison {
    pub total: usize,
    pub model_correct: usize,
    pub baseline_correct: usize,
    pub model_accuracy: f64,
    pub baseline_accuracy: f64,
}

/// Model accuracy versus an always-`n* = 0` baseline, both under ±1.
pub fn baseline_compare(predicted: &[NStar], observed: &[Option<u64>]) -> Result<BaselineComparison, StatsError> {
    if predicted.len() != observed.len() {
        return Err(StatsError::LengthMismatch {
            left: predicted.len(),
            right: observed.len(),
        });
    }
    if predicted.is_empty() {
        return Err(StatsError::Empty);
    }
    let model_correct = predicted
        .iter()
        .zip(observed)
        .filter(|(p, o)| within_one(**p, **o))
        .count();
    let baseline_correct = observed.iter().filter(|o| within_one(NStar::Count(0), **o)).count();
    let total = predicted.len();
    Ok(BaselineComparison {
        total,
        model_correct,
        baseline_correct,
        model_accuracy: model_correct as f64 / total as f64,
        baseline_accuracy: baseline_correct as f64 / total as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SentenceLabel {
    B,
    D,
}

/// Number of sentences before the first `D`, or `None` when there is none.
pub fn sentence_first_hit(labels: &[SentenceLabel]) -> Option<usize> {
    labels.iter().position(|l| *l == SentenceLabel::D)
}
