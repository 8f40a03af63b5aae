//! Effective-force reduction and logistic-map dynamics.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{dot, BasinSet, Embedding, GeometryError};

pub const DEFAULT_TRANSIENT: usize = 1000;
/// Scans need a longer transient: convergence slows near each flip.
pub const DEFAULT_SCAN_TRANSIENT: usize = 20_000;
pub const DEFAULT_SAMPLES: usize = 256;
/// Longest cycle the period detector looks for.
pub const MAX_PERIOD: usize = 64;
/// Absolute tolerance when matching a shifted orbit against itself.
pub const PERIOD_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LogisticError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("initial condition {0} outside [0, 1]")]
    InitialCondition(f64),
    #[error("map parameter r = {0} outside [0, 4]")]
    Parameter(f64),
    #[error("scan range must satisfy 0 <= r_min < r_max <= 4 (got {0}..{1})")]
    ScanRange(f64, f64),
    #[error("symbol threshold {0} must lie strictly inside (0, 1)")]
    Threshold(f64),
    #[error("calibration table must be non-empty and strictly increasing in both columns")]
    Calibration,
    #[error("need at least {0} samples")]
    TooFewSamples(usize),
}

/// `c·B − c·D`: positive favours `B`, negative favours `D`.
pub fn effective_force(c: &Embedding, basins: &BasinSet) -> Result<f64, LogisticError> {
    let (b, d) = basins.tipping_pair()?;
    Ok(dot(c, b)? - dot(c, d)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Period {
    Cycle(usize),
    Aperiodic,
}

impl Period {
    pub fn length(self) -> Option<usize> {
        match self {
            Period::Cycle(p) => Some(p),
            Period::Aperiodic => None,
        }
    }
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Period::Cycle(p) => write!(f, "{p}"),
            Period::Aperiodic => f.write_str("aperiodic"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticOrbit {
    pub r: f64,
    pub x0: f64,
    pub transient: usize,
    pub samples: Vec<f64>,
    pub period: Period,
}

impl LogisticOrbit {
    /// One representative of each point on the detected cycle, in orbit order.
    pub fn attractor(&self) -> &[f64] {
        match self.period {
            Period::Cycle(p) => &self.samples[..p.min(self.samples.len())],
            Period::Aperiodic => &self.samples,
        }
    }
}

#[inline]
pub fn logistic_step(r: f64, x: f64) -> f64 {
    r * x * (1.0 - x)
}

/// Smallest shift `k ≤ MAX_PERIOD` with `|s[i+k] − s[i]| ≤ PERIOD_TOLERANCE`
/// for every `i`; no match means aperiodic.
pub fn detect_period(samples: &[f64]) -> Period {
    detect_period_with(samples, MAX_PERIOD, PERIOD_TOLERANCE)
}

pub fn detect_period_with(samples: &[f64], max_period: usize, tolerance: f64) -> Period {
    for k in 1..=max_period.min(samples.len().saturating_sub(1)) {
        if samples
            .iter()
            .zip(&samples[k..])
            .all(|(a, b)| libm::fabs(a - b) <= tolerance)
        {
            return Period::Cycle(k);
        }
    }
    Period::Aperiodic
}

/// Iterates `x ← r·x·(1−x)`, drops `transient` iterates, keeps `n`.
pub fn orbit(x0: f64, r: f64, n: usize, transient: usize) -> Result<LogisticOrbit, LogisticError> {
    if !(0.0..=1.0).contains(&x0) {
        return Err(LogisticError::InitialCondition(x0));
    }
    if !(0.0..=4.0).contains(&r) {
        return Err(LogisticError::Parameter(r));
    }
    if n < 2 {
        return Err(LogisticError::TooFewSamples(2));
    }
    let mut x = x0;
    for _ in 0..transient {
        x = logistic_step(r, x);
    }
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        samples.push(x);
        x = logistic_step(r, x);
    }
    let period = detect_period(&samples);
    Ok(LogisticOrbit {
        r,
        x0,
        transient,
        samples,
        period,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanConfig {
    pub r_min: f64,
    pub r_max: f64,
    /// Number of parameter values, endpoints included.
    pub r_steps: usize,
    pub x0: f64,
    pub transient: usize,
    pub samples: usize,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            r_min: 2.8,
            r_max: 3.6,
            r_steps: 801,
            x0: 0.5,
            transient: DEFAULT_SCAN_TRANSIENT,
            samples: DEFAULT_SAMPLES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub r: f64,
    pub attractor: Vec<f64>,
    pub period: Period,
}

/// Estimated parameter value where the cycle length doubles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Doubling {
    pub from_period: usize,
    pub to_period: usize,
    /// Midpoint between the last `from_period` sample and the first
    /// `to_period` sample.
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BifurcationScan {
    pub points: Vec<ScanPoint>,
    /// The first two period doublings found, in order of increasing `r`.
    pub doublings: Vec<Doubling>,
}

pub fn bifurcation_scan(cfg: &ScanConfig) -> Result<BifurcationScan, LogisticError> {
    if !(0.0 <= cfg.r_min && cfg.r_min < cfg.r_max && cfg.r_max <= 4.0) {
        return Err(LogisticError::ScanRange(cfg.r_min, cfg.r_max));
    }
    let steps = cfg.r_steps.max(2);
    let mut points = Vec::with_capacity(steps);
    for i in 0..steps {
        let r = if i + 1 == steps {
            cfg.r_max
        } else {
            cfg.r_min + (cfg.r_max - cfg.r_min) * i as f64 / (steps - 1) as f64
        };
        let o = orbit(cfg.x0, r, cfg.samples, cfg.transient)?;
        points.push(ScanPoint {
            r,
            attractor: o.attractor().to_vec(),
            period: o.period,
        });
    }
    let doublings = find_doublings(&points, 2);
    Ok(BifurcationScan { points, doublings })
}

/// Walks the scan for `p → 2p` transitions between periodic points,
/// skipping unconverged (aperiodic) samples in between.
fn find_doublings(points: &[ScanPoint], limit: usize) -> Vec<Doubling> {
    let mut out = Vec::new();
    let mut last: Option<(usize, f64)> = None;
    for pt in points {
        let Period::Cycle(p) = pt.period else { continue };
        if let Some((prev, prev_r)) = last {
            if p == 2 * prev {
                out.push(Doubling {
                    from_period: prev,
                    to_period: p,
                    r: 0.5 * (prev_r + pt.r),
                });
                if out.len() == limit {
                    break;
                }
            }
        }
        last = Some((p, pt.r));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymbolPattern {
    /// One symbol per sample: `D` above the threshold, `B` otherwise.
    pub symbols: String,
    /// Shortest repeating block, rotated to its lexicographically smallest
    /// form; absent when the symbols do not repeat.
    pub block: Option<String>,
}

impl SymbolPattern {
    /// Two copies of the block followed by an ellipsis, e.g. `BDBD…`.
    pub fn display_pattern(&self) -> String {
        match &self.block {
            Some(b) => {
                let mut s = String::with_capacity(2 * b.len() + 3);
                s.push_str(b);
                s.push_str(b);
                s.push('…');
                s
            }
            None => self.symbols.clone(),
        }
    }
}

/// Maps orbit samples to `B`/`D` and reports the repeating block.
pub fn symbolize(orbit: &LogisticOrbit, threshold: f64) -> Result<SymbolPattern, LogisticError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(LogisticError::Threshold(threshold));
    }
    let symbols: Vec<u8> = orbit
        .samples
        .iter()
        .map(|&x| if x > threshold { b'D' } else { b'B' })
        .collect();
    let block = if orbit.period == Period::Aperiodic {
        None
    } else {
        (1..=symbols.len() / 2)
            .find(|&k| symbols.iter().zip(&symbols[k..]).all(|(a, b)| a == b))
            .map(|k| smallest_rotation(&symbols[..k]))
    };
    Ok(SymbolPattern {
        symbols: symbols.iter().map(|&c| c as char).collect(),
        block,
    })
}

fn smallest_rotation(block: &[u8]) -> String {
    let n = block.len();
    let best = (0..n)
        .map(|s| block[s..].iter().chain(&block[..s]).copied().collect::<Vec<u8>>())
        .min()
        .expect("non-empty block");
    best.into_iter().map(|c| c as char).collect()
}

/// User-supplied bridge from MLP gain to the map parameter `r`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub enum Calibration {
    #[default]
    Identity,
    /// `(gain, r)` knots, strictly increasing in both coordinates.
    Table(Vec<(f64, f64)>),
}

impl Calibration {
    pub fn table(knots: Vec<(f64, f64)>) -> Result<Self, LogisticError> {
        let ok = !knots.is_empty()
            && knots.iter().all(|(g, r)| g.is_finite() && r.is_finite())
            && knots.windows(2).all(|w| w[1].0 > w[0].0 && w[1].1 > w[0].1);
        if ok {
            Ok(Calibration::Table(knots))
        } else {
            Err(LogisticError::Calibration)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainMapping {
    pub r: f64,
    pub clamped: bool,
}

/// Piecewise-linear interpolation through the calibration table; gains
/// outside the table clamp to the end knots.
pub fn gain_to_r(mlp_gain: f64, calibration: &Calibration) -> GainMapping {
    let knots = match calibration {
        Calibration::Identity => {
            return GainMapping {
                r: mlp_gain,
                clamped: false,
            }
        }
        Calibration::Table(k) => k,
    };
    let (first, last) = (knots[0], knots[knots.len() - 1]);
    if mlp_gain < first.0 || mlp_gain > last.0 {
        log::warn!(
            "gain {mlp_gain} outside calibration table [{}, {}]; clamping",
            first.0,
            last.0
        );
        let r = if mlp_gain < first.0 { first.1 } else { last.1 };
        return GainMapping { r, clamped: true };
    }
    let i = knots.partition_point(|(g, _)| *g <= mlp_gain);
    let r = if i == 0 {
        first.1
    } else if i == knots.len() {
        last.1
    } else {
        let (g0, r0) = knots[i - 1];
        let (g1, r1) = knots[i];
        r0 + (r1 - r0) * (mlp_gain - g0) / (g1 - g0)
    };
    GainMapping { r, clamped: false }
}
