//! Closed-form tipping point and the classifications built around it.
//!
//! For a conversation `P_1, P_2, …` the number of `B` symbols emitted before
//! the first `D` is
//!
//! ```text
//!        Σ_i (P_i·B − P_i·D) · exp(P_i·B / T_eff)
//! n* = ⌈ ───────────────────────────────────────── ⌉ ,   n* ≥ 0
//!          (B·D − B·B) · exp(B·B / T_eff)
//! ```
//!
//! Once the effective head is emitting `B`, its query is `B`, and the
//! inequality `c·D ≥ c·B` on the context reduces exactly to `n ≥ raw`, which
//! is why this matches greedy rollouts of [`crate::dynamics`].

use alloc::vec::Vec;
use core::fmt;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::dynamics::{one_step_continuation, Conversation, DynamicsConfig, DynamicsError};
use crate::geometry::{alignment, dot, AlignmentReport, BasinSet, Embedding, GeometryError, Label};

/// Default half-width of the near-boundary band on `delta_hat`.
pub const DEFAULT_EPSILON_BOUNDARY: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PredictError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("degenerate denominator: B·D equals B·B exactly ({0}), the basins sit on the tipping boundary")]
    DegenerateDenominator(f64),
    #[error("threshold undefined: (P−B)·(B−D) is zero")]
    UndefinedThreshold,
    #[error("conversation is empty")]
    EmptyConversation,
}

/// Predicted tipping point: a count of `B` symbols, or `Stable` when `B`
/// is an attractor and no finite count exists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NStar {
    Count(u64),
    Stable,
}

impl NStar {
    pub fn count(self) -> Option<u64> {
        match self {
            NStar::Count(n) => Some(n),
            NStar::Stable => None,
        }
    }
}

impl fmt::Display for NStar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NStar::Count(n) => write!(f, "{n}"),
            NStar::Stable => f.write_str("stable"),
        }
    }
}

impl Serialize for NStar {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            NStar::Count(n) => s.serialize_u64(*n),
            NStar::Stable => s.serialize_str("stable"),
        }
    }
}

impl<'de> Deserialize<'de> for NStar {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = NStar;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a non-negative integer or \"stable\"")
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<NStar, E> {
                Ok(NStar::Count(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<NStar, E> {
                u64::try_from(v)
                    .map(NStar::Count)
                    .map_err(|_| E::custom("n_star must be non-negative"))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<NStar, E> {
                match v {
                    "stable" => Ok(NStar::Stable),
                    other => other
                        .parse::<u64>()
                        .map(NStar::Count)
                        .map_err(|_| E::invalid_value(de::Unexpected::Str(other), &self)),
                }
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimingClass {
    Immediate,
    Delayed,
    StableB,
    NearBoundary,
}

impl fmt::Display for TimingClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TimingClass::Immediate => "immediate",
            TimingClass::Delayed => "delayed",
            TimingClass::StableB => "stable_b",
            TimingClass::NearBoundary => "near_boundary",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttractorClass {
    DAbsorbing,
    OscillatoryCapable,
    BStable,
}

impl fmt::Display for AttractorClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttractorClass::DAbsorbing => "d_absorbing",
            AttractorClass::OscillatoryCapable => "oscillatory_capable",
            AttractorClass::BStable => "b_stable",
        })
    }
}

/// How a prediction treats the prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionMode {
    /// Emit one greedy symbol first; a `D` there means `n* = 0`, otherwise
    /// the closed form is evaluated on the prompt.
    #[default]
    OneStep,
    /// Closed form on the prompt as given.
    Analytic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictConfig {
    pub t_eff: f64,
    pub epsilon_boundary: f64,
    pub mode: PredictionMode,
}

impl Default for PredictConfig {
    fn default() -> Self {
        PredictConfig {
            t_eff: 1.0,
            epsilon_boundary: DEFAULT_EPSILON_BOUNDARY,
            mode: PredictionMode::OneStep,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TippingPrediction {
    pub n_star: NStar,
    /// Right-hand side of the closed form before rounding.
    pub raw_value: f64,
    pub numerator: f64,
    pub denominator: f64,
    pub delta_raw: f64,
    pub delta_hat: f64,
    pub timing_class: TimingClass,
    pub reliable: bool,
    /// Whether the one-step continuation emitted `D`.
    pub d_first: bool,
}

/// One conversation entry's contribution to the numerator.
pub fn numerator_term(p: &Embedding, b: &Embedding, d: &Embedding, t_eff: f64) -> Result<f64, GeometryError> {
    let pb = dot(p, b)?;
    let pd = dot(p, d)?;
    Ok(numerator_term_from_dots(pb, pd, t_eff))
}

pub(crate) fn numerator_term_from_dots(pb: f64, pd: f64, t_eff: f64) -> f64 {
    let diff = pb - pd;
    if diff == 0.0 {
        0.0
    } else {
        diff * libm::exp(pb / t_eff)
    }
}

pub fn numerator<'a, I>(entries: I, b: &Embedding, d: &Embedding, t_eff: f64) -> Result<f64, GeometryError>
where
    I: IntoIterator<Item = &'a Embedding>,
{
    let mut sum = 0.0;
    for p in entries {
        sum += numerator_term(p, b, d, t_eff)?;
    }
    Ok(sum)
}

/// `(B·D − B·B) · exp(B·B / T_eff)`.
pub fn denominator(b: &Embedding, d: &Embedding, t_eff: f64) -> Result<f64, GeometryError> {
    let bb = dot(b, b)?;
    let bd = dot(b, d)?;
    Ok((bd - bb) * libm::exp(bb / t_eff))
}

/// `max(0, ⌈raw⌉)` with no epsilon nudging at exact integers.
pub fn round_n_star(raw: f64) -> u64 {
    let c = libm::ceil(raw);
    if c <= 0.0 {
        0
    } else {
        c as u64
    }
}

pub fn classify_timing(alignment: &AlignmentReport, denominator: f64, epsilon_boundary: f64) -> TimingClass {
    if libm::fabs(alignment.delta_hat) < epsilon_boundary {
        TimingClass::NearBoundary
    } else if alignment.delta_raw > 0.0 {
        TimingClass::Immediate
    } else if denominator < 0.0 && alignment.delta_raw < 0.0 {
        TimingClass::StableB
    } else {
        TimingClass::Delayed
    }
}

/// Closed-form tipping point on `conv` as given, with default boundary band.
pub fn tipping_point(conv: &Conversation, basins: &BasinSet, t_eff: f64) -> Result<TippingPrediction, PredictError> {
    predict(
        conv,
        basins,
        &PredictConfig {
            t_eff,
            mode: PredictionMode::Analytic,
            ..Default::default()
        },
    )
}

/// Tipping prediction under `cfg`.
///
/// The alignment metrics use the conversation's last entry, which is the
/// effective head's query for the first emitted symbol.
pub fn predict(conv: &Conversation, basins: &BasinSet, cfg: &PredictConfig) -> Result<TippingPrediction, PredictError> {
    let reference = &conv.last().ok_or(PredictError::EmptyConversation)?.vector;
    let (b, d) = basins.tipping_pair()?;
    let num = numerator(conv.vectors(), b, d, cfg.t_eff)?;
    let den = denominator(b, d, cfg.t_eff)?;
    if den == 0.0 {
        return Err(PredictError::DegenerateDenominator(dot(b, d)?));
    }
    let raw_value = num / den;
    let align = alignment(reference, basins)?;
    let mut timing_class = classify_timing(&align, den, cfg.epsilon_boundary);

    let d_first = match cfg.mode {
        PredictionMode::Analytic => false,
        PredictionMode::OneStep => {
            let dyn_cfg = DynamicsConfig {
                t_eff: cfg.t_eff,
                ..Default::default()
            };
            one_step_continuation(conv, basins, &dyn_cfg)?.1
        }
    };

    let n_star = if d_first {
        if timing_class != TimingClass::NearBoundary {
            timing_class = TimingClass::Immediate;
        }
        NStar::Count(0)
    } else if den < 0.0 {
        // A B-leaning numerator over a negative denominator never crosses zero.
        if raw_value < 0.0 {
            NStar::Stable
        } else {
            // Earlier entries outweigh a B-leaning query: D wins at once.
            if timing_class == TimingClass::StableB {
                timing_class = TimingClass::Immediate;
            }
            NStar::Count(0)
        }
    } else {
        NStar::Count(round_n_star(raw_value))
    };
    if timing_class == TimingClass::StableB {
        debug_assert_eq!(n_star, NStar::Stable);
    }

    Ok(TippingPrediction {
        n_star,
        raw_value,
        numerator: num,
        denominator: den,
        delta_raw: align.delta_raw,
        delta_hat: align.delta_hat,
        timing_class,
        reliable: libm::fabs(align.delta_hat) >= cfg.epsilon_boundary,
        d_first,
    })
}

/// Post-tipping behaviour implied by the `B`/`D` geometry alone.
pub fn attractor_class(basins: &BasinSet) -> Result<AttractorClass, PredictError> {
    let (b, d) = basins.tipping_pair()?;
    if b == d {
        log::warn!("basins B and D coincide; classifying as D-absorbing");
        return Ok(AttractorClass::DAbsorbing);
    }
    let bb = dot(b, b)?;
    let bd = dot(b, d)?;
    let dd = dot(d, d)?;
    Ok(if bd < bb {
        AttractorClass::BStable
    } else if dd > bd {
        AttractorClass::DAbsorbing
    } else {
        AttractorClass::OscillatoryCapable
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteeringOutcome {
    pub before: TippingPrediction,
    pub after: TippingPrediction,
    /// `after − before`, absent when either side is `Stable`.
    pub delta_n_star: Option<i64>,
}

/// Appends `injected` entries to `conv` and reports the closed-form change.
pub fn steer(
    conv: &Conversation,
    injected: &[(Label, Embedding)],
    basins: &BasinSet,
    t_eff: f64,
) -> Result<SteeringOutcome, PredictError> {
    let before = tipping_point(conv, basins, t_eff)?;
    let mut steered = conv.clone();
    for (label, v) in injected {
        if v.dim() != basins.dimension {
            return Err(GeometryError::DimensionMismatch {
                left: basins.dimension,
                right: v.dim(),
            }
            .into());
        }
        steered.push(label.clone(), v.clone());
    }
    let mut after = tipping_point(&steered, basins, t_eff)?;
    // The alignment reference stays the original prompt's query.
    after.delta_raw = before.delta_raw;
    after.delta_hat = before.delta_hat;
    after.timing_class = before.timing_class;
    after.reliable = before.reliable;
    let delta_n_star = match (before.n_star, after.n_star) {
        (NStar::Count(a), NStar::Count(b)) => Some(b as i64 - a as i64),
        _ => None,
    };
    Ok(SteeringOutcome {
        before,
        after,
        delta_n_star,
    })
}

/// `B·(D−B) / ((P−B)·(B−D))`, the multilayer threshold diagnostic.
pub fn multilayer_threshold(p: &Embedding, basins: &BasinSet) -> Result<f64, PredictError> {
    let (b, d) = basins.tipping_pair()?;
    let d_minus_b = d.sub(b)?;
    let b_minus_d = b.sub(d)?;
    let num = dot(b, &d_minus_b)?;
    let den = dot(&p.sub(b)?, &b_minus_d)?;
    if den == 0.0 {
        return Err(PredictError::UndefinedThreshold);
    }
    Ok(num / den)
}

/// Predictions for several conversations against one basin set.
pub fn predict_all(
    convs: &[Conversation],
    basins: &BasinSet,
    cfg: &PredictConfig,
) -> Vec<Result<TippingPrediction, PredictError>> {
    convs.iter().map(|c| predict(c, basins, cfg)).collect()
}
