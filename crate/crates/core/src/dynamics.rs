//! Effective-head generation process.
//!
//! The last conversation entry acts as the query; every entry (the query
//! included) is a key and a value. The attention-weighted sum of entries is
//! the context vector `c`, and the next symbol is the candidate basin whose
//! centroid has the largest dot product with `c`. Emitted symbols enter the
//! conversation as their basin centroids.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand_core::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{dot, BasinSet, Embedding, GeometryError, Label};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("conversation is empty")]
    EmptyConversation,
    #[error("candidate list is empty")]
    NoCandidates,
    #[error("invalid dynamics configuration: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub label: Label,
    pub vector: Embedding,
}

/// The conversation so far, oldest entry first.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Conversation {
    pub entries: Vec<Entry>,
}

impl Conversation {
    pub fn new() -> Self {
        Self::default()
    }

    /// Resolves each label against `basins` and uses its centroid.
    pub fn from_labels(labels: &[&str], basins: &BasinSet) -> Result<Self, GeometryError> {
        let mut conv = Conversation::new();
        for l in labels {
            let label = Label::new(l)?;
            let vector = basins.centroid(&label)?.clone();
            conv.entries.push(Entry { label, vector });
        }
        Ok(conv)
    }

    pub fn push(&mut self, label: Label, vector: Embedding) {
        self.entries.push(Entry { label, vector });
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn last(&self) -> Option<&Entry> {
        self.entries.last()
    }

    pub fn vectors(&self) -> impl Iterator<Item = &Embedding> {
        self.entries.iter().map(|e| &e.vector)
    }

    /// Componentwise mean of all entry vectors.
    pub fn mean_pooled(&self) -> Result<Embedding, DynamicsError> {
        let vs: Vec<Embedding> = self.vectors().cloned().collect();
        if vs.is_empty() {
            return Err(DynamicsError::EmptyConversation);
        }
        Ok(crate::geometry::centroid(&vs)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicsConfig {
    /// Attention temperature dividing query-key dot products.
    pub t_eff: f64,
    /// Decoding temperature; zero means greedy.
    pub decode_temperature: f64,
    pub max_steps: usize,
    pub rng_seed: u64,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        DynamicsConfig {
            t_eff: 1.0,
            decode_temperature: 0.0,
            max_steps: 300,
            rng_seed: 0,
        }
    }
}

impl DynamicsConfig {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        if !(self.t_eff > 0.0 && self.t_eff.is_finite()) {
            return Err(DynamicsError::InvalidConfig("t_eff must be positive and finite"));
        }
        if !(self.decode_temperature >= 0.0 && self.decode_temperature.is_finite()) {
            return Err(DynamicsError::InvalidConfig("decode temperature must be non-negative"));
        }
        if self.max_steps == 0 {
            return Err(DynamicsError::InvalidConfig("max_steps must be at least 1"));
        }
        Ok(())
    }
}

/// Numerically stable softmax of `logits`.
pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| libm::exp(l - max)).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Attention weights of the last entry (query) over every entry.
pub fn attention_weights(conv: &Conversation, t_eff: f64) -> Result<Vec<f64>, DynamicsError> {
    let query = &conv.last().ok_or(DynamicsError::EmptyConversation)?.vector;
    let logits = conv
        .vectors()
        .map(|k| dot(query, k).map(|s| s / t_eff))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(softmax(&logits))
}

/// The compass-needle context vector of `conv`.
pub fn context_vector(conv: &Conversation, t_eff: f64) -> Result<Embedding, DynamicsError> {
    let weights = attention_weights(conv, t_eff)?;
    let dim = conv.entries[0].vector.dim();
    let mut acc = alloc::vec![0.0; dim];
    for (w, v) in weights.iter().zip(conv.vectors()) {
        if v.dim() != dim {
            return Err(GeometryError::DimensionMismatch {
                left: dim,
                right: v.dim(),
            }
            .into());
        }
        for (a, x) in acc.iter_mut().zip(v.as_slice()) {
            *a += w * x;
        }
    }
    Ok(Embedding::new(acc)?)
}

fn candidate_scores(
    context: &Embedding,
    basins: &BasinSet,
    candidates: &[Label],
) -> Result<Vec<(Label, f64)>, DynamicsError> {
    if candidates.is_empty() {
        return Err(DynamicsError::NoCandidates);
    }
    candidates
        .iter()
        .map(|l| Ok((l.clone(), dot(context, basins.centroid(l)?)?)))
        .collect()
}

/// Highest-scoring candidate; exact ties go to `D`, then to candidate order.
fn greedy_pick(scores: &[(Label, f64)]) -> Label {
    let best = scores.iter().map(|(_, s)| *s).fold(f64::NEG_INFINITY, f64::max);
    let mut tied = scores.iter().filter(|(_, s)| *s == best);
    let first = tied.next().expect("non-empty scores").0.clone();
    if first.is_d() {
        return first;
    }
    tied.find(|(l, _)| l.is_d()).map(|(l, _)| l.clone()).unwrap_or(first)
}

fn sample_pick<R: RngCore + ?Sized>(scores: &[(Label, f64)], temperature: f64, rng: &mut R) -> Label {
    let logits: Vec<f64> = scores.iter().map(|(_, s)| s / temperature).collect();
    let probs = softmax(&logits);
    let u = rng::uniform(rng);
    let mut cumulative = 0.0;
    for ((label, _), p) in scores.iter().zip(&probs) {
        cumulative += p;
        if u < cumulative {
            return label.clone();
        }
    }
    scores.last().expect("non-empty scores").0.clone()
}

/// Chooses the next symbol among `candidates` given context `c`.
///
/// `temperature == 0` is greedy; otherwise the symbol is sampled from the
/// softmax of `c·centroid / temperature`.
pub fn next_symbol<R: RngCore + ?Sized>(
    c: &Embedding,
    basins: &BasinSet,
    candidates: &[Label],
    temperature: f64,
    rng: &mut R,
) -> Result<Label, DynamicsError> {
    let scores = candidate_scores(c, basins, candidates)?;
    Ok(if temperature == 0.0 {
        greedy_pick(&scores)
    } else {
        sample_pick(&scores, temperature, rng)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutStep {
    pub context: Embedding,
    pub scores: BTreeMap<Label, f64>,
    pub chosen: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutTrace {
    pub steps: Vec<RolloutStep>,
    /// Number of steps before the first context with `c·D ≥ c·B`.
    pub first_hit: Option<usize>,
}

impl RolloutTrace {
    pub fn chosen(&self) -> impl Iterator<Item = &Label> {
        self.steps.iter().map(|s| &s.chosen)
    }

    /// Emitted labels concatenated, e.g. `"BDDD"`.
    pub fn symbol_string(&self) -> alloc::string::String {
        self.chosen().map(|l| l.as_str()).collect()
    }
}

/// Index of the first context satisfying `c·D ≥ c·B`.
pub fn first_hit<'a, I>(contexts: I, basins: &BasinSet) -> Result<Option<usize>, DynamicsError>
where
    I: IntoIterator<Item = &'a Embedding>,
{
    let (b, d) = basins.tipping_pair()?;
    for (t, c) in contexts.into_iter().enumerate() {
        if dot(c, d)? >= dot(c, b)? {
            return Ok(Some(t));
        }
    }
    Ok(None)
}

/// The default two-basin candidate set `{B, D}`.
pub fn default_candidates() -> Vec<Label> {
    alloc::vec![Label::b(), Label::d()]
}

/// Runs the effective head for `cfg.max_steps` steps starting from `prompt`.
pub fn rollout(
    prompt: &Conversation,
    basins: &BasinSet,
    candidates: &[Label],
    cfg: &DynamicsConfig,
) -> Result<RolloutTrace, DynamicsError> {
    cfg.validate()?;
    if prompt.is_empty() {
        return Err(DynamicsError::EmptyConversation);
    }
    let (b, d) = basins.tipping_pair()?;
    let mut rng = rng::seeded(cfg.rng_seed);
    let mut conv = prompt.clone();
    let mut steps = Vec::with_capacity(cfg.max_steps);
    let mut hit = None;
    for t in 0..cfg.max_steps {
        let context = context_vector(&conv, cfg.t_eff)?;
        if hit.is_none() && dot(&context, d)? >= dot(&context, b)? {
            hit = Some(t);
        }
        let scores = candidate_scores(&context, basins, candidates)?;
        let chosen = if cfg.decode_temperature == 0.0 {
            greedy_pick(&scores)
        } else {
            sample_pick(&scores, cfg.decode_temperature, &mut rng)
        };
        conv.push(chosen.clone(), basins.centroid(&chosen)?.clone());
        steps.push(RolloutStep {
            context,
            scores: scores.into_iter().collect(),
            chosen,
        });
    }
    Ok(RolloutTrace { steps, first_hit: hit })
}

/// Emits exactly one greedy `{B, D}` symbol; returns the extended
/// conversation and whether that symbol was `D`.
pub fn one_step_continuation(
    prompt: &Conversation,
    basins: &BasinSet,
    cfg: &DynamicsConfig,
) -> Result<(Conversation, bool), DynamicsError> {
    if prompt.is_empty() {
        return Err(DynamicsError::EmptyConversation);
    }
    let context = context_vector(prompt, cfg.t_eff)?;
    let scores = candidate_scores(&context, basins, &default_candidates())?;
    let chosen = greedy_pick(&scores);
    let d_first = chosen.is_d();
    let mut extended = prompt.clone();
    extended.push(chosen.clone(), basins.centroid(&chosen)?.clone());
    Ok((extended, d_first))
}
