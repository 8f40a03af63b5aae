//! Prompt × geometry × seed sweeps: predict with the one-step rule, observe
//! with a rollout, and summarise agreement.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tipping_core::dynamics::{default_candidates, rollout};
use tipping_core::geometry::alignment;
use tipping_core::predictor::{
    attractor_class, classify_timing, denominator, predict, PredictConfig, PredictionMode, DEFAULT_EPSILON_BOUNDARY,
};
use tipping_core::rng;
use tipping_core::stats::{
    baseline_compare, binomial_test, clopper_pearson, confusion, sentence_first_hit, within_one, BaselineComparison,
    ConfusionMatrix, Interval, Sided,
};
use tipping_core::{
    AttractorClass, BasinSet, Conversation, DynamicsConfig, Embedding, NStar, RolloutTrace, TimingClass,
};

use crate::conversation::{build_conversation, ConversationError, EntrySpec};
use crate::files::{load_basin_file, read_sentence_labels, FileError};

/// Minimum ±1 agreement rate on the synthetic oracle sweep.
pub const AGREEMENT_THRESHOLD: f64 = 0.8;
/// Sweep geometries closer than this to the basin boundary are skipped.
pub const SWEEP_MIN_DELTA_HAT: f64 = 0.05;
pub const DEFAULT_GEOMETRY: &str = "default";
pub const CI_ALPHA: f64 = 0.05;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    File(#[from] FileError),
    #[error("cannot parse experiment spec {path}: {message}")]
    Spec { path: PathBuf, message: String },
    #[error("prompt {prompt:?}: {source}")]
    Prompt { prompt: String, source: ConversationError },
    #[error("prompt {prompt:?} refers to unknown geometry {geometry:?}")]
    UnknownGeometry { prompt: String, geometry: String },
    #[error("duplicate prompt name {0:?}")]
    DuplicatePrompt(String),
    #[error("invalid experiment: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GeometrySource {
    Path(PathBuf),
    Inline(BasinSet),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub name: String,
    pub conversation: Vec<EntrySpec>,
    #[serde(default)]
    pub control: bool,
    /// Key into `geometries`; the default geometry when absent.
    #[serde(default)]
    pub geometry: Option<String>,
    /// JSON-lines sentence labels for the sentence-level observation.
    #[serde(default)]
    pub sentence_labels: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OutputPaths {
    #[serde(default)]
    pub csv: Option<PathBuf>,
    #[serde(default)]
    pub summary: Option<PathBuf>,
    #[serde(default)]
    pub svg_dir: Option<PathBuf>,
    #[serde(default)]
    pub traces_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub count: usize,
    pub seed: u64,
}

fn default_t_eff() -> f64 {
    1.0
}
fn default_temperatures() -> Vec<f64> {
    vec![0.0]
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_max_steps() -> usize {
    300
}
fn default_epsilon() -> f64 {
    DEFAULT_EPSILON_BOUNDARY
}

/// The experiment file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    #[serde(default)]
    pub basin_file: Option<PathBuf>,
    #[serde(default)]
    pub basins: Option<BasinSet>,
    #[serde(default)]
    pub geometries: BTreeMap<String, GeometrySource>,
    #[serde(default)]
    pub prompts: Vec<PromptSpec>,
    /// Adds seeded synthetic geometries, one prompt each.
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    #[serde(default = "default_t_eff")]
    pub t_eff: f64,
    #[serde(default = "default_temperatures")]
    pub decode_temperatures: Vec<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon_boundary: f64,
    #[serde(default)]
    pub outputs: OutputPaths,
}

impl ExperimentSpec {
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(|source| FileError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| ExperimentError::Spec {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedPrompt {
    pub name: String,
    pub geometry: String,
    pub conversation: Conversation,
    pub control: bool,
    pub sentence_first_hit: Option<Option<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunParams {
    pub t_eff: f64,
    pub epsilon_boundary: f64,
    pub max_steps: usize,
}

impl Default for RunParams {
    fn default() -> Self {
        RunParams {
            t_eff: 1.0,
            epsilon_boundary: DEFAULT_EPSILON_BOUNDARY,
            max_steps: 300,
        }
    }
}

/// A validated experiment with every file loaded.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedExperiment {
    pub geometries: BTreeMap<String, BasinSet>,
    pub prompts: Vec<ResolvedPrompt>,
    pub decode_temperatures: Vec<f64>,
    pub seeds: Vec<u64>,
    pub params: RunParams,
    pub outputs: OutputPaths,
}

fn resolve_path(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl ResolvedExperiment {
    /// Loads referenced files relative to `base_dir` and checks every prompt.
    pub fn resolve(spec: &ExperimentSpec, base_dir: &Path) -> Result<Self, ExperimentError> {
        if !(spec.t_eff > 0.0 && spec.t_eff.is_finite()) {
            return Err(ExperimentError::Invalid("t_eff must be positive".into()));
        }
        if spec.decode_temperatures.is_empty() || spec.decode_temperatures.iter().any(|t| !(*t >= 0.0 && t.is_finite()))
        {
            return Err(ExperimentError::Invalid(
                "decode_temperatures must be non-empty and non-negative".into(),
            ));
        }
        if spec.seeds.is_empty() {
            return Err(ExperimentError::Invalid("seeds must be non-empty".into()));
        }
        if spec.max_steps == 0 {
            return Err(ExperimentError::Invalid("max_steps must be at least 1".into()));
        }
        if spec.basin_file.is_some() && spec.basins.is_some() {
            return Err(ExperimentError::Invalid(
                "give either basin_file or basins, not both".into(),
            ));
        }

        let mut geometries = BTreeMap::new();
        if let Some(p) = &spec.basin_file {
            geometries.insert(
                DEFAULT_GEOMETRY.to_string(),
                load_basin_file(&resolve_path(base_dir, p))?,
            );
        }
        if let Some(b) = &spec.basins {
            b.validate()
                .map_err(|e| ExperimentError::Invalid(format!("inline basins: {e}")))?;
            geometries.insert(DEFAULT_GEOMETRY.to_string(), b.clone());
        }
        for (name, source) in &spec.geometries {
            let set = match source {
                GeometrySource::Path(p) => load_basin_file(&resolve_path(base_dir, p))?,
                GeometrySource::Inline(b) => {
                    b.validate()
                        .map_err(|e| ExperimentError::Invalid(format!("geometry {name}: {e}")))?;
                    b.clone()
                }
            };
            if geometries.insert(name.clone(), set).is_some() {
                return Err(ExperimentError::Invalid(format!("geometry {name:?} defined twice")));
            }
        }

        let mut names = BTreeSet::new();
        let mut prompts = Vec::with_capacity(spec.prompts.len());
        for p in &spec.prompts {
            if !names.insert(p.name.clone()) {
                return Err(ExperimentError::DuplicatePrompt(p.name.clone()));
            }
            let geometry = p.geometry.clone().unwrap_or_else(|| DEFAULT_GEOMETRY.to_string());
            let basins = geometries
                .get(&geometry)
                .ok_or_else(|| ExperimentError::UnknownGeometry {
                    prompt: p.name.clone(),
                    geometry: geometry.clone(),
                })?;
            let conversation =
                build_conversation(&p.conversation, basins).map_err(|source| ExperimentError::Prompt {
                    prompt: p.name.clone(),
                    source,
                })?;
            let sentence_first_hit = match &p.sentence_labels {
                Some(path) => Some(sentence_first_hit(&read_sentence_labels(&resolve_path(
                    base_dir, path,
                ))?)),
                None => None,
            };
            prompts.push(ResolvedPrompt {
                name: p.name.clone(),
                geometry,
                conversation,
                control: p.control,
                sentence_first_hit,
            });
        }

        let mut resolved = ResolvedExperiment {
            geometries,
            prompts,
            decode_temperatures: spec.decode_temperatures.clone(),
            seeds: spec.seeds.clone(),
            params: RunParams {
                t_eff: spec.t_eff,
                epsilon_boundary: spec.epsilon_boundary,
                max_steps: spec.max_steps,
            },
            outputs: OutputPaths {
                csv: spec.outputs.csv.as_ref().map(|p| resolve_path(base_dir, p)),
                summary: spec.outputs.summary.as_ref().map(|p| resolve_path(base_dir, p)),
                svg_dir: spec.outputs.svg_dir.as_ref().map(|p| resolve_path(base_dir, p)),
                traces_dir: spec.outputs.traces_dir.as_ref().map(|p| resolve_path(base_dir, p)),
            },
        };
        if let Some(sweep) = spec.sweep {
            for (name, case) in synthetic_sweep(sweep.count, sweep.seed, spec.t_eff) {
                if !names.insert(name.clone()) {
                    return Err(ExperimentError::DuplicatePrompt(name));
                }
                resolved.add_case(name, case);
            }
        }
        Ok(resolved)
    }

    /// An experiment consisting only of synthetic sweep geometries.
    pub fn sweep(count: usize, seed: u64, params: RunParams) -> Self {
        let mut resolved = ResolvedExperiment {
            geometries: BTreeMap::new(),
            prompts: Vec::new(),
            decode_temperatures: vec![0.0],
            seeds: vec![0],
            params,
            outputs: OutputPaths::default(),
        };
        for (name, case) in synthetic_sweep(count, seed, params.t_eff) {
            resolved.add_case(name, case);
        }
        resolved
    }

    fn add_case(&mut self, name: String, case: SweepCase) {
        self.geometries.insert(name.clone(), case.basins);
        self.prompts.push(ResolvedPrompt {
            geometry: name.clone(),
            name,
            conversation: case.conversation,
            control: false,
            sentence_first_hit: None,
        });
    }

    pub fn cell_count(&self) -> usize {
        self.prompts.len() * self.decode_temperatures.len() * self.seeds.len()
    }
}

/// One prompt × geometry × temperature × seed outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub prompt: String,
    pub geometry: String,
    pub control: bool,
    pub decode_temperature: f64,
    pub seed: u64,
    pub n_star_pred: NStar,
    pub raw_value: f64,
    pub n_star_obs_tok: Option<u64>,
    pub n_star_obs_sent: Option<u64>,
    pub timing_class: TimingClass,
    pub delta_hat: f64,
    pub d_first: bool,
    /// Token-level agreement under the ±1 rule.
    pub agree_tok: bool,
    pub exact_tok: bool,
    pub agree_sent: Option<bool>,
}

/// CSV column order of [`ResultRecord`].
pub const RECORD_COLUMNS: [&str; 15] = [
    "prompt",
    "geometry",
    "control",
    "decode_temperature",
    "seed",
    "n_star_pred",
    "raw_value",
    "n_star_obs_tok",
    "n_star_obs_sent",
    "timing_class",
    "delta_hat",
    "d_first",
    "agree_tok",
    "exact_tok",
    "agree_sent",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub prompt: String,
    pub geometry: String,
    pub decode_temperature: f64,
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRun {
    pub records: Vec<ResultRecord>,
    /// Rollout traces in record order; kept for 2-D geometries only.
    pub traces: Vec<Option<RolloutTrace>>,
    pub failures: Vec<CellFailure>,
}

/// Prediction and observation for one cell.
pub fn evaluate_cell(
    prompt: &ResolvedPrompt,
    basins: &BasinSet,
    params: &RunParams,
    decode_temperature: f64,
    seed: u64,
) -> Result<(ResultRecord, RolloutTrace), String> {
    let cfg = PredictConfig {
        t_eff: params.t_eff,
        epsilon_boundary: params.epsilon_boundary,
        mode: PredictionMode::OneStep,
    };
    let pred = predict(&prompt.conversation, basins, &cfg).map_err(|e| e.to_string())?;
    let dyn_cfg = DynamicsConfig {
        t_eff: params.t_eff,
        decode_temperature,
        max_steps: params.max_steps,
        rng_seed: seed,
    };
    let trace = rollout(&prompt.conversation, basins, &default_candidates(), &dyn_cfg).map_err(|e| e.to_string())?;
    let obs = trace.first_hit.map(|h| h as u64);
    let obs_sent = prompt.sentence_first_hit.flatten().map(|h| h as u64);
    let record = ResultRecord {
        prompt: prompt.name.clone(),
        geometry: prompt.geometry.clone(),
        control: prompt.control,
        decode_temperature,
        seed,
        n_star_pred: pred.n_star,
        raw_value: pred.raw_value,
        n_star_obs_tok: obs,
        n_star_obs_sent: obs_sent,
        timing_class: pred.timing_class,
        delta_hat: pred.delta_hat,
        d_first: pred.d_first,
        agree_tok: within_one(pred.n_star, obs),
        exact_tok: pred.n_star.count() == obs,
        agree_sent: prompt
            .sentence_first_hit
            .map(|s| within_one(pred.n_star, s.map(|h| h as u64))),
    };
    Ok((record, trace))
}

/// Runs every cell in parallel; records are sorted by prompt, geometry,
/// temperature and seed so the output does not depend on scheduling.
pub fn run_experiment(exp: &ResolvedExperiment) -> ExperimentRun {
    let mut cells = Vec::with_capacity(exp.cell_count());
    for (pi, prompt) in exp.prompts.iter().enumerate() {
        for &temperature in &exp.decode_temperatures {
            for &seed in &exp.seeds {
                cells.push((pi, prompt, temperature, seed));
            }
        }
    }
    let mut outcomes: Vec<_> = cells
        .into_par_iter()
        .map(|(pi, prompt, temperature, seed)| {
            let basins = &exp.geometries[&prompt.geometry];
            let result = evaluate_cell(prompt, basins, &exp.params, temperature, seed);
            (pi, temperature, seed, prompt, basins.dimension, result)
        })
        .collect();
    outcomes.sort_by(|a, b| {
        (&a.3.name, &a.3.geometry, a.1.to_bits(), a.2, a.0).cmp(&(&b.3.name, &b.3.geometry, b.1.to_bits(), b.2, b.0))
    });

    let keep_all = exp.outputs.traces_dir.is_some();
    let mut run = ExperimentRun {
        records: Vec::new(),
        traces: Vec::new(),
        failures: Vec::new(),
    };
    for (_, temperature, seed, prompt, dim, result) in outcomes {
        match result {
            Ok((record, trace)) => {
                run.records.push(record);
                run.traces.push((keep_all || dim == 2).then_some(trace));
            }
            Err(message) => {
                log::warn!(
                    "prompt {} on geometry {} (T={temperature}, seed {seed}) failed: {message}",
                    prompt.name,
                    prompt.geometry
                );
                run.failures.push(CellFailure {
                    prompt: prompt.name.clone(),
                    geometry: prompt.geometry.clone(),
                    decode_temperature: temperature,
                    seed,
                    message,
                });
            }
        }
    }
    run
}

/// Histogram bins of `n*` values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Bin {
    #[serde(rename = "0")]
    Zero,
    #[serde(rename = "1")]
    One,
    #[serde(rename = "2")]
    Two,
    #[serde(rename = "3+")]
    ThreePlus,
    #[serde(rename = "no_d")]
    NoD,
}

impl Bin {
    pub const ALL: [Bin; 5] = [Bin::Zero, Bin::One, Bin::Two, Bin::ThreePlus, Bin::NoD];

    pub fn of(n: Option<u64>) -> Bin {
        match n {
            Some(0) => Bin::Zero,
            Some(1) => Bin::One,
            Some(2) => Bin::Two,
            Some(_) => Bin::ThreePlus,
            None => Bin::NoD,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Bin::Zero => "0",
            Bin::One => "1",
            Bin::Two => "2",
            Bin::ThreePlus => "3+",
            Bin::NoD => "no D",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinRow {
    pub bin: Bin,
    pub predicted: u64,
    pub observed: u64,
    pub ci_predicted: Option<Interval>,
    pub ci_observed: Option<Interval>,
    /// Whether the two proportion intervals overlap.
    pub overlap: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairCount {
    pub predicted: Bin,
    pub observed: Bin,
    pub count: u64,
}

/// Agreement summary over non-control records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub records: usize,
    pub controls: usize,
    pub evaluated: usize,
    pub agreements: usize,
    pub exact_matches: usize,
    pub agreement_rate: Option<f64>,
    /// One-sided exact binomial test of the agreement count against 1/2.
    pub binomial_p: Option<f64>,
    pub baseline: Option<BaselineComparison>,
    pub confusion: Option<ConfusionMatrix>,
    pub sentence_evaluated: usize,
    pub sentence_agreements: usize,
    pub bins: Vec<BinRow>,
    pub pairs: Vec<PairCount>,
}

/// Predicted against observed tipping points.
pub fn compare(records: &[ResultRecord]) -> Summary {
    let evaluated: Vec<&ResultRecord> = records.iter().filter(|r| !r.control).collect();
    let n = evaluated.len();
    let agreements = evaluated.iter().filter(|r| r.agree_tok).count();
    let exact_matches = evaluated.iter().filter(|r| r.exact_tok).count();
    let preds: Vec<NStar> = evaluated.iter().map(|r| r.n_star_pred).collect();
    let obs: Vec<Option<u64>> = evaluated.iter().map(|r| r.n_star_obs_tok).collect();
    let sentence: Vec<bool> = evaluated.iter().filter_map(|r| r.agree_sent).collect();

    let mut pred_counts: BTreeMap<Bin, u64> = BTreeMap::new();
    let mut obs_counts: BTreeMap<Bin, u64> = BTreeMap::new();
    let mut pairs: BTreeMap<(Bin, Bin), u64> = BTreeMap::new();
    for (p, o) in preds.iter().zip(&obs) {
        let (bp, bo) = (Bin::of(p.count()), Bin::of(*o));
        *pred_counts.entry(bp).or_default() += 1;
        *obs_counts.entry(bo).or_default() += 1;
        *pairs.entry((bp, bo)).or_default() += 1;
    }
    let ci = |k: u64| (n > 0).then(|| clopper_pearson(k, n as u64, CI_ALPHA).expect("k ≤ n"));
    let bins = Bin::ALL
        .iter()
        .map(|&bin| {
            let predicted = pred_counts.get(&bin).copied().unwrap_or(0);
            let observed = obs_counts.get(&bin).copied().unwrap_or(0);
            let (ci_predicted, ci_observed) = (ci(predicted), ci(observed));
            let overlap = match (ci_predicted, ci_observed) {
                (Some(a), Some(b)) => a.overlaps(&b),
                _ => true,
            };
            BinRow {
                bin,
                predicted,
                observed,
                ci_predicted,
                ci_observed,
                overlap,
            }
        })
        .collect();

    Summary {
        records: records.len(),
        controls: records.len() - n,
        evaluated: n,
        agreements,
        exact_matches,
        agreement_rate: (n > 0).then(|| agreements as f64 / n as f64),
        binomial_p: (n > 0).then(|| binomial_test(agreements as u64, n as u64, 0.5, Sided::One).expect("valid counts")),
        baseline: baseline_compare(&preds, &obs).ok(),
        confusion: confusion(
            &preds.iter().map(|p| p.count().is_some()).collect::<Vec<_>>(),
            &obs.iter().map(|o| o.is_some()).collect::<Vec<_>>(),
        )
        .ok(),
        sentence_evaluated: sentence.len(),
        sentence_agreements: sentence.iter().filter(|a| **a).count(),
        bins,
        pairs: pairs
            .into_iter()
            .map(|((predicted, observed), count)| PairCount {
                predicted,
                observed,
                count,
            })
            .collect(),
    }
}

/// A synthetic geometry and its prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCase {
    pub basins: BasinSet,
    pub conversation: Conversation,
}

fn random_vector(r: &mut rng::Rng, d: usize) -> Embedding {
    let scale = 1.0 / (d as f64).sqrt();
    Embedding::new((0..d).map(|_| scale * rng::normal(r)).collect()).expect("finite")
}

fn sweep_candidate(seed: u64, index: u64, t_eff: f64) -> Option<SweepCase> {
    let mut r = rng::seeded_stream(seed, index);
    let d = 2 + rng::index(&mut r, 15);
    let a = random_vector(&mut r, d);
    let b = random_vector(&mut r, d);
    let dv = random_vector(&mut r, d);
    let n_c = rng::index(&mut r, 3);
    let cs: Vec<Embedding> = (0..n_c).map(|_| random_vector(&mut r, d)).collect();

    let mut centroids = vec![("A", a), ("B", b), ("D", dv)];
    let c_labels = ["C1", "C2"];
    for (label, c) in c_labels.iter().zip(cs) {
        centroids.push((label, c));
    }
    let basins = BasinSet::from_centroids(centroids).ok()?;

    let report = alignment(basins.lookup("A").ok()?, &basins).ok()?;
    let (bv, dvec) = basins.tipping_pair().ok()?;
    let den = denominator(bv, dvec, t_eff).ok()?;
    let delayed = classify_timing(&report, den, SWEEP_MIN_DELTA_HAT) == TimingClass::Delayed;
    let absorbing = attractor_class(&basins).ok()? == AttractorClass::DAbsorbing;
    if !(delayed && absorbing) {
        return None;
    }
    let mut labels = vec!["A"];
    labels.extend(&c_labels[..n_c]);
    labels.push("A");
    let conversation = Conversation::from_labels(&labels, &basins).ok()?;
    Some(SweepCase { basins, conversation })
}

/// Seeded random geometries in dimensions 2 to 16, kept only when the prompt
/// is in the delayed class with `|Δ̂| ≥ 0.05` and `D` is absorbing.
/// Prompts are `A`, up to two random `C` vectors, then `A` again.
pub fn synthetic_sweep(count: usize, seed: u64, t_eff: f64) -> Vec<(String, SweepCase)> {
    let mut out = Vec::with_capacity(count);
    let mut index = 0u64;
    while out.len() < count {
        if let Some(case) = sweep_candidate(seed, index, t_eff) {
            out.push((format!("sweep-{seed}-{index:06}"), case));
        }
        index += 1;
    }
    out
}
