//! The `tipping` command.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 a monitored
//! stream tipped, 3 runtime failure.

use std::ffi::OsString;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use tipping_core::dynamics::{default_candidates, first_hit, rollout};
use tipping_core::logistic::{bifurcation_scan, orbit, symbolize, BifurcationScan, Period, ScanConfig, ScanPoint};
use tipping_core::multilayer::{generate_symbols, Readout, ToyTransformer};
use tipping_core::predictor::{predict, steer, PredictConfig, PredictionMode};
use tipping_core::stats::{
    binomial_test, bootstrap, clopper_pearson, sentence_first_hit, upper_tail_half, BootstrapConfig, Sided,
};
use tipping_core::{
    AlertLevel, BasinSet, ContextMode, Conversation, DynamicsConfig, Embedding, MonitorConfig, MonitorState,
    RolloutStep, RolloutTrace,
};

use crate::conversation::{build_conversation, parse_conversation, parse_shorthand};
use crate::experiments::{compare, run_experiment, ExperimentSpec, ResolvedExperiment, Summary};
use crate::files::{
    load_basin_file, load_model_file, read_json_lines, read_sentence_labels, read_trace, write_trace, StreamStatus,
    StreamToken,
};
use crate::format::sig;
use crate::report::{
    bifurcation_svg, emit_report, histogram_svg, read_records_csv, trajectory_svg, write_records_csv, write_scan_csv,
    write_summary_csv, write_svg, Trajectory, HISTOGRAM_SVG, SUMMARY_CSV,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_TIPPED: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

/// Environment variable holding the default basin file.
pub const BASINS_ENV: &str = "TIPPING_BASINS";

/// Shown symbols of a rollout before the trace is elided.
const TRACE_PREVIEW: usize = 24;

#[derive(Debug, Parser)]
#[command(
    name = "tipping",
    version,
    about = "Predict when a conversation tips from basin B into basin D",
    disable_help_subcommand = true
)]
pub struct Cli {
    /// Seed for every random choice
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Print results as JSON
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Closed-form tipping point of a conversation
    Predict(PredictArgs),
    /// Roll out the effective head and report the first D context
    Rollout(RolloutArgs),
    /// Change in the tipping point after appending entries
    Steer(SteerArgs),
    /// Greedy generation with a toy multi-layer transformer
    Multilayer(MultilayerArgs),
    /// Logistic-map period-doubling scan
    Bifurcate(BifurcateArgs),
    /// Bootstrap intervals over basin phrases
    Bootstrap(BootstrapArgs),
    /// Exact binomial tests, Clopper-Pearson intervals, sentence labels
    Stats(StatsArgs),
    /// Stream monitor over JSON-lines token embeddings
    Monitor(MonitorArgs),
    /// Run an experiment spec
    Experiment(ExperimentArgs),
    /// Regenerate tables and figures from saved outputs
    Report(ReportArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct BasinArg {
    /// Basin file
    #[arg(long, env = BASINS_ENV)]
    pub basins: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct PredictArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub basins: BasinArg,
    /// Conversation: labels and [x,y,...] vectors, comma separated
    #[arg(long)]
    pub conv: String,
    /// Effective attention temperature
    #[arg(long, default_value_t = 1.0)]
    pub t_eff: f64,
    /// Minimum |Δ̂| for a reliable prediction
    #[arg(long, default_value_t = 0.01)]
    pub epsilon: f64,
    /// Evaluate the closed form on the prompt without the one-step check
    #[arg(long)]
    pub analytic: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct RolloutArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub basins: BasinArg,
    /// Prompt: labels and [x,y,...] vectors, comma separated
    #[arg(long)]
    pub prompt: String,
    #[arg(long, default_value_t = 300)]
    pub steps: usize,
    /// Effective attention temperature
    #[arg(long, default_value_t = 1.0)]
    pub t_eff: f64,
    /// Decoding temperature; 0 is greedy
    #[arg(long, default_value_t = 0.0)]
    pub temperature: f64,
    /// Write the trace as JSON lines
    #[arg(long)]
    pub trace_out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SteerArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub basins: BasinArg,
    #[arg(long)]
    pub conv: String,
    /// Entries to append
    #[arg(long)]
    pub inject: String,
    /// Effective attention temperature
    #[arg(long, default_value_t = 1.0)]
    pub t_eff: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelInit {
    EffectiveHead,
    Zeros,
    Random,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReadoutArg {
    Update,
    Residual,
}

#[derive(Debug, Args, Serialize)]
pub struct MultilayerArgs {
    /// Model file: a basin file with a "model" section
    #[arg(long, conflicts_with_all = ["basins", "init"])]
    pub model: Option<PathBuf>,
    /// Basin file for a generated model
    #[arg(long, env = BASINS_ENV)]
    pub basins: Option<PathBuf>,
    /// Generated model
    #[arg(long, value_enum)]
    pub init: Option<ModelInit>,
    #[arg(long)]
    pub prompt: String,
    #[arg(long, default_value_t = 300)]
    pub steps: usize,
    /// Layers in a generated model; extra effective-head layers are zero
    #[arg(long, default_value_t = 1)]
    pub layers: usize,
    #[arg(long, default_value_t = 1)]
    pub heads: usize,
    #[arg(long, default_value_t = 8)]
    pub hidden: usize,
    /// Standard deviation of random weights
    #[arg(long, default_value_t = 0.5)]
    pub scale: f64,
    /// Overrides the gain of every MLP
    #[arg(long)]
    pub mlp_gain: Option<f64>,
    #[arg(long, value_enum, default_value_t = ReadoutArg::Update)]
    pub readout: ReadoutArg,
    /// Effective attention temperature
    #[arg(long, default_value_t = 1.0)]
    pub t_eff: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct BifurcateArgs {
    #[arg(long, default_value_t = 2.8)]
    pub r_min: f64,
    #[arg(long, default_value_t = 3.6)]
    pub r_max: f64,
    #[arg(long, default_value_t = 801)]
    pub r_steps: usize,
    #[arg(long, default_value_t = 0.5)]
    pub x0: f64,
    #[arg(long, default_value_t = tipping_core::logistic::DEFAULT_SCAN_TRANSIENT)]
    pub transient: usize,
    #[arg(long, default_value_t = tipping_core::logistic::DEFAULT_SAMPLES)]
    pub samples: usize,
    /// Scan CSV with columns r, sample, period
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Bifurcation figure
    #[arg(long)]
    pub svg: Option<PathBuf>,
    /// Symbolize the orbit at this r
    #[arg(long)]
    pub symbolize: Option<f64>,
    /// Orbit values above the threshold read as D; defaults to the fixed point 1 − 1/r
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct BootstrapArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub basins: BasinArg,
    /// Prompt vector: one label or [x,y,...] literal
    #[arg(long)]
    pub prompt: String,
    #[arg(long, default_value_t = tipping_core::stats::DEFAULT_RESAMPLES)]
    pub resamples: usize,
    /// Effective attention temperature
    #[arg(long, default_value_t = 1.0)]
    pub t_eff: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct StatsArgs {
    #[command(subcommand)]
    pub test: StatsCommand,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StatsCommand {
    /// Exact binomial test of k successes in n trials
    Binomial {
        #[arg(long)]
        k: u64,
        #[arg(long)]
        n: u64,
        #[arg(long, default_value_t = 0.5)]
        p0: f64,
        #[arg(long)]
        two_sided: bool,
    },
    /// Exact binomial proportion interval
    ClopperPearson {
        #[arg(long)]
        k: u64,
        #[arg(long)]
        n: u64,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
    },
    /// First D sentence in a JSON-lines label file
    Sentences {
        #[arg(long)]
        labels: PathBuf,
    },
}

#[derive(Debug, Args, Serialize)]
pub struct MonitorArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub basins: BasinArg,
    /// JSON lines of {"t", "embedding"}; "-" reads standard input
    #[arg(long, default_value = "-")]
    pub stream: PathBuf,
    /// Status lines; standard output when absent
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Approaching alert when n* is at most this
    #[arg(long, default_value_t = 0)]
    pub threshold: u64,
    #[arg(long, default_value_t = 0.01)]
    pub epsilon: f64,
    /// Effective attention temperature
    #[arg(long, default_value_t = 1.0)]
    pub t_eff: f64,
    /// Tokens kept in the running sum
    #[arg(long, default_value_t = tipping_core::monitor::DEFAULT_WINDOW)]
    pub window: usize,
    /// Use the mean of the window as the context
    #[arg(long)]
    pub pooled: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct ExperimentArgs {
    /// Experiment spec (JSON)
    #[arg(long)]
    pub spec: PathBuf,
    /// Write results, summary and figures here
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    /// Results CSV from an experiment
    #[arg(long)]
    pub results: Option<PathBuf>,
    /// Rollout trace (JSON lines); needs --basins
    #[arg(long, requires = "basins")]
    pub trace: Option<PathBuf>,
    #[arg(long, env = BASINS_ENV)]
    pub basins: Option<PathBuf>,
    /// Scan CSV from bifurcate
    #[arg(long)]
    pub scan: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// Failure classes mapped onto exit codes.
#[derive(Debug)]
pub enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => EXIT_USAGE,
            Failure::Runtime(_) => EXIT_RUNTIME,
        }
    }

    fn is_broken_pipe(&self) -> bool {
        let (Failure::Config(e) | Failure::Runtime(e)) = self;
        e.chain()
            .filter_map(|c| c.downcast_ref::<std::io::Error>())
            .any(|io| io.kind() == std::io::ErrorKind::BrokenPipe)
    }
}

trait Classify<T> {
    fn config(self) -> Result<T, Failure>;
    fn runtime(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn config(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Config(e.into()))
    }
    fn runtime(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

/// Parses `args` (program name first), runs, and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match execute(&cli, &mut out) {
        Ok(code) => code,
        Err(f) => {
            if f.is_broken_pipe() {
                return EXIT_OK;
            }
            let (kind, e) = match &f {
                Failure::Config(e) => ("configuration error", e),
                Failure::Runtime(e) => ("error", e),
            };
            eprintln!("tipping: {kind}: {e:#}");
            f.exit_code()
        }
    }
}

fn print_config(cli: &Cli) {
    let cfg = json!({
        "seed": cli.seed,
        "json": cli.json,
        "command": &cli.command,
    });
    eprintln!("config: {cfg}");
}

/// Runs a parsed command, writing results to `out`.
pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<i32, Failure> {
    print_config(cli);
    let ctx = Ctx {
        json: cli.json,
        seed: cli.seed,
    };
    match &cli.command {
        Command::Predict(a) => cmd_predict(a, &ctx, out),
        Command::Rollout(a) => cmd_rollout(a, &ctx, out),
        Command::Steer(a) => cmd_steer(a, &ctx, out),
        Command::Multilayer(a) => cmd_multilayer(a, &ctx, out),
        Command::Bifurcate(a) => cmd_bifurcate(a, &ctx, out),
        Command::Bootstrap(a) => cmd_bootstrap(a, &ctx, out),
        Command::Stats(a) => cmd_stats(&a.test, &ctx, out),
        Command::Monitor(a) => cmd_monitor(a, out),
        Command::Experiment(a) => cmd_experiment(a, &ctx, out),
        Command::Report(a) => cmd_report(a, &ctx, out),
    }
}

struct Ctx {
    json: bool,
    seed: u64,
}

impl Ctx {
    /// Prints `value` as JSON, or `text` lines otherwise.
    fn emit(&self, out: &mut dyn Write, value: Value, text: &[(&str, String)]) -> Result<i32, Failure> {
        if self.json {
            writeln!(out, "{}", serde_json::to_string_pretty(&value).expect("serializable")).runtime()?;
        } else {
            let width = text.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
            for (k, v) in text {
                writeln!(out, "{k:<width$}  {v}").runtime()?;
            }
        }
        Ok(EXIT_OK)
    }
}

fn load_basins(path: &Path) -> Result<BasinSet, Failure> {
    load_basin_file(path).config()
}

fn check_t_eff(t_eff: f64) -> Result<(), Failure> {
    if t_eff > 0.0 && t_eff.is_finite() {
        Ok(())
    } else {
        Err(Failure::Config(anyhow!("--t-eff must be positive, got {t_eff}")))
    }
}

fn labels_of(conv: &Conversation) -> String {
    conv.entries
        .iter()
        .map(|e| e.label.as_str().to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn preview(symbols: &str) -> String {
    if symbols.chars().count() > TRACE_PREVIEW {
        let mut s: String = symbols.chars().take(TRACE_PREVIEW).collect();
        s.push('…');
        s
    } else {
        symbols.to_string()
    }
}

fn opt_usize(x: Option<usize>) -> String {
    x.map(|v| v.to_string()).unwrap_or_else(|| "none".to_string())
}

fn cmd_predict(a: &PredictArgs, ctx: &Ctx, out: &mut dyn Write) -> Result<i32, Failure> {
    check_t_eff(a.t_eff)?;
    let basins = load_basins(&a.basins.basins)?;
    let conv = parse_conversation(&a.conv, &basins).config()?;
    let cfg = PredictConfig {
        t_eff: a.t_eff,
        epsilon_boundary: a.epsilon,
        mode: if a.analytic {
            PredictionMode::Analytic
        } else {
            PredictionMode::OneStep
        },
    };
    let p = predict(&conv, &basins, &cfg).runtime()?;
    ctx.emit(
        out,
        json!({ "conversation": labels_of(&conv), "prediction": p }),
        &[
            ("n*", p.n_star.to_string()),
            ("raw", sig(p.raw_value)),
            ("numerator", sig(p.numerator)),
            ("denominator", sig(p.denominator)),
            ("delta_hat", sig(p.delta_hat)),
            ("timing_class", p.timing_class.to_string()),
            ("reliable", p.reliable.to_string()),
            ("d_first", p.d_first.to_string()),
        ],
    )
}

fn cmd_rollout(a: &RolloutArgs, ctx: &Ctx, out: &mut dyn Write) -> Result<i32, Failure> {
    let basins = load_basins(&a.basins.basins)?;
    let conv = parse_conversation(&a.prompt, &basins).config()?;
    let cfg = DynamicsConfig {
        t_eff: a.t_eff,
        decode_temperature: a.temperature,
        max_steps: a.steps,
        rng_seed: ctx.seed,
    };
    cfg.validate().config()?;
    let trace = rollout(&conv, &basins, &default_candidates(), &cfg).runtime()?;
    if let Some(path) = &a.trace_out {
        write_trace(&trace, path).runtime()?;
    }
    let prompt: String = conv.entries.iter().map(|e| e.label.as_str()).collect();
    let symbols = trace.symbol_string();
    let d_count = trace.chosen().filter(|l| l.is_d()).count();
    ctx.emit(
        out,
        json!({
            "prompt": labels_of(&conv),
            "symbols": symbols,
            "first_hit": trace.first_hit,
            "steps": trace.steps.len(),
            "d_count": d_count,
        }),
        &[
            ("trace", format!("{prompt}{}", preview(&symbols))),
            ("first_hit", opt_usize(trace.first_hit)),
            ("steps", trace.steps.len().to_string()),
            ("d_count", d_count.to_string()),
        ],
    )
}

fn cmd_steer(a: &SteerArgs, ctx: &Ctx, out: &mut dyn Write) -> Result<i32, Failure> {
    check_t_eff(a.t_eff)?;
    let basins = load_basins(&a.basins.basins)?;
    let conv = parse_conversation(&a.conv, &basins).config()?;
    let injected = parse_conversation(&a.inject, &basins).config()?;
    let pairs: Vec<_> = injected.entries.into_iter().map(|e| (e.label, e.vector)).collect();
    let s = steer(&conv, &pairs, &basins, a.t_eff).runtime()?;
    ctx.emit(
        out,
        json!({ "steering": s }),
        &[
            ("n* before", s.before.n_star.to_string()),
            ("n* after", s.after.n_star.to_string()),
            ("raw before", sig(s.before.raw_value)),
            ("raw after", sig(s.after.raw_value)),
            (
                "delta n*",
                s.delta_n_star
                    .map(|d| format!("{d:+}"))
                    .unwrap_or_else(|| "undefined".into()),
            ),
        ],
    )
}

fn cmd_multilayer(a: &MultilayerArgs, ctx: &Ctx, out: &mut dyn Write) -> Result<i32, Failure> {
    check_t_eff(a.t_eff)?;
    let (basins, mut model) = match (&a.model, &a.basins) {
        (Some(path), _) => load_model_file(path).config()?,
        (None, Some(path)) => {
            let basins = load_basins(path)?;
            let d = basins.dimension;
            let model = match a.init.unwrap_or(ModelInit::EffectiveHead) {
                ModelInit::EffectiveHead => {
                    let mut m = ToyTransformer::effective_head(d, a.t_eff);
                    m.layers
                        .extend(ToyTransformer::zeros(d, a.layers.saturating_sub(1), a.t_eff).layers);
                    m
                }
                ModelInit::Zeros => ToyTransformer::zeros(d, a.layers, a.t_eff),
                ModelInit::Random => {
                    let mut m = ToyTransformer::random(d, a.layers, a.heads, a.hidden, a.scale, ctx.seed);
                    m.t_eff = a.t_eff;
                    m
                }
            };
            (basins, model)
        }
        (None, None) => {
            return Err(Failure::Config(anyhow!(
                "give --model, or --basins (or {BASINS_ENV}) for a generated model"
            )))
        }
    };
    if let Some(g) = a.mlp_gain {
        for layer in &mut model.layers {
            layer.mlp.gain = g;
        }
    }
    model.validate().config()?;
    let conv = parse_conversation(&a.prompt, &basins).config()?;
    let readout = match a.readout {
        ReadoutArg::Update => Readout::Update,
        ReadoutArg::Residual => Readout::Residual,
    };
    let trace = generate_symbols(&conv, &model, &basins, a.steps, readout).runtime()?;
    let reference = rollout(
        &conv,
        &basins,
        &default_candidates(),
        &DynamicsConfig {
            t_eff: model.t_eff,
            max_steps: a.steps.max(1),
            ..Default::default()
        },
    )
    .runtime()?;
    let symbols = trace.symbol_string();
    ctx.emit(
        out,
        json!({
            "layers": model.layers.len(),
            "symbols": symbols,
            "first_hit": trace.first_hit,
            "effective_head_first_hit": reference.first_hit,
        }),
        &[
            ("layers", model.layers.len().to_string()),
            ("trace", preview(&symbols)),
            ("first_hit", opt_usize(trace.first_hit)),
            ("effective_head_first_hit", opt_usize(reference.first_hit)),
        ],
    )
}

fn cmd_bifurcate(a: &BifurcateArgs, ctx: &Ctx, out: &mut dyn Write) -> Result<i32, Failure> {
    let cfg = ScanConfig {
        r_min: a.r_min,
        r_max: a.r_max,
        r_steps: a.r_steps,
        x0: a.x0,
        transient: a.transient,
        samples: a.samples,
    };
    if !(0.0 < a.x0 && a.x0 < 1.0) {
        return Err(Failure::Config(anyhow!("--x0 must lie in (0, 1), got {}", a.x0)));
    }
    if !(0.0 <= a.r_min && a.r_min < a.r_max && a.r_max <= 4.0) {
        return Err(Failure::Config(anyhow!("need 0 ≤ r-min < r-max ≤ 4")));
    }
    let scan = bifurcation_scan(&cfg).runtime()?;
    if let Some(path) = &a.out {
        write_scan_csv(&scan, path).runtime()?;
    }
    if let Some(path) = &a.svg {
        write_svg(&bifurcation_svg(&scan), path).runtime()?;
    }
    let symbols = match a.symbolize {
        Some(r) => {
            let o = orbit(a.x0, r, a.samples, a.transient).config()?;
            let threshold = a.threshold.unwrap_or(if r > 1.0 { 1.0 - 1.0 / r } else { 0.5 });
            Some((o.period, symbolize(&o, threshold).config()?))
        }
        None => None,
    };
    let mut text: Vec<(&str, String)> = Vec::new();
    let labels = ["first doubling", "second doubling"];
    for (label, d) in labels.iter().zip(&scan.doublings) {
        text.push((
            label,
            format!("r = {} (period {} → {})", sig(d.r), d.from_period, d.to_period),
        ));
    }
    if scan.doublings.is_empty() {
        text.push(("doublings", "none in range".into()));
    }
    if let Some((period, pattern)) = &symbols {
        text.push(("period", period.to_string()));
        text.push(("symbols", pattern.display_pattern()));
    }
    ctx.emit(
        out,
        json!({
            "points": scan.points.len(),
            "doublings": scan.doublings,
            "symbolized": symbols.as_ref().map(|(p, s)| json!({"period": p, "block": s.block, "pattern": s.display_pattern()})),
        }),
        &text,
    )
}

fn cmd_bootstrap(a: &BootstrapArgs, ctx: &Ctx, out: &mut dyn Write) -> Result<i32, Failure> {
    check_t_eff(a.t_eff)?;
    let basins = load_basins(&a.basins.basins)?;
    let entries = parse_shorthand(&a.prompt).config()?;
    if entries.len() != 1 {
        return Err(Failure::Config(anyhow!("--prompt takes one label or vector")));
    }
    let conv = build_conversation(&entries, &basins).config()?;
    let prompt = conv.entries[0].vector.clone();
    let cfg = BootstrapConfig {
        n_resamples: a.resamples,
        seed: ctx.seed,
        t_eff: a.t_eff,
    };
    let r = bootstrap(&basins, &prompt, &cfg).config()?;
    let iv = |i: tipping_core::stats::Interval| format!("[{}, {}]", sig(i.lower), sig(i.upper));
    ctx.emit(
        out,
        json!({ "bootstrap": r }),
        &[
            ("resamples", r.n_resamples.to_string()),
            ("delta_hat 95% CI", iv(r.ci_delta_hat)),
            (
                "delta_cos 95% CI",
                r.ci_delta_cos.map(iv).unwrap_or_else(|| "undefined".into()),
            ),
            ("n* 95% CI", iv(r.ci_n_star)),
            ("delta_hat spans 0", r.spans_zero.delta_hat.to_string()),
        ],
    )
}

/// `numerator / 2^exponent` in lowest terms.
fn dyadic_fraction(numerator: u128, exponent: u32) -> String {
    let (mut num, mut exp) = (numerator, exponent);
    while exp > 0 && num % 2 == 0 && num > 0 {
        num /= 2;
        exp -= 1;
    }
    if num == 0 {
        "0".into()
    } else {
        format!("{num}/2^{exp}")
    }
}

fn cmd_stats(test: &StatsCommand, ctx: &Ctx, out: &mut dyn Write) -> Result<i32, Failure> {
    match test {
        &StatsCommand::Binomial { k, n, p0, two_sided } => {
            let sided = if two_sided { Sided::Two } else { Sided::One };
            let p = binomial_test(k, n, p0, sided).config()?;
            let exact = (p0 == 0.5 && !two_sided && n <= tipping_core::stats::EXACT_BINOMIAL_MAX_N)
                .then(|| upper_tail_half(k, n).ok())
                .flatten()
                .map(|d| dyadic_fraction(d.numerator, d.exponent));
            let mut text = vec![("p", sig(p))];
            if let Some(e) = &exact {
                text.push(("exact", e.clone()));
            }
            ctx.emit(
                out,
                json!({"k": k, "n": n, "p0": p0, "sided": sided, "p": p, "exact": exact}),
                &text,
            )
        }
        &StatsCommand::ClopperPearson { k, n, alpha } => {
            let ci = clopper_pearson(k, n, alpha).config()?;
            ctx.emit(
                out,
                json!({"k": k, "n": n, "alpha": alpha, "interval": ci}),
                &[
                    ("proportion", sig(k as f64 / n as f64)),
                    ("interval", format!("[{}, {}]", sig(ci.lower), sig(ci.upper))),
                ],
            )
        }
        StatsCommand::Sentences { labels } => {
            let l = read_sentence_labels(labels).config()?;
            let hit = sentence_first_hit(&l);
            ctx.emit(
                out,
                json!({"sentences": l.len(), "first_d": hit}),
                &[("sentences", l.len().to_string()), ("first_d", opt_usize(hit))],
            )
        }
    }
}

fn cmd_monitor(a: &MonitorArgs, out: &mut dyn Write) -> Result<i32, Failure> {
    let basins = load_basins(&a.basins.basins)?;
    let cfg = MonitorConfig {
        n_star_threshold: a.threshold,
        epsilon_boundary: a.epsilon,
        t_eff: a.t_eff,
        window: a.window,
        context: if a.pooled {
            ContextMode::Pooled
        } else {
            ContextMode::PerToken
        },
    };
    let mut m = MonitorState::new(&basins, cfg).config()?;
    let reader: Box<dyn BufRead> = if a.stream.as_os_str() == "-" {
        Box::new(BufReader::new(std::io::stdin()))
    } else {
        let f = std::fs::File::open(&a.stream)
            .with_context(|| format!("cannot read {}", a.stream.display()))
            .config()?;
        Box::new(BufReader::new(f))
    };
    let tokens: Vec<StreamToken> = read_json_lines(reader, &a.stream).config()?;
    let mut sink: Box<dyn Write + '_> = match &a.out {
        Some(p) => Box::new(std::io::BufWriter::new(
            std::fs::File::create(p)
                .with_context(|| format!("cannot write {}", p.display()))
                .runtime()?,
        )),
        None => Box::new(out),
    };
    let mut first_tip = None;
    for tok in &tokens {
        let e = Embedding::new(tok.embedding.clone())
            .with_context(|| format!("token t={}", tok.t))
            .config()?;
        let s = m
            .push_token(&e)
            .with_context(|| format!("token t={}", tok.t))
            .config()?;
        if s.level == AlertLevel::Tipped && first_tip.is_none() {
            first_tip = Some(tok.t);
        }
        let line = StreamStatus {
            t: tok.t,
            level: s.level,
            n_star: s.n_star,
            delta_hat: s.delta_hat,
        };
        writeln!(sink, "{}", serde_json::to_string(&line).expect("serializable")).runtime()?;
    }
    sink.flush().runtime()?;
    match first_tip {
        Some(t) => {
            eprintln!("tipped at t={t} after {} tokens", tokens.len());
            Ok(EXIT_TIPPED)
        }
        None => {
            eprintln!("no tip in {} tokens", tokens.len());
            Ok(EXIT_OK)
        }
    }
}

fn summary_lines(s: &Summary) -> Vec<(&'static str, String)> {
    let mut text = vec![
        ("records", s.records.to_string()),
        ("controls", s.controls.to_string()),
        ("agreement (±1)", format!("{}/{}", s.agreements, s.evaluated)),
        ("exact matches", format!("{}/{}", s.exact_matches, s.evaluated)),
    ];
    if let Some(p) = s.binomial_p {
        text.push(("binomial p (one-sided)", sig(p)));
    }
    if let Some(b) = &s.baseline {
        text.push(("baseline n*=0 (±1)", format!("{}/{}", b.baseline_correct, b.total)));
    }
    if s.sentence_evaluated > 0 {
        text.push((
            "sentence agreement",
            format!("{}/{}", s.sentence_agreements, s.sentence_evaluated),
        ));
    }
    text
}

fn cmd_experiment(a: &ExperimentArgs, ctx: &Ctx, out: &mut dyn Write) -> Result<i32, Failure> {
    let spec = ExperimentSpec::load(&a.spec).config()?;
    let base = a.spec.parent().unwrap_or(Path::new("."));
    let exp = ResolvedExperiment::resolve(&spec, base).config()?;
    let run = run_experiment(&exp);
    let summary = compare(&run.records);

    let trajectories: Vec<Trajectory<'_>> = run
        .records
        .iter()
        .zip(&run.traces)
        .filter_map(|(r, t)| {
            let trace = t.as_ref()?;
            let basins = &exp.geometries[&r.geometry];
            (basins.dimension == 2).then_some(Trajectory {
                name: &r.prompt,
                basins,
                trace,
            })
        })
        .collect();
    let mut written = Vec::new();
    if let Some(dir) = &a.out_dir {
        let files = emit_report(&run.records, &summary, &trajectories, dir).runtime()?;
        for n in &files.notices {
            eprintln!("{n}");
        }
        written.extend(files.written);
    }
    if let Some(p) = &exp.outputs.csv {
        write_records_csv(&run.records, p).runtime()?;
        written.push(p.clone());
    }
    if let Some(p) = &exp.outputs.summary {
        write_summary_csv(&summary, p).runtime()?;
        written.push(p.clone());
    }
    if let Some(dir) = &exp.outputs.svg_dir {
        let files = emit_report(&run.records, &summary, &trajectories, dir).runtime()?;
        written.extend(files.written);
    }
    if let Some(dir) = &exp.outputs.traces_dir {
        for (r, t) in run.records.iter().zip(&run.traces) {
            if let Some(t) = t {
                let name = format!(
                    "{}-T{}-s{}.jsonl",
                    r.prompt.replace(['/', '\\'], "_"),
                    r.decode_temperature,
                    r.seed
                );
                let p = dir.join(name);
                std::fs::create_dir_all(dir).runtime()?;
                write_trace(t, &p).runtime()?;
                written.push(p);
            }
        }
    }
    let code = if !run.failures.is_empty() && run.records.is_empty() {
        EXIT_RUNTIME
    } else {
        EXIT_OK
    };
    let mut text = summary_lines(&summary);
    text.push(("failed cells", run.failures.len().to_string()));
    for p in &written {
        text.push(("wrote", p.display().to_string()));
    }
    ctx.emit(
        out,
        json!({ "summary": summary, "failures": run.failures, "written": written }),
        &text,
    )?;
    if code != EXIT_OK {
        eprintln!("every cell failed");
    }
    Ok(code)
}

fn trace_from_lines(path: &Path, basins: &BasinSet) -> Result<RolloutTrace, Failure> {
    let lines = read_trace(path).config()?;
    let steps = lines
        .into_iter()
        .map(|l| {
            Ok(RolloutStep {
                context: Embedding::new(l.context).with_context(|| format!("step {}", l.step))?,
                scores: l.scores,
                chosen: l.chosen,
            })
        })
        .collect::<anyhow::Result<Vec<_>>>()
        .config()?;
    let hit = first_hit(steps.iter().map(|s| &s.context), basins).config()?;
    Ok(RolloutTrace { steps, first_hit: hit })
}

/// Rebuilds scan points from `(r, sample, period)` rows.
pub fn read_scan_csv(path: &Path) -> anyhow::Result<BifurcationScan> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut points: Vec<ScanPoint> = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.with_context(|| format!("{}:{}", path.display(), i + 2))?;
        let field = |j: usize| {
            row.get(j)
                .ok_or_else(|| anyhow!("{}:{}: missing column", path.display(), i + 2))
        };
        let r: f64 = field(0)?
            .parse()
            .with_context(|| format!("{}:{}: r", path.display(), i + 2))?;
        let x: f64 = field(1)?
            .parse()
            .with_context(|| format!("{}:{}: sample", path.display(), i + 2))?;
        let period = match field(2)? {
            "aperiodic" => Period::Aperiodic,
            p => Period::Cycle(
                p.parse()
                    .with_context(|| format!("{}:{}: period", path.display(), i + 2))?,
            ),
        };
        match points.last_mut() {
            Some(last) if last.r == r => last.attractor.push(x),
            _ => points.push(ScanPoint {
                r,
                attractor: vec![x],
                period,
            }),
        }
    }
    Ok(BifurcationScan {
        points,
        doublings: Vec::new(),
    })
}

fn cmd_report(a: &ReportArgs, ctx: &Ctx, out: &mut dyn Write) -> Result<i32, Failure> {
    if a.results.is_none() && a.trace.is_none() && a.scan.is_none() {
        return Err(Failure::Config(anyhow!(
            "nothing to report: give --results, --trace or --scan"
        )));
    }
    let mut written: Vec<PathBuf> = Vec::new();
    let mut summary_value = Value::Null;
    let mut text: Vec<(&str, String)> = Vec::new();
    if let Some(path) = &a.results {
        let records = read_records_csv(path).config()?;
        let summary = compare(&records);
        let p = a.out_dir.join(SUMMARY_CSV);
        write_summary_csv(&summary, &p).runtime()?;
        written.push(p);
        let p = a.out_dir.join(HISTOGRAM_SVG);
        write_svg(&histogram_svg(&summary), &p).runtime()?;
        written.push(p);
        text.extend(summary_lines(&summary));
        summary_value = serde_json::to_value(&summary).expect("serializable");
    }
    if let Some(path) = &a.trace {
        let basins_path = a
            .basins
            .as_ref()
            .ok_or_else(|| Failure::Config(anyhow!("--trace needs --basins")))?;
        let basins = load_basins(basins_path)?;
        let trace = trace_from_lines(path, &basins)?;
        let title = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        match trajectory_svg(&title, &basins, &trace) {
            Some(svg) => {
                let p = a.out_dir.join(format!("trajectory-{title}.svg"));
                write_svg(&svg, &p).runtime()?;
                written.push(p);
            }
            None => {
                let notice = format!(
                    "trajectory figure skipped, geometry has dimension {} (needs 2)",
                    basins.dimension
                );
                eprintln!("{notice}");
                text.push(("notice", notice));
            }
        }
    }
    if let Some(path) = &a.scan {
        let scan = read_scan_csv(path).config()?;
        let p = a.out_dir.join("bifurcation.svg");
        write_svg(&bifurcation_svg(&scan), &p).runtime()?;
        written.push(p);
    }
    for p in &written {
        text.push(("wrote", p.display().to_string()));
    }
    ctx.emit(out, json!({ "summary": summary_value, "written": written }), &text)
}
