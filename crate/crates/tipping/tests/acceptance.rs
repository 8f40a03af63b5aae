//! Acceptance criteria. Each test prints one `PASS`/`FAIL` line.
//! Run with `cargo test -p tipping --test acceptance -- --nocapture`.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use tipping::experiments::{compare, run_experiment, ResolvedExperiment, ResultRecord, RunParams, AGREEMENT_THRESHOLD};
use tipping_core::dynamics::{default_candidates, rollout};
use tipping_core::logistic::{bifurcation_scan, orbit, symbolize, ScanConfig};
use tipping_core::multilayer::{generate_symbols, LayerParams, Matrix, Mlp, Nonlinearity, Readout, ToyTransformer};
use tipping_core::predictor::{numerator, predict, tipping_point, PredictConfig};
use tipping_core::rng::{self, seeded};
use tipping_core::stats::{binomial_test, bootstrap, upper_tail_half, within_one, BootstrapConfig, Dyadic, Sided};
use tipping_core::{
    Basin, BasinSet, Conversation, DynamicsConfig, Embedding, Label, MonitorConfig, MonitorState, NStar, Phrase,
    TimingClass,
};

/// Timed criteria must not share the core with sibling tests.
static SERIAL: Mutex<()> = Mutex::new(());

fn verdict(criterion: &str, pass: bool, detail: String) {
    println!("{} {criterion}: {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "{criterion}: {detail}");
}

fn reference() -> BasinSet {
    BasinSet::from_centroids([
        ("A", Embedding::from_array([0.4, -0.3])),
        ("B", Embedding::from_array([0.8, 0.0])),
        ("D", Embedding::from_array([0.9, 0.5])),
        ("C+", Embedding::from_array([0.2, 0.2])),
        ("C-", Embedding::from_array([-0.2, -0.2])),
    ])
    .unwrap()
}

fn conv(labels: &[&str], basins: &BasinSet) -> Conversation {
    Conversation::from_labels(labels, basins).unwrap()
}

/// Mean wall time of `f` over `runs` calls.
fn mean_time<T>(runs: u32, mut f: impl FnMut() -> T) -> Duration {
    let start = Instant::now();
    for _ in 0..runs {
        std::hint::black_box(f());
    }
    start.elapsed() / runs
}

fn greedy(steps: usize) -> DynamicsConfig {
    DynamicsConfig {
        max_steps: steps,
        ..Default::default()
    }
}

#[test]
fn c1_positive_detour_tips_after_one() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let basins = reference();
    let c = conv(&["A", "C+", "C+", "A"], &basins);
    let p = predict(&c, &basins, &PredictConfig::default()).unwrap();
    let t = mean_time(1000, || predict(&c, &basins, &PredictConfig::default()).unwrap());
    verdict(
        "C1 A,C+,C+,A gives n* = 1 in under 1 ms",
        p.n_star == NStar::Count(1) && t < Duration::from_millis(1),
        format!("n* = {}, raw = {:.6}, {t:?} per call", p.n_star, p.raw_value),
    );
}

#[test]
fn c2_negative_detour_delays_tipping() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let basins = reference();
    let cfg = PredictConfig::default();
    let plain = predict(&conv(&["A"], &basins), &basins, &cfg).unwrap();
    let plus = predict(&conv(&["A", "C+", "C+", "A"], &basins), &basins, &cfg).unwrap();
    let minus = predict(&conv(&["A", "C-", "C-", "A"], &basins), &basins, &cfg).unwrap();
    let n = |p: &tipping_core::TippingPrediction| p.n_star.count().unwrap();
    verdict(
        "C2 C- strictly raises n*; A,C-,C-,A gives 4",
        n(&minus) > n(&plus) && n(&minus) > n(&plain) && minus.n_star == NStar::Count(4),
        format!(
            "A: {}, A,C+,C+,A: {}, A,C-,C-,A: {} (raw {:.4})",
            plain.n_star, plus.n_star, minus.n_star, minus.raw_value
        ),
    );
}

#[test]
fn c3_closed_form_matches_rollouts() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let basins = reference();
    let mut fixed = Vec::new();
    for labels in [&["A"][..], &["A", "C+", "C+", "A"][..]] {
        let c = conv(labels, &basins);
        let pred = predict(&c, &basins, &PredictConfig::default()).unwrap().n_star;
        let obs = rollout(&c, &basins, &default_candidates(), &greedy(300))
            .unwrap()
            .first_hit;
        fixed.push((labels.join(","), pred, obs));
    }
    let fixed_ok = fixed.iter().all(|(_, p, o)| *p == NStar::Count(1) && *o == Some(1));

    let start = Instant::now();
    let exp = ResolvedExperiment::sweep(200, 2024, RunParams::default());
    let run = run_experiment(&exp);
    let elapsed = start.elapsed();
    let summary = compare(&run.records);
    let rate = summary.agreement_rate.unwrap_or(0.0);
    for r in run.records.iter().filter(|r| !r.agree_tok) {
        let g = &exp.geometries[&r.geometry];
        println!(
            "  disagreement {}: pred {} obs {:?} raw {:.4} geometry {}",
            r.geometry,
            r.n_star_pred,
            r.n_star_obs_tok,
            r.raw_value,
            serde_json::to_string(g).unwrap()
        );
    }
    let dims: std::collections::BTreeSet<usize> = exp.geometries.values().map(|g| g.dimension).collect();
    verdict(
        "C3 closed form agrees with rollouts (±1) on ≥ 80% of 200 geometries in under 10 s",
        fixed_ok
            && run.failures.is_empty()
            && summary.evaluated == 200
            && rate >= AGREEMENT_THRESHOLD
            && elapsed < Duration::from_secs(10),
        format!(
            "reference prompts {fixed:?}; sweep {}/{} = {:.3} (exact {}), dims {:?}..{:?}, {elapsed:?}",
            summary.agreements,
            summary.evaluated,
            rate,
            summary.exact_matches,
            dims.first(),
            dims.last()
        ),
    );
}

fn random_vec(r: &mut rng::Rng, d: usize) -> Embedding {
    Embedding::new((0..d).map(|_| rng::normal(r)).collect()).unwrap()
}

/// Seeded geometries `(A, B, D)` accepted by `keep`.
fn geometries(count: usize, seed: u64, keep: impl Fn(&Embedding, &Embedding, &Embedding) -> bool) -> Vec<BasinSet> {
    let mut r = seeded(seed);
    let mut out = Vec::new();
    while out.len() < count {
        let d = 2 + rng::index(&mut r, 15);
        let (a, b, dv) = (random_vec(&mut r, d), random_vec(&mut r, d), random_vec(&mut r, d));
        if keep(&a, &b, &dv) {
            out.push(BasinSet::from_centroids([("A", a), ("B", b), ("D", dv)]).unwrap());
        }
    }
    out
}

fn dot(u: &Embedding, v: &Embedding) -> f64 {
    u.dot(v).unwrap()
}

#[test]
fn c4_immediate_and_stable_regimes() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let immediate = geometries(100, 41, |a, b, d| dot(a, d) > dot(a, b) && dot(d, d) > dot(d, b));
    let mut immediate_ok = 0;
    for g in &immediate {
        let c = conv(&["A"], g);
        let t = rollout(&c, g, &default_candidates(), &greedy(300)).unwrap();
        let pred = predict(&c, g, &PredictConfig::default()).unwrap();
        if t.first_hit == Some(0) && t.symbol_string() == "D".repeat(300) && pred.n_star == NStar::Count(0) {
            immediate_ok += 1;
        }
    }
    let stable = geometries(100, 42, |a, b, d| dot(b, d) < dot(b, b) && dot(a, b) > dot(a, d));
    let mut stable_ok = 0;
    for g in &stable {
        let c = conv(&["A"], g);
        let t = rollout(&c, g, &default_candidates(), &greedy(300)).unwrap();
        let pred = predict(&c, g, &PredictConfig::default()).unwrap();
        if t.first_hit.is_none() && !t.symbol_string().contains('D') && pred.n_star == NStar::Stable {
            stable_ok += 1;
        }
    }
    verdict(
        "C4 immediate geometries give ADDD… (first hit 0); stable geometries never emit D",
        immediate_ok == 100 && stable_ok == 100,
        format!("immediate {immediate_ok}/100, stable {stable_ok}/100, 300 steps each"),
    );
}

fn mlp_model(gain: f64, seed: u64) -> ToyTransformer {
    let mut r = seeded(seed);
    let mut layer = LayerParams::effective_head(2);
    layer.mlp = Mlp {
        hidden_width: 4,
        in_map: Matrix::random(4, 2, 0.5, &mut r),
        out_map: Matrix::random(2, 4, 0.3, &mut r),
        gain,
        nonlinearity: Nonlinearity::Tanh,
    };
    ToyTransformer::new(2, 1.0, vec![layer]).unwrap()
}

#[test]
fn c5_multilayer_reduces_and_tips() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let basins = reference();
    let mut layers = vec![LayerParams::effective_head(2)];
    layers.extend((0..2).map(|_| LayerParams::zeros(2)));
    let identity_zero = ToyTransformer::new(2, 1.0, layers).unwrap();
    let mut exact = 0;
    let prompts = [&["A"][..], &["A", "C+", "C+", "A"][..], &["A", "C-", "C-", "A"][..]];
    for labels in prompts {
        let c = conv(labels, &basins);
        let ours = generate_symbols(&c, &identity_zero, &basins, 300, Readout::Update).unwrap();
        let head = rollout(&c, &basins, &default_candidates(), &greedy(300)).unwrap();
        let same_contexts = ours.steps.iter().zip(&head.steps).all(|(x, y)| {
            x.context
                .as_slice()
                .iter()
                .zip(y.context.as_slice())
                .all(|(a, b)| (a - b).abs() <= 1e-12)
        });
        if ours.symbol_string() == head.symbol_string() && ours.first_hit == head.first_hit && same_contexts {
            exact += 1;
        }
    }

    let c = conv(&["A"], &basins);
    let runs = 100u64;
    let tipped = (0..runs)
        .filter(|&seed| {
            let gain = 0.5 + 2.5 * seed as f64 / runs as f64;
            generate_symbols(&c, &mlp_model(gain, seed), &basins, 300, Readout::Update)
                .unwrap()
                .first_hit
                .is_some()
        })
        .count();
    verdict(
        "C5 identity/zero model reproduces the effective head; MLP gain sweep tips",
        exact == prompts.len() && tipped > 0,
        format!(
            "{exact}/{} prompts identical over 300 steps; tipped {tipped}/{runs}",
            prompts.len()
        ),
    );
}

#[test]
fn c6_period_doubling() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let scan = bifurcation_scan(&ScanConfig::default()).unwrap();
    let o = orbit(0.5, 3.2, 64, 1000).unwrap();
    let pattern = symbolize(&o, 1.0 - 1.0 / 3.2).unwrap();
    let elapsed = start.elapsed();
    let r: Vec<f64> = scan.doublings.iter().map(|d| d.r).collect();
    let ok = r.len() == 2
        && (r[0] - 3.0).abs() <= 0.01
        && (r[1] - 3.449).abs() <= 0.01
        && pattern.block.as_deref() == Some("BD")
        && elapsed < Duration::from_secs(5);
    verdict(
        "C6 doublings near 3.00 and 3.449; the 2-cycle reads BD; under 5 s",
        ok,
        format!("doublings {r:?}, pattern {}, {elapsed:?}", pattern.display_pattern()),
    );
}

fn record(pred: u64, obs: u64) -> ResultRecord {
    ResultRecord {
        prompt: String::new(),
        geometry: String::new(),
        control: false,
        decode_temperature: 0.0,
        seed: 0,
        n_star_pred: NStar::Count(pred),
        raw_value: pred as f64,
        n_star_obs_tok: Some(obs),
        n_star_obs_sent: None,
        timing_class: TimingClass::Delayed,
        delta_hat: -0.1,
        d_first: false,
        agree_tok: within_one(NStar::Count(pred), Some(obs)),
        exact_tok: pred == obs,
        agree_sent: None,
    }
}

#[test]
fn c7_exact_binomial_statistics() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let t = mean_time(1000, || {
        (
            binomial_test(6, 6, 0.5, Sided::Two).unwrap(),
            binomial_test(16, 18, 0.5, Sided::One).unwrap(),
            binomial_test(15, 16, 0.5, Sided::One).unwrap(),
        )
    });
    let p6 = binomial_test(6, 6, 0.5, Sided::Two).unwrap();
    let p16 = binomial_test(16, 18, 0.5, Sided::One).unwrap();
    let p15 = binomial_test(15, 16, 0.5, Sided::One).unwrap();
    // 1 + 18 + 153 = 172 outcomes of 2^18; 1 + 16 = 17 of 2^16.
    let exact = upper_tail_half(16, 18).unwrap()
        == Dyadic {
            numerator: 172,
            exponent: 18,
        }
        && upper_tail_half(15, 16).unwrap()
            == Dyadic {
                numerator: 17,
                exponent: 16,
            };

    // Thirteen prompts tip within one step of zero and five later; the
    // model misses one of each group.
    let mut records: Vec<ResultRecord> = Vec::new();
    records.extend((0..7).map(|_| record(0, 0)));
    records.extend((0..5).map(|_| record(1, 1)));
    records.push(record(6, 0));
    records.extend((0..4).map(|_| record(4, 4)));
    records.push(record(0, 3));
    let s = compare(&records);
    let b = s.baseline.unwrap();

    let ok = p6 == 0.03125
        && (0.00065..=0.00066).contains(&p16)
        && (0.00025..=0.00027).contains(&p15)
        && exact
        && (b.model_correct, b.baseline_correct, b.total) == (16, 13, 18)
        && t < Duration::from_millis(1);
    verdict(
        "C7 exact binomial values and the 16/18 vs 13/18 baseline",
        ok,
        format!(
            "p(6/6, two-sided) = {p6}, p(16/18) = {p16:.6}, p(15/16) = {p15:.6}, model {}/{} vs baseline {}/{}, {t:?} per triple",
            b.model_correct, b.total, b.baseline_correct, b.total
        ),
    );
}

#[test]
fn c8_streaming_monitor() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let dim = 16;
    let mut r = seeded(8);
    let tokens: Vec<Embedding> = (0..10_000).map(|_| random_vec(&mut r, dim)).collect();
    let (b, d) = (random_vec(&mut r, dim), random_vec(&mut r, dim));
    let basins = BasinSet::from_centroids([("B", b.clone()), ("D", d.clone())]).unwrap();
    let cfg = MonitorConfig {
        window: usize::MAX,
        ..Default::default()
    };
    let mut m = MonitorState::new(&basins, cfg).unwrap();
    let mut two_dots = true;
    for t in &tokens {
        let before = m.dot_product_count();
        m.push_token(t).unwrap();
        two_dots &= m.dot_product_count() - before == 2;
    }
    let batch = numerator(&tokens, &b, &d, 1.0).unwrap();
    let rel = (m.running_numerator() - batch).abs() / batch.abs();

    let refg = reference();
    let mut m = MonitorState::new(&refg, MonitorConfig::default()).unwrap();
    let mut ns = vec![m.push_token(refg.lookup("A").unwrap()).unwrap().n_star.unwrap()];
    for _ in 0..50 {
        ns.push(m.push_token(refg.lookup("D").unwrap()).unwrap().n_star.unwrap());
    }
    let monotone = ns.windows(2).all(|w| w[1] <= w[0]);
    verdict(
        "C8 incremental numerator matches batch within 1e-9 over 10^4 tokens, 2 dots per push, n* non-increasing on D",
        rel <= 1e-9 && two_dots && monotone,
        format!(
            "relative error {rel:.3e}, two dots per push {two_dots}, n* {} → {}",
            ns[0],
            ns[ns.len() - 1]
        ),
    );
}

fn phrase_basins(identical: bool) -> BasinSet {
    let mut r = seeded(9);
    let mut set = BasinSet::new(3);
    for label in ["A", "B", "D"] {
        let base = random_vec(&mut r, 3);
        let phrases = (0..5)
            .map(|i| Phrase {
                text: format!("{label}{i}"),
                embedding: if identical {
                    base.clone()
                } else {
                    base.add(&random_vec(&mut r, 3).scaled(0.3)).unwrap()
                },
            })
            .collect();
        set.insert(Label::new(label).unwrap(), Basin::from_phrases(phrases).unwrap())
            .unwrap();
    }
    set
}

#[test]
fn c9_bootstrap_reproducibility() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let cfg = BootstrapConfig {
        n_resamples: 200,
        seed: 31,
        t_eff: 1.0,
    };
    let varied = phrase_basins(false);
    let prompt = varied.lookup("A").unwrap().clone();
    let x = bootstrap(&varied, &prompt, &cfg).unwrap();
    let y = bootstrap(&varied, &prompt, &cfg).unwrap();
    let bits = |i: tipping_core::stats::Interval| (i.lower.to_bits(), i.upper.to_bits());
    let identical_runs = bits(x.ci_delta_hat) == bits(y.ci_delta_hat)
        && bits(x.ci_n_star) == bits(y.ci_n_star)
        && x.ci_delta_cos.map(bits) == y.ci_delta_cos.map(bits);

    let flat = phrase_basins(true);
    let z = bootstrap(&flat, flat.lookup("A").unwrap(), &cfg).unwrap();
    let zero_width = z.ci_delta_hat.width() == 0.0 && z.ci_delta_cos.is_none_or(|c| c.width() == 0.0);
    verdict(
        "C9 bootstrap is bit-identical under a fixed seed; identical phrases give zero width",
        identical_runs && zero_width && x.ci_delta_hat.width() > 0.0,
        format!(
            "delta_hat CI [{:.6}, {:.6}] twice; identical-phrase width {}",
            x.ci_delta_hat.lower,
            x.ci_delta_hat.upper,
            z.ci_delta_hat.width()
        ),
    );
}

#[test]
fn closed_form_reference_values() {
    // Not a numbered criterion: locks the documented closed-form values.
    let basins = reference();
    let p = tipping_point(&conv(&["A", "C-", "C-", "A"], &basins), &basins, 1.0).unwrap();
    assert!((p.raw_value - 3.345).abs() < 1e-3);
    assert!((p.denominator - 0.08 * 0.64f64.exp()).abs() < 1e-12);
}
