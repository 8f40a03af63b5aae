use proptest::prelude::*;
use tipping_core::dynamics::{context_vector, default_candidates, next_symbol, rollout};
use tipping_core::geometry::{alignment, centroid, dot};
use tipping_core::logistic::{orbit, symbolize, Period};
use tipping_core::predictor::{predict, tipping_point, PredictConfig, PredictionMode};
use tipping_core::stats::{lower_tail_half, upper_tail_half};
use tipping_core::{Basin, BasinSet, Conversation, DynamicsConfig, Embedding, Label, NStar, Phrase};

fn vector(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, d)
}

/// `(A, B, D)` triples sharing a dimension in 2..=6.
fn triple() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
    (2usize..=6).prop_flat_map(|d| (vector(d), vector(d), vector(d)))
}

fn basins(a: &[f64], b: &[f64], d: &[f64]) -> BasinSet {
    BasinSet::from_centroids([
        ("A", Embedding::new(a.to_vec()).unwrap()),
        ("B", Embedding::new(b.to_vec()).unwrap()),
        ("D", Embedding::new(d.to_vec()).unwrap()),
    ])
    .unwrap()
}

fn d_dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(x, y)| x * y).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn centroid_of_copies_is_identity(v in vector(5), k in 1usize..12) {
        let e = Embedding::new(v).unwrap();
        let copies = vec![e.clone(); k];
        let c = centroid(&copies).unwrap();
        for (x, y) in c.as_slice().iter().zip(e.as_slice()) {
            prop_assert!((x - y).abs() <= 1e-15 * y.abs().max(1.0));
        }
    }

    #[test]
    fn delta_hat_sign_follows_delta_raw((a, b, d) in triple()) {
        let set = basins(&a, &b, &d);
        let r = alignment(set.lookup("A").unwrap(), &set).unwrap();
        prop_assume!(r.max_pairwise_dot > 0.0);
        prop_assert_eq!(r.delta_hat.signum(), r.delta_raw.signum());
        prop_assert!(r.delta_hat.abs() <= 2.0);
        if let Some(c) = r.delta_cos {
            prop_assert!(c.abs() <= 2.0);
        }
    }

    #[test]
    fn alignment_ignores_phrase_order(
        phrases in prop::collection::vec(vector(3), 2..7),
        d in vector(3),
        a in vector(3),
        shift in 0usize..7,
    ) {
        let mk = |ps: &[Vec<f64>]| {
            let ps: Vec<Phrase> = ps
                .iter()
                .enumerate()
                .map(|(i, p)| Phrase { text: format!("p{i}"), embedding: Embedding::new(p.clone()).unwrap() })
                .collect();
            let mut set = BasinSet::new(3);
            set.insert(Label::b(), Basin::from_phrases(ps).unwrap()).unwrap();
            set.insert(Label::d(), Basin::from_centroid(Embedding::new(d.clone()).unwrap())).unwrap();
            set
        };
        let mut rotated = phrases.clone();
        rotated.rotate_left(shift % phrases.len());
        rotated.reverse();
        let a = Embedding::new(a).unwrap();
        let x = alignment(&a, &mk(&phrases)).unwrap();
        let y = alignment(&a, &mk(&rotated)).unwrap();
        prop_assert!((x.delta_raw - y.delta_raw).abs() <= 1e-12);
        prop_assert!((x.delta_hat - y.delta_hat).abs() <= 1e-12);
    }

    #[test]
    fn immediate_absorbing_geometry_is_all_d((a, b, d) in triple()) {
        prop_assume!(d_dot(&a, &d) > d_dot(&a, &b) && d_dot(&d, &d) > d_dot(&d, &b));
        let set = basins(&a, &b, &d);
        let conv = Conversation::from_labels(&["A"], &set).unwrap();
        let cfg = DynamicsConfig { max_steps: 40, ..Default::default() };
        let trace = rollout(&conv, &set, &default_candidates(), &cfg).unwrap();
        prop_assert_eq!(trace.first_hit, Some(0));
        prop_assert!(trace.chosen().all(|l| l.is_d()));
    }

    #[test]
    fn stable_b_geometry_never_emits_d((a, b, d) in triple()) {
        prop_assume!(d_dot(&b, &d) < d_dot(&b, &b) && d_dot(&a, &b) > d_dot(&a, &d));
        let set = basins(&a, &b, &d);
        let conv = Conversation::from_labels(&["A"], &set).unwrap();
        let trace = rollout(&conv, &set, &default_candidates(), &DynamicsConfig::default()).unwrap();
        prop_assert_eq!(trace.first_hit, None);
        prop_assert!(trace.chosen().all(|l| !l.is_d()));
    }

    #[test]
    fn first_hit_matches_stored_contexts((a, b, d) in triple()) {
        let set = basins(&a, &b, &d);
        let conv = Conversation::from_labels(&["A"], &set).unwrap();
        let cfg = DynamicsConfig { max_steps: 60, ..Default::default() };
        let trace = rollout(&conv, &set, &default_candidates(), &cfg).unwrap();
        let again = trace
            .steps
            .iter()
            .position(|s| d_dot(s.context.as_slice(), &d) >= d_dot(s.context.as_slice(), &b));
        prop_assert_eq!(trace.first_hit, again);
        let twice = rollout(&conv, &set, &default_candidates(), &cfg).unwrap();
        prop_assert_eq!(trace, twice);
    }

    #[test]
    fn scaling_preserves_first_choice((a, b, d) in triple(), lambda in 0.1f64..10.0) {
        let set = basins(&a, &b, &d);
        let scale = |v: &[f64]| v.iter().map(|x| x * lambda).collect::<Vec<_>>();
        let scaled = basins(&scale(&a), &scale(&b), &scale(&d));
        let c1 = context_vector(&Conversation::from_labels(&["A"], &set).unwrap(), 1.0).unwrap();
        let c2 = context_vector(&Conversation::from_labels(&["A"], &scaled).unwrap(), lambda * lambda).unwrap();
        // Skip near-ties, where rounding of the scaled scores may flip the argmax.
        let margin = (dot(&c1, set.lookup("B").unwrap()).unwrap() - dot(&c1, set.lookup("D").unwrap()).unwrap()).abs();
        prop_assume!(margin > 1e-9);
        let mut rng = tipping_core::rng::seeded(0);
        let s1 = next_symbol(&c1, &set, &default_candidates(), 0.0, &mut rng).unwrap();
        let s2 = next_symbol(&c2, &scaled, &default_candidates(), 0.0, &mut rng).unwrap();
        prop_assert_eq!(s1, s2);
    }

    #[test]
    fn prediction_ignores_entry_order(
        (a, b, d) in triple(),
        extra in prop::collection::vec(0usize..3, 1..6),
        shift in 0usize..6,
    ) {
        let set = basins(&a, &b, &d);
        let names = ["A", "B", "D"];
        let mut labels: Vec<&str> = vec!["A"];
        labels.extend(extra.iter().map(|&i| names[i]));
        let mut permuted = labels.clone();
        permuted.rotate_left(shift % labels.len());
        let p = tipping_point(&Conversation::from_labels(&labels, &set).unwrap(), &set, 1.0);
        let q = tipping_point(&Conversation::from_labels(&permuted, &set).unwrap(), &set, 1.0);
        match (p, q) {
            (Ok(p), Ok(q)) => {
                prop_assert!((p.numerator - q.numerator).abs() <= 1e-12 * p.numerator.abs().max(1.0));
                let near_integer = (p.raw_value - p.raw_value.round()).abs() < 1e-9;
                if !near_integer {
                    prop_assert_eq!(p.n_star, q.n_star);
                }
            }
            (Err(_), Err(_)) => {}
            (p, q) => prop_assert!(false, "{p:?} vs {q:?}"),
        }
    }

    #[test]
    fn b_leaning_injection_never_lowers_raw(
        (a, b, noise) in triple(),
        s in 0.05f64..0.5,
        c in vector(6),
    ) {
        // D near a stretched B keeps the denominator positive in most draws.
        let d: Vec<f64> = b.iter().zip(&noise).map(|(x, n)| x * (1.0 + s) + 0.1 * n).collect();
        prop_assume!(d_dot(&b, &d) > d_dot(&b, &b));
        let c = &c[..a.len()];
        let set = basins(&a, &b, &d);
        let conv = Conversation::from_labels(&["A"], &set).unwrap();
        let before = tipping_point(&conv, &set, 1.0).unwrap();
        let push = |v: Vec<f64>| {
            let mut steered = conv.clone();
            steered.push(Label::new("C").unwrap(), Embedding::new(v).unwrap());
            tipping_point(&steered, &set, 1.0).unwrap().raw_value
        };

        let cb = d_dot(c, &b);
        if cb - d_dot(c, &d) > 0.0 && cb >= 0.0 {
            prop_assert!(push(c.to_vec()) >= before.raw_value);
        }
        // D − B leans toward D whenever the denominator is positive.
        let toward_d: Vec<f64> = d.iter().zip(&b).map(|(x, y)| x - y).collect();
        if d_dot(&toward_d, &b) >= 0.0 {
            prop_assert!(push(toward_d) <= before.raw_value);
        }
    }

    #[test]
    fn d_first_means_zero((a, b, d) in triple()) {
        let set = basins(&a, &b, &d);
        let conv = Conversation::from_labels(&["A"], &set).unwrap();
        if let Ok(p) = predict(&conv, &set, &PredictConfig { mode: PredictionMode::OneStep, ..Default::default() }) {
            if p.d_first {
                prop_assert_eq!(p.n_star, NStar::Count(0));
            }
        }
    }

    #[test]
    fn orbit_stays_in_unit_interval(r in 0.0f64..=4.0, x0 in 0.0f64..=1.0) {
        let o = orbit(x0, r, 64, 100).unwrap();
        prop_assert!(o.samples.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn symbol_block_divides_period(r in 2.6f64..3.55, th in 0.05f64..0.95) {
        let o = orbit(0.5, r, 256, 20_000).unwrap();
        if let Period::Cycle(p) = o.period {
            let pattern = symbolize(&o, th).unwrap();
            let block = pattern.block.expect("periodic orbit has a block");
            prop_assert_eq!(p % block.len(), 0);
        }
    }

    #[test]
    fn binomial_tails_complement(n in 0u64..=64, k in 0u64..=64) {
        prop_assume!(k <= n);
        let upper = upper_tail_half(k, n).unwrap();
        if k == 0 {
            prop_assert_eq!(upper.to_f64(), 1.0);
        } else {
            let lower = lower_tail_half(k - 1, n).unwrap();
            prop_assert_eq!(upper.exponent, lower.exponent);
            prop_assert_eq!(upper.numerator + lower.numerator, 1u128 << upper.exponent);
        }
    }
}
