use std::path::{Path, PathBuf};

use tipping::conversation::parse_conversation;
use tipping::files::{
    load_basin_document, load_basin_file, load_model_file, read_trace, store_basin_document, store_model_file,
    trace_lines, write_trace, BasinDocument,
};
use tipping_core::dynamics::{default_candidates, rollout};
use tipping_core::multilayer::ToyTransformer;
use tipping_core::rng::{self, seeded};
use tipping_core::{Basin, BasinSet, DynamicsConfig, Embedding, Label, Phrase};

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn awkward_phrases(seed: u64, d: usize, n: usize) -> Vec<Phrase> {
    let mut r = seeded(seed);
    (0..n)
        .map(|i| Phrase {
            text: format!("phrase {i} \"quoted\" é"),
            embedding: Embedding::new(
                (0..d)
                    .map(|_| rng::normal(&mut r) * 1e-3 + rng::uniform(&mut r))
                    .collect(),
            )
            .unwrap(),
        })
        .collect()
}

#[test]
fn basin_file_round_trip_is_bit_exact() {
    let mut set = BasinSet::new(5);
    set.insert(Label::b(), Basin::from_phrases(awkward_phrases(1, 5, 7)).unwrap())
        .unwrap();
    set.insert(Label::d(), Basin::from_phrases(awkward_phrases(2, 5, 3)).unwrap())
        .unwrap();
    set.insert(
        Label::new("C+").unwrap(),
        Basin::from_centroid(Embedding::new(vec![0.1, 1.0 / 3.0, -2.0e-300, 5e-324, f64::MAX]).unwrap()),
    )
    .unwrap();
    let mut doc = BasinDocument::new(set);
    doc.metadata = Some(serde_json::json!({"source": "synthetic"}));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("basins.json");
    store_basin_document(&doc, &path).unwrap();
    let back = load_basin_document(&path).unwrap();
    assert_eq!(back, doc);
    for label in doc.basins.labels() {
        let (a, b) = (
            doc.basins.centroid(label).unwrap(),
            back.basins.centroid(label).unwrap(),
        );
        let bits = |e: &Embedding| e.as_slice().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a), bits(b), "{label}");
    }
    let again = dir.path().join("again.json");
    store_basin_document(&back, &again).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn model_file_round_trip() {
    let basins = load_basin_file(&data("reference.json")).unwrap();
    let model = ToyTransformer::random(2, 3, 2, 4, 0.3, 9);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    store_model_file(&basins, &model, &path).unwrap();
    let (b, m) = load_model_file(&path).unwrap();
    assert_eq!(b, basins);
    assert_eq!(m, model);
    assert!(load_model_file(&data("reference.json")).is_err());
}

#[test]
fn trace_round_trip() {
    let basins = load_basin_file(&data("reference.json")).unwrap();
    let prompt = parse_conversation("A,C-,C-,A", &basins).unwrap();
    let cfg = DynamicsConfig {
        decode_temperature: 0.3,
        max_steps: 40,
        rng_seed: 4,
        ..DynamicsConfig::default()
    };
    let trace = rollout(&prompt, &basins, &default_candidates(), &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.jsonl");
    write_trace(&trace, &path).unwrap();
    let lines = read_trace(&path).unwrap();
    assert_eq!(lines, trace_lines(&trace));
    assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 40);
}
