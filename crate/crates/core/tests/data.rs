use std::io::Write;
use std::path::Path;

use gravnorm::data::{
    load_jets, save_jets, synth_generate, DatasetSplit, Format, Jet, SplitRole, DESK_FEATURES, MAX_CONSTITUENTS,
};
use gravnorm::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

fn assert_same(a: &DatasetSplit, b: &DatasetSplit, tol: f64) {
    assert_eq!(a.jets.len(), b.jets.len());
    for (x, y) in a.jets.iter().zip(&b.jets) {
        assert_eq!(x.id, y.id);
        assert_eq!(x.label, y.label);
        assert_eq!(x.four_vectors.shape(), y.four_vectors.shape());
        assert_eq!(x.features.shape(), y.features.shape());
        for (u, v) in x
            .four_vectors
            .data()
            .iter()
            .chain(x.features.data())
            .zip(y.four_vectors.data().iter().chain(y.features.data()))
        {
            assert!((u - v).abs() <= tol * u.abs().max(1.0), "{u} vs {v}");
        }
    }
}

#[test]
fn binary_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let split = synth_generate(11, 60, 1, 80).unwrap();
    let path = dir.path().join("jets.bin");
    save_jets(&path, &split, Format::Bin).unwrap();
    let back = load_jets(&path, Format::Bin, SplitRole::Train).unwrap();
    assert_same(&split, &back, 0.0);
}

#[test]
fn jsonl_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let split = synth_generate(12, 60, 1, 80).unwrap();
    let path = dir.path().join("jets.jsonl");
    save_jets(&path, &split, Format::Jsonl).unwrap();
    let back = load_jets(&path, Format::Jsonl, SplitRole::Val).unwrap();
    assert_eq!(back.role, SplitRole::Val);
    assert_same(&split, &back, 1e-9);
}

/// Massless constituents around a random axis, zero-padded to the maximum
/// the way the public top-tagging tables store them.
fn padded_table(n_records: usize, seed: u64) -> Vec<(u8, Vec<[f64; 4]>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_records)
        .map(|i| {
            let n = rng.random_range(1..=MAX_CONSTITUENTS);
            let (eta0, phi0) = (rng.random_range(-2.0..2.0), rng.random_range(-3.0..3.0));
            let mut rows = vec![[0.0; 4]; MAX_CONSTITUENTS];
            for row in rows.iter_mut().take(n) {
                let pt: f64 = rng.random_range(1.0..100.0);
                let eta: f64 = eta0 + rng.random_range(-0.8..0.8);
                let phi: f64 = phi0 + rng.random_range(-0.8..0.8);
                let (px, py, pz) = (pt * phi.cos(), pt * phi.sin(), pt * eta.sinh());
                *row = [(px * px + py * py + pz * pz).sqrt(), px, py, pz];
            }
            ((i % 2) as u8, rows)
        })
        .collect()
}

#[test]
fn converter_shaped_jsonl_loads_without_loss() {
    let table = padded_table(100, 5);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("converted.jsonl");
    let mut f = std::fs::File::create(&path).unwrap();
    let mut real_counts = Vec::new();
    for (i, (label, rows)) in table.iter().enumerate() {
        let trimmed: Vec<_> = rows.iter().filter(|r| r.iter().any(|&v| v != 0.0)).collect();
        real_counts.push(trimmed.len());
        writeln!(f, "{}", json!({"id": format!("jet{i}"), "label": label, "p4": trimmed})).unwrap();
    }
    drop(f);

    let split = load_jets(&path, Format::Jsonl, SplitRole::Test).unwrap();
    assert_eq!(split.len(), table.len());
    for (jet, &n) in split.jets.iter().zip(&real_counts) {
        assert_eq!(jet.n_nodes(), n);
        assert!(jet.n_nodes() <= MAX_CONSTITUENTS);
        assert!(jet.label <= 1);
        assert_eq!(jet.features.cols(), DESK_FEATURES);
        assert!(jet.features.is_finite());
    }
}

#[test]
fn arbitrary_feature_width_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("wide.jsonl");
    let feat: Vec<Vec<f64>> = (0..3).map(|i| (0..17).map(|j| (i * 17 + j) as f64).collect()).collect();
    let p4 = [[10.0, 6.0, 0.0, 8.0], [5.0, 0.0, 3.0, 4.0], [13.0, 5.0, 0.0, 12.0]];
    std::fs::write(&path, format!("{}\n", json!({"id": "a", "label": 1, "p4": p4, "feat": feat}))).unwrap();
    let split = load_jets(&path, Format::Jsonl, SplitRole::Train).unwrap();
    assert_eq!(split.feature_dim(), Some(17));
}

fn write_with_bad_lines(path: &Path, n_good: usize, bad_at: &[usize]) {
    let split = synth_generate(3, n_good, 2, 6).unwrap();
    save_jets(path, &split, Format::Jsonl).unwrap();
    let mut lines: Vec<String> = std::fs::read_to_string(path).unwrap().lines().map(String::from).collect();
    for &at in bad_at {
        lines.insert(at - 1, r#"{"id": "x", "label": 3, "p4": [[1,0,0,1]]}"#.into());
    }
    std::fs::write(path, lines.join("\n") + "\n").unwrap();
}

#[test]
fn malformed_within_tolerance_are_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("one_bad.jsonl");
    write_with_bad_lines(&path, 99, &[40]);
    assert_eq!(load_jets(&path, Format::Jsonl, SplitRole::Train).unwrap().len(), 99);
}

#[test]
fn malformed_beyond_tolerance_report_first_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("two_bad.jsonl");
    write_with_bad_lines(&path, 98, &[17, 60]);
    match load_jets(&path, Format::Jsonl, SplitRole::Train) {
        Err(Error::Ingestion { malformed, total, first_line, .. }) => {
            assert_eq!((malformed, total, first_line), (2, 100, 17));
        }
        other => panic!("expected ingestion error, got {other:?}"),
    }
}

#[test]
fn invalid_jets_are_rejected() {
    let p4 = gravnorm::Tensor::from_rows(&[[5.0, 3.0, 0.0, 4.0]]).unwrap();
    assert!(Jet::from_four_vectors("a", 2, p4.clone()).is_err());
    let too_many = gravnorm::Tensor::filled(MAX_CONSTITUENTS + 1, 4, 1.0);
    assert!(Jet::from_four_vectors("b", 1, too_many).is_err());
    let nan = gravnorm::Tensor::from_rows(&[[f64::NAN, 0.0, 0.0, 1.0]]).unwrap();
    assert!(Jet::from_four_vectors("c", 1, nan).is_err());
    assert!(Jet::from_four_vectors("d", 1, p4).is_ok());
}

#[test]
fn bad_binary_header_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.bin");
    std::fs::write(&path, b"NOPE\x01\x00").unwrap();
    assert!(matches!(load_jets(&path, Format::Bin, SplitRole::Train), Err(Error::Ingestion { .. })));
}

#[test]
fn synth_is_deterministic_and_balanced() {
    let a = synth_generate(9, 200, 10, 40).unwrap();
    let b = synth_generate(9, 200, 10, 40).unwrap();
    assert_same(&a, &b, 0.0);
    assert_eq!(a.n_signal(), 100);
    assert!(a.jets.iter().all(|j| (10..=40).contains(&j.n_nodes())));
}
