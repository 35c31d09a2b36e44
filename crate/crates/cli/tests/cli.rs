use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use mmfuse::data::{save_dataset, ArtistId, EmbeddingTable, ModalityId, MultimodalDataset, SimilarityGraph};

fn mmfuse(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmfuse"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn demo_config(name: &str) -> String {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "configs", "demo", name].iter().collect();
    p.to_str().unwrap().to_string()
}

const AUDIO: [(&str, [f64; 3]); 5] = [
    ("a1", [1.0, 0.2, 0.0]),
    ("a2", [0.9, 0.5, 0.1]),
    ("a3", [-0.3, 1.0, 0.4]),
    ("a4", [0.2, -0.1, 1.0]),
    ("a5", [0.7, 0.0, -0.6]),
];

fn write_fixture(dir: &Path) {
    let mut audio = EmbeddingTable::new(ModalityId::new("audio").unwrap(), 3).unwrap();
    let mut cf = EmbeddingTable::new(ModalityId::new("cf").unwrap(), 2).unwrap();
    for (i, (a, v)) in AUDIO.iter().enumerate() {
        let id = ArtistId::new(*a).unwrap();
        audio.insert(id.clone(), v.to_vec()).unwrap();
        cf.insert(id, vec![i as f64, 1.0]).unwrap();
    }
    let ds = MultimodalDataset::new(vec![audio, cf], SimilarityGraph::new(), None).unwrap();
    save_dataset(&ds, dir).unwrap();
}

fn brute_force(query: &str, k: usize) -> Vec<(String, f64)> {
    let cos = |x: &[f64], y: &[f64]| {
        let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
        let n = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
        dot / (n(x) * n(y))
    };
    let q = AUDIO.iter().find(|(a, _)| *a == query).unwrap().1;
    let mut scored: Vec<(String, f64)> = AUDIO
        .iter()
        .filter(|(a, _)| *a != query)
        .map(|(a, v)| (a.to_string(), cos(&q, v)))
        .collect();
    scored.sort_by(|x, y| y.1.total_cmp(&x.1));
    scored.truncate(k);
    scored
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = mmfuse(&["frobnicate"], dir.path());
    assert_eq!(code(&out), 1);
    assert!(!out.stderr.is_empty());
}

#[test]
fn help_exits_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let out = mmfuse(&["--help"], dir.path());
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("retrieve"));
}

#[test]
fn missing_or_invalid_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&mmfuse(&["experiment"], dir.path())), 1);
    std::fs::write(dir.path().join("bad.json"), "{ not json").unwrap();
    assert_eq!(code(&mmfuse(&["gen", "--config", "bad.json", "--out", "d"], dir.path())), 1);
}

#[test]
fn retrieve_matches_brute_force_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(&dir.path().join("data"));
    let args = ["retrieve", "--data", "data", "--source", "audio", "--query", "a1", "--query", "a4", "--k", "3"];
    let first = mmfuse(&args, dir.path());
    assert_eq!(code(&first), 0, "{}", String::from_utf8_lossy(&first.stderr));
    let second = mmfuse(&args, dir.path());
    assert_eq!(first.stdout, second.stdout);

    let mut expected = String::new();
    for q in ["a1", "a4"] {
        for (rank, (a, s)) in brute_force(q, 3).into_iter().enumerate() {
            expected.push_str(&format!("{q}\t{}\t{a}\t{s:.6}\n", rank + 1));
        }
    }
    assert_eq!(String::from_utf8(first.stdout).unwrap(), expected);
}

#[test]
fn retrieve_unknown_artist_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(&dir.path().join("data"));
    let out = mmfuse(&["retrieve", "--data", "data", "--source", "audio", "--query", "nobody"], dir.path());
    assert_eq!(code(&out), 2);
}

#[test]
fn demo_pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let steps: [Vec<String>; 3] = [
        vec!["gen".into(), "--config".into(), demo_config("synthetic.json"), "--out".into(), "demo/data".into()],
        vec![
            "train".into(),
            "--config".into(),
            demo_config("train.json"),
            "--data".into(),
            "demo/data".into(),
            "--out".into(),
            "demo/model.json".into(),
        ],
        vec!["experiment".into(), "--config".into(), demo_config("experiment.json")],
    ];
    for step in &steps {
        let args: Vec<&str> = step.iter().map(String::as_str).collect();
        let out = mmfuse(&args, dir.path());
        assert_eq!(code(&out), 0, "{step:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    assert!(start.elapsed() < Duration::from_secs(300));
    let results = dir.path().join("demo/results");
    for f in ["raw__contrastive.jsonl", "modality_groups__pca.dependency.csv", "popularity__buckets.csv"] {
        assert!(results.join(f).is_file(), "missing {f}");
    }
}
