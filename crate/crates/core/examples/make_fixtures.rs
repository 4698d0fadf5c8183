//! Regenerates the committed fixtures under `crates/core/tests/fixtures`
//! (or the directory given as the first argument).

use std::fs;
use std::path::{Path, PathBuf};

use tracekit::chain::FixtureStore;
use tracekit::features::SuspiciousMethodSet;
use tracekit::model::{AnomalyModel, TrainConfig};
use tracekit::synthetic::{benchmark_dataset, signature_db, write_incident_fixtures, BenchmarkConfig};

fn write(path: &Path, text: &str) {
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    fs::write(path, text).unwrap();
}

fn main() {
    let root: PathBuf = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures"));

    let incident = root.join("incident");
    let chain = incident.join("chain");
    if chain.exists() {
        fs::remove_dir_all(&chain).unwrap();
    }
    let scenario = write_incident_fixtures(&FixtureStore::open(&chain)).unwrap();
    write(
        &incident.join("scope.json"),
        &(serde_json::to_string_pretty(&scenario.scope).unwrap() + "\n"),
    );
    write(&incident.join("signatures.tsv"), &signature_db().to_text());

    let dataset = benchmark_dataset(&BenchmarkConfig::default());
    let jsonl: String = dataset
        .iter()
        .map(|p| serde_json::to_string(p).unwrap() + "\n")
        .collect();
    write(&root.join("benchmark/dataset.jsonl"), &jsonl);
    let model = AnomalyModel::<f64>::train(&dataset, &SuspiciousMethodSet::default(), &TrainConfig::default()).unwrap();
    write(&root.join("benchmark/model.json"), &model.to_json());
    println!("fixtures written to {}", root.display());
}
