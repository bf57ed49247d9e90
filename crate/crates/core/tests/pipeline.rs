use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use lobsim::experiment::{Experiment, ExperimentConfig, Stage};
use lobsim::svm::OvoSvm;

fn config() -> ExperimentConfig {
    ExperimentConfig { runs: 2, horizon: Some(36_000.0), k: vec![4], k_max: 5, ..ExperimentConfig::default() }
}

fn run_all(dir: &Path) -> Experiment {
    let e = Experiment::new(config(), dir).unwrap();
    let logs = e.simulate().unwrap();
    let ds = e.build_features(&logs).unwrap();
    e.classify(&ds).unwrap();
    e.cluster(&ds).unwrap();
    e.stylized(&logs).unwrap();
    e
}

fn files(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for kind in ["logs", "datasets", "models", "reports"] {
        for entry in fs::read_dir(root.join(kind)).unwrap() {
            let p = entry.unwrap().path();
            out.insert(format!("{kind}/{}", p.file_name().unwrap().to_string_lossy()), fs::read(&p).unwrap());
        }
    }
    out
}

#[test]
fn every_artifact_names_its_manifest_and_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let e = run_all(dir.path());
    let feat = e.stage(Stage::Features).hash;
    let inputs: BTreeMap<String, String> = [Stage::Simulate, Stage::Features, Stage::Classify, Stage::Cluster, Stage::Stylized]
        .into_iter()
        .map(|st| {
            let m = e.stage(st);
            let i = if m.inputs.is_empty() { "-".to_string() } else { m.inputs.join(",") };
            (m.hash, i)
        })
        .collect();
    let all = files(dir.path());
    assert!(all.len() > 15);
    for (name, bytes) in &all {
        let hash = name.split('/').nth(1).unwrap().split('-').next().unwrap();
        if name.ends_with(".json") {
            let text = String::from_utf8_lossy(bytes);
            if name.ends_with("-svm.json") {
                let model: OvoSvm = serde_json::from_str(&text).unwrap();
                assert_eq!(model.provenance.as_deref(), Some(feat.as_str()));
            } else {
                assert!(text.contains(&format!("\"hash\": \"{hash}\"")), "{name}");
            }
            continue;
        }
        let first = String::from_utf8_lossy(bytes).lines().next().unwrap_or("").to_string();
        assert!(first.contains(&format!("manifest={hash}")), "{name}: {first}");
        // simulation has no upstream stage
        let want = &inputs[hash];
        if want != "-" {
            assert!(first.contains(&format!("inputs={want}")), "{name}: {first}");
        }
    }
}

#[test]
fn identical_configs_give_identical_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_all(a.path());
    run_all(b.path());
    let (fa, fb) = (files(a.path()), files(b.path()));
    assert_eq!(fa.keys().collect::<Vec<_>>(), fb.keys().collect::<Vec<_>>());
    for (name, bytes) in &fa {
        assert!(bytes == &fb[name], "{name} differs");
    }
}
