use std::fs;
use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};

use nnsem::backend::ReferenceBackend;
use nnsem::campaign::{generate_campaign, write_campaign};
use nnsem::harness::{check_model, judge, localize_failure, run_campaign, Backend, HarnessOptions, LocalizeError};
use nnsem::json::{parse_bindings, parse_model, OutputDoc};
use nnsem_core::compare::Status;
use nnsem_core::fuzz::GenConfig;
use nnsem_core::ir::LayerKind;
use nnsem_core::{Bindings, ModelGraph, Tensor};

fn reference(extra: &str) -> Backend {
    Backend::parse(&format!("{} backend {extra}", env!("CARGO_BIN_EXE_nnsem"))).unwrap()
}

fn script(dir: &Path, name: &str, body: &str) -> Backend {
    let p: PathBuf = dir.join(name);
    fs::write(&p, format!("#!/bin/sh\n{body}\n")).unwrap();
    fs::set_permissions(&p, fs::Permissions::from_mode(0o755)).unwrap();
    Backend::parse(p.to_str().unwrap()).unwrap()
}

fn fixed_crop_concat() -> (ModelGraph, Bindings) {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data");
    let text = fs::read_to_string(data.join("crop_concat.json")).unwrap().replace("[5,5]", "[0,0]");
    let inputs = parse_bindings(&fs::read_to_string(data.join("crop_concat_inputs.json")).unwrap()).unwrap();
    (parse_model(&text).unwrap(), inputs)
}

#[test]
fn reference_backend_passes_its_own_campaign() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = GenConfig { seed: 21, ..GenConfig::default() };
    let entries = generate_campaign(&cfg, 40, 4).unwrap();
    write_campaign(dir.path(), &cfg, &entries).unwrap();
    let opts = HarnessOptions { jobs: 4, ..HarnessOptions::default() };
    let report = run_campaign(dir.path(), &reference(""), &opts).unwrap();
    assert!(!report.models.is_empty());
    assert_eq!(report.count(Status::Pass), report.models.len(), "{:?}", report.to_value());
    assert!(report.models.windows(2).all(|w| w[0].index < w[1].index));
}

#[test]
fn broken_backends_are_backend_errors() {
    let dir = tempfile::tempdir().unwrap();
    let (g, inputs) = fixed_crop_concat();
    let opts = HarnessOptions::default();

    let garbage = script(dir.path(), "garbage.sh", "echo 'not json' > \"$3\"");
    assert_eq!(check_model(&g, &inputs, &garbage, &opts).status, Status::BackendError);

    let crash = script(dir.path(), "crash.sh", "echo boom >&2; exit 7");
    let v = check_model(&g, &inputs, &crash, &opts);
    assert_eq!(v.status, Status::BackendError);
    assert!(v.detail.unwrap().contains("boom"));

    let reject = script(dir.path(), "reject.sh", "echo '{\"error\":\"unsupported\"}' > \"$3\"; exit 3");
    let v = check_model(&g, &inputs, &reject, &opts);
    assert_eq!(v.status, Status::BackendError);
    assert!(v.detail.unwrap().contains("unsupported"));

    let missing = Backend::parse("/nonexistent/backend").unwrap();
    assert_eq!(check_model(&g, &inputs, &missing, &opts).status, Status::BackendError);
}

#[test]
fn wrong_shapes_and_values_fail() {
    let dir = tempfile::tempdir().unwrap();
    let (g, inputs) = fixed_crop_concat();
    let opts = HarnessOptions::default();

    let zeros = script(dir.path(), "zeros.sh", "echo '{\"output\":[[[0,0],[0,0],[0,0],[0,0]]]}' > \"$3\"");
    assert_eq!(check_model(&g, &inputs, &zeros, &opts).status, Status::Fail);

    let short = script(dir.path(), "short.sh", "echo '{\"output\":[[[1.313,1.02],[1.45,1.92]]]}' > \"$3\"");
    let v = check_model(&g, &inputs, &short, &opts);
    assert_eq!(v.status, Status::Fail);
    assert!(!v.stats.shape_equal);
}

#[test]
fn localization_names_the_perturbed_layer() {
    let (g, inputs) = fixed_crop_concat();
    let opts = HarnessOptions::default();
    for (kind, layer) in [("Conv1D", "Con"), ("MaxPool1D", "Max"), ("Cropping1D", "Cro"), ("Concatenate", "Con1")] {
        let backend = reference(&format!("--perturb {kind}"));
        let v = check_model(&g, &inputs, &backend, &opts);
        assert_eq!(v.status, Status::Fail, "{kind}");
        assert_eq!(localize_failure(&g, &inputs, &backend, &opts).unwrap(), layer);
    }
    let clean = reference("");
    assert!(matches!(localize_failure(&g, &inputs, &clean, &opts), Err(LocalizeError::Unlocalizable)));
}

fn dropout_model(rate: f64) -> (ModelGraph, Bindings) {
    let text = format!(
        r#"{{"version":1,"inputs":[{{"id":"x","shape":[400]}}],
        "layers":[{{"id":"drop","kind":"Dropout","args":{{"rate":{rate}}},"weights":[],"inputs":["x"]}},
                  {{"id":"act","kind":"Activation","args":{{"activation":"linear"}},"weights":[],"inputs":["drop"]}}],
        "output":"act"}}"#
    );
    let g = parse_model(&text).unwrap();
    let mut b = Bindings::new();
    b.insert("x".into(), Tensor::new(vec![1, 400], (1..=400).map(f64::from).collect()).unwrap());
    (g, b)
}

#[test]
fn dropout_is_judged_by_its_zero_rate() {
    let opts = HarnessOptions::default();
    let (g, inputs) = dropout_model(0.5);
    for seed in 0..5 {
        let doc = ReferenceBackend { trace: true, seed, perturb: None }.predict(&g, &inputs).unwrap();
        assert_eq!(judge(&g, &inputs, &doc, &opts, true).status, Status::Pass);
    }

    // an identity "dropout" zeroes nothing
    let (g, inputs) = dropout_model(0.5);
    let x = inputs["x"].clone();
    let mut trace = nnsem_core::EvalTrace::new();
    trace.insert("drop".into(), x.clone());
    trace.insert("act".into(), x.clone());
    let doc = OutputDoc { output: Some(x.clone()), trace: Some(trace), error: None };
    let v = judge(&g, &inputs, &doc, &opts, true);
    assert_eq!(v.status, Status::Fail);
    assert!(v.detail.unwrap().contains("Expected Rate"));

    let bare = OutputDoc { output: Some(x), trace: None, error: None };
    assert_eq!(judge(&g, &inputs, &bare, &opts, true).status, Status::Skipped);
}

#[test]
fn perturbing_dropout_still_shows() {
    let (g, inputs) = dropout_model(0.3);
    assert!(g.nodes().iter().any(|n| matches!(n.kind, LayerKind::Dropout { .. })));
    let backend = reference("--perturb Dropout");
    let v = check_model(&g, &inputs, &backend, &HarnessOptions::default());
    assert_eq!(v.status, Status::Fail);
}
