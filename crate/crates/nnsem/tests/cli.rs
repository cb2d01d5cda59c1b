use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn nnsem(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nnsem")).args(args).output().expect("nnsem runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn corrected_crop_concat(dir: &Path) -> PathBuf {
    let text = fs::read_to_string(data("crop_concat.json")).unwrap().replace("[5,5]", "[0,0]");
    let p = dir.join("crop_concat_fixed.json");
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn eval_prints_the_prediction() {
    let o = nnsem(&["eval", path(&data("dense.json")), path(&data("dense_inputs.json"))]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "[[87,89]]\n");

    let o = nnsem(&["eval", path(&data("conv_ones.json")), path(&data("conv_ones_inputs.json"))]);
    assert_eq!(stdout(&o), "[[[46],[43]]]\n");

    let o = nnsem(&["eval", "--trace", path(&data("conv_ones.json")), path(&data("conv_ones_inputs.json"))]);
    let doc: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(doc["trace"]["conv"], doc["output"]);
}

#[test]
fn validate_flags_the_empty_cropping() {
    let o = nnsem(&["validate", path(&data("crop_concat.json")), path(&data("crop_concat_inputs.json"))]);
    assert_eq!(o.status.code(), Some(1));
    let doc: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(doc["valid"], false);
    assert_eq!(doc["violations"][0]["code"], "E_EMPTY_OUTPUT");
    assert_eq!(doc["violations"][0]["layer"], "Cro");

    let o = nnsem(&["eval", path(&data("crop_concat.json")), path(&data("crop_concat_inputs.json"))]);
    assert_eq!(o.status.code(), Some(1));

    let dir = tempfile::tempdir().unwrap();
    let fixed = corrected_crop_concat(dir.path());
    let o = nnsem(&["validate", path(&fixed)]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "{\"valid\":true,\"violations\":[]}\n");
}

#[test]
fn exit_codes_separate_usage_and_malformed_input() {
    assert_eq!(nnsem(&["frobnicate"]).status.code(), Some(64));
    assert_eq!(nnsem(&["eval"]).status.code(), Some(64));
    assert_eq!(nnsem(&["--help"]).status.code(), Some(0));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\"version\":1").unwrap();
    assert_eq!(nnsem(&["validate", path(&bad)]).status.code(), Some(2));
    assert_eq!(nnsem(&["validate", path(&dir.path().join("missing.json"))]).status.code(), Some(2));
}

#[test]
fn backend_follows_the_contract() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out.json");

    let o = nnsem(&["backend", path(&data("conv_ones.json")), path(&data("conv_ones_inputs.json")), path(&out)]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(fs::read_to_string(&out).unwrap(), "{\"output\":[[[46],[43]]]}\n");

    let o = nnsem(&["backend", path(&data("crop_concat.json")), path(&data("crop_concat_inputs.json")), path(&out)]);
    assert_eq!(o.status.code(), Some(3));
    let doc: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert!(doc["error"].as_str().unwrap().contains("Cro"));

    let bad = dir.path().join("bad.json");
    fs::write(&bad, "[]").unwrap();
    let o = nnsem(&["backend", path(&bad), path(&data("crop_concat_inputs.json")), path(&out)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn diff_reports_tolerance_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    fs::write(&a, "[[1.0, 2.0]]").unwrap();
    fs::write(&b, "{\"output\":[[1.00001, 2.0]]}").unwrap();

    let o = nnsem(&["diff", path(&a), path(&b)]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let o = nnsem(&["diff", path(&a), path(&b), "--rtol", "1e-7"]);
    assert_eq!(o.status.code(), Some(1));
    let doc: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(doc["status"], "fail");
    assert_eq!(doc["mismatches"], 1);
}

#[test]
fn generate_writes_a_campaign_directory() {
    let dir = tempfile::tempdir().unwrap();
    let o = nnsem(&["generate", "--seed", "9", "--count", "12", "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(0));
    let summary: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let valid = summary["valid_count"].as_u64().unwrap() as usize;
    let models = fs::read_dir(dir.path())
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("model_"))
        .count();
    assert_eq!(models, valid);
    assert_eq!(fs::read_to_string(dir.path().join("campaign.json")).unwrap(), stdout(&o));
}

#[test]
fn fuzz_exit_code_reflects_the_report() {
    let me = env!("CARGO_BIN_EXE_nnsem");
    let run = |backend: String| nnsem(&["fuzz", "--backend", &backend, "--seed", "5", "--count", "20", "--jobs", "4"]);

    let o = run(format!("{me} backend"));
    assert_eq!(o.status.code(), Some(0));
    let doc: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(doc["report"]["summary"]["fail"], 0);

    let o = run(format!("{me} backend --perturb Dense"));
    let doc: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let fails = doc["report"]["summary"]["fail"].as_u64().unwrap();
    assert_eq!(o.status.code(), Some(if fails > 0 { 1 } else { 0 }));

    let o = run(format!("{me} no-such-subcommand"));
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn emitted_script_names_every_layer() {
    let o = nnsem(&["emit-script", path(&data("crop_concat.json")), path(&data("crop_concat_inputs.json"))]);
    assert_eq!(o.status.code(), Some(0));
    let script = stdout(&o);
    for id in ["\"Max\"", "\"Con\"", "\"Cro\"", "\"Con1\""] {
        assert!(script.contains(&format!("name={id}")), "{id} missing");
    }
    assert!(script.contains("layers.Cropping1D((5, 5)"));
}
