//! Runs emitted scripts under TensorFlow when it is importable, and skips
//! with a note otherwise.

use std::fs;
use std::path::Path;
use std::process::Command;

use nnsem::json::{parse_bindings, parse_model, parse_output};
use nnsem::script::emit_backend_script;
use nnsem_core::compare::{compare_outputs, Status, TolerancePolicy};
use nnsem_core::semantics::eval_model;

fn tensorflow_available() -> bool {
    Command::new("python3").args(["-c", "import tensorflow"]).output().is_ok_and(|o| o.status.success())
}

#[test]
fn keras_scripts_agree_with_the_reference() {
    if !tensorflow_available() {
        eprintln!("tensorflow not importable; skipping");
        return;
    }
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data");
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("conv_ones.json", "conv_ones_inputs.json", None),
        ("crop_concat.json", "crop_concat_inputs.json", Some(("[5,5]", "[0,0]"))),
        ("dense.json", "dense_inputs.json", None),
    ];
    // float32 in the backend
    let pol = TolerancePolicy { rtol: 1e-4, atol: 1e-6 };
    for (model, inputs, patch) in cases {
        let mut text = fs::read_to_string(data.join(model)).unwrap();
        if let Some((from, to)) = patch {
            text = text.replace(from, to);
        }
        let g = parse_model(&text).unwrap();
        let b = parse_bindings(&fs::read_to_string(data.join(inputs)).unwrap()).unwrap();
        let script = dir.path().join("model.py");
        fs::write(&script, emit_backend_script(&g, &b)).unwrap();

        let out = Command::new("python3").arg(&script).arg("--trace").env("TF_CPP_MIN_LOG_LEVEL", "3").output().unwrap();
        assert!(out.status.success(), "{model}: {}", String::from_utf8_lossy(&out.stderr));
        let stdout = String::from_utf8(out.stdout).unwrap();
        let doc = parse_output(stdout.lines().last().unwrap()).unwrap();

        let reference = eval_model(&g, &b).unwrap();
        let v = compare_outputs(&reference[g.output()], doc.output.as_ref().unwrap(), &pol);
        assert_eq!(v.status, Status::Pass, "{model}: {v:?}");
        for (id, seen) in doc.trace.as_ref().unwrap() {
            assert_eq!(compare_outputs(&reference[id], seen, &pol).status, Status::Pass, "{model} at {id}");
        }
    }
}
