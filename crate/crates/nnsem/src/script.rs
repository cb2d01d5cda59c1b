//! Standalone Keras scripts that rebuild a model, load its weights and
//! print a prediction as interchange JSON.

use std::fmt::Write;

use nnsem_core::ir::{LayerKind, ModelGraph};
use nnsem_core::Bindings;
use serde_json::{Map, Value};

use crate::json::{bindings_to_value, tensor_to_value};

fn py_str(s: &str) -> String {
    Value::from(s).to_string()
}

fn py_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:?}")
    } else if x.is_nan() {
        "float('nan')".into()
    } else if x > 0.0 {
        "float('inf')".into()
    } else {
        "float('-inf')".into()
    }
}

fn pairs(v: &[usize; 4]) -> String {
    format!("(({}, {}), ({}, {}))", v[0], v[1], v[2], v[3])
}

/// Keras constructor call for `kind`, without the `name` argument.
fn constructor(kind: &LayerKind) -> String {
    match kind {
        LayerKind::Dense { units } => format!("layers.Dense({units}"),
        LayerKind::Conv1D { filters, kernel_size, strides, padding } => {
            format!("layers.Conv1D({filters}, {kernel_size}, strides={strides}, padding=\"{}\"", padding.as_str())
        }
        LayerKind::Conv2D { filters, kernel_size, strides, padding } => format!(
            "layers.Conv2D({filters}, ({}, {}), strides=({}, {}), padding=\"{}\"",
            kernel_size[0],
            kernel_size[1],
            strides[0],
            strides[1],
            padding.as_str()
        ),
        LayerKind::MaxPool1D { pool_size, strides, padding } => {
            format!("layers.MaxPooling1D({pool_size}, strides={strides}, padding=\"{}\"", padding.as_str())
        }
        LayerKind::AvgPool1D { pool_size, strides, padding } => {
            format!("layers.AveragePooling1D({pool_size}, strides={strides}, padding=\"{}\"", padding.as_str())
        }
        LayerKind::MaxPool2D { pool_size, strides, padding } => format!(
            "layers.MaxPooling2D(({}, {}), strides=({}, {}), padding=\"{}\"",
            pool_size[0],
            pool_size[1],
            strides[0],
            strides[1],
            padding.as_str()
        ),
        LayerKind::AvgPool2D { pool_size, strides, padding } => format!(
            "layers.AveragePooling2D(({}, {}), strides=({}, {}), padding=\"{}\"",
            pool_size[0],
            pool_size[1],
            strides[0],
            strides[1],
            padding.as_str()
        ),
        LayerKind::GlobalMaxPool1D => "layers.GlobalMaxPooling1D(".into(),
        LayerKind::GlobalAvgPool1D => "layers.GlobalAveragePooling1D(".into(),
        LayerKind::Flatten => "layers.Flatten(".into(),
        LayerKind::Reshape { target_shape } => format!("layers.Reshape({}", tuple(target_shape)),
        LayerKind::Permute { dims } => format!("layers.Permute({}", tuple(dims)),
        LayerKind::RepeatVector { n } => format!("layers.RepeatVector({n}"),
        LayerKind::Cropping1D { cropping } => format!("layers.Cropping1D(({}, {})", cropping[0], cropping[1]),
        LayerKind::Cropping2D { cropping } => format!("layers.Cropping2D({}", pairs(cropping)),
        LayerKind::ZeroPadding1D { padding } => format!("layers.ZeroPadding1D(({}, {})", padding[0], padding[1]),
        LayerKind::ZeroPadding2D { padding } => format!("layers.ZeroPadding2D({}", pairs(padding)),
        LayerKind::UpSampling1D { size } => format!("layers.UpSampling1D({size}"),
        LayerKind::UpSampling2D { size } => format!("layers.UpSampling2D(({}, {})", size[0], size[1]),
        LayerKind::Concatenate { axis } => format!("layers.Concatenate(axis={axis}"),
        LayerKind::Add => "layers.Add(".into(),
        LayerKind::Subtract => "layers.Subtract(".into(),
        LayerKind::Multiply => "layers.Multiply(".into(),
        LayerKind::Average => "layers.Average(".into(),
        LayerKind::Maximum => "layers.Maximum(".into(),
        LayerKind::Minimum => "layers.Minimum(".into(),
        LayerKind::ReLU(a) => format!(
            "layers.ReLU(max_value={}, negative_slope={}, threshold={}",
            a.max_value.map_or_else(|| "None".into(), py_float),
            py_float(a.negative_slope),
            py_float(a.threshold)
        ),
        LayerKind::Activation(f) => format!("layers.Activation(\"{}\"", f.as_str()),
        LayerKind::BatchNormalization { epsilon } => format!("layers.BatchNormalization(epsilon={}", py_float(*epsilon)),
        LayerKind::Dropout { rate } => format!("layers.Dropout({}", py_float(*rate)),
    }
}

fn tuple(v: &[usize]) -> String {
    match v {
        [one] => format!("({one},)"),
        _ => format!("({})", v.iter().map(usize::to_string).collect::<Vec<_>>().join(", ")),
    }
}

const PRELUDE: &str = r#"import json
import sys

import numpy as np
from tensorflow import keras
from tensorflow.keras import layers


def tensor(v):
    def fix(x):
        if isinstance(x, list):
            return [fix(i) for i in x]
        if isinstance(x, str):
            return float(x.replace("Infinity", "inf"))
        return x
    return np.array(fix(v), dtype="float32")


def plain(a):
    def fix(x):
        if isinstance(x, list):
            return [fix(i) for i in x]
        if x != x:
            return "NaN"
        if x in (float("inf"), float("-inf")):
            return "Infinity" if x > 0 else "-Infinity"
        return x
    return fix(np.asarray(a, dtype="float64").tolist())

"#;

/// Script text for `g` fed with `inputs`. Run with `--trace` to print every
/// layer's output as well. Dropout layers run in training mode.
pub fn emit_backend_script(g: &ModelGraph, inputs: &Bindings) -> String {
    let order = g.topo_order().expect("graphs are acyclic by construction");
    let weights: Map<String, Value> = g
        .nodes()
        .iter()
        .filter(|n| !n.weights.is_empty())
        .map(|n| (n.id.clone(), Value::Array(n.weights.iter().map(tensor_to_value).collect())))
        .collect();

    let mut s = String::from(PRELUDE);
    writeln!(s, "WEIGHTS = json.loads({})", py_str(&Value::Object(weights).to_string())).unwrap();
    writeln!(s, "INPUTS = json.loads({})", py_str(&bindings_to_value(inputs).to_string())).unwrap();
    s.push_str("\nt = {}\n");
    for spec in g.inputs() {
        writeln!(s, "t[{id}] = keras.Input(shape={}, name={id})", tuple(&spec.shape), id = py_str(&spec.id)).unwrap();
    }
    for id in order.iter().filter(|id| !g.is_input(id)) {
        let node = g.node(id).expect("topo order lists graph nodes");
        let args: Vec<String> = node.inputs.iter().map(|i| format!("t[{}]", py_str(i))).collect();
        let call = if node.kind.tag().is_merge() { format!("[{}]", args.join(", ")) } else { args[0].clone() };
        let training = if matches!(node.kind, LayerKind::Dropout { .. }) { ", training=True" } else { "" };
        writeln!(s, "t[{id}] = {}, name={id})({call}{training})", constructor(&node.kind), id = py_str(id)).unwrap();
    }
    let input_ids: Vec<String> = g.inputs().iter().map(|i| py_str(&i.id)).collect();
    let node_ids: Vec<String> = order.iter().filter(|id| !g.is_input(id)).map(|i| py_str(i)).collect();
    writeln!(s, "\nINPUT_IDS = [{}]", input_ids.join(", ")).unwrap();
    writeln!(s, "NODE_IDS = [{}]", node_ids.join(", ")).unwrap();
    writeln!(s, "OUTPUT_ID = {}", py_str(g.output())).unwrap();
    s.push_str(
        r#"
trace = "--trace" in sys.argv[1:]
outputs = [t[i] for i in NODE_IDS] if trace else [t[OUTPUT_ID]]
model = keras.Model(inputs=[t[i] for i in INPUT_IDS], outputs=outputs)
for name, ws in WEIGHTS.items():
    model.get_layer(name).set_weights([tensor(w) for w in ws])
x = [tensor(INPUTS[i]) for i in INPUT_IDS]
y = model.predict(x, steps=1, verbose=0)
if not isinstance(y, list):
    y = [y]
if trace:
    values = dict(zip(NODE_IDS, y))
    print(json.dumps({"output": plain(values[OUTPUT_ID]), "trace": {k: plain(v) for k, v in values.items()}}))
else:
    print(json.dumps({"output": plain(y[0])}))
"#,
    );
    s
}
