//! Interchange JSON: models, input bindings, outputs and violation reports.
//!
//! Tensors are nested arrays whose depth is the rank. Integral values are
//! written without a fraction, everything else in shortest round-trip form.
//! Non-finite values are the strings `"NaN"`, `"Infinity"` and `"-Infinity"`.

use std::collections::BTreeMap;

use nnsem_core::ir::{ActivationFn, GraphError, InputSpec, KindTag, LayerKind, LayerNode, ModelGraph, Padding, ReluArgs};
use nnsem_core::{Bindings, EvalTrace, PrecondViolation, Tensor};
use serde_json::{json, Map, Value};
use thiserror::Error;

pub const FORMAT_VERSION: u64 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("malformed document: {0}")]
    Malformed(String),
    #[error("unknown layer kind `{0}`")]
    UnknownKind(String),
    #[error("{0}")]
    Graph(#[from] GraphError),
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
}

fn malformed(msg: impl Into<String>) -> FormatError {
    FormatError::Malformed(msg.into())
}

pub fn number_to_value(x: f64) -> Value {
    if x.is_nan() {
        Value::from("NaN")
    } else if x.is_infinite() {
        Value::from(if x > 0.0 { "Infinity" } else { "-Infinity" })
    } else if x.fract() == 0.0 && x.abs() < 9.007_199_254_740_992e15 {
        Value::from(x as i64)
    } else {
        Value::from(x)
    }
}

fn value_to_number(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => match s.as_str() {
            "NaN" => Some(f64::NAN),
            "Infinity" => Some(f64::INFINITY),
            "-Infinity" => Some(f64::NEG_INFINITY),
            _ => None,
        },
        _ => None,
    }
}

pub fn tensor_to_value(t: &Tensor) -> Value {
    fn nest(dims: &[usize], data: &[f64]) -> Value {
        match dims {
            [] => number_to_value(data[0]),
            [n, rest @ ..] => {
                let step: usize = rest.iter().product();
                Value::Array((0..*n).map(|i| nest(rest, &data[i * step..(i + 1) * step])).collect())
            }
        }
    }
    nest(t.dims(), t.data())
}

/// Parses a nested array of rank at least one. Ragged nesting is rejected.
pub fn value_to_tensor(v: &Value) -> Result<Tensor, FormatError> {
    let mut dims = Vec::new();
    let mut probe = v;
    while let Value::Array(items) = probe {
        dims.push(items.len());
        match items.first() {
            Some(first) => probe = first,
            None => break,
        }
    }
    if dims.is_empty() {
        return Err(malformed("tensor must be a nested array"));
    }
    let mut data = Vec::with_capacity(dims.iter().product());
    fn walk(v: &Value, dims: &[usize], data: &mut Vec<f64>) -> Result<(), FormatError> {
        match dims {
            [] => data.push(value_to_number(v).ok_or_else(|| malformed(format!("expected a number, found {v}")))?),
            [n, rest @ ..] => {
                let items = v.as_array().filter(|a| a.len() == *n).ok_or_else(|| malformed("ragged tensor"))?;
                for item in items {
                    walk(item, rest, data)?;
                }
            }
        }
        Ok(())
    }
    walk(v, &dims, &mut data)?;
    Tensor::new(dims, data).map_err(|e| malformed(e.to_string()))
}

fn field<'a>(obj: &'a Map<String, Value>, key: &str, ctx: &str) -> Result<&'a Value, FormatError> {
    obj.get(key).ok_or_else(|| malformed(format!("{ctx}: missing `{key}`")))
}

fn as_usize(v: &Value, ctx: &str) -> Result<usize, FormatError> {
    v.as_u64().map(|n| n as usize).ok_or_else(|| malformed(format!("{ctx}: expected a non-negative integer")))
}

fn as_usizes(v: &Value, ctx: &str) -> Result<Vec<usize>, FormatError> {
    v.as_array().ok_or_else(|| malformed(format!("{ctx}: expected an array")))?.iter().map(|x| as_usize(x, ctx)).collect()
}

fn as_array_n<const N: usize>(v: &Value, ctx: &str) -> Result<[usize; N], FormatError> {
    as_usizes(v, ctx)?.try_into().map_err(|_| malformed(format!("{ctx}: expected {N} integers")))
}

fn as_f64(v: &Value, ctx: &str) -> Result<f64, FormatError> {
    value_to_number(v).ok_or_else(|| malformed(format!("{ctx}: expected a number")))
}

/// `[[t, b], [l, r]]` to `[t, b, l, r]`.
fn as_pairs(v: &Value, ctx: &str) -> Result<[usize; 4], FormatError> {
    let rows = v.as_array().filter(|a| a.len() == 2).ok_or_else(|| malformed(format!("{ctx}: expected [[top, bottom], [left, right]]")))?;
    let [t, b] = as_array_n::<2>(&rows[0], ctx)?;
    let [l, r] = as_array_n::<2>(&rows[1], ctx)?;
    Ok([t, b, l, r])
}

fn padding_value(v: &Value, ctx: &str) -> Result<Padding, FormatError> {
    v.as_str().and_then(Padding::parse).ok_or_else(|| malformed(format!("{ctx}: padding must be \"valid\" or \"same\"")))
}

fn parse_kind(tag: KindTag, args: &Map<String, Value>, ctx: &str) -> Result<LayerKind, FormatError> {
    let get = |k: &str| field(args, k, ctx);
    Ok(match tag {
        KindTag::Dense => LayerKind::Dense { units: as_usize(get("units")?, ctx)? },
        KindTag::Conv1D => LayerKind::Conv1D {
            filters: as_usize(get("filters")?, ctx)?,
            kernel_size: as_usize(get("kernel_size")?, ctx)?,
            strides: as_usize(get("strides")?, ctx)?,
            padding: padding_value(get("padding")?, ctx)?,
        },
        KindTag::Conv2D => LayerKind::Conv2D {
            filters: as_usize(get("filters")?, ctx)?,
            kernel_size: as_array_n(get("kernel_size")?, ctx)?,
            strides: as_array_n(get("strides")?, ctx)?,
            padding: padding_value(get("padding")?, ctx)?,
        },
        KindTag::MaxPool1D | KindTag::AvgPool1D => {
            let (pool_size, strides, padding) =
                (as_usize(get("pool_size")?, ctx)?, as_usize(get("strides")?, ctx)?, padding_value(get("padding")?, ctx)?);
            if tag == KindTag::MaxPool1D {
                LayerKind::MaxPool1D { pool_size, strides, padding }
            } else {
                LayerKind::AvgPool1D { pool_size, strides, padding }
            }
        }
        KindTag::MaxPool2D | KindTag::AvgPool2D => {
            let (pool_size, strides, padding) =
                (as_array_n(get("pool_size")?, ctx)?, as_array_n(get("strides")?, ctx)?, padding_value(get("padding")?, ctx)?);
            if tag == KindTag::MaxPool2D {
                LayerKind::MaxPool2D { pool_size, strides, padding }
            } else {
                LayerKind::AvgPool2D { pool_size, strides, padding }
            }
        }
        KindTag::GlobalMaxPool1D => LayerKind::GlobalMaxPool1D,
        KindTag::GlobalAvgPool1D => LayerKind::GlobalAvgPool1D,
        KindTag::Flatten => LayerKind::Flatten,
        KindTag::Reshape => LayerKind::Reshape { target_shape: as_usizes(get("target_shape")?, ctx)? },
        KindTag::Permute => LayerKind::Permute { dims: as_usizes(get("dims")?, ctx)? },
        KindTag::RepeatVector => LayerKind::RepeatVector { n: as_usize(get("n")?, ctx)? },
        KindTag::Cropping1D => LayerKind::Cropping1D { cropping: as_array_n(get("cropping")?, ctx)? },
        KindTag::Cropping2D => LayerKind::Cropping2D { cropping: as_pairs(get("cropping")?, ctx)? },
        KindTag::ZeroPadding1D => LayerKind::ZeroPadding1D { padding: as_array_n(get("padding")?, ctx)? },
        KindTag::ZeroPadding2D => LayerKind::ZeroPadding2D { padding: as_pairs(get("padding")?, ctx)? },
        KindTag::UpSampling1D => LayerKind::UpSampling1D { size: as_usize(get("size")?, ctx)? },
        KindTag::UpSampling2D => LayerKind::UpSampling2D { size: as_array_n(get("size")?, ctx)? },
        KindTag::Concatenate => {
            LayerKind::Concatenate { axis: get("axis")?.as_i64().ok_or_else(|| malformed(format!("{ctx}: axis must be an integer")))? }
        }
        KindTag::Add => LayerKind::Add,
        KindTag::Subtract => LayerKind::Subtract,
        KindTag::Multiply => LayerKind::Multiply,
        KindTag::Average => LayerKind::Average,
        KindTag::Maximum => LayerKind::Maximum,
        KindTag::Minimum => LayerKind::Minimum,
        KindTag::ReLU => {
            let d = ReluArgs::default();
            let opt = |k: &str, dflt: f64| args.get(k).map_or(Ok(dflt), |v| as_f64(v, ctx));
            let max_value = match args.get("max_value") {
                None | Some(Value::Null) => None,
                Some(v) => Some(as_f64(v, ctx)?),
            };
            LayerKind::ReLU(ReluArgs { max_value, negative_slope: opt("negative_slope", d.negative_slope)?, threshold: opt("threshold", d.threshold)? })
        }
        KindTag::Activation => {
            let name = get("activation")?.as_str().unwrap_or_default();
            LayerKind::Activation(ActivationFn::parse(name).ok_or_else(|| malformed(format!("{ctx}: unknown activation `{name}`")))?)
        }
        KindTag::BatchNormalization => LayerKind::BatchNormalization { epsilon: as_f64(get("epsilon")?, ctx)? },
        KindTag::Dropout => LayerKind::Dropout { rate: as_f64(get("rate")?, ctx)? },
    })
}

fn kind_args(kind: &LayerKind) -> Value {
    let pairs = |v: &[usize; 4]| json!([[v[0], v[1]], [v[2], v[3]]]);
    match kind {
        LayerKind::Dense { units } => json!({ "units": units }),
        LayerKind::Conv1D { filters, kernel_size, strides, padding } => {
            json!({ "filters": filters, "kernel_size": kernel_size, "strides": strides, "padding": padding.as_str() })
        }
        LayerKind::Conv2D { filters, kernel_size, strides, padding } => {
            json!({ "filters": filters, "kernel_size": kernel_size, "strides": strides, "padding": padding.as_str() })
        }
        LayerKind::MaxPool1D { pool_size, strides, padding } | LayerKind::AvgPool1D { pool_size, strides, padding } => {
            json!({ "pool_size": pool_size, "strides": strides, "padding": padding.as_str() })
        }
        LayerKind::MaxPool2D { pool_size, strides, padding } | LayerKind::AvgPool2D { pool_size, strides, padding } => {
            json!({ "pool_size": pool_size, "strides": strides, "padding": padding.as_str() })
        }
        LayerKind::Reshape { target_shape } => json!({ "target_shape": target_shape }),
        LayerKind::Permute { dims } => json!({ "dims": dims }),
        LayerKind::RepeatVector { n } => json!({ "n": n }),
        LayerKind::Cropping1D { cropping } => json!({ "cropping": cropping }),
        LayerKind::Cropping2D { cropping } => json!({ "cropping": pairs(cropping) }),
        LayerKind::ZeroPadding1D { padding } => json!({ "padding": padding }),
        LayerKind::ZeroPadding2D { padding } => json!({ "padding": pairs(padding) }),
        LayerKind::UpSampling1D { size } => json!({ "size": size }),
        LayerKind::UpSampling2D { size } => json!({ "size": size }),
        LayerKind::Concatenate { axis } => json!({ "axis": axis }),
        LayerKind::ReLU(a) => json!({
            "max_value": a.max_value.map(number_to_value),
            "negative_slope": number_to_value(a.negative_slope),
            "threshold": number_to_value(a.threshold),
        }),
        LayerKind::Activation(f) => json!({ "activation": f.as_str() }),
        LayerKind::BatchNormalization { epsilon } => json!({ "epsilon": number_to_value(*epsilon) }),
        LayerKind::Dropout { rate } => json!({ "rate": number_to_value(*rate) }),
        LayerKind::GlobalMaxPool1D
        | LayerKind::GlobalAvgPool1D
        | LayerKind::Flatten
        | LayerKind::Add
        | LayerKind::Subtract
        | LayerKind::Multiply
        | LayerKind::Average
        | LayerKind::Maximum
        | LayerKind::Minimum => json!({}),
    }
}

pub fn model_from_value(doc: &Value) -> Result<ModelGraph, FormatError> {
    let root = doc.as_object().ok_or_else(|| malformed("model must be an object"))?;
    match root.get("version").and_then(Value::as_u64) {
        Some(FORMAT_VERSION) => {}
        other => return Err(malformed(format!("unsupported version {other:?}"))),
    }
    let mut inputs = Vec::new();
    for item in field(root, "inputs", "model")?.as_array().ok_or_else(|| malformed("`inputs` must be an array"))? {
        let obj = item.as_object().ok_or_else(|| malformed("input entry must be an object"))?;
        let id = field(obj, "id", "input")?.as_str().ok_or_else(|| malformed("input id must be a string"))?;
        let shape = as_usizes(field(obj, "shape", id)?, id)?;
        inputs.push(InputSpec { id: id.to_string(), shape });
    }
    let mut nodes = Vec::new();
    for item in field(root, "layers", "model")?.as_array().ok_or_else(|| malformed("`layers` must be an array"))? {
        let obj = item.as_object().ok_or_else(|| malformed("layer entry must be an object"))?;
        let id = field(obj, "id", "layer")?.as_str().ok_or_else(|| malformed("layer id must be a string"))?;
        let kind_name = field(obj, "kind", id)?.as_str().ok_or_else(|| malformed(format!("{id}: kind must be a string")))?;
        let tag = KindTag::from_name(kind_name).ok_or_else(|| FormatError::UnknownKind(kind_name.to_string()))?;
        let empty = Map::new();
        let args = match obj.get("args") {
            None | Some(Value::Null) => &empty,
            Some(v) => v.as_object().ok_or_else(|| malformed(format!("{id}: args must be an object")))?,
        };
        let kind = parse_kind(tag, args, id)?;
        let weights = match obj.get("weights") {
            None => Vec::new(),
            Some(v) => v
                .as_array()
                .ok_or_else(|| malformed(format!("{id}: weights must be an array")))?
                .iter()
                .map(value_to_tensor)
                .collect::<Result<_, _>>()?,
        };
        let layer_inputs = field(obj, "inputs", id)?
            .as_array()
            .ok_or_else(|| malformed(format!("{id}: inputs must be an array")))?
            .iter()
            .map(|v| v.as_str().map(str::to_string).ok_or_else(|| malformed(format!("{id}: input ids must be strings"))))
            .collect::<Result<_, _>>()?;
        nodes.push(LayerNode { id: id.to_string(), kind, weights, inputs: layer_inputs });
    }
    let output = field(root, "output", "model")?.as_str().ok_or_else(|| malformed("`output` must be a string"))?;
    let g = ModelGraph::new(inputs, nodes, output.to_string())?;
    g.check_arity()?;
    Ok(g)
}

pub fn parse_model(text: &str) -> Result<ModelGraph, FormatError> {
    model_from_value(&serde_json::from_str(text)?)
}

/// Canonical form: sorted keys, layers in evaluation order.
pub fn model_to_value(g: &ModelGraph) -> Value {
    let order = g.topo_order().expect("graphs are acyclic by construction");
    let layers: Vec<Value> = order
        .iter()
        .filter_map(|id| g.node(id))
        .map(|n| {
            json!({
                "id": n.id,
                "kind": n.kind.tag().name(),
                "args": kind_args(&n.kind),
                "weights": n.weights.iter().map(tensor_to_value).collect::<Vec<_>>(),
                "inputs": n.inputs,
            })
        })
        .collect();
    let inputs: Vec<Value> = g.inputs().iter().map(|i| json!({ "id": i.id, "shape": i.shape })).collect();
    json!({ "version": FORMAT_VERSION, "inputs": inputs, "layers": layers, "output": g.output() })
}

pub fn serialize_model(g: &ModelGraph) -> String {
    to_text(&model_to_value(g))
}

/// Compact JSON with a trailing newline.
pub fn to_text(v: &Value) -> String {
    let mut s = v.to_string();
    s.push('\n');
    s
}

pub fn bindings_to_value(b: &Bindings) -> Value {
    Value::Object(b.iter().map(|(k, t)| (k.clone(), tensor_to_value(t))).collect())
}

pub fn parse_bindings(text: &str) -> Result<Bindings, FormatError> {
    let doc: Value = serde_json::from_str(text)?;
    let obj = doc.as_object().ok_or_else(|| malformed("bindings must be an object"))?;
    obj.iter().map(|(k, v)| Ok((k.clone(), value_to_tensor(v)?))).collect()
}

/// Contents of an output file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OutputDoc {
    pub output: Option<Tensor>,
    pub trace: Option<EvalTrace>,
    pub error: Option<String>,
}

pub fn output_to_value(doc: &OutputDoc) -> Value {
    let mut obj = Map::new();
    if let Some(t) = &doc.output {
        obj.insert("output".into(), tensor_to_value(t));
    }
    if let Some(trace) = &doc.trace {
        obj.insert("trace".into(), Value::Object(trace.iter().map(|(k, t)| (k.clone(), tensor_to_value(t))).collect()));
    }
    if let Some(e) = &doc.error {
        obj.insert("error".into(), Value::from(e.as_str()));
    }
    Value::Object(obj)
}

/// Accepts an output object or a bare nested array.
pub fn parse_output(text: &str) -> Result<OutputDoc, FormatError> {
    let doc: Value = serde_json::from_str(text)?;
    if doc.is_array() {
        return Ok(OutputDoc { output: Some(value_to_tensor(&doc)?), ..OutputDoc::default() });
    }
    let obj = doc.as_object().ok_or_else(|| malformed("output must be an object or a nested array"))?;
    let output = obj.get("output").map(value_to_tensor).transpose()?;
    let trace = match obj.get("trace") {
        None | Some(Value::Null) => None,
        Some(v) => {
            let m = v.as_object().ok_or_else(|| malformed("trace must be an object"))?;
            Some(m.iter().map(|(k, t)| Ok((k.clone(), value_to_tensor(t)?))).collect::<Result<BTreeMap<_, _>, FormatError>>()?)
        }
    };
    let error = obj.get("error").and_then(Value::as_str).map(str::to_string);
    if output.is_none() && error.is_none() {
        return Err(malformed("output file has neither `output` nor `error`"));
    }
    Ok(OutputDoc { output, trace, error })
}

pub fn violation_report(violations: &[PrecondViolation]) -> Value {
    let items: Vec<Value> = violations
        .iter()
        .map(|v| {
            let mut obj = Map::new();
            obj.insert("code".into(), Value::from(v.code.as_str()));
            obj.insert("category".into(), Value::from(v.code.category().as_str()));
            obj.insert("layer".into(), Value::from(v.layer_id.as_str()));
            obj.insert("message".into(), Value::from(v.message.as_str()));
            obj.insert("badness".into(), number_to_value(v.badness));
            if let Some(e) = v.expected {
                obj.insert("expected".into(), Value::from(e));
            }
            if let Some(o) = v.observed {
                obj.insert("observed".into(), Value::from(o));
            }
            Value::Object(obj)
        })
        .collect();
    json!({ "valid": violations.is_empty(), "violations": items })
}
