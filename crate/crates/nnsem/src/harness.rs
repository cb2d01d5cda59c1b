//! Differential runs of a campaign against an external backend command.
//!
//! A backend is invoked as `<cmd> <model.json> <inputs.json> <out.json>
//! [--trace]`. Exit 0 means the output file was written; exit 3 means the
//! backend rejected the model and wrote its reason to the `error` field.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::Command;

use nnsem_core::compare::{compare_outputs, Status, TolerancePolicy, Verdict};
use nnsem_core::ir::LayerKind;
use nnsem_core::semantics::{check_stochastic, eval_model_with, StochasticCheckConfig};
use nnsem_core::{Bindings, EvalTrace, ModelGraph};
use rayon::prelude::*;
use serde_json::{json, Value};
use thiserror::Error;

use crate::json::{self, bindings_to_value, number_to_value, parse_output, serialize_model, to_text, OutputDoc};

pub const BACKEND_REJECTED: i32 = 3;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Backend {
    pub program: String,
    pub args: Vec<String>,
}

#[derive(Debug, Error)]
pub enum BackendFailure {
    #[error("could not launch backend: {0}")]
    Launch(io::Error),
    #[error("backend rejected the model: {0}")]
    Rejected(String),
    #[error("backend exited with {code:?}: {stderr}")]
    Exit { code: Option<i32>, stderr: String },
    #[error("backend output unusable: {0}")]
    BadOutput(String),
}

impl Backend {
    /// Splits a command line on whitespace; no quoting is supported.
    pub fn parse(cmd: &str) -> Option<Self> {
        let mut parts = cmd.split_whitespace().map(str::to_string);
        let program = parts.next()?;
        Some(Backend { program, args: parts.collect() })
    }

    pub fn run(&self, model: &Path, inputs: &Path, out: &Path, trace: bool) -> Result<OutputDoc, BackendFailure> {
        let mut cmd = Command::new(&self.program);
        cmd.args(&self.args).arg(model).arg(inputs).arg(out);
        if trace {
            cmd.arg("--trace");
        }
        let result = cmd.output().map_err(BackendFailure::Launch)?;
        let read = || -> Result<OutputDoc, BackendFailure> {
            let text = fs::read_to_string(out).map_err(|e| BackendFailure::BadOutput(e.to_string()))?;
            parse_output(&text).map_err(|e| BackendFailure::BadOutput(e.to_string()))
        };
        match result.status.code() {
            Some(0) => {
                let doc = read()?;
                match (&doc.output, &doc.error) {
                    (_, Some(e)) => Err(BackendFailure::Rejected(e.clone())),
                    (None, None) => Err(BackendFailure::BadOutput("no output".into())),
                    _ => Ok(doc),
                }
            }
            Some(BACKEND_REJECTED) => {
                let reason = read().ok().and_then(|d| d.error).unwrap_or_else(|| String::from_utf8_lossy(&result.stderr).trim().to_string());
                Err(BackendFailure::Rejected(reason))
            }
            code => Err(BackendFailure::Exit { code, stderr: String::from_utf8_lossy(&result.stderr).trim().to_string() }),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HarnessOptions {
    pub policy: TolerancePolicy,
    pub stochastic: StochasticCheckConfig,
    pub localize: bool,
    pub jobs: usize,
}

impl Default for HarnessOptions {
    fn default() -> Self {
        HarnessOptions { policy: TolerancePolicy::default(), stochastic: StochasticCheckConfig::default(), localize: false, jobs: 1 }
    }
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("could not build worker pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

#[derive(Debug, Error)]
pub enum LocalizeError {
    /// Every probe agrees: the mismatch only shows in the composed model.
    #[error("no single layer's output disagrees with the reference")]
    Unlocalizable,
    #[error(transparent)]
    Backend(BackendFailure),
    #[error("{0}")]
    Io(#[from] io::Error),
}

fn verdict_fail(stats: nnsem_core::tensor::ComparisonStats, detail: String) -> Verdict {
    Verdict { status: Status::Fail, stats, failing_layer: None, detail: Some(detail) }
}

/// Judges one backend output against the reference. Dropout outputs are
/// taken from the backend's trace, checked for their zero rate, and fed to
/// the reference in place of its own dropout; everything else must match
/// within `opts.policy`. With `whole_trace`, intermediate outputs the
/// backend reports are compared too.
pub fn judge(g: &ModelGraph, inputs: &Bindings, observed: &OutputDoc, opts: &HarnessOptions, whole_trace: bool) -> Verdict {
    let Some(out) = &observed.output else {
        return Verdict::with_status(Status::BackendError, Some("no output".into()));
    };
    let empty = EvalTrace::new();
    let backend_trace = observed.trace.as_ref().unwrap_or(&empty);
    let dropouts: Vec<_> = g.nodes().iter().filter(|n| matches!(n.kind, LayerKind::Dropout { .. })).collect();
    let mut overrides = EvalTrace::new();
    for d in &dropouts {
        match backend_trace.get(&d.id) {
            Some(t) => overrides.insert(d.id.clone(), t.clone()),
            None => return Verdict::with_status(Status::Skipped, Some(format!("backend trace lacks stochastic layer {}", d.id))),
        };
    }
    let reference = match eval_model_with(g, inputs, &overrides) {
        Ok(t) => t,
        Err(v) => return verdict_fail(Default::default(), format!("backend output breaks the model: {v}")),
    };
    for d in &dropouts {
        let LayerKind::Dropout { rate } = d.kind else { unreachable!() };
        let check = match check_stochastic(&reference[&d.inputs[0]], &overrides[&d.id], rate, &opts.stochastic) {
            Ok(c) => c,
            Err(e) => return verdict_fail(Default::default(), format!("{}: {e}", d.id)),
        };
        if check.resolvable(&opts.stochastic) && !check.passed {
            return verdict_fail(Default::default(), format!("{}: {}", d.id, check.message));
        }
    }
    if whole_trace {
        let order = g.topo_order().expect("graphs are acyclic by construction");
        for id in order.iter().filter(|id| !g.is_input(id)) {
            if let Some(seen) = backend_trace.get(id) {
                let v = compare_outputs(&reference[id], seen, &opts.policy);
                if v.status == Status::Fail {
                    return verdict_fail(v.stats, format!("first mismatch at {id}"));
                }
            }
        }
    }
    compare_outputs(&reference[g.output()], out, &opts.policy)
}

fn write(path: &Path, text: &str) -> io::Result<()> {
    fs::write(path, text)
}

/// Runs the backend on `g` in a private directory and judges the result.
pub fn check_model(g: &ModelGraph, inputs: &Bindings, backend: &Backend, opts: &HarnessOptions) -> Verdict {
    let run = || -> io::Result<Verdict> {
        let dir = tempfile::tempdir()?;
        let (model_path, inputs_path, out_path) = (dir.path().join("model.json"), dir.path().join("inputs.json"), dir.path().join("out.json"));
        write(&model_path, &serialize_model(g))?;
        write(&inputs_path, &to_text(&bindings_to_value(inputs)))?;
        Ok(match backend.run(&model_path, &inputs_path, &out_path, true) {
            Ok(doc) => judge(g, inputs, &doc, opts, true),
            Err(e) => Verdict::with_status(Status::BackendError, Some(e.to_string())),
        })
    };
    run().unwrap_or_else(|e| Verdict::with_status(Status::BackendError, Some(e.to_string())))
}

/// First layer, in evaluation order, whose probe model (the layer and its
/// ancestors) fails against the reference. A probe the backend rejects
/// counts as failing.
pub fn localize_failure(g: &ModelGraph, inputs: &Bindings, backend: &Backend, opts: &HarnessOptions) -> Result<String, LocalizeError> {
    let dir = tempfile::tempdir()?;
    let order = g.topo_order().expect("graphs are acyclic by construction");
    for id in order.iter().filter(|id| !g.is_input(id)) {
        let probe = g.probe(id).expect("layers have probes");
        let probe_inputs: Bindings = inputs.iter().filter(|(k, _)| probe.is_input(k)).map(|(k, v)| (k.clone(), v.clone())).collect();
        let (model_path, inputs_path, out_path) = (dir.path().join("probe.json"), dir.path().join("inputs.json"), dir.path().join("out.json"));
        write(&model_path, &serialize_model(&probe))?;
        write(&inputs_path, &to_text(&bindings_to_value(&probe_inputs)))?;
        let _ = fs::remove_file(&out_path);
        let doc = match backend.run(&model_path, &inputs_path, &out_path, probe.has_stochastic()) {
            Ok(doc) => doc,
            Err(BackendFailure::Rejected(_)) => return Ok(id.clone()),
            Err(e) => return Err(LocalizeError::Backend(e)),
        };
        if judge(&probe, &probe_inputs, &doc, opts, false).status == Status::Fail {
            return Ok(id.clone());
        }
    }
    Err(LocalizeError::Unlocalizable)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelVerdict {
    pub index: usize,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CampaignReport {
    pub models: Vec<ModelVerdict>,
}

impl CampaignReport {
    pub fn count(&self, status: Status) -> usize {
        self.models.iter().filter(|m| m.verdict.status == status).count()
    }

    pub fn to_value(&self) -> Value {
        let models: Vec<Value> = self
            .models
            .iter()
            .map(|m| {
                let v = &m.verdict;
                let mut obj = json!({
                    "index": m.index,
                    "status": v.status.as_str(),
                    "mismatches": v.stats.mismatches,
                    "max_abs_diff": number_to_value(v.stats.max_abs_diff),
                    "max_rel_diff": number_to_value(v.stats.max_rel_diff),
                });
                if let Some(l) = &v.failing_layer {
                    obj["failing_layer"] = Value::from(l.as_str());
                }
                if let Some(d) = &v.detail {
                    obj["detail"] = Value::from(d.as_str());
                }
                obj
            })
            .collect();
        json!({
            "summary": {
                "pass": self.count(Status::Pass),
                "fail": self.count(Status::Fail),
                "backend_error": self.count(Status::BackendError),
                "skipped": self.count(Status::Skipped),
            },
            "models": models,
        })
    }
}

/// Indices of `model_<idx>.json` files in `dir`, ascending.
pub fn campaign_indices(dir: &Path) -> io::Result<Vec<usize>> {
    let mut out: Vec<usize> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            name.strip_prefix("model_")?.strip_suffix(".json")?.parse().ok()
        })
        .collect();
    out.sort_unstable();
    Ok(out)
}

fn load(dir: &Path, index: usize) -> Result<(ModelGraph, Bindings), String> {
    let read = |name: String| fs::read_to_string(dir.join(&name)).map_err(|e| format!("{name}: {e}"));
    let g = json::parse_model(&read(format!("model_{index}.json"))?).map_err(|e| e.to_string())?;
    let inputs = json::parse_bindings(&read(format!("inputs_{index}.json"))?).map_err(|e| e.to_string())?;
    Ok((g, inputs))
}

/// Checks every model of a campaign directory on a pool of `opts.jobs`
/// workers. The report is ordered by model index whatever the scheduling.
pub fn run_campaign(dir: &Path, backend: &Backend, opts: &HarnessOptions) -> Result<CampaignReport, HarnessError> {
    let indices = campaign_indices(dir).map_err(|source| HarnessError::Io { path: dir.to_path_buf(), source })?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(opts.jobs.max(1)).build()?;
    let models = pool.install(|| {
        indices
            .par_iter()
            .map(|&index| {
                let verdict = match load(dir, index) {
                    Err(e) => Verdict::with_status(Status::Skipped, Some(e)),
                    Ok((g, inputs)) => {
                        let mut v = check_model(&g, &inputs, backend, opts);
                        if v.status == Status::Fail && opts.localize {
                            match localize_failure(&g, &inputs, backend, opts) {
                                Ok(layer) => v.failing_layer = Some(layer),
                                Err(e) => v.detail = Some(format!("{}; {e}", v.detail.take().unwrap_or_default())),
                            }
                        }
                        v
                    }
                };
                ModelVerdict { index, verdict }
            })
            .collect()
    });
    Ok(CampaignReport { models })
}
