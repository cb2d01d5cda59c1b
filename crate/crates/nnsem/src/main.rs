use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nnsem_core::compare::{compare_outputs, Status, TolerancePolicy};
use nnsem_core::fuzz::GenConfig;
use nnsem_core::ir::KindTag;
use nnsem_core::semantics::{eval_model, StochasticCheckConfig};
use nnsem_core::validator::{validate_model, Report};
use nnsem_core::{Bindings, ModelGraph};
use serde_json::{json, Value};

use nnsem::backend::ReferenceBackend;
use nnsem::campaign::{generate_campaign, write_campaign};
use nnsem::harness::{run_campaign, Backend, HarnessOptions};
use nnsem::json::{self, number_to_value, output_to_value, tensor_to_value, to_text, OutputDoc};
use nnsem::script::emit_backend_script;

const EXIT_INVALID: u8 = 1;
const EXIT_MALFORMED: u8 = 2;
const EXIT_BACKEND: u8 = 3;
const EXIT_USAGE: u8 = 64;

#[derive(Parser)]
#[command(name = "nnsem", version, about = "Reference semantics, validator, fuzzer and differential harness for layer graphs")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 6)]
    max_level: usize,
    #[arg(long, default_value_t = 200)]
    max_tries: usize,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Pick mutations by chained coin flips instead of uniformly.
    #[arg(long)]
    geometric_mutations: bool,
}

impl GenArgs {
    fn config(&self) -> GenConfig {
        GenConfig { seed: self.seed, max_level: self.max_level, max_tries: self.max_tries, geometric_mutations: self.geometric_mutations, ..GenConfig::default() }
    }
}

#[derive(Args)]
struct Tolerances {
    #[arg(long, default_value_t = TolerancePolicy::default().rtol)]
    rtol: f64,
    #[arg(long, default_value_t = TolerancePolicy::default().atol)]
    atol: f64,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a campaign of valid random models.
    Generate {
        #[command(flatten)]
        gen: GenArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reference prediction of a model.
    Eval {
        model: PathBuf,
        inputs: PathBuf,
        /// Print every node's output as well.
        #[arg(long)]
        trace: bool,
    },
    /// Check layer preconditions.
    Validate {
        model: PathBuf,
        inputs: Option<PathBuf>,
        /// Report every violation, not just the first.
        #[arg(long)]
        all: bool,
    },
    /// Compare an observed output against a reference output.
    Diff {
        reference: PathBuf,
        observed: PathBuf,
        #[command(flatten)]
        tol: Tolerances,
    },
    /// Print a Keras script that reproduces the model's prediction.
    EmitScript { model: PathBuf, inputs: PathBuf },
    /// Generate a campaign and check it against a backend command.
    Fuzz {
        /// Backend command line, split on whitespace.
        #[arg(long)]
        backend: String,
        #[command(flatten)]
        gen: GenArgs,
        /// Name the first disagreeing layer of every failing model.
        #[arg(long)]
        localize: bool,
        /// Keep the campaign files here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        tol: Tolerances,
        #[arg(long, default_value_t = StochasticCheckConfig::default().accepted_rate_diff)]
        accepted_rate_diff: f64,
    },
    /// Run the reference semantics under the backend contract.
    Backend {
        model: PathBuf,
        inputs: PathBuf,
        out: PathBuf,
        #[arg(long)]
        trace: bool,
        /// Seed of the dropout masks.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, hide = true)]
        perturb: Option<String>,
    },
}

struct Failure {
    code: u8,
    message: String,
}

fn fail(code: u8, message: impl Into<String>) -> Failure {
    Failure { code, message: message.into() }
}

type CmdResult = Result<u8, Failure>;

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| fail(EXIT_MALFORMED, format!("{}: {e}", path.display())))
}

fn load_model(path: &Path) -> Result<ModelGraph, Failure> {
    json::parse_model(&read(path)?).map_err(|e| fail(EXIT_MALFORMED, format!("{}: {e}", path.display())))
}

fn load_bindings(path: &Path) -> Result<Bindings, Failure> {
    json::parse_bindings(&read(path)?).map_err(|e| fail(EXIT_MALFORMED, format!("{}: {e}", path.display())))
}

fn print(v: &Value) {
    print!("{}", to_text(v));
}

fn policy(tol: &Tolerances) -> Result<TolerancePolicy, Failure> {
    let p = TolerancePolicy { rtol: tol.rtol, atol: tol.atol };
    if !p.is_valid() {
        return Err(fail(EXIT_USAGE, "tolerances must be non-negative"));
    }
    Ok(p)
}

fn generate(gen: &GenArgs, out: &Path) -> Result<nnsem::campaign::CampaignSummary, Failure> {
    let cfg = gen.config();
    let entries = generate_campaign(&cfg, gen.count, gen.jobs).map_err(|e| fail(EXIT_USAGE, e.to_string()))?;
    write_campaign(out, &cfg, &entries).map_err(|e| fail(EXIT_MALFORMED, format!("{}: {e}", out.display())))
}

fn run(cmd: Cmd) -> CmdResult {
    match cmd {
        Cmd::Generate { gen, out } => {
            let summary = generate(&gen, &out)?;
            print(&summary.to_value());
            eprintln!("{} of {} models valid", summary.valid_count, summary.count);
            Ok(0)
        }
        Cmd::Eval { model, inputs, trace } => {
            let g = load_model(&model)?;
            let b = load_bindings(&inputs)?;
            match eval_model(&g, &b) {
                Ok(t) => {
                    let out = t[g.output()].clone();
                    if trace {
                        print(&output_to_value(&OutputDoc { output: Some(out), trace: Some(t), error: None }));
                    } else {
                        print(&tensor_to_value(&out));
                    }
                    Ok(0)
                }
                Err(v) => {
                    print(&json::violation_report(std::slice::from_ref(&v)));
                    eprintln!("{}: {}", v.layer_id, v.message);
                    Ok(EXIT_INVALID)
                }
            }
        }
        Cmd::Validate { model, inputs, all } => {
            let g = load_model(&model)?;
            let b = inputs.as_deref().map(load_bindings).transpose()?;
            let report = if all { Report::All } else { Report::First };
            let violations = validate_model(&g, b.as_ref(), report);
            print(&json::violation_report(&violations));
            for v in &violations {
                eprintln!("{} at {}: {}", v.code, v.layer_id, v.message);
            }
            Ok(if violations.is_empty() { 0 } else { EXIT_INVALID })
        }
        Cmd::Diff { reference, observed, tol } => {
            let pol = policy(&tol)?;
            let load = |p: &Path| -> Result<nnsem_core::Tensor, Failure> {
                let doc = json::parse_output(&read(p)?).map_err(|e| fail(EXIT_MALFORMED, format!("{}: {e}", p.display())))?;
                doc.output.ok_or_else(|| fail(EXIT_MALFORMED, format!("{}: no output", p.display())))
            };
            let v = compare_outputs(&load(&reference)?, &load(&observed)?, &pol);
            print(&json!({
                "status": v.status.as_str(),
                "shape_equal": v.stats.shape_equal,
                "mismatches": v.stats.mismatches,
                "compared": v.stats.compared,
                "max_abs_diff": number_to_value(v.stats.max_abs_diff),
                "max_rel_diff": number_to_value(v.stats.max_rel_diff),
            }));
            Ok(if v.status == Status::Pass { 0 } else { EXIT_INVALID })
        }
        Cmd::EmitScript { model, inputs } => {
            let g = load_model(&model)?;
            let b = load_bindings(&inputs)?;
            print!("{}", emit_backend_script(&g, &b));
            Ok(0)
        }
        Cmd::Fuzz { backend, gen, localize, out, tol, accepted_rate_diff } => {
            let backend = Backend::parse(&backend).ok_or_else(|| fail(EXIT_USAGE, "empty backend command"))?;
            if !(accepted_rate_diff > 0.0 && accepted_rate_diff < 1.0) {
                return Err(fail(EXIT_USAGE, "accepted-rate-diff must lie in (0, 1)"));
            }
            let opts = HarnessOptions {
                policy: policy(&tol)?,
                stochastic: StochasticCheckConfig { accepted_rate_diff, ..StochasticCheckConfig::default() },
                localize,
                jobs: gen.jobs,
            };
            let scratch;
            let dir = match &out {
                Some(d) => d.as_path(),
                None => {
                    scratch = tempfile::tempdir().map_err(|e| fail(EXIT_MALFORMED, e.to_string()))?;
                    scratch.path()
                }
            };
            let summary = generate(&gen, dir)?;
            let report = run_campaign(dir, &backend, &opts).map_err(|e| fail(EXIT_MALFORMED, e.to_string()))?;
            print(&json!({ "campaign": summary.to_value(), "report": report.to_value() }));
            let (fails, errors) = (report.count(Status::Fail), report.count(Status::BackendError));
            eprintln!("{} pass, {fails} fail, {errors} backend_error, {} skipped", report.count(Status::Pass), report.count(Status::Skipped));
            Ok(if fails > 0 {
                EXIT_INVALID
            } else if errors > 0 && errors == report.models.len() {
                EXIT_BACKEND
            } else {
                0
            })
        }
        Cmd::Backend { model, inputs, out, trace, seed, perturb } => {
            let perturb = match perturb {
                Some(name) => Some(KindTag::from_name(&name).ok_or_else(|| fail(EXIT_USAGE, format!("unknown layer kind `{name}`")))?),
                None => None,
            };
            let g = load_model(&model)?;
            let b = load_bindings(&inputs)?;
            let backend = ReferenceBackend { trace, seed, perturb };
            let (doc, code) = match backend.predict(&g, &b) {
                Ok(doc) => (doc, 0),
                Err(v) => (OutputDoc { error: Some(v.message), ..OutputDoc::default() }, EXIT_BACKEND),
            };
            fs::write(&out, to_text(&output_to_value(&doc))).map_err(|e| fail(EXIT_MALFORMED, format!("{}: {e}", out.display())))?;
            Ok(code)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run(cli.cmd) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("nnsem: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
