//! Campaign directories: one model, its inputs and its reference outputs
//! per index, plus a `campaign.json` summary.

use std::fs;
use std::io;
use std::path::Path;

use nnsem_core::fuzz::{generate_campaign_entry, CampaignEntry, GenConfig, GenError};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::json::{bindings_to_value, number_to_value, output_to_value, serialize_model, to_text, OutputDoc};

#[derive(Clone, Debug, PartialEq)]
pub struct CampaignSummary {
    pub seed: u64,
    pub count: usize,
    pub valid_count: usize,
    pub invalid_count: usize,
    pub mean_tries: f64,
    pub invalid: Vec<usize>,
}

impl CampaignSummary {
    pub fn of(cfg: &GenConfig, entries: &[CampaignEntry]) -> Self {
        let invalid: Vec<usize> = entries.iter().filter(|e| !e.is_valid()).map(|e| e.index).collect();
        let tries: usize = entries.iter().map(|e| e.outcome.tries).sum();
        CampaignSummary {
            seed: cfg.seed,
            count: entries.len(),
            valid_count: entries.len() - invalid.len(),
            invalid_count: invalid.len(),
            mean_tries: if entries.is_empty() { 0.0 } else { tries as f64 / entries.len() as f64 },
            invalid,
        }
    }

    pub fn valid_rate(&self) -> f64 {
        if self.count == 0 {
            return 0.0;
        }
        self.valid_count as f64 / self.count as f64
    }

    pub fn to_value(&self) -> Value {
        json!({
            "seed": self.seed,
            "count": self.count,
            "valid_count": self.valid_count,
            "invalid_count": self.invalid_count,
            "mean_tries": number_to_value(self.mean_tries),
            "invalid": self.invalid,
        })
    }
}

/// Generates entries `0..count` on `jobs` workers. Each entry depends only
/// on the seed and its index, so the result does not depend on `jobs`.
pub fn generate_campaign(cfg: &GenConfig, count: usize, jobs: usize) -> Result<Vec<CampaignEntry>, GenError> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build().expect("thread pool");
    pool.install(|| (0..count).into_par_iter().map(|i| generate_campaign_entry(cfg, i)).collect())
}

/// Writes the files of every valid entry and the summary.
pub fn write_campaign(dir: &Path, cfg: &GenConfig, entries: &[CampaignEntry]) -> io::Result<CampaignSummary> {
    fs::create_dir_all(dir)?;
    for e in entries {
        let (Some(g), Some(inputs), Some(trace)) = (&e.outcome.model, &e.inputs, &e.trace) else { continue };
        fs::write(dir.join(format!("model_{}.json", e.index)), serialize_model(g))?;
        fs::write(dir.join(format!("inputs_{}.json", e.index)), to_text(&bindings_to_value(inputs)))?;
        let expected = OutputDoc { output: Some(trace[g.output()].clone()), trace: Some(trace.clone()), error: None };
        fs::write(dir.join(format!("expected_{}.json", e.index)), to_text(&output_to_value(&expected)))?;
    }
    let summary = CampaignSummary::of(cfg, entries);
    fs::write(dir.join("campaign.json"), to_text(&summary.to_value()))?;
    Ok(summary)
}
