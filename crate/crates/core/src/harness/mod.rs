//! Experiment pipeline behind the command-line tool: train runs from a TOML
//! config, evaluate deployed agents under attacks, certify radii, and render
//! result tables.
//!
//! Layout under the output directory (relocated under `$RSDQN_OUTPUT_ROOT`
//! when relative):
//!
//! ```text
//! seed-<n>/config.toml     copy of the experiment config
//! seed-<n>/checkpoint.bin  retained weights
//! seed-<n>/final.bin       weights after the last frame
//! seed-<n>/metrics.jsonl   one record per episode / validation episode
//! seed-<n>/eval.json       evaluation result (+ eval.txt)
//! seed-<n>/cert.json       certification result (+ cert.txt)
//! ```

mod certify;
mod config;
mod evaluate;
mod report;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use certify::{certify, summarize, CertEpisode, CertSummary};
pub use config::{EvalConfig, ExperimentConfig, OUTPUT_ROOT_VAR};
pub use evaluate::{evaluate, play_episode, AttackRow, Player};
pub use report::{render_text, report, CertLine, EvalLine, Report};

use crate::attacks::AttackSpec;
use crate::envs::EnvKind;
use crate::error::{Error, Result};
use crate::nn::Checkpoint;
use crate::training::{deployed_network, run_training, Algorithm, CheckpointInfo, LossKind, MetricRecord};

/// Mean and sample standard deviation (`n − 1`); 0 for fewer than two values.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Which agent a result belongs to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentInfo {
    pub env: EnvKind,
    pub algorithm: Algorithm,
    pub defense: LossKind,
    pub train_attack: AttackSpec,
    pub seed: u64,
    pub checkpoint: String,
}

impl AgentInfo {
    /// Short name such as `dqn` or `rsdqn/ce_duel_def`.
    pub fn label(&self) -> String {
        let mut s = match self.algorithm {
            Algorithm::Dqn => "dqn".to_string(),
            Algorithm::Rsdqn => format!("rsdqn/{}", self.defense),
        };
        if !self.train_attack.is_none() {
            s.push_str(&format!(" +train {}", self.train_attack));
        }
        s
    }
}

/// A machine-readable result file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ResultFile {
    Evaluation { agent: AgentInfo, rows: Vec<AttackRow> },
    Certification { agent: AgentInfo, summary: CertSummary },
}

impl ResultFile {
    pub fn agent(&self) -> &AgentInfo {
        match self {
            ResultFile::Evaluation { agent, .. } | ResultFile::Certification { agent, .. } => agent,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("results serialize");
        s.push('\n');
        s
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

fn write(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Serializes metric records as JSON lines.
pub fn metrics_jsonl(records: &[MetricRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("metrics serialize"));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainArtifacts {
    pub dir: PathBuf,
    pub checkpoint: PathBuf,
    pub final_checkpoint: PathBuf,
    pub metrics: PathBuf,
}

/// Trains seed `seed` of `config` and writes its artifacts.
pub fn train(config: &ExperimentConfig, seed: u64) -> Result<TrainArtifacts> {
    config.validate()?;
    let spec = config.run_spec(seed)?;
    let dir = config.seed_dir(seed);
    let outcome = run_training(spec)?;
    let artifacts = TrainArtifacts {
        checkpoint: dir.join("checkpoint.bin"),
        final_checkpoint: dir.join("final.bin"),
        metrics: dir.join("metrics.jsonl"),
        dir,
    };
    write(&artifacts.dir.join("config.toml"), config.to_toml().as_bytes())?;
    write(&artifacts.checkpoint, &outcome.checkpoint.to_bytes())?;
    write(&artifacts.final_checkpoint, &outcome.final_checkpoint.to_bytes())?;
    write(&artifacts.metrics, metrics_jsonl(&outcome.metrics).as_bytes())?;
    Ok(artifacts)
}

fn agent_info(config: &ExperimentConfig, info: &CheckpointInfo, checkpoint: &Path) -> Result<AgentInfo> {
    let env = config.env()?;
    if info.env != env {
        return Err(Error::Config(format!(
            "checkpoint was trained on {}, config names {env}",
            info.env
        )));
    }
    Ok(AgentInfo {
        env,
        algorithm: info.algorithm,
        defense: info.defense,
        train_attack: config.train_attack,
        seed: info.seed,
        checkpoint: checkpoint.display().to_string(),
    })
}

/// Evaluates the deployed network of a checkpoint under `attacks`.
pub fn evaluate_checkpoint(config: &ExperimentConfig, checkpoint: &Path, attacks: &[AttackSpec]) -> Result<ResultFile> {
    let ck = Checkpoint::load(checkpoint)?;
    let (info, net) = deployed_network(&ck)?;
    let agent = agent_info(config, &info, checkpoint)?;
    let rows = evaluate(agent.env, Player::Network(&net), attacks, &config.evaluation)?;
    Ok(ResultFile::Evaluation { agent, rows })
}

/// Certifies the deployed network of a checkpoint on clean episodes.
pub fn certify_checkpoint(config: &ExperimentConfig, checkpoint: &Path) -> Result<ResultFile> {
    let ck = Checkpoint::load(checkpoint)?;
    let (info, net) = deployed_network(&ck)?;
    let agent = agent_info(config, &info, checkpoint)?;
    let summary = certify(agent.env, &net, &config.evaluation)?;
    Ok(ResultFile::Certification { agent, summary })
}

/// Writes `result` as `<stem>.json` plus a rendered `<stem>.txt`.
pub fn write_result(dir: &Path, stem: &str, result: &ResultFile) -> Result<(PathBuf, PathBuf)> {
    let json = dir.join(format!("{stem}.json"));
    let text = dir.join(format!("{stem}.txt"));
    write(&json, result.to_json().as_bytes())?;
    let rendered = render_text(&report::build(std::slice::from_ref(result))?);
    write(&text, rendered.as_bytes())?;
    Ok((json, text))
}
