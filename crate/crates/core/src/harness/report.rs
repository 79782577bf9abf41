use std::fmt::Write;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::{mean_std, ResultFile};
use crate::error::{Error, Result};

const TOLERANCE: f64 = 1e-9;

/// Scores of one agent under one attack, pooled over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalLine {
    pub env: String,
    pub agent: String,
    pub attack: String,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
    pub seeds: Vec<u64>,
}

/// Certified radii of one agent, pooled over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertLine {
    pub env: String,
    pub agent: String,
    /// Mean clean score of the certification episodes.
    pub score: f64,
    pub mean: f64,
    pub std: f64,
    pub mean_x255: f64,
    pub std_x255: f64,
    pub states: usize,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub evaluation: Vec<EvalLine>,
    pub certification: Vec<CertLine>,
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= TOLERANCE * a.abs().max(b.abs()).max(1.0)
}

/// Checks that every summary number follows from the per-episode records.
fn check(result: &ResultFile) -> std::result::Result<(), String> {
    match result {
        ResultFile::Evaluation { rows, .. } => {
            for row in rows {
                let scores: Vec<f64> = row.episodes.iter().map(|e| e.score).collect();
                let (m, s) = mean_std(&scores);
                if row.n != scores.len() || !close(m, row.mean) || !close(s, row.std) {
                    return Err(format!("summary of attack {} does not match its episodes", row.label));
                }
            }
        }
        ResultFile::Certification { summary, .. } => {
            for e in &summary.episodes {
                if !close(mean_std(&e.radii).0, e.mean) || !close(e.mean * 255.0, e.mean_x255) {
                    return Err(format!("certification episode {} is inconsistent", e.seed));
                }
            }
            let all: Vec<f64> = summary.episodes.iter().flat_map(|e| e.radii.iter().copied()).collect();
            let (m, s) = mean_std(&all);
            if all.len() != summary.states
                || !close(m, summary.mean)
                || !close(s, summary.std)
                || !close(m * 255.0, summary.mean_x255)
                || !close(s * 255.0, summary.std_x255)
            {
                return Err("certification summary does not match its per-state radii".into());
            }
        }
    }
    Ok(())
}

/// Pools result files by agent and attack, in order of first appearance.
pub(crate) fn build(results: &[ResultFile]) -> Result<Report> {
    struct EvalAcc {
        key: (String, String, String),
        scores: Vec<f64>,
        seeds: Vec<u64>,
    }
    struct CertAcc {
        key: (String, String),
        radii: Vec<f64>,
        scores: Vec<f64>,
        seeds: Vec<u64>,
    }
    let mut evals: Vec<EvalAcc> = Vec::new();
    let mut certs: Vec<CertAcc> = Vec::new();
    for r in results {
        let agent = r.agent();
        let (env, label) = (agent.env.to_string(), agent.label());
        match r {
            ResultFile::Evaluation { rows, .. } => {
                for row in rows {
                    let key = (env.clone(), label.clone(), row.label.clone());
                    let idx = match evals.iter().position(|a| a.key == key) {
                        Some(i) => i,
                        None => {
                            evals.push(EvalAcc {
                                key,
                                scores: Vec::new(),
                                seeds: Vec::new(),
                            });
                            evals.len() - 1
                        }
                    };
                    let acc = &mut evals[idx];
                    acc.scores.extend(row.episodes.iter().map(|e| e.score));
                    if !acc.seeds.contains(&agent.seed) {
                        acc.seeds.push(agent.seed);
                    }
                }
            }
            ResultFile::Certification { summary, .. } => {
                let key = (env, label);
                let idx = match certs.iter().position(|a| a.key == key) {
                    Some(i) => i,
                    None => {
                        certs.push(CertAcc {
                            key,
                            radii: Vec::new(),
                            scores: Vec::new(),
                            seeds: Vec::new(),
                        });
                        certs.len() - 1
                    }
                };
                let acc = &mut certs[idx];
                for e in &summary.episodes {
                    acc.radii.extend(&e.radii);
                    acc.scores.push(e.score);
                }
                if !acc.seeds.contains(&agent.seed) {
                    acc.seeds.push(agent.seed);
                }
            }
        }
    }
    let evaluation = evals
        .into_iter()
        .map(|a| {
            let (mean, std) = mean_std(&a.scores);
            EvalLine {
                env: a.key.0,
                agent: a.key.1,
                attack: a.key.2,
                mean,
                std,
                n: a.scores.len(),
                seeds: a.seeds,
            }
        })
        .collect();
    let certification = certs
        .into_iter()
        .map(|a| {
            let (mean, std) = mean_std(&a.radii);
            CertLine {
                env: a.key.0,
                agent: a.key.1,
                score: mean_std(&a.scores).0,
                mean,
                std,
                mean_x255: mean * 255.0,
                std_x255: std * 255.0,
                states: a.radii.len(),
                seeds: a.seeds,
            }
        })
        .collect();
    Ok(Report {
        evaluation,
        certification,
    })
}

/// Loads, checks and pools result files. Errors name the offending file.
pub fn report(paths: &[PathBuf]) -> Result<Report> {
    if paths.is_empty() {
        return Err(Error::Argument("no result files given".into()));
    }
    let mut results = Vec::with_capacity(paths.len());
    for path in paths {
        let r = ResultFile::load(path)?;
        check(&r).map_err(|m| Error::Format(format!("{}: {m}", path.display())))?;
        results.push(r);
    }
    build(&results)
}

/// Plain-text tables of a report.
pub fn render_text(report: &Report) -> String {
    let mut out = String::new();
    if !report.evaluation.is_empty() {
        let _ = writeln!(out, "Scores under test attacks (mean ± sample std over n episodes)");
        let _ = writeln!(
            out,
            "{:<9} {:<40} {:<24} {:>10} {:>9} {:>5}",
            "env", "agent", "attack", "mean", "std", "n"
        );
        for l in &report.evaluation {
            let _ = writeln!(
                out,
                "{:<9} {:<40} {:<24} {:>10.3} {:>9.3} {:>5}",
                l.env, l.agent, l.attack, l.mean, l.std, l.n
            );
        }
    }
    if !report.certification.is_empty() {
        if !out.is_empty() {
            out.push('\n');
        }
        let _ = writeln!(out, "Certified radius ε_max over visited states (×255 = pixel intensity steps)");
        let _ = writeln!(
            out,
            "{:<9} {:<40} {:>9} {:>12} {:>12} {:>10} {:>10} {:>7}",
            "env", "agent", "score", "eps_max", "std", "x255", "std x255", "states"
        );
        for l in &report.certification {
            let _ = writeln!(
                out,
                "{:<9} {:<40} {:>9.3} {:>12.6} {:>12.6} {:>10.4} {:>10.4} {:>7}",
                l.env, l.agent, l.score, l.mean, l.std, l.mean_x255, l.std_x255, l.states
            );
        }
    }
    out
}
