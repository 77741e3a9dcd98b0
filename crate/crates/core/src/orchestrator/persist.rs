//! Line-delimited state snapshots and observation logs.
//!
//! A snapshot starts with one header line describing the run, followed by
//! one record per observation. The observation log holds records only and is
//! appended to as evaluations complete. Floats are written with 17
//! significant digits so every value reloads bit-for-bit.

use std::fmt::Write as _;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{RunConfig, RunMode, RunState, Trial};
use crate::error::{Error, Result};
use crate::objectives::Observation;
use crate::space::{ConfigText, SearchSpaceSpec};

pub const STATE_KIND: &str = "peftopt-state";
pub const STATE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateHeader {
    pub kind: String,
    pub version: u32,
    pub mode: RunMode,
    pub space: SearchSpaceSpec,
    pub master_seed: u64,
    pub n_init: usize,
    pub batch_q: usize,
    pub fidelity: f64,
    pub dedup: bool,
}

impl StateHeader {
    pub fn for_run(config: &RunConfig, mode: RunMode) -> Self {
        Self {
            kind: STATE_KIND.into(),
            version: STATE_VERSION,
            mode,
            space: config.space.clone(),
            master_seed: config.master_seed,
            n_init: config.n_init,
            batch_q: config.batch_q,
            fidelity: config.fidelity,
            dedup: config.dedup,
        }
    }

    /// Describe the first setting that differs from `config`, if any.
    pub fn mismatch(&self, config: &RunConfig) -> Option<String> {
        if self.space != config.space {
            return Some(format!(
                "search space differs: state has {:?}, run has {:?}",
                self.space, config.space
            ));
        }
        let checks = [
            (
                "master_seed",
                self.master_seed.to_string(),
                config.master_seed.to_string(),
            ),
            ("n_init", self.n_init.to_string(), config.n_init.to_string()),
            ("batch_q", self.batch_q.to_string(), config.batch_q.to_string()),
            ("fidelity", self.fidelity.to_string(), config.fidelity.to_string()),
            ("dedup", self.dedup.to_string(), config.dedup.to_string()),
        ];
        checks
            .into_iter()
            .find(|(_, a, b)| a != b)
            .map(|(name, a, b)| format!("{name} differs: state has {a}, run has {b}"))
    }
}

/// Wire form of one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialRecord {
    pub config: ConfigText,
    pub score: f64,
    pub cost: f64,
    pub fidelity: f64,
    pub seed: u64,
    pub iteration: usize,
    pub wall_time_s: f64,
}

/// Shortest exponent form carrying 17 significant digits.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn trial_line(trial: &Trial) -> String {
    let o = &trial.observation;
    let mut line = String::with_capacity(160);
    write!(
        line,
        "{{\"config\":{},\"score\":{},\"cost\":{},\"fidelity\":{},\"seed\":{},\"iteration\":{},\"wall_time_s\":{}}}",
        o.config.canonical(),
        format_f64(o.score),
        format_f64(o.cost),
        format_f64(o.fidelity),
        o.seed,
        trial.iteration,
        format_f64(o.wall_time_s)
    )
    .expect("writing to a String");
    line
}

pub fn parse_trial(space: &SearchSpaceSpec, line: &str, lineno: usize) -> Result<Trial> {
    let parse_err = |message: String| Error::Parse { line: lineno, message };
    let record: TrialRecord = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
    let config = space.resolve(&record.config).map_err(|e| parse_err(e.to_string()))?;
    Ok(Trial {
        observation: Observation {
            config,
            score: record.score,
            cost: record.cost,
            fidelity: record.fidelity,
            seed: record.seed,
            wall_time_s: record.wall_time_s,
        },
        iteration: record.iteration,
    })
}

pub fn write_snapshot(path: &Path, header: &StateHeader, state: &RunState) -> Result<()> {
    let mut text = serde_json::to_string(header)?;
    text.push('\n');
    for trial in &state.trials {
        text.push_str(&trial_line(trial));
        text.push('\n');
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, text)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_snapshot(path: &Path) -> Result<(StateHeader, RunState)> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let first = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "empty state file".into(),
    })??;
    let header: StateHeader = serde_json::from_str(&first).map_err(|e| Error::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    if header.kind != STATE_KIND || header.version != STATE_VERSION {
        return Err(Error::Parse {
            line: 1,
            message: format!("unsupported state kind {} v{}", header.kind, header.version),
        });
    }
    header.space.validate()?;
    let mut state = RunState::new(header.master_seed);
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        state.trials.push(parse_trial(&header.space, &line, i + 2)?);
    }
    state.refresh_trajectory();
    Ok((header, state))
}

/// Read a bare observation log (records only, no header).
pub fn read_log(space: &SearchSpaceSpec, path: &Path) -> Result<Vec<Trial>> {
    let reader = BufReader::new(File::open(path)?);
    let mut trials = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        trials.push(parse_trial(space, &line, i + 1)?);
    }
    Ok(trials)
}

pub fn append_log(path: &Path, trials: &[Trial]) -> Result<()> {
    let mut file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut text = String::new();
    for t in trials {
        text.push_str(&trial_line(t));
        text.push('\n');
    }
    file.write_all(text.as_bytes())?;
    file.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_roundtrip() {
        for v in [0.1, 1.0 / 3.0, 72.2, -1e-300, 5e-324, 1.7976931348623157e308, 0.0] {
            let s = format_f64(v);
            let back: f64 = serde_json::from_str(&s).unwrap();
            assert_eq!(back.to_bits(), v.to_bits(), "{s}");
        }
        assert_eq!(format_f64(72.2), "7.2200000000000003e1");
    }
}
