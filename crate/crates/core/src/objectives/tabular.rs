use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{check_fidelity, Backend, Scored};
use crate::error::{Error, Result};
use crate::space::{ConfigText, Configuration, SearchSpaceSpec};

/// One line of a tabular benchmark file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TabularRecord {
    pub config: ConfigText,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<f64>,
}

/// Precomputed scores keyed by canonical configuration text.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TabularBenchmark {
    records: HashMap<String, (f64, Option<f64>)>,
}

impl TabularBenchmark {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Insert a record; returns `false` if the key was already present.
    pub fn insert(&mut self, config: &ConfigText, score: f64, cost: Option<f64>) -> bool {
        let key = config.canonical();
        if self.records.contains_key(&key) {
            return false;
        }
        self.records.insert(key, (score, cost));
        true
    }

    pub fn get(&self, config: &Configuration) -> Option<(f64, Option<f64>)> {
        self.records.get(&config.canonical()).copied()
    }

    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self> {
        let mut bench = Self::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let record: TabularRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: lineno,
                message: e.to_string(),
            })?;
            if !bench.insert(&record.config, record.score, record.cost) {
                return Err(Error::DuplicateKey {
                    line: lineno,
                    key: record.config.canonical(),
                });
            }
        }
        Ok(bench)
    }

    /// Records sorted by key, one per line.
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        let mut keys: Vec<&String> = self.records.keys().collect();
        keys.sort();
        for key in keys {
            let (score, cost) = self.records[key];
            let record = TabularRecord {
                config: serde_json::from_str(key)?,
                score,
                cost,
            };
            serde_json::to_writer(&mut out, &record)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

pub fn load_tabular(path: impl AsRef<Path>) -> Result<TabularBenchmark> {
    TabularBenchmark::from_reader(BufReader::new(File::open(path)?))
}

impl Backend for TabularBenchmark {
    fn score(&self, _space: &SearchSpaceSpec, config: &Configuration, fidelity: f64, _seed: u64) -> Result<Scored> {
        check_fidelity(fidelity)?;
        let (score, cost) = self
            .get(config)
            .ok_or_else(|| Error::NotFound(format!("no tabular record for {config}")))?;
        Ok(Scored { score, cost })
    }
}
