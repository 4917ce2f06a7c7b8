//! Line-delimited JSON run logs. The first line is a header carrying
//! everything needed to re-execute the logged episodes.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use graphprune_core::{SimConfig, TerminalCause};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TrainError};
use crate::rollout::DecodeSpec;

pub const LOG_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format: u32,
    /// Producer, e.g. `train` or `eval:random`.
    pub source: String,
    pub sim: SimConfig,
    pub decode: DecodeSpec,
    /// Producer-specific settings.
    pub settings: serde_json::Value,
}

/// How a logged step chose its prune set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Decision {
    Skip,
    Random,
    Gmm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub global_step: u64,
    pub worker: usize,
    pub episode: u64,
    pub episode_seed: u64,
    pub step: u32,
    pub decision: Decision,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_action: Option<Vec<f64>>,
    pub reward: f64,
    pub coverage: f64,
    pub tree_size: usize,
    pub pruned: usize,
    pub done: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cause: Option<TerminalCause>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub global_step: u64,
    pub worker: usize,
    pub episode: u64,
    pub episode_seed: u64,
    pub length: u32,
    pub total_reward: f64,
    pub mean_reward: f64,
    pub final_coverage: f64,
    pub final_tree_size: usize,
    pub cause: TerminalCause,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub global_step: u64,
    pub update_idx: u64,
    pub value_loss: f64,
    pub policy_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub epochs: usize,
    pub steps_applied: usize,
    pub early_stopped: bool,
    pub grad_norm: f64,
    /// Mean per-step reward of episodes that finished in this window.
    pub mean_episode_reward: Option<f64>,
    /// Mean final coverage of episodes that finished in this window.
    pub mean_coverage: Option<f64>,
    pub episodes: usize,
    pub tree_size_mean: f64,
    pub prune_count_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Record {
    Header(Header),
    Step(StepRecord),
    Episode(EpisodeRecord),
    Update(UpdateRecord),
}

impl Record {
    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("record serialises");
        s.push('\n');
        s
    }
}

/// Appends records, tracking the byte length of everything after the header.
pub struct LogWriter {
    path: PathBuf,
    out: BufWriter<File>,
    body_len: u64,
}

impl LogWriter {
    pub fn create(path: &Path, header: &Header) -> Result<Self> {
        let file = File::create(path).map_err(|e| TrainError::io(path, e))?;
        let mut w = Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
            body_len: 0,
        };
        w.out
            .write_all(Record::Header(header.clone()).to_line().as_bytes())
            .map_err(|e| TrainError::io(path, e))?;
        Ok(w)
    }

    /// Rewrites the header and keeps the first `body_len` bytes of the
    /// existing body, discarding anything logged after that point.
    pub fn resume(path: &Path, header: &Header, body_len: u64) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| TrainError::io(path, e))?;
        let corrupt = |m: &str| TrainError::Corrupt {
            path: path.to_path_buf(),
            message: m.to_string(),
        };
        let split = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| corrupt("missing header line"))? + 1;
        let body = &bytes[split..];
        if (body.len() as u64) < body_len {
            return Err(corrupt("log is shorter than the checkpoint expects"));
        }
        let body = &body[..body_len as usize];
        if !body.is_empty() && body.last() != Some(&b'\n') {
            return Err(corrupt("checkpoint offset is not on a record boundary"));
        }
        let mut contents = Record::Header(header.clone()).to_line().into_bytes();
        contents.extend_from_slice(body);
        graphprune_policy::checkpoint::write_atomic(path, &contents)?;
        let file = OpenOptions::new().append(true).open(path).map_err(|e| TrainError::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
            body_len,
        })
    }

    pub fn write(&mut self, record: &Record) -> Result<()> {
        let line = record.to_line();
        self.out
            .write_all(line.as_bytes())
            .map_err(|e| TrainError::io(&self.path, e))?;
        self.body_len += line.len() as u64;
        Ok(())
    }

    /// Flushes and returns the body length written so far.
    pub fn flush(&mut self) -> Result<u64> {
        self.out.flush().map_err(|e| TrainError::io(&self.path, e))?;
        Ok(self.body_len)
    }
}

/// Reads every record; the first must be a header.
pub fn read_log(path: &Path) -> Result<(Header, Vec<Record>)> {
    let file = File::open(path).map_err(|e| TrainError::io(path, e))?;
    let mut header = None;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| TrainError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| TrainError::Corrupt {
            path: path.to_path_buf(),
            message: format!("line {}: {e}", i + 1),
        })?;
        match (i, rec) {
            (0, Record::Header(h)) => header = Some(h),
            (0, _) => {
                return Err(TrainError::Corrupt {
                    path: path.to_path_buf(),
                    message: "first line is not a header".into(),
                })
            }
            (_, r) => records.push(r),
        }
    }
    let header = header.ok_or_else(|| TrainError::Corrupt {
        path: path.to_path_buf(),
        message: "empty log".into(),
    })?;
    if header.format != LOG_FORMAT {
        return Err(TrainError::Corrupt {
            path: path.to_path_buf(),
            message: format!("unsupported log format {}", header.format),
        });
    }
    Ok((header, records))
}

/// Update records in order.
pub fn updates(records: &[Record]) -> Vec<UpdateRecord> {
    records
        .iter()
        .filter_map(|r| match r {
            Record::Update(u) => Some(u.clone()),
            _ => None,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header() -> Header {
        Header {
            format: LOG_FORMAT,
            source: "test".into(),
            sim: SimConfig::default(),
            decode: DecodeSpec {
                components: 2,
                gated: false,
                sigma_min: 1.0,
            },
            settings: serde_json::Value::Null,
        }
    }

    fn step(i: u64, reward: f64) -> Record {
        Record::Step(StepRecord {
            global_step: i,
            worker: 0,
            episode: 0,
            episode_seed: 9,
            step: i as u32,
            decision: Decision::Gmm,
            raw_action: Some(vec![0.1 + i as f64, -1.0 / 3.0]),
            reward,
            coverage: 0.25,
            tree_size: 7,
            pruned: 1,
            done: false,
            cause: None,
        })
    }

    #[test]
    fn records_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let mut w = LogWriter::create(&path, &header()).unwrap();
        let recs = vec![step(0, 0.1 + 0.2), step(1, -1e-300)];
        for r in &recs {
            w.write(r).unwrap();
        }
        w.flush().unwrap();
        let (h, back) = read_log(&path).unwrap();
        assert_eq!(h, header());
        assert_eq!(back, recs);
    }

    #[test]
    fn resume_truncates_to_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let mut w = LogWriter::create(&path, &header()).unwrap();
        w.write(&step(0, 1.0)).unwrap();
        let mark = w.flush().unwrap();
        w.write(&step(1, 2.0)).unwrap();
        w.flush().unwrap();
        drop(w);
        let mut h2 = header();
        h2.source = "resumed".into();
        let mut w = LogWriter::resume(&path, &h2, mark).unwrap();
        w.write(&step(5, 3.0)).unwrap();
        w.flush().unwrap();
        let (h, back) = read_log(&path).unwrap();
        assert_eq!(h.source, "resumed");
        assert_eq!(back, vec![step(0, 1.0), step(5, 3.0)]);
        assert!(LogWriter::resume(&path, &h2, 1 << 40).is_err());
        assert!(LogWriter::resume(&path, &h2, 3).is_err());
    }

    #[test]
    fn garbage_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        std::fs::write(&path, "{\"kind\":\"step\"}\n").unwrap();
        assert!(read_log(&path).is_err());
        std::fs::write(&path, "not json\n").unwrap();
        assert!(matches!(read_log(&path), Err(TrainError::Corrupt { .. })));
    }
}
