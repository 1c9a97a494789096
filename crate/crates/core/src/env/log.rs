//! Episode logs: one JSONL file per episode capturing everything needed to
//! replay it bit-for-bit — scenario hash, initial state, seed, and the exact
//! action applied each frame — plus per-frame state hashes for verification.

use super::grid::InitialState;
use super::Action;
use crate::error::{CoreError, Result};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeHeader {
    pub scenario: String,
    /// Scenario config hash, hex-encoded; replay refuses mismatches.
    pub config_hash: String,
    pub episode_id: String,
    pub seed: u64,
    pub policy_id: String,
    pub initial: InitialState,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame: usize,
    pub action: Action,
    pub joints: Vec<f64>,
    /// Running trajectory hash after this frame.
    pub hash: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeFooter {
    pub success: bool,
    pub truncated: bool,
    pub frames: usize,
    pub trajectory_hash: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Record {
    Header(EpisodeHeader),
    Frame(FrameRecord),
    Footer(EpisodeFooter),
}

pub struct EpisodeLogWriter<W: Write> {
    out: BufWriter<W>,
}

impl EpisodeLogWriter<std::fs::File> {
    pub fn create<P: AsRef<Path>>(path: P, header: &EpisodeHeader) -> Result<Self> {
        let file = std::fs::File::create(&path).map_err(|e| CoreError::Io {
            path: path.as_ref().display().to_string(),
            source: e,
        })?;
        let mut w = Self { out: BufWriter::new(file) };
        w.write(&Record::Header(header.clone()))?;
        Ok(w)
    }
}

impl<W: Write> EpisodeLogWriter<W> {
    fn write(&mut self, record: &Record) -> Result<()> {
        let line = serde_json::to_string(record).map_err(|e| CoreError::Invalid(e.to_string()))?;
        writeln!(self.out, "{line}").map_err(|e| CoreError::Io {
            path: "<episode log>".into(),
            source: e,
        })
    }

    pub fn frame(&mut self, record: FrameRecord) -> Result<()> {
        self.write(&Record::Frame(record))
    }

    pub fn finish(mut self, footer: EpisodeFooter) -> Result<()> {
        self.write(&Record::Footer(footer))?;
        self.out.flush().map_err(|e| CoreError::Io {
            path: "<episode log>".into(),
            source: e,
        })
    }
}

#[derive(Debug, Clone)]
pub struct EpisodeLog {
    pub header: EpisodeHeader,
    pub frames: Vec<FrameRecord>,
    pub footer: Option<EpisodeFooter>,
}

impl EpisodeLog {
    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        let path_str = path.as_ref().display().to_string();
        let file = std::fs::File::open(&path).map_err(|e| CoreError::Io {
            path: path_str.clone(),
            source: e,
        })?;
        let mut header = None;
        let mut frames = Vec::new();
        let mut footer = None;
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| CoreError::Io {
                path: path_str.clone(),
                source: e,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let record: Record =
                serde_json::from_str(&line).map_err(|e| CoreError::Parse {
                    path: path_str.clone(),
                    line: lineno + 1,
                    msg: e.to_string(),
                })?;
            match record {
                Record::Header(h) => header = Some(h),
                Record::Frame(f) => frames.push(f),
                Record::Footer(f) => footer = Some(f),
            }
        }
        let header = header.ok_or_else(|| CoreError::Parse {
            path: path_str,
            line: 1,
            msg: "missing episode header".into(),
        })?;
        Ok(Self { header, frames, footer })
    }
}

pub fn hash_hex(h: u64) -> String {
    format!("{h:016x}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::scenario::PlanarPose;
    use crate::env::ActionPayload;

    #[test]
    fn log_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ep000.jsonl");
        let header = EpisodeHeader {
            scenario: "demo".into(),
            config_hash: hash_hex(0xdeadbeef),
            episode_id: "ep000".into(),
            seed: 7,
            policy_id: "scripted".into(),
            initial: InitialState {
                poses: vec![PlanarPose { x: 0.01, y: -0.02, theta: 0.1 }],
                episode_id: "ep000".into(),
            },
        };
        let mut w = EpisodeLogWriter::create(&path, &header).unwrap();
        for f in 0..3 {
            w.frame(FrameRecord {
                frame: f,
                action: Action {
                    payload: ActionPayload::PlanarTarget { x: f as f64, y: 0.0 },
                    gripper: 1.0,
                },
                joints: vec![0.0, 0.1],
                hash: hash_hex(f as u64),
            })
            .unwrap();
        }
        w.finish(EpisodeFooter {
            success: true,
            truncated: false,
            frames: 3,
            trajectory_hash: hash_hex(99),
        })
        .unwrap();

        let log = EpisodeLog::load(&path).unwrap();
        assert_eq!(log.header.episode_id, "ep000");
        assert_eq!(log.frames.len(), 3);
        assert_eq!(log.frames[2].hash, hash_hex(2));
        let footer = log.footer.unwrap();
        assert!(footer.success && !footer.truncated);
        assert_eq!(footer.trajectory_hash, hash_hex(99));
    }

    #[test]
    fn missing_header_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, "").unwrap();
        assert!(matches!(
            EpisodeLog::load(&path),
            Err(CoreError::Parse { .. })
        ));
    }
}
