//! Line-delimited episode log: one header line, then one JSON record per event.

use std::io::{BufRead, Write};

use nalgebra::Point3;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::control::{ApproachOutcome, ControlStep};
use crate::detect::PruningCandidate;
use crate::mission::{StageTiming, TimingMode};
use crate::world::{BranchClass, CutOutcome};

pub const LOG_SCHEMA: &str = "prune-episode-log";
pub const LOG_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum LogError {
    #[error("line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error("line {line}: {reason}")]
    Invalid { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub schema: String,
    pub version: u32,
    pub seed: u64,
    pub n_targets: usize,
    pub timing: StageTiming,
    pub timing_mode: TimingMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FpCategory {
    Spur,
    Wire,
    SpuriousLeader,
    /// Side-branch candidate whose target was already claimed.
    Duplicate,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FnCause {
    LeaderMissed,
    IntersectionMissed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Tp { target_branch_id: u32 },
    Fp { category: FpCategory },
}

impl Verdict {
    pub fn is_tp(&self) -> bool {
        matches!(self, Verdict::Tp { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    Waypoint {
        index: usize,
        rail: f64,
        pose_index: usize,
        plan_ok: bool,
        /// Rail travel from the previous waypoint, m.
        rail_move_m: f64,
    },
    View {
        view_id: u64,
        waypoint: usize,
        offset: bool,
        instances: usize,
        /// Side branches rendered together with their parent leader.
        visible: Vec<u32>,
        /// Of `visible`, those whose leader instance was lost to noise.
        leader_missed: Vec<u32>,
        flow_valid_fraction: f64,
    },
    Detection {
        view_id: u64,
        candidate: PruningCandidate,
    },
    Candidate {
        id: usize,
        view_id: u64,
        estimate: Point3<f64>,
        side_source: Option<u32>,
        side_source_class: Option<BranchClass>,
        leader_source: Option<u32>,
        target_pixels: usize,
        #[serde(flatten)]
        verdict: Verdict,
    },
    Skip {
        candidate_id: usize,
        reason: String,
    },
    Plan {
        candidate_id: usize,
        ok: bool,
        displacement_rad: Option<f64>,
        reason: Option<String>,
    },
    ControlStep {
        candidate_id: usize,
        attempt: u32,
        #[serde(flatten)]
        step: ControlStep,
    },
    Cut {
        candidate_id: usize,
        attempt: u32,
        outcome: CutOutcome,
    },
    Attempt {
        candidate_id: usize,
        attempt: u32,
        duration_s: f64,
        outcome: ApproachOutcome,
    },
    Outcome {
        candidate_id: usize,
        tp: bool,
        skipped: bool,
        planning_failed: bool,
        attempts: u32,
        cut: bool,
    },
    Missed {
        branch_id: u32,
        cause: FnCause,
    },
    End {
        total_time_s: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub t: f64,
    #[serde(flatten)]
    pub event: Event,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub header: LogHeader,
    pub records: Vec<Record>,
}

impl EpisodeLog {
    pub fn new(seed: u64, n_targets: usize, timing: StageTiming, timing_mode: TimingMode) -> Self {
        Self {
            header: LogHeader { schema: LOG_SCHEMA.into(), version: LOG_VERSION, seed, n_targets, timing, timing_mode },
            records: Vec::new(),
        }
    }

    pub fn push(&mut self, t: f64, event: Event) {
        self.records.push(Record { t, event });
    }

    pub fn events(&self) -> impl Iterator<Item = &Event> {
        self.records.iter().map(|r| &r.event)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        serde_json::to_writer(&mut w, &self.header)?;
        w.write_all(b"\n")?;
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut v = Vec::new();
        self.write_to(&mut v).expect("writing to memory");
        v
    }

    pub fn sha256_hex(&self) -> String {
        hex_digest(&self.to_bytes())
    }

    /// Parse and validate: schema header, non-decreasing timestamps, and a
    /// terminal outcome for every attempted candidate.
    pub fn read_from<R: BufRead>(r: R) -> Result<Self, LogError> {
        let mut lines = r.lines().enumerate().filter(|(_, l)| l.as_ref().map_or(true, |s| !s.trim().is_empty()));
        let (_, first) = lines.next().ok_or(LogError::Invalid { line: 1, reason: "empty log".into() })?;
        let header: LogHeader = serde_json::from_str(&first?).map_err(|e| LogError::Parse { line: 1, source: e })?;
        if header.schema != LOG_SCHEMA || header.version != LOG_VERSION {
            return Err(LogError::Invalid {
                line: 1,
                reason: format!("unsupported schema {} v{}", header.schema, header.version),
            });
        }
        let mut records: Vec<Record> = Vec::new();
        let mut open: std::collections::BTreeSet<usize> = Default::default();
        for (i, line) in lines {
            let n = i + 1;
            let rec: Record = serde_json::from_str(&line?).map_err(|e| LogError::Parse { line: n, source: e })?;
            if let Some(prev) = records.last() {
                if rec.t < prev.t {
                    return Err(LogError::Invalid { line: n, reason: format!("timestamp {} before {}", rec.t, prev.t) });
                }
            }
            match &rec.event {
                Event::Attempt { candidate_id, .. } | Event::Plan { candidate_id, .. } => {
                    open.insert(*candidate_id);
                }
                Event::Outcome { candidate_id, .. } => {
                    open.remove(candidate_id);
                }
                _ => {}
            }
            records.push(rec);
        }
        if let Some(id) = open.first() {
            return Err(LogError::Invalid {
                line: records.len() + 1,
                reason: format!("candidate {id} has no outcome record"),
            });
        }
        Ok(Self { header, records })
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
