//! Step events and the `.trial.jsonl` dataset format.
//!
//! A trial file is JSON Lines: the first line is a header
//! `{"trial_id": ..., "metadata": {...}}`, every following line is one step
//! event. Signals are stored as a flat row-major array of
//! `WINDOW_LEN * CHANNELS` numbers and poses as `{"t":[x,y,z],"q":[w,x,y,z]}`.
//! Floats are written in their shortest round-trip form, so a write/read
//! cycle is bit-exact.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::Pose;

/// Samples per touchdown window.
pub const WINDOW_LEN: usize = 160;
/// Force x/y/z then torque x/y/z.
pub const CHANNELS: usize = 6;

/// A force/torque window, row-major `rows × channels`.
#[derive(Clone, Debug, PartialEq)]
pub struct HapticSignal {
    rows: usize,
    channels: usize,
    data: Vec<f64>,
}

impl HapticSignal {
    /// A standard `WINDOW_LEN × CHANNELS` window.
    pub fn new(data: Vec<f64>) -> std::result::Result<Self, String> {
        Self::with_shape(WINDOW_LEN, CHANNELS, data)
    }

    /// A window of arbitrary shape; used by reduced networks in tests and
    /// experiments.
    pub fn with_shape(rows: usize, channels: usize, data: Vec<f64>) -> std::result::Result<Self, String> {
        if rows == 0 || channels == 0 {
            return Err("signal must have at least one row and one channel".into());
        }
        if data.len() != rows * channels {
            return Err(format!(
                "signal has {} values ({} rows of {}), expected {} rows × {} channels",
                data.len(),
                data.len() / channels,
                channels,
                rows,
                channels
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(format!(
                "signal value at row {} channel {} is not finite",
                i / channels,
                i % channels
            ));
        }
        Ok(Self { rows, channels, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.channels..(r + 1) * self.channels]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepEvent {
    pub step_id: u64,
    /// Seconds; strictly increasing with `step_id` within a trial.
    pub timestamp: f64,
    /// 0..=3. Carried through, all feet are treated alike.
    pub foot_id: u8,
    pub signal: HapticSignal,
    /// Foot contact position in the base frame.
    pub foothold_base: Vector3<f64>,
    pub odom_pose: Pose,
    pub truth_pose: Option<Pose>,
    /// Foot contact position in the world frame, from the reference
    /// localization. Required for training and map building.
    pub foothold_world_truth: Option<Vector3<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trial {
    pub trial_id: String,
    pub events: Vec<StepEvent>,
    pub metadata: BTreeMap<String, String>,
}

impl Trial {
    /// Checks every trial invariant.
    pub fn validate(&self) -> Result<()> {
        if self.events.is_empty() {
            return Err(Error::EmptyTrial);
        }
        let mut prev: Option<&StepEvent> = None;
        for ev in &self.events {
            validate_event(ev)?;
            if let Some(p) = prev {
                if ev.step_id <= p.step_id {
                    return Err(Error::InvalidStep {
                        step_id: ev.step_id,
                        msg: format!("step_id not increasing (previous {})", p.step_id),
                    });
                }
                if ev.timestamp <= p.timestamp {
                    return Err(Error::InvalidStep {
                        step_id: ev.step_id,
                        msg: format!("timestamp {} not after previous {}", ev.timestamp, p.timestamp),
                    });
                }
            }
            prev = Some(ev);
        }
        Ok(())
    }
}

fn validate_event(ev: &StepEvent) -> Result<()> {
    let bad = |msg: String| Error::InvalidStep {
        step_id: ev.step_id,
        msg,
    };
    if ev.signal.rows() != WINDOW_LEN || ev.signal.channels() != CHANNELS {
        return Err(bad(format!(
            "signal is {}×{}, expected {}×{}",
            ev.signal.rows(),
            ev.signal.channels(),
            WINDOW_LEN,
            CHANNELS
        )));
    }
    if ev.foot_id > 3 {
        return Err(bad(format!("foot_id {} outside 0..=3", ev.foot_id)));
    }
    if !ev.timestamp.is_finite() {
        return Err(bad("timestamp is not finite".into()));
    }
    if !ev.foothold_base.iter().all(|v| v.is_finite()) {
        return Err(bad("foothold_base is not finite".into()));
    }
    if ev.truth_pose.is_some() && ev.foothold_world_truth.is_none() {
        return Err(bad("truth_pose present without foothold_world_truth".into()));
    }
    if let Some(f) = &ev.foothold_world_truth {
        if !f.iter().all(|v| v.is_finite()) {
            return Err(bad("foothold_world_truth is not finite".into()));
        }
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderRecord {
    trial_id: String,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseRecord {
    t: [f64; 3],
    q: [f64; 4],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EventRecord {
    step_id: u64,
    timestamp: f64,
    foot_id: u8,
    signal: Vec<f64>,
    foothold_base: [f64; 3],
    odom_pose: PoseRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    truth_pose: Option<PoseRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    foothold_world_truth: Option<[f64; 3]>,
}

impl From<&Pose> for PoseRecord {
    fn from(p: &Pose) -> Self {
        PoseRecord {
            t: p.t_array(),
            q: p.q_array(),
        }
    }
}

impl EventRecord {
    fn into_event(self) -> Result<StepEvent> {
        let step_id = self.step_id;
        let bad = |msg: String| Error::InvalidStep { step_id, msg };
        let signal = HapticSignal::new(self.signal).map_err(bad)?;
        let odom_pose =
            Pose::from_parts(self.odom_pose.t, self.odom_pose.q).map_err(|e| bad(format!("odom_pose: {e}")))?;
        let truth_pose = self
            .truth_pose
            .map(|p| Pose::from_parts(p.t, p.q).map_err(|e| bad(format!("truth_pose: {e}"))))
            .transpose()?;
        Ok(StepEvent {
            step_id,
            timestamp: self.timestamp,
            foot_id: self.foot_id,
            signal,
            foothold_base: Vector3::from(self.foothold_base),
            odom_pose,
            truth_pose,
            foothold_world_truth: self.foothold_world_truth.map(Vector3::from),
        })
    }

    fn from_event(ev: &StepEvent) -> Self {
        EventRecord {
            step_id: ev.step_id,
            timestamp: ev.timestamp,
            foot_id: ev.foot_id,
            signal: ev.signal.as_slice().to_vec(),
            foothold_base: [ev.foothold_base.x, ev.foothold_base.y, ev.foothold_base.z],
            odom_pose: (&ev.odom_pose).into(),
            truth_pose: ev.truth_pose.as_ref().map(Into::into),
            foothold_world_truth: ev.foothold_world_truth.map(|v| [v.x, v.y, v.z]),
        }
    }
}

/// Parses a trial from any reader in the `.trial.jsonl` format.
pub fn parse_trial<R: BufRead>(reader: R) -> Result<Trial> {
    let mut header: Option<HeaderRecord> = None;
    let mut events = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            msg: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |e: serde_json::Error| Error::Parse {
            line: lineno,
            msg: e.to_string(),
        };
        if header.is_none() {
            header = Some(serde_json::from_str(&line).map_err(parse_err)?);
            continue;
        }
        let rec: EventRecord = serde_json::from_str(&line).map_err(parse_err)?;
        events.push(rec.into_event()?);
    }
    let header = header.ok_or(Error::EmptyTrial)?;
    let trial = Trial {
        trial_id: header.trial_id,
        events,
        metadata: header.metadata,
    };
    trial.validate()?;
    Ok(trial)
}

pub fn read_trial(path: impl AsRef<Path>) -> Result<Trial> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_trial(BufReader::new(file))
}

/// Serializes a trial into the `.trial.jsonl` format.
pub fn format_trial<W: Write>(trial: &Trial, mut w: W) -> std::io::Result<()> {
    let header = HeaderRecord {
        trial_id: trial.trial_id.clone(),
        metadata: trial.metadata.clone(),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for ev in &trial.events {
        serde_json::to_writer(&mut w, &EventRecord::from_event(ev))?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn write_trial(trial: &Trial, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    trial.validate()?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    format_trial(trial, BufWriter::new(file)).map_err(|e| Error::io(path, e))
}
