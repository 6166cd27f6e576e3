//! Time-stamped pose estimates paired with ground truth.
//!
//! CSV columns: `timestamp, step_id, est_tx, est_ty, est_tz, est_qw, est_qx,
//! est_qy, est_qz, truth_tx, …, truth_qz, ess`. Truth and ESS fields are
//! left empty when unknown.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::Pose;
use crate::signal_io::Trial;

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub timestamp: f64,
    pub step_id: u64,
    pub estimate: Pose,
    pub truth: Option<Pose>,
    /// Effective sample size of the particle set after the measurement
    /// update, before any resampling.
    pub ess: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrajectoryLog {
    pub records: Vec<TrajectoryRecord>,
}

#[derive(Serialize, Deserialize)]
struct Row {
    timestamp: f64,
    step_id: u64,
    est_tx: f64,
    est_ty: f64,
    est_tz: f64,
    est_qw: f64,
    est_qx: f64,
    est_qy: f64,
    est_qz: f64,
    truth_tx: Option<f64>,
    truth_ty: Option<f64>,
    truth_tz: Option<f64>,
    truth_qw: Option<f64>,
    truth_qx: Option<f64>,
    truth_qy: Option<f64>,
    truth_qz: Option<f64>,
    ess: Option<f64>,
}

impl From<&TrajectoryRecord> for Row {
    fn from(r: &TrajectoryRecord) -> Self {
        let [est_tx, est_ty, est_tz] = r.estimate.t_array();
        let [est_qw, est_qx, est_qy, est_qz] = r.estimate.q_array();
        let t = r.truth.map(|p| p.t_array());
        let q = r.truth.map(|p| p.q_array());
        Row {
            timestamp: r.timestamp,
            step_id: r.step_id,
            est_tx,
            est_ty,
            est_tz,
            est_qw,
            est_qx,
            est_qy,
            est_qz,
            truth_tx: t.map(|v| v[0]),
            truth_ty: t.map(|v| v[1]),
            truth_tz: t.map(|v| v[2]),
            truth_qw: q.map(|v| v[0]),
            truth_qx: q.map(|v| v[1]),
            truth_qy: q.map(|v| v[2]),
            truth_qz: q.map(|v| v[3]),
            ess: r.ess,
        }
    }
}

impl Row {
    fn into_record(self, line: usize) -> Result<TrajectoryRecord> {
        let bad = |msg: String| Error::Parse { line, msg };
        let estimate = Pose::from_parts(
            [self.est_tx, self.est_ty, self.est_tz],
            [self.est_qw, self.est_qx, self.est_qy, self.est_qz],
        )
        .map_err(bad)?;
        let truth_fields = [
            self.truth_tx,
            self.truth_ty,
            self.truth_tz,
            self.truth_qw,
            self.truth_qx,
            self.truth_qy,
            self.truth_qz,
        ];
        let truth = match truth_fields {
            [Some(tx), Some(ty), Some(tz), Some(qw), Some(qx), Some(qy), Some(qz)] => {
                Some(Pose::from_parts([tx, ty, tz], [qw, qx, qy, qz]).map_err(bad)?)
            }
            [None, None, None, None, None, None, None] => None,
            _ => return Err(bad("truth pose is partially filled".into())),
        };
        Ok(TrajectoryRecord {
            timestamp: self.timestamp,
            step_id: self.step_id,
            estimate,
            truth,
            ess: self.ess,
        })
    }
}

impl TrajectoryLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

pub fn format_log<W: Write>(log: &TrajectoryLog, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in &log.records {
        wr.serialize(Row::from(r)).map_err(|e| Error::Format(e.to_string()))?;
    }
    wr.flush().map_err(|e| Error::Format(e.to_string()))
}

pub fn parse_log<R: Read>(r: R) -> Result<TrajectoryLog> {
    let mut rd = csv::Reader::from_reader(r);
    let mut records = Vec::new();
    for (i, row) in rd.deserialize::<Row>().enumerate() {
        // header is line 1
        let line = i + 2;
        let row = row.map_err(|e| Error::Parse {
            line,
            msg: e.to_string(),
        })?;
        records.push(row.into_record(line)?);
    }
    Ok(TrajectoryLog { records })
}

pub fn write_log(log: &TrajectoryLog, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    format_log(log, std::io::BufWriter::new(f))
}

pub fn read_log(path: impl AsRef<Path>) -> Result<TrajectoryLog> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_log(std::io::BufReader::new(f))
}

/// Dead-reckoning trajectory: odometry re-anchored at the first ground-truth
/// pose, `truth_0 ∘ odom_0⁻¹ ∘ odom_k`. Falls back to the raw odometry when
/// the first event has no truth.
pub fn odometry_log(trial: &Trial) -> TrajectoryLog {
    let first = &trial.events[0];
    let anchor = match first.truth_pose {
        Some(t) => t.compose(&first.odom_pose.inverse()),
        None => Pose::identity(),
    };
    let records = trial
        .events
        .iter()
        .map(|ev| TrajectoryRecord {
            timestamp: ev.timestamp,
            step_id: ev.step_id,
            estimate: anchor.compose(&ev.odom_pose),
            truth: ev.truth_pose,
            ess: None,
        })
        .collect();
    TrajectoryLog { records }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn sample() -> TrajectoryLog {
        let records = (0..5)
            .map(|k| TrajectoryRecord {
                timestamp: 0.1 * k as f64 + 1.0 / 3.0,
                step_id: k,
                estimate: Pose::from_translation_yaw(Vector3::new(k as f64 * 0.7, -0.1, 0.45), 0.3 * k as f64),
                truth: (k % 2 == 0).then(|| Pose::from_translation_yaw(Vector3::new(k as f64, 0.0, 0.4), 0.1)),
                ess: (k != 3).then_some(123.456 + k as f64 / 7.0),
            })
            .collect();
        TrajectoryLog { records }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let log = sample();
        let mut buf = Vec::new();
        format_log(&log, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("timestamp,step_id,est_tx,"));
        assert_eq!(parse_log(&buf[..]).unwrap(), log);
    }

    #[test]
    fn partial_truth_is_rejected() {
        let log = sample();
        let mut buf = Vec::new();
        format_log(&log, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let mut fields: Vec<&str> = lines[1].split(',').collect();
        fields[9] = "";
        lines[1] = fields.join(",");
        let err = parse_log(lines.join("\n").as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }
}
