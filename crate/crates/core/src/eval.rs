//! Translational absolute pose error.
//!
//! For each logged estimate `P` with ground truth `G`, the error transform is
//! `T = P⁻¹ G`; `t_3D` is the norm of its translation and `t_2D` the norm of
//! the translation's x/y part. No trajectory alignment is applied.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::pose::Pose;
use crate::trajectory::TrajectoryLog;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Stats {
    pub mean: f64,
    pub rmse: f64,
    pub median: f64,
    pub max: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Stats {
        if values.is_empty() {
            return Stats::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let rmse = (values.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let m = sorted.len();
        let median = if m % 2 == 1 {
            sorted[m / 2]
        } else {
            0.5 * (sorted[m / 2 - 1] + sorted[m / 2])
        };
        Stats {
            mean,
            rmse,
            median,
            max: sorted[m - 1],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ApeSummary {
    pub step_ids: Vec<u64>,
    pub t3d: Vec<f64>,
    pub t2d: Vec<f64>,
    pub t3d_stats: Stats,
    pub t2d_stats: Stats,
    /// Records without truth that could not be interpolated.
    pub n_excluded: usize,
}

/// JSON shape of a per-trial summary.
#[derive(Serialize)]
pub struct SummaryJson<'a> {
    pub trial_id: &'a str,
    pub n_steps: usize,
    pub n_excluded: usize,
    pub t2d: Stats,
    pub t3d: Stats,
}

impl ApeSummary {
    pub fn to_json(&self, trial_id: &str) -> String {
        serde_json::to_string_pretty(&SummaryJson {
            trial_id,
            n_steps: self.t3d.len(),
            n_excluded: self.n_excluded,
            t2d: self.t2d_stats,
            t3d: self.t3d_stats,
        })
        .expect("summary serializes")
    }
}

/// `(t_3D, t_2D)` of estimate `p` against truth `g`.
pub fn pose_error(p: &Pose, g: &Pose) -> (f64, f64) {
    let t = p.between(g).translation;
    (t.norm(), t.xy().norm())
}

/// Ground truth at `timestamp`, interpolated between the closest records
/// that carry truth on either side.
fn truth_at(anchors: &[(f64, Pose)], timestamp: f64) -> Option<Pose> {
    let k = anchors.partition_point(|(t, _)| *t < timestamp);
    if k < anchors.len() && anchors[k].0 == timestamp {
        return Some(anchors[k].1);
    }
    if k == 0 || k == anchors.len() {
        return None;
    }
    let (t0, a) = anchors[k - 1];
    let (t1, b) = anchors[k];
    Some(Pose::interpolate(&a, &b, (timestamp - t0) / (t1 - t0)))
}

pub fn ape(log: &TrajectoryLog) -> Result<ApeSummary> {
    let mut anchors: Vec<(f64, Pose)> = log
        .records
        .iter()
        .filter_map(|r| r.truth.map(|g| (r.timestamp, g)))
        .collect();
    anchors.sort_by(|a, b| a.0.total_cmp(&b.0));
    if anchors.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(Error::Format("duplicate ground-truth timestamps in log".into()));
    }
    let mut out = ApeSummary::default();
    for r in &log.records {
        let truth = match r.truth {
            Some(g) => Some(g),
            None => truth_at(&anchors, r.timestamp),
        };
        match truth {
            Some(g) => {
                let (e3, e2) = pose_error(&r.estimate, &g);
                out.step_ids.push(r.step_id);
                out.t3d.push(e3);
                out.t2d.push(e2);
            }
            None => out.n_excluded += 1,
        }
    }
    out.t3d_stats = Stats::of(&out.t3d);
    out.t2d_stats = Stats::of(&out.t2d);
    Ok(out)
}
