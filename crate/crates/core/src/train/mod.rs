//! Metric learning of the step embedding.
//!
//! Samples are labelled only by where they were taken: for every anchor in a
//! mini-batch, other samples whose footholds lie within `d_thr` are positives
//! and the rest are negatives ([`mine`]). The network is trained with the
//! Batch-All triplet loss averaged over the triplets that are still active
//! ([`batch_all_loss`]) and optimized with AdamW ([`AdamW`]).

mod adamw;
mod fit;
mod loss;
mod mining;

pub use adamw::AdamW;
pub use fit::{fit, write_loss_log, EpochLog, FitResult};
pub use loss::{batch_all_loss, TripletLoss};
pub use mining::{mine, MinedBatch};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    /// Foothold distance (m) separating positives from negatives.
    pub d_thr: f64,
    pub margin: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Initial learning rate; decays exponentially to 1% over `epochs`.
    pub lr0: f64,
    /// Initial decoupled weight decay; follows a cosine down to 0.
    pub weight_decay0: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            d_thr: 0.25,
            margin: 0.2,
            batch_size: 128,
            epochs: 200,
            lr0: 5e-4,
            weight_decay0: 2e-4,
            seed: 0,
        }
    }
}

/// Total learning-rate decay over a run.
pub const LR_TOTAL_DECAY: f64 = 0.01;

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidConfig(format!("train: {m}")));
        if !(self.d_thr > 0.0) {
            return fail("d_thr must be positive");
        }
        if !(self.margin >= 0.0) {
            return fail("margin must be non-negative");
        }
        if self.batch_size < 3 {
            return fail("batch_size must be at least 3");
        }
        if self.epochs == 0 {
            return fail("epochs must be positive");
        }
        if !(self.lr0 > 0.0) || !(self.weight_decay0 >= 0.0) {
            return fail("lr0 must be positive and weight_decay0 non-negative");
        }
        Ok(())
    }

    /// Per-epoch factor of the exponential learning-rate decay.
    pub fn lr_gamma(&self) -> f64 {
        LR_TOTAL_DECAY.powf(1.0 / self.epochs as f64)
    }

    /// `lr0 · γ^epoch`; reaches `lr0 / 100` at `epoch == epochs`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr0 * self.lr_gamma().powi(epoch as i32)
    }

    /// `wd0 · ½(1 + cos(π · epoch / epochs))`; zero at `epoch == epochs`.
    pub fn weight_decay_at(&self, epoch: usize) -> f64 {
        let progress = (epoch as f64 / self.epochs as f64).min(1.0);
        let wd = self.weight_decay0 * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        // cos(π) is -1 up to rounding; clamp the tail so the schedule ends at 0.
        if epoch >= self.epochs {
            0.0
        } else {
            wd.max(0.0)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedules() {
        let c = TrainConfig::default();
        assert_eq!(c.lr_at(0), 5e-4);
        assert!((c.lr_at(200) - 5e-6).abs() < 1e-18);
        assert!((c.lr_at(100) - 5e-5).abs() < 1e-17);
        assert_eq!(c.weight_decay_at(0), 2e-4);
        assert!((c.weight_decay_at(100) - 1e-4).abs() < 1e-18);
        assert_eq!(c.weight_decay_at(200), 0.0);
        assert!(c.weight_decay_at(199) > 0.0);
    }

    #[test]
    fn validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig {
            d_thr: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            batch_size: 2,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            margin: -0.1,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
