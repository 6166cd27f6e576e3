use nalgebra::Vector3;

/// Positive and negative index sets of every anchor in a batch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MinedBatch {
    pub positives: Vec<Vec<usize>>,
    pub negatives: Vec<Vec<usize>>,
}

impl MinedBatch {
    pub fn len(&self) -> usize {
        self.positives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positives.is_empty()
    }

    /// Number of (anchor, positive, negative) triplets.
    pub fn triplet_count(&self) -> usize {
        self.positives
            .iter()
            .zip(&self.negatives)
            .map(|(p, n)| p.len() * n.len())
            .sum()
    }
}

/// Splits every other sample into positives (foothold within `d_thr`,
/// inclusive) and negatives (farther than `d_thr`) of each anchor.
pub fn mine(positions: &[Vector3<f64>], d_thr: f64) -> MinedBatch {
    let n = positions.len();
    let mut positives = vec![Vec::new(); n];
    let mut negatives = vec![Vec::new(); n];
    for a in 0..n {
        for i in 0..n {
            if i == a {
                continue;
            }
            if (positions[a] - positions[i]).norm() <= d_thr {
                positives[a].push(i);
            } else {
                negatives[a].push(i);
            }
        }
    }
    MinedBatch { positives, negatives }
}
