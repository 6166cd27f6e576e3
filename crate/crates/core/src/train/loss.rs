use super::MinedBatch;

/// Value, embedding gradient and active-triplet statistics of the
/// Batch-All triplet loss.
#[derive(Clone, Debug)]
pub struct TripletLoss {
    /// Sum of hinge terms divided by the number of active triplets
    /// (0 when none is active).
    pub loss: f64,
    pub grad: Vec<Vec<f64>>,
    /// Triplets whose hinge term is strictly positive.
    pub active: usize,
    pub total: usize,
}

/// Batch-All triplet loss over every (anchor, positive, negative) triplet of
/// `mined`, with Euclidean embedding distance:
///
/// ```text
/// L = Σ_a Σ_{p∈P_a} Σ_{n∈N_a} [d(a,p) − d(a,n) + margin]_+  /  #{active}
/// ```
///
/// The gradient treats the active set as fixed. At a zero distance the
/// distance gradient is taken as 0.
pub fn batch_all_loss(embeddings: &[Vec<f64>], mined: &MinedBatch, margin: f64) -> TripletLoss {
    let b = embeddings.len();
    assert_eq!(b, mined.len(), "embedding count must match the mined batch");
    let dim = embeddings.first().map_or(0, Vec::len);

    let mut dist = vec![0.0; b * b];
    for i in 0..b {
        for j in (i + 1)..b {
            let d = embeddings[i]
                .iter()
                .zip(&embeddings[j])
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            dist[i * b + j] = d;
            dist[j * b + i] = d;
        }
    }

    // coeff[a][j]: signed count of active triplets using distance d(a, j).
    let mut coeff = vec![0.0; b * b];
    let mut sum = 0.0;
    let mut active = 0usize;
    for a in 0..b {
        for &p in &mined.positives[a] {
            let d_ap = dist[a * b + p];
            for &n in &mined.negatives[a] {
                let h = d_ap - dist[a * b + n] + margin;
                if h > 0.0 {
                    sum += h;
                    active += 1;
                    coeff[a * b + p] += 1.0;
                    coeff[a * b + n] -= 1.0;
                }
            }
        }
    }

    let mut grad = vec![vec![0.0; dim]; b];
    let loss = if active == 0 {
        0.0
    } else {
        let scale = 1.0 / active as f64;
        for a in 0..b {
            for j in 0..b {
                let c = coeff[a * b + j];
                let d = dist[a * b + j];
                if c == 0.0 || d == 0.0 {
                    continue;
                }
                let k = c * scale / d;
                for t in 0..dim {
                    let u = k * (embeddings[a][t] - embeddings[j][t]);
                    grad[a][t] += u;
                    grad[j][t] -= u;
                }
            }
        }
        sum * scale
    };
    TripletLoss {
        loss,
        grad,
        active,
        total: mined.triplet_count(),
    }
}
