//! Evaluation metrics for multi-agent trajectory prediction.

use ndarray::Array2;

use crate::PredictorError;

/// Average and final displacement error of one predicted trajectory set
/// `(N, T*2)` against ground truth of the same shape.
fn ade_fde(pred: &Array2<f64>, gt: &Array2<f64>) -> (f64, f64) {
    let (n, cols) = gt.dim();
    let t = cols / 2;
    let mut ade = 0.0;
    let mut fde = 0.0;
    for i in 0..n {
        for step in 0..t {
            let dx = pred[(i, 2 * step)] - gt[(i, 2 * step)];
            let dy = pred[(i, 2 * step + 1)] - gt[(i, 2 * step + 1)];
            let d = (dx * dx + dy * dy).sqrt();
            ade += d;
            if step == t - 1 {
                fde += d;
            }
        }
    }
    (ade / (n * t) as f64, fde / n as f64)
}

/// Best-of-K displacement errors: the minimum average displacement error and
/// the minimum final displacement error over the prediction samples, each
/// minimized independently (the best sample may differ between the two).
pub fn minade_minfde(
    samples: &[Array2<f64>],
    gt: &Array2<f64>,
) -> Result<(f64, f64), PredictorError> {
    if samples.is_empty() {
        return Err(PredictorError::NoSamples);
    }
    if gt.ncols() == 0 || gt.ncols() % 2 != 0 || gt.nrows() == 0 {
        return Err(PredictorError::Config(format!(
            "ground truth shape {:?} is not (N, T*2) with N, T >= 1",
            gt.dim()
        )));
    }
    let mut min_ade = f64::INFINITY;
    let mut min_fde = f64::INFINITY;
    for (k, sample) in samples.iter().enumerate() {
        if sample.dim() != gt.dim() {
            return Err(PredictorError::Config(format!(
                "sample {k} has shape {:?}, expected {:?}",
                sample.dim(),
                gt.dim()
            )));
        }
        let (ade, fde) = ade_fde(sample, gt);
        min_ade = min_ade.min(ade);
        min_fde = min_fde.min(fde);
    }
    Ok((min_ade, min_fde))
}

/// Log density of trajectories `x` under an isotropic Gaussian with mean `mu`
/// and per-coordinate variance `sigma_sq`, summed over all coordinates.
pub fn gaussian_log_density(x: &Array2<f64>, mu: &Array2<f64>, sigma_sq: f64) -> f64 {
    assert_eq!(x.dim(), mu.dim(), "trajectory shapes must match");
    assert!(sigma_sq > 0.0, "variance must be positive");
    let norm = -0.5 * (2.0 * std::f64::consts::PI * sigma_sq).ln();
    x.iter()
        .zip(mu.iter())
        .map(|(a, b)| norm - (a - b) * (a - b) / (2.0 * sigma_sq))
        .sum()
}

/// Fraction of agents whose inferred hyperedge membership agrees with their
/// ground-truth group label.
///
/// Each hyperedge with at least two hard members is labeled with the majority
/// ground-truth group among its members (ties broken toward the smallest
/// label). Each agent then takes the majority label over the labeled
/// hyperedges containing it (same tie-breaking); agents contained in no such
/// hyperedge count as incorrect.
pub fn majority_cluster_accuracy(hard: &Array2<f64>, group_ids: &[usize]) -> f64 {
    let (n, m) = hard.dim();
    assert_eq!(n, group_ids.len(), "one group label per agent");
    if n == 0 {
        return 0.0;
    }
    let n_labels = group_ids.iter().copied().max().unwrap_or(0) + 1;

    // Label hyperedges by member majority.
    let mut edge_label: Vec<Option<usize>> = vec![None; m];
    for mi in 0..m {
        let mut counts = vec![0usize; n_labels];
        let mut members = 0;
        for i in 0..n {
            if hard[(i, mi)] != 0.0 {
                counts[group_ids[i]] += 1;
                members += 1;
            }
        }
        if members >= 2 {
            let best = counts.iter().copied().max().unwrap();
            edge_label[mi] = counts.iter().position(|&c| c == best);
        }
    }

    // Vote per agent over the labeled hyperedges containing it.
    let mut correct = 0;
    for i in 0..n {
        let mut votes = vec![0usize; n_labels];
        let mut any = false;
        for mi in 0..m {
            if hard[(i, mi)] != 0.0 {
                if let Some(label) = edge_label[mi] {
                    votes[label] += 1;
                    any = true;
                }
            }
        }
        if any {
            let best = votes.iter().copied().max().unwrap();
            let label = votes.iter().position(|&v| v == best).unwrap();
            if label == group_ids[i] {
                correct += 1;
            }
        }
    }
    correct as f64 / n as f64
}
