//! Training objective: reconstruction plus relation-distribution regularizers.
//!
//! The total loss is the sum of five terms:
//!
//! * reconstruction — squared error between predicted means and ground truth,
//! * KL to the uniform type distribution (both relation branches),
//! * smoothness — KL between consecutive prediction periods' distributions,
//! * sharpness — Shannon entropy of the distributions,
//! * sparsity — KL to a distribution concentrated on the no-relation type.
//!
//! All logarithms are floored at [`PROB_FLOOR`], which keeps every term
//! finite for degenerate distributions; the floor can perturb the smoothness
//! term by around `1e-11` below zero, while the other divergences stay
//! nonnegative.

use ndarray::{s, Array2};

use evolvenav_nnet::{Tape, Var};

use crate::config::PredictorConfig;
use crate::model::RolloutOutput;

/// Smallest probability admitted inside logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

/// Scalar values of the five loss terms and their sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub l_rec: f64,
    pub l_kl: f64,
    pub l_sm: f64,
    pub l_sh: f64,
    pub l_sp: f64,
    pub l_total: f64,
}

impl LossBreakdown {
    /// True when every term is finite.
    pub fn is_finite(&self) -> bool {
        [self.l_rec, self.l_kl, self.l_sm, self.l_sh, self.l_sp, self.l_total]
            .iter()
            .all(|v| v.is_finite())
    }
}

fn zero_scalar(tape: &Tape) -> Var<'_> {
    tape.constant(Array2::zeros((1, 1)))
}

/// `Σ q ln q` over all entries (negative entropy), floored inside the log.
fn neg_entropy(z: Var<'_>) -> Var<'_> {
    z.mul(z.ln_floor(PROB_FLOOR)).sum_all()
}

/// `KL(q ‖ uniform)` summed over rows: `Σ q ln q + rows·ln(cols)`.
fn kl_to_uniform(z: Var<'_>) -> Var<'_> {
    let (rows, cols) = z.dim();
    neg_entropy(z).add_scalar(rows as f64 * (cols as f64).ln())
}

/// `KL(a ‖ b)` summed over rows.
fn kl_between<'t>(a: Var<'t>, b: Var<'t>) -> Var<'t> {
    a.mul(a.ln_floor(PROB_FLOOR).sub(b.ln_floor(PROB_FLOOR)))
        .sum_all()
}

/// `KL(q ‖ δ)` summed over rows, where `δ` places all mass on the
/// no-relation type up to a floor `ε` on the remaining types:
/// `δ_0 = 1 − (L−1)ε`, `δ_{l≥1} = ε`.
fn kl_to_no_relation(z: Var<'_>) -> Var<'_> {
    let (rows, cols) = z.dim();
    let delta0 = 1.0 - (cols as f64 - 1.0) * PROB_FLOOR;
    let s0 = z.slice_cols(0..1).sum_all();
    neg_entropy(z)
        .add(s0.scale(PROB_FLOOR.ln() - delta0.ln()))
        .add_scalar(-(rows as f64) * PROB_FLOOR.ln())
}

struct BranchTerms<'t> {
    kl: Var<'t>,
    sm: Var<'t>,
    sh: Var<'t>,
    sp: Var<'t>,
}

fn branch_terms<'t>(tape: &'t Tape, zs: &[Var<'t>]) -> BranchTerms<'t> {
    let mut kl = zero_scalar(tape);
    let mut sm = zero_scalar(tape);
    let mut sh = zero_scalar(tape);
    let mut sp = zero_scalar(tape);
    for &z in zs {
        kl = kl.add(kl_to_uniform(z));
        sh = sh.add(neg_entropy(z).neg());
        sp = sp.add(kl_to_no_relation(z));
    }
    for pair in zs.windows(2) {
        sm = sm.add(kl_between(pair[0], pair[1]));
    }
    BranchTerms { kl, sm, sh, sp }
}

/// Evaluates the full objective for one rollout against the ground-truth
/// future `(N, t_f·2)`. Returns the scalar breakdown together with the
/// differentiable total for the backward pass. Regularizers that the
/// ablation switches off contribute exactly zero.
pub fn compute_losses<'t>(
    tape: &'t Tape,
    cfg: &PredictorConfig,
    rollout: &RolloutOutput<'t>,
    gt_future: &Array2<f64>,
) -> (LossBreakdown, Var<'t>) {
    let mut l_rec = zero_scalar(tape);
    let mut col = 0;
    for &mu in &rollout.period_means {
        let steps2 = mu.dim().1;
        let gt_slice = tape.constant(gt_future.slice(s![.., col..col + steps2]).to_owned());
        let diff = mu.sub(gt_slice);
        l_rec = l_rec.add(diff.mul(diff).sum_all());
        col += steps2;
    }
    assert_eq!(
        col,
        gt_future.dim().1,
        "rollout periods must cover the ground-truth horizon"
    );

    let cg = branch_terms(tape, &rollout.z_cg);
    let hg = branch_terms(tape, &rollout.z_hg);
    let ab = &cfg.ablation;

    let l_kl = cg
        .kl
        .scale(cfg.alpha_kl_cg)
        .add(hg.kl.scale(cfg.alpha_kl_hg));
    let l_sm = if ab.smoothness {
        cg.sm
            .scale(cfg.alpha_sm_cg)
            .add(hg.sm.scale(cfg.alpha_sm_hg))
    } else {
        zero_scalar(tape)
    };
    let l_sh = if ab.sharpness {
        cg.sh
            .scale(cfg.alpha_sh_cg)
            .add(hg.sh.scale(cfg.alpha_sh_hg))
    } else {
        zero_scalar(tape)
    };
    let l_sp = if ab.sparsity {
        cg.sp
            .scale(cfg.alpha_sp_cg)
            .add(hg.sp.scale(cfg.alpha_sp_hg))
    } else {
        zero_scalar(tape)
    };

    let l_total = l_rec.add(l_kl).add(l_sm).add(l_sh).add(l_sp);
    let breakdown = LossBreakdown {
        l_rec: l_rec.scalar(),
        l_kl: l_kl.scalar(),
        l_sm: l_sm.scalar(),
        l_sh: l_sh.scalar(),
        l_sp: l_sp.scalar(),
        l_total: l_total.scalar(),
    };
    (breakdown, l_total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg_all_on() -> PredictorConfig {
        PredictorConfig {
            t_f: 2,
            t_p: 1,
            l_cg: 3,
            l_hg: 4,
            ..PredictorConfig::default()
        }
    }

    fn rollout_from<'t>(
        tape: &'t Tape,
        period_means: Vec<Var<'t>>,
        z_cg: Vec<Var<'t>>,
        z_hg: Vec<Var<'t>>,
    ) -> RolloutOutput<'t> {
        let n = period_means[0].dim().0;
        let cols: usize = period_means.iter().map(|m| m.dim().1).sum();
        let mut mean = Array2::zeros((n, cols));
        let mut at = 0;
        for m in &period_means {
            let v = m.value();
            mean.slice_mut(s![.., at..at + v.dim().1]).assign(&v);
            at += v.dim().1;
        }
        let _ = tape;
        RolloutOutput {
            period_means,
            mean,
            z_cg,
            z_hg,
            incidences: Vec::new(),
        }
    }

    fn random_simplex(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
        let mut z = Array2::from_shape_fn((rows, cols), |_| -(rng.gen::<f64>().max(1e-12).ln()));
        for mut row in z.rows_mut() {
            let s: f64 = row.iter().sum();
            row.mapv_inplace(|v| v / s);
        }
        z
    }

    #[test]
    fn exact_prediction_gives_zero_reconstruction() {
        let cfg = cfg_all_on();
        let tape = Tape::new();
        let gt = Array2::from_shape_fn((3, 4), |(i, j)| (i * 4 + j) as f64);
        let means = vec![
            tape.constant(gt.slice(s![.., 0..2]).to_owned()),
            tape.constant(gt.slice(s![.., 2..4]).to_owned()),
        ];
        let z = tape.constant(random_simplex(4, cfg.l_cg, &mut ChaCha8Rng::seed_from_u64(1)));
        let rollout = rollout_from(&tape, means, vec![z], vec![]);
        let (bd, _) = compute_losses(&tape, &cfg, &rollout, &gt);
        assert_eq!(bd.l_rec, 0.0);
    }

    #[test]
    fn uniform_distributions_zero_the_kl_and_maximize_entropy() {
        let cfg = cfg_all_on();
        let tape = Tape::new();
        let rows = 5;
        let means = vec![tape.constant(Array2::zeros((2, 4)))];
        let gt = Array2::zeros((2, 4));
        let z_cg = tape.constant(Array2::from_elem((rows, cfg.l_cg), 1.0 / cfg.l_cg as f64));
        let z_hg = tape.constant(Array2::from_elem((rows, cfg.l_hg), 1.0 / cfg.l_hg as f64));
        let rollout = rollout_from(&tape, means, vec![z_cg], vec![z_hg]);
        let (bd, _) = compute_losses(&tape, &cfg, &rollout, &gt);
        assert!(bd.l_kl.abs() < 1e-12, "KL to uniform at uniform: {}", bd.l_kl);
        let want_sh = cfg.alpha_sh_cg * rows as f64 * (cfg.l_cg as f64).ln()
            + cfg.alpha_sh_hg * rows as f64 * (cfg.l_hg as f64).ln();
        assert!((bd.l_sh - want_sh).abs() < 1e-12, "{} vs {want_sh}", bd.l_sh);
    }

    #[test]
    fn no_relation_mass_makes_sparsity_vanish() {
        let cfg = cfg_all_on();
        let tape = Tape::new();
        let rows = 6;
        let mut z = Array2::zeros((rows, cfg.l_cg));
        for mut row in z.rows_mut() {
            row[0] = 1.0;
        }
        let rollout = rollout_from(
            &tape,
            vec![tape.constant(Array2::zeros((2, 4)))],
            vec![tape.constant(z)],
            vec![],
        );
        let (bd, _) = compute_losses(&tape, &cfg, &rollout, &Array2::zeros((2, 4)));
        assert!(bd.l_sp.abs() < 1e-9, "sparsity at no-relation: {}", bd.l_sp);
    }

    #[test]
    fn active_relations_pay_the_full_sparsity_price() {
        let cfg = cfg_all_on();
        let tape = Tape::new();
        let rows = 3;
        // Every row one-hot on type 1: q ln q = 0, s0 = 0, so the divergence
        // is exactly -rows * ln(floor) per branch, scaled by the weight.
        let mut z = Array2::zeros((rows, cfg.l_cg));
        for mut row in z.rows_mut() {
            row[1] = 1.0;
        }
        let rollout = rollout_from(
            &tape,
            vec![tape.constant(Array2::zeros((2, 4)))],
            vec![tape.constant(z)],
            vec![],
        );
        let (bd, _) = compute_losses(&tape, &cfg, &rollout, &Array2::zeros((2, 4)));
        let want = cfg.alpha_sp_cg * rows as f64 * (-PROB_FLOOR.ln());
        assert!((bd.l_sp - want).abs() < 1e-9, "{} vs {want}", bd.l_sp);
    }

    #[test]
    fn smoothness_is_zero_only_for_matching_consecutive_periods() {
        let cfg = cfg_all_on();
        let tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_simplex(4, cfg.l_cg, &mut rng);
        let b = random_simplex(4, cfg.l_cg, &mut rng);
        let means = vec![
            tape.constant(Array2::zeros((2, 2))),
            tape.constant(Array2::zeros((2, 2))),
        ];
        let same = rollout_from(
            &tape,
            means.clone(),
            vec![tape.constant(a.clone()), tape.constant(a.clone())],
            vec![],
        );
        let (bd_same, _) = compute_losses(&tape, &cfg, &same, &Array2::zeros((2, 4)));
        assert_eq!(bd_same.l_sm, 0.0);
        let diff = rollout_from(
            &tape,
            means,
            vec![tape.constant(a), tape.constant(b)],
            vec![],
        );
        let (bd_diff, _) = compute_losses(&tape, &cfg, &diff, &Array2::zeros((2, 4)));
        assert!(bd_diff.l_sm > 1e-6, "distinct periods diverge: {}", bd_diff.l_sm);
    }

    #[test]
    fn total_is_the_sum_of_the_five_terms() {
        let cfg = cfg_all_on();
        let tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let gt = Array2::from_shape_fn((3, 4), |_| rng.gen_range(-1.0..1.0));
        let means = vec![
            tape.constant(Array2::from_shape_fn((3, 2), |_| rng.gen_range(-1.0..1.0))),
            tape.constant(Array2::from_shape_fn((3, 2), |_| rng.gen_range(-1.0..1.0))),
        ];
        let z_cg: Vec<_> = (0..2)
            .map(|_| tape.constant(random_simplex(6, cfg.l_cg, &mut rng)))
            .collect();
        let z_hg: Vec<_> = (0..2)
            .map(|_| tape.constant(random_simplex(5, cfg.l_hg, &mut rng)))
            .collect();
        let rollout = rollout_from(&tape, means, z_cg, z_hg);
        let (bd, total) = compute_losses(&tape, &cfg, &rollout, &gt);
        let sum = bd.l_rec + bd.l_kl + bd.l_sm + bd.l_sh + bd.l_sp;
        assert!((bd.l_total - sum).abs() < 1e-9);
        assert!((total.scalar() - bd.l_total).abs() < 1e-12);
        assert!(bd.l_rec > 0.0 && bd.l_kl >= 0.0);
    }

    #[test]
    fn ablation_switches_zero_their_regularizers() {
        let mut cfg = cfg_all_on();
        cfg.ablation.smoothness = false;
        cfg.ablation.sharpness = false;
        cfg.ablation.sparsity = false;
        let tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rollout = rollout_from(
            &tape,
            vec![
                tape.constant(Array2::zeros((2, 2))),
                tape.constant(Array2::zeros((2, 2))),
            ],
            vec![
                tape.constant(random_simplex(3, cfg.l_cg, &mut rng)),
                tape.constant(random_simplex(3, cfg.l_cg, &mut rng)),
            ],
            vec![],
        );
        let (bd, _) = compute_losses(&tape, &cfg, &rollout, &Array2::zeros((2, 4)));
        assert_eq!(bd.l_sm, 0.0);
        assert_eq!(bd.l_sh, 0.0);
        assert_eq!(bd.l_sp, 0.0);
        assert!(bd.l_kl > 0.0, "KL stays active: {}", bd.l_kl);
    }
}
