//! Optimization loop: warm-up staging, gradient accumulation, validation,
//! and early stopping.
//!
//! Training runs in two stages. During the warm-up epochs the group-wise
//! branch is removed from the forward pass and its parameters are frozen, so
//! the pairwise modules settle first; afterwards the full model trains
//! jointly. Validation (and with it early stopping and best-checkpoint
//! tracking) begins after the warm-up stage, since scores from the reduced
//! model are not comparable to the full one.

use std::collections::HashMap;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use evolvenav_nnet::{AdamConfig, ParamStore, Tape};

use crate::config::TrainConfig;
use crate::dataset::WindowDataset;
use crate::loss::compute_losses;
use crate::metrics::minade_minfde;
use crate::model::{PredictorModel, RelationSampling};
use crate::PredictorError;

/// Parameter-name prefixes that stay untouched during warm-up epochs.
pub const WARMUP_FROZEN_PREFIXES: &[&str] = &["hg.", "dec.hg.", "gru_hg."];

/// Loss terms averaged over one epoch, plus validation scores when that
/// epoch ran an evaluation.
#[derive(Debug, Clone)]
pub struct EpochStats {
    pub epoch: usize,
    pub l_rec: f64,
    pub l_kl: f64,
    pub l_sm: f64,
    pub l_sh: f64,
    pub l_sp: f64,
    pub val_minade: Option<f64>,
    pub val_minfde: Option<f64>,
}

/// Best validation result seen during training.
#[derive(Debug, Clone, Copy)]
pub struct BestEval {
    pub epoch: usize,
    pub minade: f64,
    pub minfde: f64,
}

/// Outcome of a training run.
#[derive(Debug)]
pub struct TrainReport {
    /// One row per completed epoch.
    pub curves: Vec<EpochStats>,
    /// Best evaluation; the store holds these parameters on return.
    pub best: Option<BestEval>,
    pub epochs_run: usize,
    pub stopped_early: bool,
}

/// Stable per-window seed derived from the run seed, epoch, and window index.
fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ b.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mean best-of-K displacement errors over a validation set.
fn evaluate(
    model: &PredictorModel,
    store: &ParamStore,
    val: &WindowDataset,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, f64), PredictorError> {
    let t_h = model.cfg.t_h;
    let mut sum_ade = 0.0;
    let mut sum_fde = 0.0;
    for w in &val.windows {
        let samples = model.sample_rollouts(store, &w.history(t_h), k, rng)?;
        let (ade, fde) = minade_minfde(&samples, &w.future(t_h))?;
        sum_ade += ade;
        sum_fde += fde;
    }
    let n = val.len() as f64;
    Ok((sum_ade / n, sum_fde / n))
}

/// Trains the model in place on `store`. On return the store holds the
/// best-validation parameters when validation ran, otherwise the final ones.
pub fn train_predictor(
    store: &mut ParamStore,
    model: &PredictorModel,
    train_set: &WindowDataset,
    val_set: Option<&WindowDataset>,
    tcfg: &TrainConfig,
) -> Result<TrainReport, PredictorError> {
    tcfg.validate()?;
    if train_set.is_empty() {
        return Err(PredictorError::Dataset("training set is empty".into()));
    }
    if let Some(vs) = val_set {
        if vs.is_empty() {
            return Err(PredictorError::Dataset("validation set is empty".into()));
        }
    }
    let cfg = &model.cfg;
    let expected_steps = cfg.t_h + cfg.t_f;
    for (i, w) in train_set.windows.iter().enumerate() {
        if w.t_total() != expected_steps {
            return Err(PredictorError::Dataset(format!(
                "window {i} spans {} steps, expected t_h + t_f = {expected_steps}",
                w.t_total()
            )));
        }
    }

    // Warm-up only makes sense when there is a group branch to hold back and
    // a pairwise branch to train meanwhile.
    let ab = cfg.ablation;
    let warmup_epochs = if ab.pairwise && ab.groupwise {
        tcfg.warmup_epochs
    } else {
        0
    };
    let warmup_model = model.warmup_view();

    let mut curves = Vec::new();
    let mut best: Option<BestEval> = None;
    let mut best_params = None;
    let mut evals_since_best = 0usize;
    let mut stopped_early = false;
    let mut epochs_run = 0;

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..tcfg.epochs {
        let in_warmup = epoch < warmup_epochs;
        let active = if in_warmup { &warmup_model } else { model };
        let frozen: &[&str] = if in_warmup { WARMUP_FROZEN_PREFIXES } else { &[] };
        let adam = AdamConfig {
            lr: tcfg.lr * tcfg.lr_decay.powi((epoch / tcfg.lr_decay_every) as i32),
            ..AdamConfig::default()
        };

        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(mix_seed(tcfg.seed, epoch as u64, 0));
        order.shuffle(&mut shuffle_rng);

        let mut sums = [0.0; 5];
        for batch in order.chunks(tcfg.batch_size) {
            let mut acc: std::collections::BTreeMap<String, Array2<f64>> =
                std::collections::BTreeMap::new();
            for &widx in batch {
                let w = &train_set.windows[widx];
                let hist = w.history(cfg.t_h);
                let fut = w.future(cfg.t_h);
                let mut rng =
                    ChaCha8Rng::seed_from_u64(mix_seed(tcfg.seed, epoch as u64, 1 + widx as u64));
                let tape = Tape::new();
                let out = active.rollout(
                    &tape,
                    store,
                    &hist,
                    Some(&fut),
                    RelationSampling::Stochastic,
                    &mut rng,
                )?;
                let (bd, total) = compute_losses(&tape, &active.cfg, &out, &fut);
                if !bd.is_finite() {
                    return Err(PredictorError::NonFiniteLoss {
                        epoch,
                        window: widx,
                        detail: format!(
                            "Rec {} KL {} SM {} SH {} SP {}",
                            bd.l_rec, bd.l_kl, bd.l_sm, bd.l_sh, bd.l_sp
                        ),
                    });
                }
                sums[0] += bd.l_rec;
                sums[1] += bd.l_kl;
                sums[2] += bd.l_sm;
                sums[3] += bd.l_sh;
                sums[4] += bd.l_sp;

                let grads = tape.backward(total);
                for (name, g) in tape.param_grads(&grads) {
                    acc.entry(name)
                        .and_modify(|a| *a += &g)
                        .or_insert(g);
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for g in acc.values_mut() {
                g.mapv_inplace(|x| x * scale);
            }
            if let Some(max_norm) = tcfg.max_grad_norm {
                // Norm in sorted-name order so runs are bit-reproducible.
                let norm = acc
                    .values()
                    .map(|g| g.iter().map(|x| x * x).sum::<f64>())
                    .sum::<f64>()
                    .sqrt();
                if norm > max_norm && norm > 0.0 {
                    let s = max_norm / norm;
                    for g in acc.values_mut() {
                        g.mapv_inplace(|x| x * s);
                    }
                }
            }
            let grad_map: HashMap<String, Array2<f64>> = acc.into_iter().collect();
            store.adam_step(&grad_map, &adam, frozen);
        }

        let n_windows = train_set.len() as f64;
        let mut stats = EpochStats {
            epoch,
            l_rec: sums[0] / n_windows,
            l_kl: sums[1] / n_windows,
            l_sm: sums[2] / n_windows,
            l_sh: sums[3] / n_windows,
            l_sp: sums[4] / n_windows,
            val_minade: None,
            val_minfde: None,
        };

        if let Some(vs) = val_set {
            let eval_due = (epoch + 1) % tcfg.eval_every == 0 && !in_warmup;
            if eval_due {
                let mut eval_rng =
                    ChaCha8Rng::seed_from_u64(mix_seed(tcfg.seed, epoch as u64, u64::MAX));
                let (ade, fde) = evaluate(model, store, vs, tcfg.k_samples, &mut eval_rng)?;
                stats.val_minade = Some(ade);
                stats.val_minfde = Some(fde);
                let improved = best.map_or(true, |b| ade < b.minade);
                if improved {
                    best = Some(BestEval {
                        epoch,
                        minade: ade,
                        minfde: fde,
                    });
                    best_params = Some(store.snapshot());
                    evals_since_best = 0;
                } else {
                    evals_since_best += 1;
                    if evals_since_best >= tcfg.patience {
                        curves.push(stats);
                        epochs_run = epoch + 1;
                        stopped_early = true;
                        break;
                    }
                }
            }
        }
        curves.push(stats);
        epochs_run = epoch + 1;
    }

    if let Some(snap) = best_params {
        for (name, value) in snap {
            store.set(&name, value)?;
        }
    }
    Ok(TrainReport {
        curves,
        best,
        epochs_run,
        stopped_early,
    })
}

/// Writes training curves as CSV with one row per epoch; validation columns
/// are empty on epochs without an evaluation.
pub fn write_curves_csv(path: &Path, curves: &[EpochStats]) -> Result<(), PredictorError> {
    let mut out = String::from("epoch,L_Rec,L_KL,L_SM,L_SH,L_SP,val_minADE,val_minFDE\n");
    for row in curves {
        let fmt_opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            row.epoch,
            row.l_rec,
            row.l_kl,
            row.l_sm,
            row.l_sh,
            row.l_sp,
            fmt_opt(row.val_minade),
            fmt_opt(row.val_minfde),
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{AblationConfig, PredictorConfig};
    use crate::dataset::Window;
    use crate::synthetic::{co_moving_dataset, SyntheticConfig};
    use ndarray::s;

    fn tiny_model_cfg() -> PredictorConfig {
        PredictorConfig {
            t_h: 3,
            t_f: 2,
            t_p: 1,
            m: 2,
            l_cg: 3,
            l_hg: 3,
            hidden: 4,
            gru_hidden: 4,
            ablation: AblationConfig::FULL,
            ..PredictorConfig::default()
        }
    }

    fn tiny_dataset(n_windows: usize, seed: u64) -> WindowDataset {
        let syn = SyntheticConfig {
            n_groups: 2,
            group_size: 2,
            t_total: 5,
            ..SyntheticConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        co_moving_dataset(n_windows, &syn, &mut rng).unwrap()
    }

    fn fast_tcfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            warmup_epochs: 0,
            batch_size: 8,
            lr: 3e-3,
            eval_every: 1000,
            patience: 1000,
            k_samples: 2,
            seed: 5,
            ..TrainConfig::default()
        }
    }

    fn build(cfg: &PredictorConfig, seed: u64) -> (ParamStore, PredictorModel) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let model = PredictorModel::new(&mut store, cfg.clone(), &mut rng).unwrap();
        (store, model)
    }

    #[test]
    fn short_training_reduces_reconstruction_loss() {
        let cfg = tiny_model_cfg();
        let (mut store, model) = build(&cfg, 1);
        let data = tiny_dataset(3, 2);
        let report =
            train_predictor(&mut store, &model, &data, None, &fast_tcfg(30)).unwrap();
        assert_eq!(report.epochs_run, 30);
        let first = report.curves.first().unwrap().l_rec;
        let last = report.curves.last().unwrap().l_rec;
        assert!(
            last < first,
            "reconstruction should improve: {first} -> {last}"
        );
    }

    #[test]
    fn warmup_leaves_group_parameters_bit_identical() {
        let cfg = tiny_model_cfg();
        let (mut store, model) = build(&cfg, 3);
        let before = store.snapshot();
        let data = tiny_dataset(2, 4);
        let tcfg = TrainConfig {
            warmup_epochs: 10, // entire run stays in warm-up
            ..fast_tcfg(4)
        };
        train_predictor(&mut store, &model, &data, None, &tcfg).unwrap();
        let after = store.snapshot();
        let mut frozen_seen = 0;
        let mut trained_changed = 0;
        for (name, old) in &before {
            let new = &after[name];
            if WARMUP_FROZEN_PREFIXES.iter().any(|p| name.starts_with(p)) {
                assert_eq!(old, new, "frozen parameter {name} moved during warm-up");
                frozen_seen += 1;
            } else if old != new {
                trained_changed += 1;
            }
        }
        assert!(frozen_seen > 0);
        assert!(trained_changed > 0, "pairwise-side parameters should train");
    }

    #[test]
    fn poisoned_parameters_surface_a_non_finite_loss_error() {
        let cfg = tiny_model_cfg();
        let (mut store, model) = build(&cfg, 5);
        // Poison the output head: its NaN reaches the predicted means (and so
        // the reconstruction loss) directly, with no ReLU in between to
        // swallow it (`f64::max(NaN, 0.0)` is `0.0`).
        let dim = store.get("dec.out.w").dim();
        store
            .set("dec.out.w", Array2::from_elem(dim, f64::NAN))
            .unwrap();
        let data = tiny_dataset(2, 6);
        let err = train_predictor(&mut store, &model, &data, None, &fast_tcfg(2)).unwrap_err();
        assert!(matches!(err, PredictorError::NonFiniteLoss { epoch: 0, .. }));
    }

    #[test]
    fn mismatched_window_length_is_rejected() {
        let cfg = tiny_model_cfg();
        let (mut store, model) = build(&cfg, 7);
        // Windows of 4 steps instead of t_h + t_f = 5.
        let w = Window::new(Array2::zeros((3, 8)), vec![0, 0, 1]).unwrap();
        let data = WindowDataset { windows: vec![w] };
        let err = train_predictor(&mut store, &model, &data, None, &fast_tcfg(1)).unwrap_err();
        assert!(matches!(err, PredictorError::Dataset(_)));
    }

    #[test]
    fn training_is_bitwise_reproducible() {
        let cfg = tiny_model_cfg();
        let data = tiny_dataset(4, 8);
        let val = tiny_dataset(2, 9);
        let tcfg = TrainConfig {
            eval_every: 2,
            ..fast_tcfg(4)
        };
        let run = || {
            let (mut store, model) = build(&cfg, 10);
            train_predictor(&mut store, &model, &data, Some(&val), &tcfg).unwrap();
            store.snapshot()
        };
        let a = run();
        let b = run();
        for (name, va) in &a {
            assert_eq!(va, &b[name], "parameter {name} differs between runs");
        }
    }

    #[test]
    fn validation_runs_on_schedule_and_reports_best() {
        let cfg = tiny_model_cfg();
        let (mut store, model) = build(&cfg, 11);
        let data = tiny_dataset(3, 12);
        let val = tiny_dataset(2, 13);
        let tcfg = TrainConfig {
            eval_every: 2,
            ..fast_tcfg(4)
        };
        let report = train_predictor(&mut store, &model, &data, Some(&val), &tcfg).unwrap();
        for (i, row) in report.curves.iter().enumerate() {
            let evaluated = (i + 1) % 2 == 0;
            assert_eq!(row.val_minade.is_some(), evaluated, "epoch {i}");
        }
        let best = report.best.expect("evaluations ran");
        let best_row = &report.curves[best.epoch];
        assert_eq!(best_row.val_minade, Some(best.minade));
    }

    #[test]
    fn curves_csv_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curves.csv");
        let curves = vec![
            EpochStats {
                epoch: 0,
                l_rec: 1.5,
                l_kl: 0.5,
                l_sm: 0.0,
                l_sh: 0.25,
                l_sp: 0.125,
                val_minade: None,
                val_minfde: None,
            },
            EpochStats {
                epoch: 1,
                l_rec: 1.0,
                l_kl: 0.5,
                l_sm: 0.0,
                l_sh: 0.25,
                l_sp: 0.125,
                val_minade: Some(0.75),
                val_minfde: Some(1.25),
            },
        ];
        write_curves_csv(&path, &curves).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "epoch,L_Rec,L_KL,L_SM,L_SH,L_SP,val_minADE,val_minFDE");
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[1], "0,1.5,0.5,0,0.25,0.125,,");
        assert_eq!(lines[2], "1,1,0.5,0,0.25,0.125,0.75,1.25");
    }

    #[test]
    fn window_histories_slice_where_expected() {
        // Guard for the history/future split the trainer relies on.
        let vals = Array2::from_shape_fn((2, 10), |(i, j)| (i * 10 + j) as f64);
        let w = Window::new(vals.clone(), vec![0, 1]).unwrap();
        assert_eq!(w.history(3), vals.slice(s![.., 0..6]).to_owned());
        assert_eq!(w.future(3), vals.slice(s![.., 6..10]).to_owned());
    }
}
