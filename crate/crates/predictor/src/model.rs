//! The full relational predictor: encoding, relation inference, evolution,
//! and decoding assembled into multi-period rollouts.
//!
//! A rollout splits the horizon into periods of `t_p` steps. Every period
//! re-encodes the current history window; with dynamic relations the typed
//! relations are also re-inferred each period and passed through the
//! evolution GRUs, while in static mode the relations inferred from the
//! observed window are reused for the whole horizon. The decoder then turns
//! node features and relations into per-step displacements.
//!
//! Between periods the history window advances either with ground-truth
//! positions (teacher forcing, used in training) or with the model's own
//! predictions (feed-back, used in evaluation). Fed-back positions re-enter
//! as constants, so gradients do not flow across period boundaries through
//! the window.

use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use evolvenav_nnet::{ParamStore, Tape, Var};

use crate::config::PredictorConfig;
use crate::decoder::{
    aggregate_relation_features, decode_period, relation_free_features, DecoderParams,
};
use crate::encoder::{
    encode_observation_graph, infer_relation_types, pair_count, sample_gumbel, EncoderParams,
};
use crate::evolve::EvolutionParams;
use crate::hypergraph::{
    hypergraph_message_pass, infer_hypergraph_topology, sample_incidence_noise, HypergraphParams,
    Incidence, IncidenceMode,
};
use crate::PredictorError;

/// Pre-drawn relation-sampling noise, one entry per prediction period. Using
/// the same frozen noise across evaluations makes a stochastic rollout a
/// deterministic, smooth function of the parameters — which finite-difference
/// gradient checks require.
pub struct FrozenNoise {
    /// Logistic noise for hyperedge membership, `(N, M)` per period.
    pub incidence: Vec<Array2<f64>>,
    /// Gumbel noise for pairwise types, `(P, L_CG)` per period.
    pub cg_types: Vec<Array2<f64>>,
    /// Gumbel noise for hyperedge types, `(M, L_HG)` per period.
    pub hg_types: Vec<Array2<f64>>,
}

impl FrozenNoise {
    /// Draws noise for every period of a rollout over `n` agents.
    pub fn sample(cfg: &PredictorConfig, n: usize, rng: &mut impl Rng) -> Self {
        let periods = cfg.periods();
        Self {
            incidence: (0..periods)
                .map(|_| sample_incidence_noise(n, cfg.m, rng))
                .collect(),
            cg_types: (0..periods)
                .map(|_| sample_gumbel(pair_count(n), cfg.l_cg, rng))
                .collect(),
            hg_types: (0..periods)
                .map(|_| sample_gumbel(cfg.m, cfg.l_hg, rng))
                .collect(),
        }
    }
}

/// How relations are realized during a rollout.
#[derive(Clone, Copy)]
pub enum RelationSampling<'a> {
    /// Fresh Gumbel draws from the rollout's `rng` each inference.
    Stochastic,
    /// Pre-drawn noise with the soft membership relaxation; deterministic and
    /// smooth in the parameters.
    Frozen(&'a FrozenNoise),
    /// Noise-free type distributions and thresholded memberships.
    Expected,
    /// Every pair and hyperedge takes the no-relation type with probability
    /// one; relation-type networks and evolution GRUs are not evaluated.
    NoRelation,
}

/// Everything a rollout produces.
pub struct RolloutOutput<'t> {
    /// One predicted-position block per period, `(N, steps*2)` each, still
    /// attached to the tape for the backward pass.
    pub period_means: Vec<Var<'t>>,
    /// The same predictions assembled into one `(N, t_f*2)` matrix.
    pub mean: Array2<f64>,
    /// Pairwise type distributions used by the decoder: one entry in static
    /// mode, one per period in dynamic mode; empty when the branch is off.
    pub z_cg: Vec<Var<'t>>,
    /// Hyperedge type distributions, same layout as `z_cg`.
    pub z_hg: Vec<Var<'t>>,
    /// Hyperedge memberships backing each entry of `z_hg`.
    pub incidences: Vec<Incidence<'t>>,
}

fn one_hot_no_relation(rows: usize, cols: usize) -> Array2<f64> {
    let mut z = Array2::zeros((rows, cols));
    z.column_mut(0).fill(1.0);
    z
}

/// Appends `produced` to the window and keeps the trailing `t_h` steps.
fn advance_window(cur: &Array2<f64>, produced: &Array2<f64>, t_h: usize) -> Array2<f64> {
    let n = cur.nrows();
    let total = cur.ncols() + produced.ncols();
    let mut combined = Array2::zeros((n, total));
    combined.slice_mut(s![.., 0..cur.ncols()]).assign(cur);
    combined.slice_mut(s![.., cur.ncols()..]).assign(produced);
    combined.slice(s![.., total - t_h * 2..]).to_owned()
}

/// Parameter handles and configuration of the complete predictor.
///
/// All modules are registered regardless of the ablation switches, so every
/// variant shares one parameter namespace and checkpoints stay uniform;
/// inactive modules are simply never evaluated.
#[derive(Clone)]
pub struct PredictorModel {
    pub cfg: PredictorConfig,
    pub enc: EncoderParams,
    pub hg: HypergraphParams,
    pub dec: DecoderParams,
    pub evo_cg: EvolutionParams,
    pub evo_hg: EvolutionParams,
}

impl PredictorModel {
    /// Validates the configuration and registers all parameters.
    pub fn new(
        store: &mut ParamStore,
        cfg: PredictorConfig,
        rng: &mut impl Rng,
    ) -> Result<Self, PredictorError> {
        cfg.validate()?;
        let enc = EncoderParams::new(store, &cfg, rng);
        let hg = HypergraphParams::new(store, &cfg, rng);
        let dec = DecoderParams::new(store, &cfg, rng);
        let evo_cg = EvolutionParams::new(store, "gru_cg", cfg.l_cg, cfg.gru_hidden, rng);
        let evo_hg = EvolutionParams::new(store, "gru_hg", cfg.l_hg, cfg.gru_hidden, rng);
        Ok(Self {
            cfg,
            enc,
            hg,
            dec,
            evo_cg,
            evo_hg,
        })
    }

    /// A view of the model with the group-wise branch switched off, used for
    /// the warm-up training stage: forward passes never touch hypergraph
    /// modules, so their parameters receive no gradient.
    pub fn warmup_view(&self) -> Self {
        let mut view = self.clone();
        view.cfg.ablation.groupwise = false;
        view
    }

    fn check_window(&self, hist: &Array2<f64>) -> Result<(), PredictorError> {
        if hist.ncols() != self.cfg.t_h * 2 {
            return Err(PredictorError::Config(format!(
                "history window is {} columns wide, expected t_h*2 = {}",
                hist.ncols(),
                self.cfg.t_h * 2
            )));
        }
        Ok(())
    }

    /// Runs one full rollout over the prediction horizon.
    ///
    /// `hist` is the observed window `(N, t_h*2)`. With `teacher` the window
    /// advances on ground truth `(N, t_f*2)`; without it the model feeds its
    /// own predictions back. `rng` is consulted only under
    /// [`RelationSampling::Stochastic`].
    pub fn rollout<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        hist: &Array2<f64>,
        teacher: Option<&Array2<f64>>,
        sampling: RelationSampling<'_>,
        rng: &mut impl Rng,
    ) -> Result<RolloutOutput<'t>, PredictorError> {
        let cfg = &self.cfg;
        let n = hist.nrows();
        if n < 2 {
            return Err(PredictorError::TooFewAgents(n));
        }
        self.check_window(hist)?;
        if let Some(gt) = teacher {
            if gt.dim() != (n, cfg.t_f * 2) {
                return Err(PredictorError::Config(format!(
                    "teacher future has shape {:?}, expected ({n}, {})",
                    gt.dim(),
                    cfg.t_f * 2
                )));
            }
        }
        let ab = cfg.ablation;
        let p = pair_count(n);

        let mut cur = hist.clone();
        let mut mean = Array2::zeros((n, cfg.t_f * 2));
        let mut period_means = Vec::new();
        let mut z_cg_list: Vec<Var<'t>> = Vec::new();
        let mut z_hg_list: Vec<Var<'t>> = Vec::new();
        let mut incidences: Vec<Incidence<'t>> = Vec::new();
        let mut cg_state: Option<Vec<Var<'t>>> = None;
        let mut hg_state: Option<Vec<Var<'t>>> = None;

        let mut t_done = 0;
        let mut beta = 0;
        while t_done < cfg.t_f {
            let steps = cfg.t_p.min(cfg.t_f - t_done);
            let encoded = encode_observation_graph(tape, store, &self.enc, &cur, ab.equal_attention)?;

            if beta == 0 || ab.dynamic {
                if ab.pairwise {
                    let z_raw = match sampling {
                        RelationSampling::NoRelation => {
                            tape.constant(one_hot_no_relation(p, cfg.l_cg))
                        }
                        RelationSampling::Stochastic => {
                            let g = sample_gumbel(p, cfg.l_cg, rng);
                            infer_relation_types(tape, encoded.e2_cg, cfg.tau_g, Some(&g))
                        }
                        RelationSampling::Frozen(fz) => {
                            infer_relation_types(tape, encoded.e2_cg, cfg.tau_g, Some(&fz.cg_types[beta]))
                        }
                        RelationSampling::Expected => {
                            infer_relation_types(tape, encoded.e2_cg, cfg.tau_g, None)
                        }
                    };
                    let z = if ab.dynamic && !matches!(sampling, RelationSampling::NoRelation) {
                        let (z_next, state) = self.evo_cg.step(tape, store, z_raw, cg_state.take());
                        cg_state = Some(state);
                        z_next
                    } else {
                        z_raw
                    };
                    z_cg_list.push(z);
                }
                if ab.groupwise {
                    if matches!(sampling, RelationSampling::NoRelation) {
                        let inc = infer_hypergraph_topology(
                            tape,
                            store,
                            &self.hg,
                            encoded.v1,
                            cfg.tau_g,
                            IncidenceMode::Expected,
                        );
                        incidences.push(inc);
                        z_hg_list.push(tape.constant(one_hot_no_relation(cfg.m, cfg.l_hg)));
                    } else {
                        let fresh_noise;
                        let mode = match sampling {
                            RelationSampling::Stochastic => {
                                fresh_noise = sample_incidence_noise(n, cfg.m, rng);
                                IncidenceMode::Sampled(&fresh_noise)
                            }
                            RelationSampling::Frozen(fz) => {
                                IncidenceMode::Relaxed(&fz.incidence[beta])
                            }
                            _ => IncidenceMode::Expected,
                        };
                        let inc = infer_hypergraph_topology(
                            tape,
                            store,
                            &self.hg,
                            encoded.v1,
                            cfg.tau_g,
                            mode,
                        );
                        let hg_out = hypergraph_message_pass(
                            tape,
                            store,
                            &self.hg,
                            encoded.v1,
                            encoded.alpha,
                            &inc,
                            ab.equal_attention,
                        );
                        let z_raw = match sampling {
                            RelationSampling::Stochastic => {
                                let g = sample_gumbel(cfg.m, cfg.l_hg, rng);
                                infer_relation_types(tape, hg_out.e2, cfg.tau_g, Some(&g))
                            }
                            RelationSampling::Frozen(fz) => {
                                infer_relation_types(tape, hg_out.e2, cfg.tau_g, Some(&fz.hg_types[beta]))
                            }
                            _ => infer_relation_types(tape, hg_out.e2, cfg.tau_g, None),
                        };
                        let z = if ab.dynamic {
                            let (z_next, state) = self.evo_hg.step(tape, store, z_raw, hg_state.take());
                            hg_state = Some(state);
                            z_next
                        } else {
                            z_raw
                        };
                        incidences.push(inc);
                        z_hg_list.push(z);
                    }
                }
            }

            let z_cg_cur = z_cg_list.last().copied();
            let hg_cur = incidences.last().map(|inc| {
                (
                    inc,
                    *z_hg_list.last().expect("hyperedge types accompany incidences"),
                )
            });
            let v_tilde =
                aggregate_relation_features(tape, store, &self.dec, encoded.v1, z_cg_cur, hg_cur);
            let x_last = tape.constant(cur.slice(s![.., cfg.t_h * 2 - 2..]).to_owned());
            let pos = decode_period(tape, store, &self.dec, v_tilde, x_last, steps);
            mean.slice_mut(s![.., 2 * t_done..2 * (t_done + steps)])
                .assign(&pos.value());
            period_means.push(pos);

            let produced: Array2<f64> = match teacher {
                Some(gt) => gt.slice(s![.., 2 * t_done..2 * (t_done + steps)]).to_owned(),
                None => pos.value().as_ref().clone(),
            };
            cur = advance_window(&cur, &produced, cfg.t_h);

            t_done += steps;
            beta += 1;
        }

        Ok(RolloutOutput {
            period_means,
            mean,
            z_cg: z_cg_list,
            z_hg: z_hg_list,
            incidences,
        })
    }

    /// Feed-back rollout with both relational aggregates pinned to zero,
    /// bypassing the encoder and relation modules entirely. A rollout whose
    /// type distributions put all mass on the no-relation type produces
    /// bit-identical positions.
    pub fn rollout_relation_free(
        &self,
        store: &ParamStore,
        hist: &Array2<f64>,
    ) -> Result<Array2<f64>, PredictorError> {
        let cfg = &self.cfg;
        self.check_window(hist)?;
        let n = hist.nrows();
        let tape = Tape::new();
        let mut cur = hist.clone();
        let mut mean = Array2::zeros((n, cfg.t_f * 2));
        let mut t_done = 0;
        while t_done < cfg.t_f {
            let steps = cfg.t_p.min(cfg.t_f - t_done);
            let v_tilde = relation_free_features(&tape, store, &self.dec, n);
            let x_last = tape.constant(cur.slice(s![.., cfg.t_h * 2 - 2..]).to_owned());
            let pos = decode_period(&tape, store, &self.dec, v_tilde, x_last, steps);
            mean.slice_mut(s![.., 2 * t_done..2 * (t_done + steps)])
                .assign(&pos.value());
            let produced = pos.value().as_ref().clone();
            cur = advance_window(&cur, &produced, cfg.t_h);
            t_done += steps;
        }
        Ok(mean)
    }

    /// `s` stochastic feed-back rollouts, each with fresh relation samples on
    /// its own tape. Returns the predicted mean trajectories.
    pub fn sample_rollouts(
        &self,
        store: &ParamStore,
        hist: &Array2<f64>,
        s: usize,
        rng: &mut impl Rng,
    ) -> Result<Vec<Array2<f64>>, PredictorError> {
        (0..s)
            .map(|_| {
                let tape = Tape::new();
                self.rollout(&tape, store, hist, None, RelationSampling::Stochastic, rng)
                    .map(|r| r.mean)
            })
            .collect()
    }

    /// Noise-free feed-back rollout.
    pub fn predict_expected(
        &self,
        store: &ParamStore,
        hist: &Array2<f64>,
    ) -> Result<Array2<f64>, PredictorError> {
        let tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0); // never consulted
        self.rollout(&tape, store, hist, None, RelationSampling::Expected, &mut rng)
            .map(|r| r.mean)
    }

    /// Noise-free hyperedge membership for one observed window: the hard 0/1
    /// incidence and the underlying membership probabilities, both `(N, M)`.
    pub fn infer_expected_incidence(
        &self,
        store: &ParamStore,
        hist: &Array2<f64>,
    ) -> Result<(Array2<f64>, Array2<f64>), PredictorError> {
        self.check_window(hist)?;
        let tape = Tape::new();
        let encoded = encode_observation_graph(
            &tape,
            store,
            &self.enc,
            hist,
            self.cfg.ablation.equal_attention,
        )?;
        let inc = infer_hypergraph_topology(
            &tape,
            store,
            &self.hg,
            encoded.v1,
            self.cfg.tau_g,
            IncidenceMode::Expected,
        );
        Ok((inc.hard.clone(), inc.i_pim.value().as_ref().clone()))
    }
}
