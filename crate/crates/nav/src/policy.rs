//! Attention-based recurrent actor-critic for the navigation task.
//!
//! The policy reads a censored navigation state ([`MdpState`]): every visible
//! human and every obstacle becomes one entity row carrying its current
//! kinematics plus its predicted positions, all expressed relative to the
//! robot. Two attention stages condense those rows — an eight-head
//! entity–entity stage whose logits between distinct obstacle pairs are
//! masked (static objects do not interact with each other), then a
//! single-head stage whose key comes from the robot's own embedding — and a
//! one-layer GRU integrates the pooled result over time. Fully connected
//! heads emit the state value and a diagonal-Gaussian distribution over the
//! desired velocity; the environment clamps executed speeds to the robot's
//! maximum, so the network itself is unconstrained.

use ndarray::Array2;
use rand::Rng;

use evolvenav_nnet::{Gru, Linear, ParamStore, Tape, Var};

use crate::env::MdpState;
use crate::NavError;

/// Per-entity feature count before the predicted-position block: relative
/// position (2), velocity (2), radius (1).
const ENTITY_BASE_DIM: usize = 5;
/// Robot feature count: goal offset (2), velocity (2), max speed, radius.
const ROBOT_DIM: usize = 6;
/// `ln(2π)`, the Gaussian normalizer per pair of dimensions.
const LN_2PI: f64 = 1.837877066409345;

/// Architecture hyperparameters.
#[derive(Debug, Clone)]
pub struct PolicyConfig {
    /// Shared embedding width for both attention stages and the GRU.
    pub embed_dim: usize,
    /// Heads in the entity–entity attention stage.
    pub n_heads: usize,
    /// Predicted steps carried per entity; must match the environment's
    /// prediction horizon.
    pub t_f: usize,
    /// Initial value of the learnable per-dimension log standard deviation.
    pub log_std_init: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            embed_dim: 128,
            n_heads: 8,
            t_f: 12,
            log_std_init: 0.5f64.ln(),
        }
    }
}

impl PolicyConfig {
    /// Columns of one entity row: base kinematics plus `t_f` predicted
    /// offsets.
    pub fn entity_dim(&self) -> usize {
        ENTITY_BASE_DIM + 2 * self.t_f
    }

    fn validate(&self) -> Result<(), NavError> {
        if self.embed_dim == 0 || self.n_heads == 0 {
            return Err(NavError::Config("embed_dim and n_heads must be positive".into()));
        }
        if self.embed_dim % self.n_heads != 0 {
            return Err(NavError::Config(format!(
                "embed_dim {} not divisible by n_heads {}",
                self.embed_dim, self.n_heads
            )));
        }
        if !self.log_std_init.is_finite() {
            return Err(NavError::Config("log_std_init must be finite".into()));
        }
        Ok(())
    }
}

/// Network-ready view of one observation.
#[derive(Debug, Clone)]
pub struct PolicyInput {
    /// `(1, 6)` robot features: goal offset, velocity, max speed, radius.
    pub robot: Array2<f64>,
    /// `(n_entities, 5 + 2 t_f)` entity rows, humans first then obstacles.
    pub entities: Array2<f64>,
    /// One flag per entity row; `true` marks a static obstacle.
    pub obstacle: Vec<bool>,
}

impl PolicyInput {
    /// Flattens an observed state into network features. Everything spatial
    /// is expressed relative to the robot's position so the policy is
    /// translation invariant. Obstacles become entities with zero velocity
    /// whose "predicted" positions simply repeat their location.
    pub fn from_state(state: &MdpState, t_f: usize) -> Result<Self, NavError> {
        let n_h = state.humans.len();
        if n_h > 0 && state.predictions.dim() != (n_h, 2 * t_f) {
            return Err(NavError::Config(format!(
                "prediction block is {:?}, policy expects ({n_h}, {})",
                state.predictions.dim(),
                2 * t_f
            )));
        }
        let r = &state.robot;
        let d_e = ENTITY_BASE_DIM + 2 * t_f;
        let n_e = n_h + state.obstacles.len();
        let mut entities = Array2::zeros((n_e, d_e));
        let mut obstacle = vec![false; n_e];
        for (i, h) in state.humans.iter().enumerate() {
            entities[(i, 0)] = h.pos.x - r.pos.x;
            entities[(i, 1)] = h.pos.y - r.pos.y;
            entities[(i, 2)] = h.vel.x;
            entities[(i, 3)] = h.vel.y;
            entities[(i, 4)] = h.radius;
            for k in 0..t_f {
                entities[(i, 5 + 2 * k)] = state.predictions[(i, 2 * k)] - r.pos.x;
                entities[(i, 5 + 2 * k + 1)] = state.predictions[(i, 2 * k + 1)] - r.pos.y;
            }
        }
        for (j, o) in state.obstacles.iter().enumerate() {
            let i = n_h + j;
            let dx = o.center.x - r.pos.x;
            let dy = o.center.y - r.pos.y;
            entities[(i, 0)] = dx;
            entities[(i, 1)] = dy;
            entities[(i, 4)] = o.radius;
            for k in 0..t_f {
                entities[(i, 5 + 2 * k)] = dx;
                entities[(i, 5 + 2 * k + 1)] = dy;
            }
            obstacle[i] = true;
        }
        let robot = Array2::from_shape_vec(
            (1, ROBOT_DIM),
            vec![
                r.goal.x - r.pos.x,
                r.goal.y - r.pos.y,
                r.vel.x,
                r.vel.y,
                r.v_max,
                r.radius,
            ],
        )
        .expect("robot feature shape");
        Ok(Self { robot, entities, obstacle })
    }
}

/// Differentiable outputs of one policy step.
pub struct PolicyOutput<'t> {
    /// `(1, 2)` Gaussian mean over desired velocity.
    pub mean: Var<'t>,
    /// `(1, 2)` learnable log standard deviation.
    pub log_std: Var<'t>,
    /// `(1, 1)` state value estimate.
    pub value: Var<'t>,
}

/// Plain-number outputs of one policy step, for rollout collection where no
/// backward pass is needed.
#[derive(Debug, Clone)]
pub struct StepEval {
    /// `(1, 2)` action mean.
    pub mean: Array2<f64>,
    /// `(1, 2)` log standard deviation.
    pub log_std: Array2<f64>,
    /// Scalar value estimate.
    pub value: f64,
    /// New recurrent state, one `(1, hidden)` array per GRU layer.
    pub hidden: Vec<Array2<f64>>,
}

/// The actor-critic network. Parameters live in a [`ParamStore`] under the
/// `policy.` prefix, so checkpointing and optimizer state reuse the same
/// machinery as every other model in the workspace.
pub struct PolicyNet {
    pub cfg: PolicyConfig,
    wq_hho: Linear,
    wk_hho: Linear,
    wv_hho: Linear,
    wo_hho: Linear,
    wq_rho: Linear,
    wk_rho: Linear,
    wv_rho: Linear,
    robot_embed: Linear,
    gru: Gru,
    value_head: Linear,
    mean_head: Linear,
    log_std: String,
}

impl PolicyNet {
    /// Registers fresh parameters in `store`. To reload a checkpoint, build
    /// the net with the same config and restore the store afterwards.
    pub fn new(
        store: &mut ParamStore,
        cfg: PolicyConfig,
        rng: &mut impl Rng,
    ) -> Result<Self, NavError> {
        cfg.validate()?;
        let h = cfg.embed_dim;
        let d_e = cfg.entity_dim();
        let net = Self {
            wq_hho: Linear::new(store, "policy.hho.q", d_e, h, rng),
            wk_hho: Linear::new(store, "policy.hho.k", d_e, h, rng),
            wv_hho: Linear::new(store, "policy.hho.v", d_e, h, rng),
            wo_hho: Linear::new(store, "policy.hho.o", h, h, rng),
            wq_rho: Linear::new(store, "policy.rho.q", h, h, rng),
            wk_rho: Linear::new(store, "policy.rho.k", h, h, rng),
            wv_rho: Linear::new(store, "policy.rho.v", h, h, rng),
            robot_embed: Linear::new(store, "policy.robot", ROBOT_DIM, h, rng),
            gru: Gru::new(store, "policy.gru", 2 * h, h, 1, rng),
            value_head: Linear::new(store, "policy.value", h, 1, rng),
            mean_head: Linear::new(store, "policy.mean", h, 2, rng),
            log_std: "policy.log_std".to_string(),
            cfg,
        };
        store
            .insert(&net.log_std, Array2::from_elem((1, 2), net.cfg.log_std_init))
            .map_err(NavError::Nnet)?;
        Ok(net)
    }

    /// Width of the recurrent state.
    pub fn hidden_dim(&self) -> usize {
        self.gru.hidden()
    }

    /// Zero recurrent state as plain arrays (one per GRU layer).
    pub fn zero_hidden(&self) -> Vec<Array2<f64>> {
        self.gru
            .layers
            .iter()
            .map(|l| Array2::zeros((1, l.hidden)))
            .collect()
    }

    /// Entity–entity attention: per-head masked softmax over all entities,
    /// heads concatenated and mixed by an output projection. Returns `None`
    /// when there are no entities (robot-only scene). The mask keeps every
    /// self-pair, so no row is ever fully masked.
    fn entity_embed_with_attn<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        input: &PolicyInput,
    ) -> Option<(Var<'t>, Vec<Var<'t>>)> {
        let n_e = input.entities.nrows();
        if n_e == 0 {
            return None;
        }
        let head_dim = self.cfg.embed_dim / self.cfg.n_heads;
        let x = tape.constant(input.entities.clone());
        let q = self.wq_hho.forward(tape, store, x);
        let k = self.wk_hho.forward(tape, store, x);
        let v = self.wv_hho.forward(tape, store, x);
        let mask = hho_mask(&input.obstacle);
        let mut heads = Vec::with_capacity(self.cfg.n_heads);
        let mut attns = Vec::with_capacity(self.cfg.n_heads);
        for hh in 0..self.cfg.n_heads {
            let cols = hh * head_dim..(hh + 1) * head_dim;
            let qh = q.slice_cols(cols.clone());
            let kh = k.slice_cols(cols.clone());
            let vh = v.slice_cols(cols);
            let logits = qh
                .matmul(kh.transpose())
                .scale(1.0 / (head_dim as f64).sqrt());
            let attn = logits.softmax_rows_masked(&mask);
            heads.push(attn.matmul(vh));
            attns.push(attn);
        }
        let concat = Var::concat_cols(&heads);
        Some((self.wo_hho.forward(tape, store, concat), attns))
    }

    /// Robot-keyed attention pool: queries and values from the entity
    /// embeddings, the single key from the robot embedding, softmax across
    /// entities. Returns the pooled `(1, embed)` vector and the attention
    /// weights `(1, n_entities)`.
    fn rho_with_attn<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        v_hho: Var<'t>,
        h_r: Var<'t>,
    ) -> (Var<'t>, Var<'t>) {
        let q = self.wq_rho.forward(tape, store, v_hho);
        let v = self.wv_rho.forward(tape, store, v_hho);
        let k = self.wk_rho.forward(tape, store, h_r);
        let scores = q
            .matmul(k.transpose())
            .scale(1.0 / (self.cfg.embed_dim as f64).sqrt());
        let alpha = scores.transpose().softmax_rows();
        (alpha.matmul(v), alpha)
    }

    /// One recurrent step. `hidden` holds one `(1, hidden)` state per GRU
    /// layer and is replaced with the new states.
    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        input: &PolicyInput,
        hidden: &mut Vec<Var<'t>>,
    ) -> PolicyOutput<'t> {
        let w = tape.constant(input.robot.clone());
        let h_r = self.robot_embed.forward(tape, store, w);
        let v_rho = match self.entity_embed_with_attn(tape, store, input) {
            Some((v_hho, _)) => self.rho_with_attn(tape, store, v_hho, h_r).0,
            None => tape.constant(Array2::zeros((1, self.cfg.embed_dim))),
        };
        let gru_in = Var::concat_cols(&[v_rho, h_r]);
        let out = self.gru.forward(tape, store, gru_in, hidden);
        PolicyOutput {
            mean: self.mean_head.forward(tape, store, out),
            log_std: tape.param(store, &self.log_std),
            value: self.value_head.forward(tape, store, out),
        }
    }

    /// Forward pass without graph bookkeeping, for action selection during
    /// rollouts and evaluation.
    pub fn step_numeric(
        &self,
        store: &ParamStore,
        input: &PolicyInput,
        hidden: &[Array2<f64>],
    ) -> StepEval {
        let tape = Tape::new();
        let mut hs: Vec<Var<'_>> = hidden.iter().map(|h| tape.constant(h.clone())).collect();
        let out = self.forward(&tape, store, input, &mut hs);
        StepEval {
            mean: (*out.mean.value()).clone(),
            log_std: (*out.log_std.value()).clone(),
            value: out.value.scalar(),
            hidden: hs.into_iter().map(|h| (*h.value()).clone()).collect(),
        }
    }
}

/// Attention mask over entity pairs: `0` between two *distinct* obstacles
/// (static objects don't influence each other), `1` elsewhere. Keeping the
/// self-pair guarantees every row has at least one admissible key.
fn hho_mask(obstacle: &[bool]) -> Array2<f64> {
    let n = obstacle.len();
    Array2::from_shape_fn((n, n), |(i, j)| {
        if i != j && obstacle[i] && obstacle[j] {
            0.0
        } else {
            1.0
        }
    })
}

/// Standard normal draw via Box-Muller.
fn gauss(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Draws `a ~ N(mean, diag(exp(log_std))²)`.
pub fn sample_action(
    mean: &Array2<f64>,
    log_std: &Array2<f64>,
    rng: &mut impl Rng,
) -> [f64; 2] {
    [
        mean[(0, 0)] + log_std[(0, 0)].exp() * gauss(rng),
        mean[(0, 1)] + log_std[(0, 1)].exp() * gauss(rng),
    ]
}

/// Log density of `action` under the diagonal Gaussian, as a plain number.
pub fn gaussian_log_prob(mean: &Array2<f64>, log_std: &Array2<f64>, action: [f64; 2]) -> f64 {
    let mut lp = 0.0;
    for d in 0..2 {
        let sigma = log_std[(0, d)].exp();
        let z = (action[d] - mean[(0, d)]) / sigma;
        lp -= 0.5 * z * z + log_std[(0, d)] + 0.5 * LN_2PI;
    }
    lp
}

/// Log density of a fixed `action` as a differentiable `(1, 1)` node, for the
/// PPO probability ratio.
pub fn log_prob_var<'t>(
    tape: &'t Tape,
    mean: Var<'t>,
    log_std: Var<'t>,
    action: [f64; 2],
) -> Var<'t> {
    let a = tape.constant(Array2::from_shape_vec((1, 2), action.to_vec()).expect("action shape"));
    let z = a.sub(mean).div(log_std.exp());
    let per_dim = z.mul(z).scale(0.5).add(log_std);
    per_dim.sum_all().neg().add_scalar(-LN_2PI)
}

/// Differential entropy of the diagonal Gaussian as a `(1, 1)` node:
/// `Σ_d (log σ_d + ½(1 + ln 2π))`.
pub fn entropy_var<'t>(log_std: Var<'t>) -> Var<'t> {
    log_std.sum_all().add_scalar(1.0 + LN_2PI)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use evolvenav_sim::{ObstacleSpec, Vec2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use crate::env::{RobotState, VisibleHuman};

    fn small_cfg() -> PolicyConfig {
        PolicyConfig {
            embed_dim: 8,
            n_heads: 2,
            t_f: 2,
            ..PolicyConfig::default()
        }
    }

    fn randomize(store: &mut ParamStore, rng: &mut impl Rng) {
        let names: Vec<String> = store.names().map(str::to_string).collect();
        for name in names {
            let mut value = (*store.get(&name)).clone();
            value.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
            store.set(&name, value).unwrap();
        }
    }

    fn random_input(cfg: &PolicyConfig, n_e: usize, obstacle: Vec<bool>, rng: &mut impl Rng) -> PolicyInput {
        assert_eq!(obstacle.len(), n_e);
        PolicyInput {
            robot: Array2::from_shape_fn((1, ROBOT_DIM), |_| rng.gen_range(-1.0..1.0)),
            entities: Array2::from_shape_fn((n_e, cfg.entity_dim()), |_| rng.gen_range(-1.0..1.0)),
            obstacle,
        }
    }

    #[test]
    fn config_rejects_indivisible_heads() {
        let cfg = PolicyConfig {
            embed_dim: 10,
            n_heads: 4,
            ..PolicyConfig::default()
        };
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(PolicyNet::new(&mut store, cfg, &mut rng).is_err());
    }

    #[test]
    fn single_entity_embedding_is_its_value_pathway() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = PolicyNet::new(&mut store, small_cfg(), &mut rng).unwrap();
        randomize(&mut store, &mut rng);
        let input = random_input(&net.cfg, 1, vec![false], &mut rng);

        let tape = Tape::new();
        let (v_hho, _) = net.entity_embed_with_attn(&tape, &store, &input).unwrap();
        // With one entity every head's softmax is the scalar 1, so attention
        // passes the value projection straight through to the output mix.
        let x = tape.constant(input.entities.clone());
        let oracle = net
            .wo_hho
            .forward(&tape, &store, net.wv_hho.forward(&tape, &store, x));
        let got = v_hho.value();
        let want = oracle.value();
        for (g, w) in got.iter().zip(want.iter()) {
            assert_abs_diff_eq!(g, w, epsilon = 1e-12);
        }
    }

    #[test]
    fn distinct_obstacle_pairs_carry_exactly_zero_weight() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = PolicyNet::new(&mut store, small_cfg(), &mut rng).unwrap();
        randomize(&mut store, &mut rng);
        // Rows: one human, then two obstacles.
        let input = random_input(&net.cfg, 3, vec![false, true, true], &mut rng);

        let tape = Tape::new();
        let (_, attns) = net.entity_embed_with_attn(&tape, &store, &input).unwrap();
        assert_eq!(attns.len(), net.cfg.n_heads);
        for attn in &attns {
            let a = attn.value();
            assert_eq!(a[(1, 2)], 0.0, "obstacle 1 must ignore obstacle 2");
            assert_eq!(a[(2, 1)], 0.0, "obstacle 2 must ignore obstacle 1");
            // The human row and the obstacle self-pairs stay live.
            assert!(a[(0, 1)] > 0.0 && a[(0, 2)] > 0.0);
            assert!(a[(1, 1)] > 0.0 && a[(2, 2)] > 0.0);
        }
    }

    #[test]
    fn obstacle_embedding_ignores_the_other_obstacle() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = PolicyNet::new(&mut store, small_cfg(), &mut rng).unwrap();
        randomize(&mut store, &mut rng);
        let input = random_input(&net.cfg, 2, vec![true, true], &mut rng);
        let mut perturbed = input.clone();
        for c in 0..net.cfg.entity_dim() {
            perturbed.entities[(1, c)] += 10.0;
        }

        let tape = Tape::new();
        let (base, _) = net.entity_embed_with_attn(&tape, &store, &input).unwrap();
        let (moved, _) = net.entity_embed_with_attn(&tape, &store, &perturbed).unwrap();
        let b = base.value();
        let m = moved.value();
        for c in 0..net.cfg.embed_dim {
            assert_abs_diff_eq!(b[(0, c)], m[(0, c)], epsilon = 1e-12);
        }
    }

    #[test]
    fn attention_rows_sum_to_one_across_random_scenes() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = PolicyNet::new(&mut store, small_cfg(), &mut rng).unwrap();
        randomize(&mut store, &mut rng);
        for _ in 0..100 {
            let n_e = rng.gen_range(1..6);
            let obstacle: Vec<bool> = (0..n_e).map(|_| rng.gen_bool(0.5)).collect();
            let input = random_input(&net.cfg, n_e, obstacle, &mut rng);
            let tape = Tape::new();
            let (_, attns) = net.entity_embed_with_attn(&tape, &store, &input).unwrap();
            for attn in &attns {
                let a = attn.value();
                for i in 0..n_e {
                    let row: f64 = (0..n_e).map(|j| a[(i, j)]).sum();
                    assert_abs_diff_eq!(row, 1.0, epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn single_entity_pool_is_its_value_projection() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = PolicyNet::new(&mut store, small_cfg(), &mut rng).unwrap();
        randomize(&mut store, &mut rng);
        let input = random_input(&net.cfg, 1, vec![false], &mut rng);

        let tape = Tape::new();
        let (v_hho, _) = net.entity_embed_with_attn(&tape, &store, &input).unwrap();
        let w = tape.constant(input.robot.clone());
        let h_r = net.robot_embed.forward(&tape, &store, w);
        let (pooled, alpha) = net.rho_with_attn(&tape, &store, v_hho, h_r);
        assert_abs_diff_eq!(alpha.value()[(0, 0)], 1.0, epsilon = 1e-12);
        let oracle = net.wv_rho.forward(&tape, &store, v_hho);
        let got = pooled.value();
        let want = oracle.value();
        for (g, o) in got.iter().zip(want.iter()) {
            assert_abs_diff_eq!(g, o, epsilon = 1e-12);
        }
    }

    #[test]
    fn pooled_embedding_matches_loop_oracle() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let net = PolicyNet::new(&mut store, small_cfg(), &mut rng).unwrap();
        randomize(&mut store, &mut rng);
        let input = random_input(&net.cfg, 4, vec![false, false, true, false], &mut rng);

        let tape = Tape::new();
        let (v_hho, _) = net.entity_embed_with_attn(&tape, &store, &input).unwrap();
        let w = tape.constant(input.robot.clone());
        let h_r = net.robot_embed.forward(&tape, &store, w);
        let (pooled, _) = net.rho_with_attn(&tape, &store, v_hho, h_r);

        // Scalar re-computation: one query row per entity against the single
        // robot key, softmax over entities, weighted sum of value rows.
        let emb = v_hho.value();
        let hr = h_r.value();
        let lin = |x: &Array2<f64>, prefix: &str| -> Array2<f64> {
            x.dot(&*store.get(&format!("{prefix}.w"))) + &*store.get(&format!("{prefix}.b"))
        };
        let q = lin(&emb, "policy.rho.q");
        let v = lin(&emb, "policy.rho.v");
        let k = lin(&hr, "policy.rho.k");
        let h = net.cfg.embed_dim;
        let scores: Vec<f64> = (0..4)
            .map(|i| (0..h).map(|c| q[(i, c)] * k[(0, c)]).sum::<f64>() / (h as f64).sqrt())
            .collect();
        let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
        let z: f64 = weights.iter().sum();
        let got = pooled.value();
        for c in 0..h {
            let want: f64 = (0..4).map(|i| weights[i] / z * v[(i, c)]).sum();
            assert_abs_diff_eq!(got[(0, c)], want, epsilon = 1e-9);
        }
    }

    #[test]
    fn duplicated_entities_attend_identically() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let net = PolicyNet::new(&mut store, small_cfg(), &mut rng).unwrap();
        randomize(&mut store, &mut rng);
        let mut input = random_input(&net.cfg, 3, vec![false, false, false], &mut rng);
        for c in 0..net.cfg.entity_dim() {
            input.entities[(1, c)] = input.entities[(0, c)];
        }

        let tape = Tape::new();
        let (v_hho, _) = net.entity_embed_with_attn(&tape, &store, &input).unwrap();
        let emb = v_hho.value();
        for c in 0..net.cfg.embed_dim {
            assert_abs_diff_eq!(emb[(0, c)], emb[(1, c)], epsilon = 1e-12);
        }
        let w = tape.constant(input.robot.clone());
        let h_r = net.robot_embed.forward(&tape, &store, w);
        let (_, alpha) = net.rho_with_attn(&tape, &store, v_hho, h_r);
        let a = alpha.value();
        assert_abs_diff_eq!(a[(0, 0)], a[(0, 1)], epsilon = 1e-12);
    }

    #[test]
    fn forward_is_deterministic() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let net = PolicyNet::new(&mut store, small_cfg(), &mut rng).unwrap();
        let input = random_input(&net.cfg, 2, vec![false, true], &mut rng);
        let a = net.step_numeric(&store, &input, &net.zero_hidden());
        let b = net.step_numeric(&store, &input, &net.zero_hidden());
        assert_eq!(a.mean, b.mean);
        assert_eq!(a.value, b.value);
        assert_eq!(a.hidden, b.hidden);
    }

    #[test]
    fn robot_only_scene_uses_zero_pool() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = PolicyNet::new(&mut store, small_cfg(), &mut rng).unwrap();
        randomize(&mut store, &mut rng);
        let input = PolicyInput {
            robot: Array2::from_shape_fn((1, ROBOT_DIM), |_| rng.gen_range(-1.0..1.0)),
            entities: Array2::zeros((0, net.cfg.entity_dim())),
            obstacle: vec![],
        };
        let eval = net.step_numeric(&store, &input, &net.zero_hidden());
        assert!(eval.mean.iter().all(|m| m.is_finite()));
        assert!(eval.value.is_finite());
    }

    #[test]
    fn log_prob_of_the_mean_is_the_normalizer() {
        let mean = Array2::from_shape_vec((1, 2), vec![0.3, -0.7]).unwrap();
        let log_std: Array2<f64> = Array2::from_shape_vec((1, 2), vec![0.2, -0.4]).unwrap();
        let want: f64 = -log_std
            .iter()
            .map(|&s| (s.exp() * (2.0 * std::f64::consts::PI).sqrt()).ln())
            .sum::<f64>();
        let got = gaussian_log_prob(&mean, &log_std, [0.3, -0.7]);
        assert_abs_diff_eq!(got, want, epsilon = 1e-12);

        let tape = Tape::new();
        let m = tape.constant(mean.clone());
        let s = tape.constant(log_std.clone());
        let node = log_prob_var(&tape, m, s, [0.3, -0.7]);
        assert_abs_diff_eq!(node.scalar(), want, epsilon = 1e-12);
    }

    #[test]
    fn graph_log_prob_matches_numeric_off_mean() {
        let mean = Array2::from_shape_vec((1, 2), vec![0.1, 0.9]).unwrap();
        let log_std = Array2::from_shape_vec((1, 2), vec![-0.3, 0.5]).unwrap();
        let action = [0.8, -1.2];
        let tape = Tape::new();
        let m = tape.constant(mean.clone());
        let s = tape.constant(log_std.clone());
        let node = log_prob_var(&tape, m, s, action);
        assert_abs_diff_eq!(
            node.scalar(),
            gaussian_log_prob(&mean, &log_std, action),
            epsilon = 1e-12
        );
    }

    #[test]
    fn entropy_matches_the_analytic_formula() {
        let log_std = Array2::from_shape_vec((1, 2), vec![0.25, -0.6]).unwrap();
        let want: f64 = (0..2usize)
            .map(|d| log_std[(0, d)] + 0.5 * (1.0 + LN_2PI))
            .sum();
        let tape = Tape::new();
        let s = tape.constant(log_std);
        assert_abs_diff_eq!(entropy_var(s).scalar(), want, epsilon = 1e-12);
    }

    #[test]
    fn stepwise_hidden_carry_matches_rolled_sequence() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let net = PolicyNet::new(&mut store, small_cfg(), &mut rng).unwrap();
        randomize(&mut store, &mut rng);
        let in1 = random_input(&net.cfg, 2, vec![false, true], &mut rng);
        let in2 = random_input(&net.cfg, 3, vec![false, false, false], &mut rng);

        // Rolled: both steps share one tape and the hidden Var chain.
        let tape = Tape::new();
        let mut hs: Vec<Var<'_>> = net
            .zero_hidden()
            .into_iter()
            .map(|h| tape.constant(h))
            .collect();
        net.forward(&tape, &store, &in1, &mut hs);
        let rolled = net.forward(&tape, &store, &in2, &mut hs);

        // Stepwise: numeric hidden hand-off between two fresh tapes.
        let s1 = net.step_numeric(&store, &in1, &net.zero_hidden());
        let s2 = net.step_numeric(&store, &in2, &s1.hidden);

        let rm = rolled.mean.value();
        for d in 0..2 {
            assert_abs_diff_eq!(rm[(0, d)], s2.mean[(0, d)], epsilon = 1e-9);
        }
        assert_abs_diff_eq!(rolled.value.scalar(), s2.value, epsilon = 1e-9);
    }

    #[test]
    fn value_is_invariant_to_entity_permutation() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = PolicyNet::new(&mut store, small_cfg(), &mut rng).unwrap();
        randomize(&mut store, &mut rng);
        let input = random_input(&net.cfg, 4, vec![false, true, false, false], &mut rng);
        let perm = [2usize, 0, 3, 1];
        let mut shuffled = input.clone();
        for (new_row, &old_row) in perm.iter().enumerate() {
            for c in 0..net.cfg.entity_dim() {
                shuffled.entities[(new_row, c)] = input.entities[(old_row, c)];
            }
            shuffled.obstacle[new_row] = input.obstacle[old_row];
        }
        let a = net.step_numeric(&store, &input, &net.zero_hidden());
        let b = net.step_numeric(&store, &shuffled, &net.zero_hidden());
        assert_abs_diff_eq!(a.value, b.value, epsilon = 1e-6);
        for d in 0..2 {
            assert_abs_diff_eq!(a.mean[(0, d)], b.mean[(0, d)], epsilon = 1e-6);
        }
    }

    #[test]
    fn from_state_lays_out_features_relative_to_the_robot() {
        let state = MdpState {
            robot: RobotState {
                pos: Vec2::new(1.0, 2.0),
                vel: Vec2::new(0.1, 0.2),
                goal: Vec2::new(4.0, 6.0),
                v_max: 1.0,
                radius: 0.3,
                sensor_range: 5.0,
            },
            humans: vec![VisibleHuman {
                index: 0,
                pos: Vec2::new(2.0, 3.0),
                vel: Vec2::new(1.0, 0.0),
                radius: 0.4,
                group_id: 0,
            }],
            histories: Array2::zeros((1, 8)),
            predictions: Array2::from_shape_vec((1, 4), vec![3.0, 4.0, 5.0, 6.0]).unwrap(),
            obstacles: vec![ObstacleSpec {
                center: Vec2::new(0.0, 0.0),
                radius: 0.5,
            }],
        };
        let input = PolicyInput::from_state(&state, 2).unwrap();
        assert_eq!(input.robot.as_slice().unwrap(), &[3.0, 4.0, 0.1, 0.2, 1.0, 0.3]);
        assert_eq!(input.obstacle, vec![false, true]);
        let human_row: Vec<f64> = (0..9).map(|c| input.entities[(0, c)]).collect();
        assert_eq!(human_row, vec![1.0, 1.0, 1.0, 0.0, 0.4, 2.0, 2.0, 4.0, 4.0]);
        let obstacle_row: Vec<f64> = (0..9).map(|c| input.entities[(1, c)]).collect();
        assert_eq!(obstacle_row, vec![-1.0, -2.0, 0.0, 0.0, 0.5, -1.0, -2.0, -1.0, -2.0]);

        // Horizon mismatch between environment and policy is a config error.
        assert!(PolicyInput::from_state(&state, 3).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let net = PolicyNet::new(&mut store, small_cfg(), &mut rng).unwrap();
        randomize(&mut store, &mut rng);
        let in1 = random_input(&net.cfg, 3, vec![false, true, true], &mut rng);
        let in2 = random_input(&net.cfg, 2, vec![false, false], &mut rng);
        let action = [0.4, -0.2];

        let loss_of = |store: &ParamStore| -> f64 {
            let tape = Tape::new();
            let mut hs: Vec<Var<'_>> = net
                .zero_hidden()
                .into_iter()
                .map(|h| tape.constant(h))
                .collect();
            net.forward(&tape, store, &in1, &mut hs);
            let out = net.forward(&tape, store, &in2, &mut hs);
            let lp = log_prob_var(&tape, out.mean, out.log_std, action);
            let ent = entropy_var(out.log_std);
            lp.add(out.value).add(ent.scale(0.01)).scalar()
        };
        let analytic = {
            let tape = Tape::new();
            let mut hs: Vec<Var<'_>> = net
                .zero_hidden()
                .into_iter()
                .map(|h| tape.constant(h))
                .collect();
            net.forward(&tape, &store, &in1, &mut hs);
            let out = net.forward(&tape, &store, &in2, &mut hs);
            let lp = log_prob_var(&tape, out.mean, out.log_std, action);
            let ent = entropy_var(out.log_std);
            let loss = lp.add(out.value).add(ent.scale(0.01));
            let grads = tape.backward(loss);
            tape.param_grads(&grads)
        };
        let mut probe_rng = ChaCha8Rng::seed_from_u64(13);
        let report = evolvenav_nnet::check_gradients(
            &mut store,
            &analytic,
            loss_of,
            4,
            1e-5,
            &mut probe_rng,
        );
        assert!(
            report.max_rel_err < 1e-4,
            "worst {} at {}",
            report.max_rel_err,
            report.worst_name
        );
    }
}
