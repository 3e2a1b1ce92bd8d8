//! Proximal policy optimization over parallel navigation environments.
//!
//! Rollouts come from a pool of independently seeded environments advanced in
//! lock step: each update round collects a fixed-length segment from every
//! environment, estimates advantages with GAE, then replays the segments
//! through the recurrent policy — hidden states restored from the stored
//! segment starts, reset at episode boundaries — to optimize the clipped
//! surrogate together with a value regression and an entropy bonus.
//! Episodes that end mid-segment roll straight into a fresh environment from
//! the caller's factory, so segments always span episode boundaries rather
//! than truncating at them.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use evolvenav_nnet::{AdamConfig, ParamStore, Tape, Var};
use evolvenav_sim::Vec2;

use crate::env::{EpisodeOutcome, Forecaster, NavEnv};
use crate::policy::{
    entropy_var, gaussian_log_prob, log_prob_var, sample_action, PolicyInput, PolicyNet,
};
use crate::NavError;

/// Optimization hyperparameters.
#[derive(Debug, Clone)]
pub struct PpoConfig {
    /// Probability-ratio clipping threshold ε.
    pub clip: f64,
    /// Parallel environments collecting rollouts.
    pub n_envs: usize,
    /// Transitions gathered per environment per update round.
    pub segment_steps: usize,
    /// Optimization passes over each collected batch.
    pub epochs_per_update: usize,
    /// Adam learning rate.
    pub lr: f64,
    /// Weight of the value-regression loss.
    pub value_coef: f64,
    /// Weight of the entropy bonus.
    pub entropy_coef: f64,
    /// GAE smoothing parameter λ.
    pub gae_lambda: f64,
    /// Return discount γ.
    pub discount_gamma: f64,
    /// Environment steps to train for.
    pub total_steps: usize,
    /// Global gradient-norm clip, if any.
    pub max_grad_norm: Option<f64>,
    /// Seed for action sampling.
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip: 0.2,
            n_envs: 16,
            segment_steps: 30,
            epochs_per_update: 4,
            lr: 4e-5,
            value_coef: 0.5,
            entropy_coef: 0.01,
            gae_lambda: 0.95,
            discount_gamma: 0.99,
            total_steps: 20_000_000,
            max_grad_norm: Some(0.5),
            seed: 0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), NavError> {
        let fail = |msg: String| Err(NavError::Config(msg));
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return fail(format!("clip must be in (0, 1), got {}", self.clip));
        }
        if self.n_envs == 0 || self.segment_steps == 0 || self.epochs_per_update == 0 {
            return fail("n_envs, segment_steps, and epochs_per_update must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail(format!("learning rate must be positive, got {}", self.lr));
        }
        if !(self.discount_gamma > 0.0 && self.discount_gamma < 1.0) {
            return fail(format!("discount must be in (0, 1), got {}", self.discount_gamma));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return fail(format!("gae_lambda must be in [0, 1], got {}", self.gae_lambda));
        }
        if !(self.value_coef >= 0.0 && self.entropy_coef >= 0.0) {
            return fail("loss coefficients must be non-negative".into());
        }
        Ok(())
    }
}

/// One recorded environment transition.
#[derive(Debug, Clone)]
pub struct Transition {
    /// Observation the action was chosen from.
    pub input: PolicyInput,
    /// Unclamped sampled action (the environment clamps speed on execution).
    pub action: [f64; 2],
    /// Log density of `action` under the collection-time policy.
    pub log_prob: f64,
    pub reward: f64,
    /// Collection-time value estimate of `input`.
    pub value: f64,
    /// Whether the episode ended on this transition.
    pub done: bool,
}

/// One environment's contribution to an update round.
#[derive(Debug, Clone)]
pub struct EnvSegment {
    /// Recurrent state at the segment start, for exact replay.
    pub start_hidden: Vec<Array2<f64>>,
    pub steps: Vec<Transition>,
    /// Value of the state following the last transition (discarded by GAE
    /// when that transition ended an episode).
    pub bootstrap_value: f64,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

/// All segments of one update round, indexed by environment.
#[derive(Debug, Clone, Default)]
pub struct RolloutBuffer {
    pub envs: Vec<EnvSegment>,
}

impl RolloutBuffer {
    /// Total transitions across environments.
    pub fn len(&self) -> usize {
        self.envs.iter().map(|e| e.steps.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Generalized advantage estimation.
///
/// With `δ_t = r_t + γ·V(s_{t+1})·(1 − done_t) − V(s_t)` the advantage obeys
/// `Â_t = δ_t + γλ·(1 − done_t)·Â_{t+1}`; `V` past the end of the slice is
/// `bootstrap_value`. Returns `(advantages, returns)` where
/// `returns_t = Â_t + V(s_t)` serves as the value-regression target.
pub fn gae_advantages(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap_value: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let t_max = rewards.len();
    assert_eq!(values.len(), t_max);
    assert_eq!(dones.len(), t_max);
    let mut advantages = vec![0.0; t_max];
    let mut acc = 0.0;
    for t in (0..t_max).rev() {
        let next_value = if t + 1 == t_max { bootstrap_value } else { values[t + 1] };
        let nonterminal = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * nonterminal - values[t];
        acc = delta + gamma * lambda * nonterminal * acc;
        advantages[t] = acc;
    }
    let returns = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    (advantages, returns)
}

/// One PPO surrogate term: `min(ratio·Â, clip(ratio, 1−ε, 1+ε)·Â)`.
pub fn clipped_surrogate_term(ratio: f64, advantage: f64, clip: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - clip, 1.0 + clip);
    (ratio * advantage).min(clipped * advantage)
}

/// One environment plus the per-episode running state the collector needs.
pub struct EnvSlot {
    pub env: NavEnv,
    hidden: Vec<Array2<f64>>,
    input: PolicyInput,
    episode_return: f64,
    episode_steps: usize,
}

impl EnvSlot {
    /// Wraps a freshly built environment: zero recurrent state, first
    /// observation featurized.
    pub fn fresh(
        env: NavEnv,
        net: &PolicyNet,
        forecaster: &Forecaster<'_>,
    ) -> Result<Self, NavError> {
        let input = PolicyInput::from_state(&env.observe(forecaster)?, net.cfg.t_f)?;
        Ok(Self {
            env,
            hidden: net.zero_hidden(),
            input,
            episode_return: 0.0,
            episode_steps: 0,
        })
    }
}

/// Record of one finished training episode.
#[derive(Debug, Clone, Copy)]
pub struct FinishedEpisode {
    pub outcome: EpisodeOutcome,
    pub ret: f64,
    pub steps: usize,
}

/// Advances every environment `segment_steps` times under the current policy
/// and packages the transitions, with GAE advantages, for the optimizer.
/// Finished episodes are appended to `finished` and their environment is
/// immediately replaced via `make_env(env_index)`. An environment fault is
/// logged, the previous transition is marked terminal so no value bootstraps
/// across the reset, and the slot is rebuilt.
#[allow(clippy::too_many_arguments)]
pub fn collect_rollouts(
    net: &PolicyNet,
    store: &ParamStore,
    slots: &mut [EnvSlot],
    forecaster: &Forecaster<'_>,
    make_env: &mut dyn FnMut(usize) -> Result<NavEnv, NavError>,
    cfg: &PpoConfig,
    rng: &mut impl Rng,
    finished: &mut Vec<FinishedEpisode>,
) -> Result<RolloutBuffer, NavError> {
    let mut segments: Vec<EnvSegment> = slots
        .iter()
        .map(|s| EnvSegment {
            start_hidden: s.hidden.clone(),
            steps: Vec::with_capacity(cfg.segment_steps),
            bootstrap_value: 0.0,
            advantages: Vec::new(),
            returns: Vec::new(),
        })
        .collect();

    for _ in 0..cfg.segment_steps {
        for (e, slot) in slots.iter_mut().enumerate() {
            let eval = net.step_numeric(store, &slot.input, &slot.hidden);
            let action = sample_action(&eval.mean, &eval.log_std, rng);
            let log_prob = gaussian_log_prob(&eval.mean, &eval.log_std, action);
            match slot.env.step(Vec2::new(action[0], action[1]), forecaster) {
                Ok(fb) => {
                    segments[e].steps.push(Transition {
                        input: slot.input.clone(),
                        action,
                        log_prob,
                        reward: fb.reward,
                        value: eval.value,
                        done: fb.done.is_some(),
                    });
                    slot.hidden = eval.hidden;
                    slot.episode_return += fb.reward;
                    slot.episode_steps += 1;
                    if let Some(outcome) = fb.done {
                        finished.push(FinishedEpisode {
                            outcome,
                            ret: slot.episode_return,
                            steps: slot.episode_steps,
                        });
                        *slot = EnvSlot::fresh(make_env(e)?, net, forecaster)?;
                    } else {
                        slot.input = PolicyInput::from_state(&fb.state, net.cfg.t_f)?;
                    }
                }
                Err(err) => {
                    log::warn!("environment {e} faulted mid-rollout, resetting: {err}");
                    if let Some(last) = segments[e].steps.last_mut() {
                        last.done = true;
                    }
                    *slot = EnvSlot::fresh(make_env(e)?, net, forecaster)?;
                }
            }
        }
    }

    for (slot, seg) in slots.iter().zip(segments.iter_mut()) {
        seg.bootstrap_value = net.step_numeric(store, &slot.input, &slot.hidden).value;
        let rewards: Vec<f64> = seg.steps.iter().map(|t| t.reward).collect();
        let values: Vec<f64> = seg.steps.iter().map(|t| t.value).collect();
        let dones: Vec<bool> = seg.steps.iter().map(|t| t.done).collect();
        let (adv, ret) = gae_advantages(
            &rewards,
            &values,
            &dones,
            seg.bootstrap_value,
            cfg.discount_gamma,
            cfg.gae_lambda,
        );
        seg.advantages = adv;
        seg.returns = ret;
    }
    Ok(RolloutBuffer { envs: segments })
}

/// The differentiable PPO loss over one buffer, plus scalar diagnostics.
pub struct PpoObjective<'t> {
    /// Node to minimize: `−surrogate + c_v·value_mse − c_e·entropy`.
    pub loss: Var<'t>,
    /// Mean clipped surrogate (the ascent target).
    pub surrogate: f64,
    /// Mean squared value-regression error.
    pub value_loss: f64,
    /// Policy entropy.
    pub entropy: f64,
    /// Mean `log π_old − log π_new`.
    pub approx_kl: f64,
    /// Largest `|ratio − 1|` in the buffer; ~0 when evaluated with the
    /// collection-time parameters.
    pub max_ratio_dev: f64,
    pub n_transitions: usize,
}

/// Replays the buffer through the policy on `tape` and assembles the clipped
/// PPO objective. Replay restores each segment's stored starting hidden state
/// and zeroes it after terminal transitions, exactly mirroring collection.
///
/// The pointwise `min` of the surrogate picks its active branch from the
/// replayed ratio: a saturated clipped branch enters as a constant (zero
/// gradient), otherwise the ratio node itself — the standard subgradient.
pub fn ppo_objective<'t>(
    net: &PolicyNet,
    tape: &'t Tape,
    store: &ParamStore,
    buffer: &RolloutBuffer,
    cfg: &PpoConfig,
) -> PpoObjective<'t> {
    let mut surrogate_terms: Vec<Var<'t>> = Vec::new();
    let mut value_terms: Vec<Var<'t>> = Vec::new();
    let mut log_std_node = None;
    let mut kl_sum = 0.0;
    let mut max_ratio_dev = 0.0f64;
    let mut n = 0usize;

    for seg in &buffer.envs {
        let mut hs: Vec<Var<'t>> = seg
            .start_hidden
            .iter()
            .map(|h| tape.constant(h.clone()))
            .collect();
        for (i, tr) in seg.steps.iter().enumerate() {
            let out = net.forward(tape, store, &tr.input, &mut hs);
            let lp = log_prob_var(tape, out.mean, out.log_std, tr.action);
            log_std_node = Some(out.log_std);
            let lp_new = lp.scalar();
            let ratio_now = (lp_new - tr.log_prob).exp();
            kl_sum += tr.log_prob - lp_new;
            max_ratio_dev = max_ratio_dev.max((ratio_now - 1.0).abs());
            let adv = seg.advantages[i];
            let clipped_now = ratio_now.clamp(1.0 - cfg.clip, 1.0 + cfg.clip);
            let term = if ratio_now * adv <= clipped_now * adv {
                lp.add_scalar(-tr.log_prob).exp().scale(adv)
            } else {
                tape.constant(Array2::from_elem((1, 1), clipped_now * adv))
            };
            surrogate_terms.push(term);

            let err = out.value.add_scalar(-seg.returns[i]);
            value_terms.push(err.mul(err));

            n += 1;
            if tr.done {
                hs = net
                    .zero_hidden()
                    .into_iter()
                    .map(|h| tape.constant(h))
                    .collect();
            }
        }
    }

    if n == 0 {
        return PpoObjective {
            loss: tape.constant(Array2::zeros((1, 1))),
            surrogate: 0.0,
            value_loss: 0.0,
            entropy: 0.0,
            approx_kl: 0.0,
            max_ratio_dev: 0.0,
            n_transitions: 0,
        };
    }

    let inv_n = 1.0 / n as f64;
    let surrogate_sum = Var::concat_rows(&surrogate_terms).sum_all();
    let value_sum = Var::concat_rows(&value_terms).sum_all();
    let entropy = entropy_var(log_std_node.expect("n > 0 implies a forward pass"));
    let loss = surrogate_sum
        .scale(-inv_n)
        .add(value_sum.scale(cfg.value_coef * inv_n))
        .add(entropy.scale(-cfg.entropy_coef));
    PpoObjective {
        loss,
        surrogate: surrogate_sum.scalar() * inv_n,
        value_loss: value_sum.scalar() * inv_n,
        entropy: entropy.scalar(),
        approx_kl: kl_sum * inv_n,
        max_ratio_dev,
        n_transitions: n,
    }
}

/// What one optimization round did.
#[derive(Debug, Clone, Copy)]
pub struct UpdateStats {
    /// Surrogate of the final epoch's objective.
    pub surrogate: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    /// Pre-clip global gradient norm of the final applied epoch.
    pub grad_norm: f64,
    /// Epochs whose step was applied.
    pub epochs_applied: usize,
    /// Epochs skipped because the loss or a gradient went non-finite.
    pub epochs_skipped: usize,
}

/// Runs `epochs_per_update` optimization passes over the buffer. A pass whose
/// loss or gradients are non-finite is skipped (parameters untouched) and
/// logged rather than poisoning the network.
pub fn ppo_update(
    net: &PolicyNet,
    store: &mut ParamStore,
    buffer: &RolloutBuffer,
    cfg: &PpoConfig,
) -> Result<UpdateStats, NavError> {
    cfg.validate()?;
    let mut stats = UpdateStats {
        surrogate: 0.0,
        value_loss: 0.0,
        entropy: 0.0,
        approx_kl: 0.0,
        grad_norm: 0.0,
        epochs_applied: 0,
        epochs_skipped: 0,
    };
    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    for epoch in 0..cfg.epochs_per_update {
        let tape = Tape::new();
        let obj = ppo_objective(net, &tape, store, buffer, cfg);
        if !obj.loss.scalar().is_finite() {
            log::warn!("ppo epoch {epoch}: non-finite loss, skipping step");
            stats.epochs_skipped += 1;
            continue;
        }
        let grads = tape.backward(obj.loss);
        // Accumulate in name order so clipping is bit-reproducible.
        let mut acc: std::collections::BTreeMap<String, Array2<f64>> =
            tape.param_grads(&grads).into_iter().collect();
        if acc.values().any(|g| g.iter().any(|x| !x.is_finite())) {
            log::warn!("ppo epoch {epoch}: non-finite gradient, skipping step");
            stats.epochs_skipped += 1;
            continue;
        }
        let norm = acc
            .values()
            .map(|g| g.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt();
        if let Some(max_norm) = cfg.max_grad_norm {
            if norm > max_norm && norm > 0.0 {
                let s = max_norm / norm;
                for g in acc.values_mut() {
                    g.mapv_inplace(|x| x * s);
                }
            }
        }
        let grad_map: std::collections::HashMap<String, Array2<f64>> = acc.into_iter().collect();
        store.adam_step(&grad_map, &adam, &[]);
        stats.surrogate = obj.surrogate;
        stats.value_loss = obj.value_loss;
        stats.entropy = obj.entropy;
        stats.approx_kl = obj.approx_kl;
        stats.grad_norm = norm;
        stats.epochs_applied += 1;
    }
    Ok(stats)
}

/// Summary of a training run.
#[derive(Debug, Clone, Default)]
pub struct PpoReport {
    /// Update rounds performed.
    pub updates: usize,
    /// Environment transitions consumed.
    pub env_steps: usize,
    /// Every episode finished during collection, in completion order.
    pub episodes: Vec<FinishedEpisode>,
    /// Per-round optimizer diagnostics.
    pub stats: Vec<UpdateStats>,
}

impl PpoReport {
    /// Success fraction over the last `window` finished episodes.
    pub fn recent_success_rate(&self, window: usize) -> f64 {
        let tail = &self.episodes[self.episodes.len().saturating_sub(window)..];
        if tail.is_empty() {
            return 0.0;
        }
        tail.iter()
            .filter(|e| e.outcome == EpisodeOutcome::Success)
            .count() as f64
            / tail.len() as f64
    }
}

/// Trains the policy in place until `total_steps` environment transitions
/// have been consumed. `make_env(env_index)` must yield a fresh, independent
/// episode on every call; the predictor (if any) stays frozen — only
/// parameters in `store` are optimized.
pub fn train_policy(
    net: &PolicyNet,
    store: &mut ParamStore,
    forecaster: &Forecaster<'_>,
    mut make_env: impl FnMut(usize) -> Result<NavEnv, NavError>,
    cfg: &PpoConfig,
) -> Result<PpoReport, NavError> {
    cfg.validate()?;
    let mut slots = Vec::with_capacity(cfg.n_envs);
    for e in 0..cfg.n_envs {
        slots.push(EnvSlot::fresh(make_env(e)?, net, forecaster)?);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = PpoReport::default();
    while report.env_steps < cfg.total_steps {
        let buffer = collect_rollouts(
            net,
            store,
            &mut slots,
            forecaster,
            &mut make_env,
            cfg,
            &mut rng,
            &mut report.episodes,
        )?;
        report.env_steps += buffer.len();
        let stats = ppo_update(net, store, &buffer, cfg)?;
        report.stats.push(stats);
        report.updates += 1;
    }
    Ok(report)
}

/// Outcome tally of a deterministic (mean-action) evaluation run.
#[derive(Debug, Clone, Copy, Default)]
pub struct EvalReport {
    pub episodes: usize,
    pub success: usize,
    pub human_collision: usize,
    pub obstacle_collision: usize,
    pub timeout: usize,
    pub mean_return: f64,
}

impl EvalReport {
    pub fn success_rate(&self) -> f64 {
        if self.episodes == 0 {
            return 0.0;
        }
        self.success as f64 / self.episodes as f64
    }
}

/// Rolls out `episodes` evaluation episodes acting on the Gaussian mean.
pub fn evaluate_policy(
    net: &PolicyNet,
    store: &ParamStore,
    forecaster: &Forecaster<'_>,
    mut make_env: impl FnMut(usize) -> Result<NavEnv, NavError>,
    episodes: usize,
) -> Result<EvalReport, NavError> {
    let mut report = EvalReport::default();
    let mut return_sum = 0.0;
    for ep in 0..episodes {
        let mut env = make_env(ep)?;
        let mut hidden = net.zero_hidden();
        let mut input = PolicyInput::from_state(&env.observe(forecaster)?, net.cfg.t_f)?;
        loop {
            let eval = net.step_numeric(store, &input, &hidden);
            let fb = env.step(Vec2::new(eval.mean[(0, 0)], eval.mean[(0, 1)]), forecaster)?;
            hidden = eval.hidden;
            return_sum += fb.reward;
            if let Some(outcome) = fb.done {
                match outcome {
                    EpisodeOutcome::Success => report.success += 1,
                    EpisodeOutcome::HumanCollision => report.human_collision += 1,
                    EpisodeOutcome::ObstacleCollision => report.obstacle_collision += 1,
                    EpisodeOutcome::Timeout => report.timeout += 1,
                }
                break;
            }
            input = PolicyInput::from_state(&fb.state, net.cfg.t_f)?;
        }
        report.episodes += 1;
    }
    report.mean_return = if episodes > 0 {
        return_sum / episodes as f64
    } else {
        0.0
    };
    Ok(report)
}
