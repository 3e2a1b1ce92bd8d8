//! Model, ablation, and training hyper-parameters.

use std::collections::BTreeMap;

use crate::PredictorError;

/// Architecture and loss hyper-parameters of the relational predictor.
///
/// Relation-type index 0 always means "no relation" and blocks message
/// passing; `l_cg`/`l_hg` therefore count the no-relation type plus the
/// learned types.
#[derive(Debug, Clone)]
pub struct PredictorConfig {
    /// Observed history length in steps.
    pub t_h: usize,
    /// Prediction horizon in steps.
    pub t_f: usize,
    /// Prediction period: steps decoded per relational inference. Relations
    /// are re-inferred every `t_p` steps, so this is also the re-inference
    /// gap.
    pub t_p: usize,
    /// Number of candidate hyperedges.
    pub m: usize,
    /// Pairwise relation types (including type 0 = none).
    pub l_cg: usize,
    /// Group relation types (including type 0 = none).
    pub l_hg: usize,
    /// Hidden width of all feature MLPs.
    pub hidden: usize,
    /// Hidden width of the relation-evolution GRUs.
    pub gru_hidden: usize,
    /// Gumbel-Softmax temperature for relation sampling.
    pub tau_g: f64,
    /// Constant variance of the output Gaussian per 2-D point.
    pub sigma_sq: f64,
    /// KL-to-uniform weight, pairwise branch.
    pub alpha_kl_cg: f64,
    /// KL-to-uniform weight, group branch.
    pub alpha_kl_hg: f64,
    /// Smoothness weight (consecutive-period KL), pairwise branch.
    pub alpha_sm_cg: f64,
    /// Smoothness weight, group branch.
    pub alpha_sm_hg: f64,
    /// Sharpness weight (entropy), pairwise branch.
    pub alpha_sh_cg: f64,
    /// Sharpness weight, group branch.
    pub alpha_sh_hg: f64,
    /// Sparsity weight (KL to the no-relation distribution), pairwise branch.
    pub alpha_sp_cg: f64,
    /// Sparsity weight, group branch.
    pub alpha_sp_hg: f64,
    /// Which model branches and regularizers are active.
    pub ablation: AblationConfig,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            t_h: 4,
            t_f: 8,
            t_p: 1,
            m: 5,
            l_cg: 3,
            l_hg: 3,
            hidden: 128,
            gru_hidden: 128,
            tau_g: 0.5,
            sigma_sq: 0.05,
            alpha_kl_cg: 1.0,
            alpha_kl_hg: 1.0,
            alpha_sm_cg: 0.001,
            alpha_sm_hg: 0.001,
            alpha_sh_cg: 0.001,
            alpha_sh_hg: 0.001,
            alpha_sp_cg: 0.001,
            alpha_sp_hg: 0.001,
            ablation: AblationConfig::default(),
        }
    }
}

impl PredictorConfig {
    /// Number of prediction periods in one rollout.
    pub fn periods(&self) -> usize {
        self.t_f.div_ceil(self.t_p)
    }

    /// Input width of the history embedding: absolute positions plus
    /// per-step displacements.
    pub fn history_feature_dim(&self) -> usize {
        self.t_h * 2 + self.t_h.saturating_sub(1) * 2
    }

    pub fn validate(&self) -> Result<(), PredictorError> {
        let fail = |msg: String| Err(PredictorError::Config(msg));
        if self.t_h == 0 {
            return fail("t_h must be at least 1".into());
        }
        if self.t_f == 0 {
            return fail("t_f must be at least 1".into());
        }
        if self.t_p == 0 || self.t_p > self.t_f {
            return fail(format!("t_p must satisfy 1 <= t_p <= t_f, got {}", self.t_p));
        }
        if self.m == 0 {
            return fail("m must be at least 1".into());
        }
        if self.l_cg < 2 || self.l_hg < 2 {
            return fail("relation type counts need the no-relation type plus at least one more".into());
        }
        if self.hidden == 0 || self.gru_hidden == 0 {
            return fail("hidden widths must be positive".into());
        }
        if !(self.tau_g > 0.0) || !self.tau_g.is_finite() {
            return fail(format!("tau_g must be a positive finite number, got {}", self.tau_g));
        }
        if !(self.sigma_sq > 0.0) || !self.sigma_sq.is_finite() {
            return fail(format!("sigma_sq must be positive, got {}", self.sigma_sq));
        }
        for (name, w) in [
            ("alpha_kl_cg", self.alpha_kl_cg),
            ("alpha_kl_hg", self.alpha_kl_hg),
            ("alpha_sm_cg", self.alpha_sm_cg),
            ("alpha_sm_hg", self.alpha_sm_hg),
            ("alpha_sh_cg", self.alpha_sh_cg),
            ("alpha_sh_hg", self.alpha_sh_hg),
            ("alpha_sp_cg", self.alpha_sp_cg),
            ("alpha_sp_hg", self.alpha_sp_hg),
        ] {
            if !(w >= 0.0) || !w.is_finite() {
                return fail(format!("{name} must be finite and >= 0, got {w}"));
            }
        }
        if !self.ablation.pairwise && !self.ablation.groupwise {
            return fail("at least one of the pairwise/groupwise branches must be active".into());
        }
        Ok(())
    }

    /// Serializes every field into checkpoint metadata.
    pub fn to_meta(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("t_h", self.t_h.to_string());
        put("t_f", self.t_f.to_string());
        put("t_p", self.t_p.to_string());
        put("m", self.m.to_string());
        put("l_cg", self.l_cg.to_string());
        put("l_hg", self.l_hg.to_string());
        put("hidden", self.hidden.to_string());
        put("gru_hidden", self.gru_hidden.to_string());
        put("tau_g", self.tau_g.to_string());
        put("sigma_sq", self.sigma_sq.to_string());
        put("alpha_kl_cg", self.alpha_kl_cg.to_string());
        put("alpha_kl_hg", self.alpha_kl_hg.to_string());
        put("alpha_sm_cg", self.alpha_sm_cg.to_string());
        put("alpha_sm_hg", self.alpha_sm_hg.to_string());
        put("alpha_sh_cg", self.alpha_sh_cg.to_string());
        put("alpha_sh_hg", self.alpha_sh_hg.to_string());
        put("alpha_sp_cg", self.alpha_sp_cg.to_string());
        put("alpha_sp_hg", self.alpha_sp_hg.to_string());
        let ab = &self.ablation;
        let flag = |b: bool| if b { "1" } else { "0" }.to_string();
        put("ablation.pairwise", flag(ab.pairwise));
        put("ablation.groupwise", flag(ab.groupwise));
        put("ablation.dynamic", flag(ab.dynamic));
        put("ablation.smoothness", flag(ab.smoothness));
        put("ablation.sharpness", flag(ab.sharpness));
        put("ablation.sparsity", flag(ab.sparsity));
        put("ablation.equal_attention", flag(ab.equal_attention));
        m
    }

    /// Rebuilds a validated configuration from checkpoint metadata.
    pub fn from_meta(meta: &BTreeMap<String, String>) -> Result<Self, PredictorError> {
        fn get<T: std::str::FromStr>(
            meta: &BTreeMap<String, String>,
            key: &str,
        ) -> Result<T, PredictorError> {
            let raw = meta
                .get(key)
                .ok_or_else(|| PredictorError::Config(format!("checkpoint meta lacks `{key}`")))?;
            raw.parse().map_err(|_| {
                PredictorError::Config(format!("checkpoint meta `{key}` = `{raw}` is unreadable"))
            })
        }
        fn get_flag(meta: &BTreeMap<String, String>, key: &str) -> Result<bool, PredictorError> {
            Ok(get::<u8>(meta, key)? != 0)
        }
        let cfg = Self {
            t_h: get(meta, "t_h")?,
            t_f: get(meta, "t_f")?,
            t_p: get(meta, "t_p")?,
            m: get(meta, "m")?,
            l_cg: get(meta, "l_cg")?,
            l_hg: get(meta, "l_hg")?,
            hidden: get(meta, "hidden")?,
            gru_hidden: get(meta, "gru_hidden")?,
            tau_g: get(meta, "tau_g")?,
            sigma_sq: get(meta, "sigma_sq")?,
            alpha_kl_cg: get(meta, "alpha_kl_cg")?,
            alpha_kl_hg: get(meta, "alpha_kl_hg")?,
            alpha_sm_cg: get(meta, "alpha_sm_cg")?,
            alpha_sm_hg: get(meta, "alpha_sm_hg")?,
            alpha_sh_cg: get(meta, "alpha_sh_cg")?,
            alpha_sh_hg: get(meta, "alpha_sh_hg")?,
            alpha_sp_cg: get(meta, "alpha_sp_cg")?,
            alpha_sp_hg: get(meta, "alpha_sp_hg")?,
            ablation: AblationConfig {
                pairwise: get_flag(meta, "ablation.pairwise")?,
                groupwise: get_flag(meta, "ablation.groupwise")?,
                dynamic: get_flag(meta, "ablation.dynamic")?,
                smoothness: get_flag(meta, "ablation.smoothness")?,
                sharpness: get_flag(meta, "ablation.sharpness")?,
                sparsity: get_flag(meta, "ablation.sparsity")?,
                equal_attention: get_flag(meta, "ablation.equal_attention")?,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Switches that select model variants for ablation studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AblationConfig {
    /// Pairwise relational branch active.
    pub pairwise: bool,
    /// Group-wise (hypergraph) branch active.
    pub groupwise: bool,
    /// Relations evolve across prediction periods through the GRUs; when
    /// false, the relations inferred from the observed window are reused for
    /// every period.
    pub dynamic: bool,
    /// Smoothness regularizer active.
    pub smoothness: bool,
    /// Sharpness (entropy) regularizer active.
    pub sharpness: bool,
    /// Sparsity regularizer active.
    pub sparsity: bool,
    /// Replace learned attention with uniform weights.
    pub equal_attention: bool,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self::FULL
    }
}

impl AblationConfig {
    /// The complete model: both branches, dynamic relations, all regularizers.
    pub const FULL: Self = Self {
        pairwise: true,
        groupwise: true,
        dynamic: true,
        smoothness: true,
        sharpness: true,
        sparsity: true,
        equal_attention: false,
    };

    /// Names accepted by [`AblationConfig::preset`].
    pub const PRESETS: &'static [&'static str] = &[
        "scg",
        "shg",
        "scg_shg",
        "dcg_dhg",
        "dcg_dhg_sm",
        "dcg_dhg_sm_sh",
        "full",
        "equal_attention",
    ];

    /// Looks up a named model variant.
    pub fn preset(name: &str) -> Result<Self, PredictorError> {
        let base = Self {
            pairwise: true,
            groupwise: true,
            dynamic: false,
            smoothness: false,
            sharpness: false,
            sparsity: false,
            equal_attention: false,
        };
        match name {
            "scg" => Ok(Self {
                groupwise: false,
                ..base
            }),
            "shg" => Ok(Self {
                pairwise: false,
                ..base
            }),
            "scg_shg" => Ok(base),
            "dcg_dhg" => Ok(Self {
                dynamic: true,
                ..base
            }),
            "dcg_dhg_sm" => Ok(Self {
                dynamic: true,
                smoothness: true,
                ..base
            }),
            "dcg_dhg_sm_sh" => Ok(Self {
                dynamic: true,
                smoothness: true,
                sharpness: true,
                ..base
            }),
            "full" => Ok(Self::FULL),
            "equal_attention" => Ok(Self {
                equal_attention: true,
                ..Self::FULL
            }),
            other => Err(PredictorError::Config(format!(
                "unknown ablation `{other}`; expected one of {}",
                Self::PRESETS.join(", ")
            ))),
        }
    }
}

/// Optimization schedule for [`crate::train_predictor`].
#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Upper bound on epochs; early stopping usually ends training sooner.
    pub epochs: usize,
    /// Leading epochs during which only pairwise-reasoning modules train.
    pub warmup_epochs: usize,
    /// Windows per optimizer step (gradient accumulation).
    pub batch_size: usize,
    /// Initial Adam learning rate.
    pub lr: f64,
    /// Multiplicative learning-rate decay factor.
    pub lr_decay: f64,
    /// Epochs between learning-rate decays.
    pub lr_decay_every: usize,
    /// Epochs between validation evaluations.
    pub eval_every: usize,
    /// Early-stopping patience, counted in evaluations without improvement.
    pub patience: usize,
    /// Rollout samples per validation window for minADE/minFDE.
    pub k_samples: usize,
    /// Gradient-norm clip; `None` disables clipping.
    pub max_grad_norm: Option<f64>,
    /// Seed for shuffling and relation sampling.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10_000,
            warmup_epochs: 100,
            batch_size: 32,
            lr: 1e-3,
            lr_decay: 0.85,
            lr_decay_every: 500,
            eval_every: 50,
            patience: 50,
            k_samples: 20,
            max_grad_norm: Some(5.0),
            seed: 7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PredictorError> {
        let fail = |msg: String| Err(PredictorError::Config(msg));
        if self.epochs == 0 {
            return fail("epochs must be positive".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return fail(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return fail(format!("lr_decay must lie in (0, 1], got {}", self.lr_decay));
        }
        if self.lr_decay_every == 0 || self.eval_every == 0 {
            return fail("lr_decay_every and eval_every must be positive".into());
        }
        if self.k_samples == 0 {
            return fail("k_samples must be positive".into());
        }
        if let Some(c) = self.max_grad_norm {
            if !(c > 0.0) || !c.is_finite() {
                return fail(format!("max_grad_norm must be positive, got {c}"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_configs_validate() {
        PredictorConfig::default().validate().unwrap();
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn bad_temperature_and_period_are_rejected() {
        let mut cfg = PredictorConfig::default();
        cfg.tau_g = 0.0;
        assert!(cfg.validate().is_err());
        cfg.tau_g = 0.5;
        cfg.t_p = cfg.t_f + 1;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn both_branches_off_is_rejected() {
        let mut cfg = PredictorConfig::default();
        cfg.ablation.pairwise = false;
        cfg.ablation.groupwise = false;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn presets_cover_the_variant_table() {
        for name in AblationConfig::PRESETS {
            let ab = AblationConfig::preset(name).unwrap();
            assert!(ab.pairwise || ab.groupwise, "{name}");
        }
        let scg = AblationConfig::preset("scg").unwrap();
        assert!(scg.pairwise && !scg.groupwise && !scg.dynamic);
        let full = AblationConfig::preset("full").unwrap();
        assert!(full.dynamic && full.smoothness && full.sharpness && full.sparsity);
        assert!(AblationConfig::preset("nope").is_err());
    }

    #[test]
    fn periods_round_up() {
        let mut cfg = PredictorConfig::default();
        cfg.t_f = 8;
        cfg.t_p = 3;
        assert_eq!(cfg.periods(), 3);
        cfg.t_p = 1;
        assert_eq!(cfg.periods(), 8);
    }

    #[test]
    fn history_feature_dim_counts_positions_and_displacements() {
        let mut cfg = PredictorConfig::default();
        cfg.t_h = 4;
        assert_eq!(cfg.history_feature_dim(), 14);
        cfg.t_h = 1;
        assert_eq!(cfg.history_feature_dim(), 2);
    }

    #[test]
    fn meta_round_trip_preserves_every_field() {
        let mut cfg = PredictorConfig {
            t_h: 6,
            t_f: 10,
            t_p: 5,
            m: 7,
            l_cg: 4,
            l_hg: 2,
            hidden: 96,
            gru_hidden: 64,
            tau_g: 0.25,
            sigma_sq: 0.1,
            alpha_sm_cg: 0.0025,
            ..PredictorConfig::default()
        };
        cfg.ablation = AblationConfig::preset("dcg_dhg_sm").unwrap();
        let meta = cfg.to_meta();
        let back = PredictorConfig::from_meta(&meta).unwrap();
        assert_eq!(format!("{cfg:?}"), format!("{back:?}"));
    }

    #[test]
    fn meta_with_missing_or_garbled_keys_is_rejected() {
        let cfg = PredictorConfig::default();
        let mut meta = cfg.to_meta();
        meta.remove("t_p");
        assert!(PredictorConfig::from_meta(&meta).is_err());
        let mut meta = cfg.to_meta();
        meta.insert("hidden".into(), "many".into());
        assert!(PredictorConfig::from_meta(&meta).is_err());
    }
}
