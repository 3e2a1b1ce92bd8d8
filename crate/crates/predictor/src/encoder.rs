//! Observation encoding and pairwise relational reasoning.
//!
//! Every agent's history window is embedded into a self feature; a graph
//! attention pass over all ordered agent pairs produces pairwise attention
//! weights, edge features, and a social feature per agent; and a final
//! per-pair MLP scores relation-type logits. Ordered pairs live in a flat
//! layout so the whole pass runs as a handful of matrix ops.

use ndarray::Array2;
use rand::Rng;

use evolvenav_nnet::{Mlp, ParamStore, Tape, Var};

use crate::config::PredictorConfig;
use crate::PredictorError;

/// Negative slope shared by all LeakyReLU attention scorers.
pub(crate) const LEAKY_SLOPE: f64 = 0.2;

/// Number of ordered agent pairs `(i, j)` with `j != i`.
pub fn pair_count(n: usize) -> usize {
    n * (n - 1)
}

/// Flat index of the ordered pair `(i, j)`. Pairs sharing `i` are contiguous
/// with `j` ascending, so a `(N, N-1)` reshape groups each agent's neighbors
/// into one row.
pub fn pair_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i != j && i < n && j < n);
    i * (n - 1) + if j < i { j } else { j - 1 }
}

/// Inverse of [`pair_index`].
pub fn pair_agents(n: usize, p: usize) -> (usize, usize) {
    let i = p / (n - 1);
    let off = p % (n - 1);
    let j = if off < i { off } else { off + 1 };
    (i, j)
}

/// Source row `i` for every flat pair, for gathers/scatters.
pub fn pair_i_rows(n: usize) -> Vec<usize> {
    (0..pair_count(n)).map(|p| pair_agents(n, p).0).collect()
}

/// Source row `j` for every flat pair.
pub fn pair_j_rows(n: usize) -> Vec<usize> {
    (0..pair_count(n)).map(|p| pair_agents(n, p).1).collect()
}

/// For each flat pair `(i, j)`, the flat index of the reversed pair `(j, i)`.
pub fn pair_swap(n: usize) -> Vec<usize> {
    (0..pair_count(n))
        .map(|p| {
            let (i, j) = pair_agents(n, p);
            pair_index(n, j, i)
        })
        .collect()
}

/// Per-agent input to the history embedding: the `t_h` absolute positions
/// followed by the `t_h - 1` per-step displacements.
pub fn history_features(hist: &Array2<f64>) -> Array2<f64> {
    let (n, cols) = hist.dim();
    let t_h = cols / 2;
    let extra = t_h.saturating_sub(1) * 2;
    let mut out = Array2::zeros((n, cols + extra));
    for i in 0..n {
        for c in 0..cols {
            out[(i, c)] = hist[(i, c)];
        }
        for t in 1..t_h {
            out[(i, cols + 2 * (t - 1))] = hist[(i, 2 * t)] - hist[(i, 2 * t - 2)];
            out[(i, cols + 2 * (t - 1) + 1)] = hist[(i, 2 * t + 1)] - hist[(i, 2 * t - 1)];
        }
    }
    out
}

/// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` matrix, matching the layer inits.
pub(crate) fn init_matrix(
    rng: &mut impl Rng,
    rows: usize,
    cols: usize,
    fan_in: usize,
) -> Array2<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..bound))
}

/// Learnable pieces of the observation encoder.
#[derive(Clone)]
pub struct EncoderParams {
    /// History embedding `f_h`.
    pub f_h: Mlp,
    att_w: String,
    att_a: String,
    /// Pair edge-feature map.
    pub cg_e1: Mlp,
    /// Social-feature map applied to aggregated edge features.
    pub cg_v1: Mlp,
    /// Pairwise relation-type scorer.
    pub cg_e2: Mlp,
}

impl EncoderParams {
    /// Registers all encoder parameters under the `enc.` prefix.
    pub fn new(store: &mut ParamStore, cfg: &PredictorConfig, rng: &mut impl Rng) -> Self {
        let h = cfg.hidden;
        let f_h = Mlp::new(store, "enc.f_h", cfg.history_feature_dim(), h, h, rng);
        store
            .insert("enc.att.w", init_matrix(rng, h, h, h))
            .expect("fresh encoder attention weight");
        store
            .insert("enc.att.a", init_matrix(rng, 2 * h, 1, 2 * h))
            .expect("fresh encoder attention vector");
        let cg_e1 = Mlp::new(store, "enc.cg.e1", 2 * h, h, h, rng);
        let cg_v1 = Mlp::new(store, "enc.cg.v1", h, h, h, rng);
        let cg_e2 = Mlp::new(store, "enc.cg.e2", 4 * h, h, cfg.l_cg, rng);
        Self {
            f_h,
            att_w: "enc.att.w".into(),
            att_a: "enc.att.a".into(),
            cg_e1,
            cg_v1,
            cg_e2,
        }
    }
}

/// Everything the encoder produces for one observation window.
pub struct EncoderOutput<'t> {
    /// Per-agent history embedding `(N, h)`.
    pub v_self: Var<'t>,
    /// Per-agent aggregated social feature `(N, h)`.
    pub v_social: Var<'t>,
    /// Concatenated node feature `(N, 2h)`.
    pub v1: Var<'t>,
    /// Pairwise attention in flat pair order `(P, 1)`; rows of the implied
    /// `(N, N-1)` layout sum to 1.
    pub alpha: Var<'t>,
    /// Pairwise relation-type logits `(P, L_CG)`.
    pub e2_cg: Var<'t>,
}

/// Runs the attention encoder over one history window `(N, t_h*2)`.
///
/// With `equal_attention`, learned attention weights are replaced by the
/// uniform `1/(N-1)` distribution over neighbors.
pub fn encode_observation_graph<'t>(
    tape: &'t Tape,
    store: &ParamStore,
    params: &EncoderParams,
    hist: &Array2<f64>,
    equal_attention: bool,
) -> Result<EncoderOutput<'t>, PredictorError> {
    let n = hist.dim().0;
    if n < 2 {
        return Err(PredictorError::TooFewAgents(n));
    }
    let p = pair_count(n);
    let pi = pair_i_rows(n);
    let pj = pair_j_rows(n);

    let feats = tape.constant(history_features(hist));
    let v_self = params.f_h.forward(tape, store, feats); // (N, h)

    let alpha = if equal_attention {
        tape.constant(Array2::from_elem((p, 1), 1.0 / (n - 1) as f64))
    } else {
        let w = tape.param(store, &params.att_w);
        let a = tape.param(store, &params.att_a);
        let wv = v_self.matmul(w); // (N, h)
        let cat = Var::concat_cols(&[wv.gather_rows(&pi), wv.gather_rows(&pj)]); // (P, 2h)
        let scores = cat.matmul(a).leaky_relu(LEAKY_SLOPE); // (P, 1)
        // Each agent's neighbors are one contiguous block, so a reshape turns
        // the per-neighbor softmax into a row softmax.
        scores.reshape(n, n - 1).softmax_rows().reshape(p, 1)
    };

    // Edge features from the symmetric split of each pair's attention.
    let alpha_rev = alpha.gather_rows(&pair_swap(n));
    let denom = alpha.add(alpha_rev);
    let wi = alpha.div(denom);
    let wj = alpha_rev.div(denom);
    let e1_in = Var::concat_cols(&[
        v_self.gather_rows(&pi).mul_colvec(wi),
        v_self.gather_rows(&pj).mul_colvec(wj),
    ]);
    let e1 = params.cg_e1.forward(tape, store, e1_in); // (P, h)

    // Social feature: attention-weighted sum of incident edge features.
    let v_social_in = e1.mul_colvec(alpha).scatter_add_rows(&pi, n); // (N, h)
    let v_social = params.cg_v1.forward(tape, store, v_social_in);
    let v1 = Var::concat_cols(&[v_self, v_social]); // (N, 2h)

    let e2_in = Var::concat_cols(&[v1.gather_rows(&pi), v1.gather_rows(&pj)]); // (P, 4h)
    let e2_cg = params.cg_e2.forward(tape, store, e2_in); // (P, L_CG)

    Ok(EncoderOutput {
        v_self,
        v_social,
        v1,
        alpha,
        e2_cg,
    })
}

/// Relation-type distributions from logits: `softmax((logits + g) / tau_g)`
/// row-wise, with Gumbel noise `g` supplied for sampling or `None` for the
/// noise-free expectation. The result stays soft; gradients flow through the
/// relaxation.
pub fn infer_relation_types<'t>(
    tape: &'t Tape,
    logits: Var<'t>,
    tau_g: f64,
    noise: Option<&Array2<f64>>,
) -> Var<'t> {
    assert!(tau_g > 0.0, "tau_g must be positive, got {tau_g}");
    let shifted = match noise {
        Some(g) => {
            assert_eq!(g.dim(), logits.dim(), "gumbel noise shape mismatch");
            logits.add(tape.constant(g.clone()))
        }
        None => logits,
    };
    shifted.scale(1.0 / tau_g).softmax_rows()
}

/// Matrix of i.i.d. standard Gumbel draws.
pub fn sample_gumbel(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| {
        let u: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
        -(-u.ln()).ln()
    })
}
