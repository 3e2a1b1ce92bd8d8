//! Hypergraph topology inference and message passing.
//!
//! A per-node MLP scores membership logits for a fixed number of candidate
//! hyperedges; binary memberships are sampled entry-wise through a two-class
//! Gumbel-Softmax relaxation (or thresholded for deterministic evaluation).
//! Messages then flow nodes -> hyperedges -> nodes with attention in both
//! directions, and each hyperedge is scored with relation-type logits.
//! Hyperedges with fewer than two hard members are gated out and contribute
//! no messages.

use ndarray::Array2;
use rand::Rng;

use evolvenav_nnet::{Mlp, ParamStore, Tape, Var};

use crate::config::PredictorConfig;
use crate::encoder::{init_matrix, pair_count, pair_index, LEAKY_SLOPE};
use crate::loss::PROB_FLOOR;

/// Learnable pieces of the hypergraph branch.
#[derive(Clone)]
pub struct HypergraphParams {
    /// Membership-probability scorer (`2h -> M` logits per node).
    pub pim: Mlp,
    att_w1: String,
    att_w2: String,
    att_a: String,
    /// Hyperedge feature map (`2h -> h`).
    pub e1: Mlp,
    /// Node update map (`h -> h`).
    pub v1: Mlp,
    /// Hyperedge relation-type scorer (`h -> L_HG`).
    pub e2: Mlp,
    hidden: usize,
}

impl HypergraphParams {
    /// Registers all hypergraph parameters under the `hg.` prefix.
    pub fn new(store: &mut ParamStore, cfg: &PredictorConfig, rng: &mut impl Rng) -> Self {
        let h = cfg.hidden;
        let pim = Mlp::new(store, "hg.pim", 2 * h, h, cfg.m, rng);
        store
            .insert("hg.att.w1", init_matrix(rng, h, h, h))
            .expect("fresh hyperedge attention weight");
        store
            .insert("hg.att.w2", init_matrix(rng, 2 * h, h, 2 * h))
            .expect("fresh node attention weight");
        store
            .insert("hg.att.a", init_matrix(rng, 2 * h, 1, 2 * h))
            .expect("fresh hyperedge attention vector");
        let e1 = Mlp::new(store, "hg.e1", 2 * h, h, h, rng);
        let v1 = Mlp::new(store, "hg.v1", h, h, h, rng);
        let e2 = Mlp::new(store, "hg.e2", h, h, cfg.l_hg, rng);
        Self {
            pim,
            att_w1: "hg.att.w1".into(),
            att_w2: "hg.att.w2".into(),
            att_a: "hg.att.a".into(),
            e1,
            v1,
            e2,
            hidden: h,
        }
    }
}

/// How hyperedge memberships are drawn from the membership probabilities.
#[derive(Clone, Copy)]
pub enum IncidenceMode<'a> {
    /// Hard 0/1 memberships driven by the given logistic noise `(N, M)`,
    /// with a straight-through backward pass.
    Sampled(&'a Array2<f64>),
    /// Soft memberships from the same relaxation, never hardened; smooth in
    /// the parameters, which finite-difference checks rely on.
    Relaxed(&'a Array2<f64>),
    /// Noise-free: memberships are the probabilities themselves, hardened by
    /// thresholding at 0.5.
    Expected,
}

/// Inferred hyperedge membership.
pub struct Incidence<'t> {
    /// Membership probabilities `(N, M)`.
    pub i_pim: Var<'t>,
    /// Differentiable membership used in message passing `(N, M)`.
    pub y: Var<'t>,
    /// Hard membership `(N, M)`; defines member sets and gating.
    pub hard: Array2<f64>,
}

/// Difference of two i.i.d. standard Gumbel draws per entry — the noise that
/// drives the two-class membership relaxation. `P(logit + noise > 0)` equals
/// the logistic membership probability exactly, at any temperature.
pub fn sample_incidence_noise(n: usize, m: usize, rng: &mut impl Rng) -> Array2<f64> {
    let mut gumbel = || {
        let u: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
        -(-u.ln()).ln()
    };
    Array2::from_shape_fn((n, m), |_| {
        let g1 = gumbel();
        let g0 = gumbel();
        g1 - g0
    })
}

/// Scores membership logits for every (node, hyperedge) entry and realizes a
/// membership matrix according to `mode`.
pub fn infer_hypergraph_topology<'t>(
    tape: &'t Tape,
    store: &ParamStore,
    params: &HypergraphParams,
    v1: Var<'t>,
    tau_g: f64,
    mode: IncidenceMode<'_>,
) -> Incidence<'t> {
    assert!(tau_g > 0.0, "tau_g must be positive, got {tau_g}");
    let logits = params.pim.forward(tape, store, v1); // (N, M)
    let i_pim = logits.sigmoid();
    match mode {
        IncidenceMode::Sampled(noise) | IncidenceMode::Relaxed(noise) => {
            assert_eq!(noise.dim(), logits.dim(), "incidence noise shape mismatch");
            let y_soft = logits
                .add(tape.constant(noise.clone()))
                .scale(1.0 / tau_g)
                .sigmoid();
            let hard = y_soft.value().mapv(|v| if v > 0.5 { 1.0 } else { 0.0 });
            let y = match mode {
                IncidenceMode::Sampled(_) => y_soft.straight_through(hard.clone()),
                _ => y_soft,
            };
            Incidence { i_pim, y, hard }
        }
        IncidenceMode::Expected => {
            let hard = i_pim.value().mapv(|v| if v > 0.5 { 1.0 } else { 0.0 });
            Incidence {
                i_pim,
                y: i_pim,
                hard,
            }
        }
    }
}

/// Column of gates: 1 for hyperedges with at least two hard members, else 0.
pub fn hyperedge_gate(hard: &Array2<f64>) -> Array2<f64> {
    let (n, m) = hard.dim();
    Array2::from_shape_fn((m, 1), |(mi, _)| {
        let members = (0..n).filter(|&i| hard[(i, mi)] != 0.0).count();
        if members >= 2 {
            1.0
        } else {
            0.0
        }
    })
}

/// `(M, P)` averaging matrix: row `m` puts weight `1 / (c_m (c_m - 1))` on
/// every ordered pair of hard members of hyperedge `m` (c_m = member count),
/// so multiplying by the flat pairwise attention yields the mean attention
/// inside each hyperedge. Hyperedges with fewer than two members get a zero
/// row.
fn member_pair_mean(hard: &Array2<f64>) -> Array2<f64> {
    let (n, m) = hard.dim();
    let mut k = Array2::zeros((m, pair_count(n)));
    for mi in 0..m {
        let members: Vec<usize> = (0..n).filter(|&i| hard[(i, mi)] != 0.0).collect();
        let c = members.len();
        if c < 2 {
            continue;
        }
        let w = 1.0 / (c * (c - 1)) as f64;
        for &i in &members {
            for &j in &members {
                if i != j {
                    k[(mi, pair_index(n, i, j))] = w;
                }
            }
        }
    }
    k
}

/// Products of one hypergraph message-passing round.
pub struct HypergraphOutput<'t> {
    /// Mean pairwise attention per hyperedge `(M, 1)`.
    pub alpha_m: Var<'t>,
    /// Hyperedge features `(M, h)`, zero rows for gated-off hyperedges.
    pub e1: Var<'t>,
    /// Hypergraph-updated node features `(N, h)`.
    pub v1_hg: Var<'t>,
    /// Hyperedge relation-type logits `(M, L_HG)`.
    pub e2: Var<'t>,
    /// Copy of the gate column `(M, 1)`.
    pub gate: Array2<f64>,
}

/// Runs nodes -> hyperedges -> nodes message passing.
///
/// `alpha` is the flat `(P, 1)` pairwise attention from the encoder. With
/// `equal_attention`, the hyperedge-to-node attention scores are constant, so
/// member weights become (membership-weighted) uniform.
pub fn hypergraph_message_pass<'t>(
    tape: &'t Tape,
    store: &ParamStore,
    params: &HypergraphParams,
    v1: Var<'t>,
    alpha: Var<'t>,
    inc: &Incidence<'t>,
    equal_attention: bool,
) -> HypergraphOutput<'t> {
    let (n, m) = inc.hard.dim();
    let h = params.hidden;
    let gate = hyperedge_gate(&inc.hard);
    let gate_var = tape.constant(gate.clone());

    // Node-to-hyperedge attention: mean pairwise attention among members.
    let k = tape.constant(member_pair_mean(&inc.hard)); // (M, P)
    let alpha_m = k.matmul(alpha); // (M, 1)

    // Per-node weights over the hyperedges containing it: w_im proportional
    // to y_im * alpha_m, normalized over m.
    let numer = inc.y.transpose().mul_colvec(alpha_m).transpose(); // (N, M)
    let denom = numer.sum_axis1().add_scalar(PROB_FLOOR); // (N, 1)
    let recip = tape.constant(Array2::ones((n, 1))).div(denom);
    let w = numer.mul_colvec(recip); // (N, M)

    // Hyperedge features from weighted member features.
    let e1_in = w.transpose().matmul(v1); // (M, 2h)
    let e1 = params.e1.forward(tape, store, e1_in).mul_colvec(gate_var); // (M, h)

    // Hyperedge-to-node attention over members. Membership enters the scores
    // as a log-prior, so non-members get vanishing weight while the whole
    // expression stays smooth for soft memberships.
    let y_t = inc.y.transpose(); // (M, N)
    let scores = if equal_attention {
        tape.constant(Array2::zeros((m, n)))
    } else {
        let w1 = tape.param(store, &params.att_w1);
        let w2 = tape.param(store, &params.att_w2);
        let a = tape.param(store, &params.att_a);
        let a_top = a.slice_rows(0..h);
        let a_bot = a.slice_rows(h..2 * h);
        let per_edge = e1.matmul(w1).matmul(a_top); // (M, 1)
        let per_node = v1.matmul(w2).matmul(a_bot); // (N, 1)
        let ones_row = tape.constant(Array2::ones((1, n)));
        let ones_col = tape.constant(Array2::ones((m, 1)));
        per_edge
            .matmul(ones_row)
            .add(ones_col.matmul(per_node.transpose()))
            .leaky_relu(LEAKY_SLOPE)
    };
    let alpha_mi = scores.add(y_t.ln_floor(PROB_FLOOR)).softmax_rows(); // (M, N)
    let alpha_mi = alpha_mi.mul_colvec(gate_var);

    // Node update from the hyperedges containing it.
    let v1_in = alpha_mi.transpose().matmul(e1); // (N, h)
    let v1_hg = params.v1.forward(tape, store, v1_in);

    // Hyperedge relation logits from the summed member updates.
    let e2_in = y_t.matmul(v1_hg).mul_colvec(gate_var); // (M, h)
    let e2 = params.e2.forward(tape, store, e2_in);

    HypergraphOutput {
        alpha_m,
        e1,
        v1_hg,
        e2,
        gate,
    }
}
