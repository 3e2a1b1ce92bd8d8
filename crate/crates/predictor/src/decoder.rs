//! Relation-conditioned decoding of future positions.
//!
//! Each relation type (except type 0) owns a message MLP; a pair's or
//! hyperedge's message is the type-distribution-weighted combination of the
//! branch outputs, with type 0 contributing a hard zero. Aggregated messages
//! feed a node MLP whose output head emits one displacement per predicted
//! step, chained autoregressively from the last observed position.

use ndarray::Array2;
use rand::Rng;

use evolvenav_nnet::{Linear, Mlp, ParamStore, Tape, Var};

use crate::config::PredictorConfig;
use crate::encoder::{pair_count, pair_i_rows, pair_j_rows};
use crate::hypergraph::{hyperedge_gate, Incidence};

/// Learnable pieces of the decoder.
#[derive(Clone)]
pub struct DecoderParams {
    /// Pairwise message branches for types `1..L_CG`; type 0 is the zero map.
    cg_types: Vec<Mlp>,
    /// Hyperedge message branches for types `1..L_HG`; type 0 is the zero map.
    hg_types: Vec<Mlp>,
    /// Node feature map over the concatenated relational sums.
    pub f_v: Mlp,
    /// Output head: one displacement per step of a prediction period.
    pub f_out: Linear,
    hidden: usize,
    t_p: usize,
}

impl DecoderParams {
    /// Registers all decoder parameters under the `dec.` prefix.
    pub fn new(store: &mut ParamStore, cfg: &PredictorConfig, rng: &mut impl Rng) -> Self {
        let h = cfg.hidden;
        let cg_types = (1..cfg.l_cg)
            .map(|l| Mlp::new(store, &format!("dec.cg.type{l}"), 4 * h, h, h, rng))
            .collect();
        let hg_types = (1..cfg.l_hg)
            .map(|l| Mlp::new(store, &format!("dec.hg.type{l}"), 2 * h, h, h, rng))
            .collect();
        let f_v = Mlp::new(store, "dec.v", 2 * h, h, h, rng);
        let f_out = Linear::new(store, "dec.out", h, cfg.t_p * 2, rng);
        Self {
            cg_types,
            hg_types,
            f_v,
            f_out,
            hidden: h,
            t_p: cfg.t_p,
        }
    }
}

/// Combines pairwise and hyperedge messages into per-node features.
///
/// `z_cg` is the `(P, L_CG)` pairwise type distribution in flat pair order;
/// `hg` carries the incidence and the `(M, L_HG)` hyperedge type
/// distribution. Either branch may be absent (ablations, warm-up), in which
/// case its aggregate is a zero matrix — exactly the value the branch takes
/// when all type mass sits on type 0.
pub fn aggregate_relation_features<'t>(
    tape: &'t Tape,
    store: &ParamStore,
    params: &DecoderParams,
    v1: Var<'t>,
    z_cg: Option<Var<'t>>,
    hg: Option<(&Incidence<'t>, Var<'t>)>,
) -> Var<'t> {
    let n = v1.dim().0;
    let h = params.hidden;

    let cg_sum = match z_cg {
        Some(z) => {
            let p = pair_count(n);
            assert_eq!(z.dim().0, p, "pairwise type distribution rows");
            let pi = pair_i_rows(n);
            let pj = pair_j_rows(n);
            let pair_in = Var::concat_cols(&[v1.gather_rows(&pi), v1.gather_rows(&pj)]);
            let mut acc: Option<Var> = None;
            for (k, branch) in params.cg_types.iter().enumerate() {
                let msg = branch.forward(tape, store, pair_in); // (P, h)
                let weighted = msg.mul_colvec(z.slice_cols(k + 1..k + 2));
                acc = Some(match acc {
                    Some(a) => a.add(weighted),
                    None => weighted,
                });
            }
            acc.expect("at least one relation type beyond type 0")
                .scatter_add_rows(&pi, n)
        }
        None => tape.constant(Array2::zeros((n, h))),
    };

    let hg_sum = match hg {
        Some((inc, z)) => {
            let gate = tape.constant(hyperedge_gate(&inc.hard));
            let member_sum = inc.y.transpose().matmul(v1).mul_colvec(gate); // (M, 2h)
            let mut acc: Option<Var> = None;
            for (k, branch) in params.hg_types.iter().enumerate() {
                let msg = branch.forward(tape, store, member_sum); // (M, h)
                let weighted = msg.mul_colvec(z.slice_cols(k + 1..k + 2));
                acc = Some(match acc {
                    Some(a) => a.add(weighted),
                    None => weighted,
                });
            }
            let per_edge = acc
                .expect("at least one relation type beyond type 0")
                .mul_colvec(gate); // (M, h)
            inc.y.matmul(per_edge) // (N, h): sum over containing hyperedges
        }
        None => tape.constant(Array2::zeros((n, h))),
    };

    params
        .f_v
        .forward(tape, store, Var::concat_cols(&[cg_sum, hg_sum]))
}

/// Node features with both relational aggregates explicitly zero — the
/// relation-free baseline the no-relation distribution must reproduce.
pub fn relation_free_features<'t>(
    tape: &'t Tape,
    store: &ParamStore,
    params: &DecoderParams,
    n: usize,
) -> Var<'t> {
    let zeros = tape.constant(Array2::zeros((n, 2 * params.hidden)));
    params.f_v.forward(tape, store, zeros)
}

/// Decodes `steps` positions from the node features: the output head emits
/// per-step displacements that accumulate from `x_last` `(N, 2)`. Returns
/// `(N, steps*2)` positions.
pub fn decode_period<'t>(
    tape: &'t Tape,
    store: &ParamStore,
    params: &DecoderParams,
    v_tilde: Var<'t>,
    x_last: Var<'t>,
    steps: usize,
) -> Var<'t> {
    assert!(
        steps >= 1 && steps <= params.t_p,
        "steps {steps} outside 1..={}",
        params.t_p
    );
    let deltas = params.f_out.forward(tape, store, v_tilde); // (N, t_p*2)
    let mut x = x_last;
    let mut cols = Vec::with_capacity(steps);
    for t in 0..steps {
        x = x.add(deltas.slice_cols(2 * t..2 * t + 2));
        cols.push(x);
    }
    if cols.len() == 1 {
        cols[0]
    } else {
        Var::concat_cols(&cols)
    }
}
