//! Layers built on the tape: linear, three-layer MLP, and GRU.
//!
//! A layer owns only the *names* of its parameters; the tensors live in a
//! [`ParamStore`]. Construction registers freshly initialized tensors under
//! `prefix.<part>` names, and `forward` pulls them onto the active tape.
//! Weight matrices are laid out `in x out` so a batch of row vectors is
//! propagated as `x.matmul(w) + b`.

use ndarray::Array2;
use rand::Rng;

use crate::store::ParamStore;
use crate::tape::{Tape, Var};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization.
fn init_uniform(rng: &mut impl Rng, rows: usize, cols: usize, fan_in: usize) -> Array2<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..bound))
}

/// Affine map `x W + b`.
#[derive(Clone)]
pub struct Linear {
    w: String,
    b: String,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        store
            .insert(format!("{prefix}.w"), init_uniform(rng, in_dim, out_dim, in_dim))
            .expect("fresh linear weight name");
        store
            .insert(format!("{prefix}.b"), Array2::zeros((1, out_dim)))
            .expect("fresh linear bias name");
        Self {
            w: format!("{prefix}.w"),
            b: format!("{prefix}.b"),
            in_dim,
            out_dim,
        }
    }

    /// Reattaches to parameters previously registered under `prefix`.
    pub fn attached(prefix: &str, in_dim: usize, out_dim: usize) -> Self {
        Self {
            w: format!("{prefix}.w"),
            b: format!("{prefix}.b"),
            in_dim,
            out_dim,
        }
    }

    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>) -> Var<'t> {
        let w = tape.param(store, &self.w);
        let b = tape.param(store, &self.b);
        x.matmul(w).add_rowvec(b)
    }
}

/// Three-layer MLP (`lin-relu-lin-relu-lin`), the building block used for all
/// per-node and per-edge feature maps.
#[derive(Clone)]
pub struct Mlp {
    l0: Linear,
    l1: Linear,
    l2: Linear,
}

impl Mlp {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            l0: Linear::new(store, &format!("{prefix}.l0"), in_dim, hidden, rng),
            l1: Linear::new(store, &format!("{prefix}.l1"), hidden, hidden, rng),
            l2: Linear::new(store, &format!("{prefix}.l2"), hidden, out_dim, rng),
        }
    }

    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>) -> Var<'t> {
        let h0 = self.l0.forward(tape, store, x).relu();
        let h1 = self.l1.forward(tape, store, h0).relu();
        self.l2.forward(tape, store, h1)
    }
}

/// Single GRU layer with the standard gate equations
/// `r = sigmoid(x Wxr + h Whr + br)`, `z = sigmoid(...)`,
/// `n = tanh(x Wxn + bxn + r * (h Whn + bhn))`, `h' = (1-z) n + z h`.
/// Gate blocks are packed `[r | z | n]` along the output axis.
#[derive(Clone)]
pub struct GruLayer {
    wx: String,
    wh: String,
    bx: String,
    bh: String,
    pub in_dim: usize,
    pub hidden: usize,
}

impl GruLayer {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        in_dim: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        store
            .insert(format!("{prefix}.wx"), init_uniform(rng, in_dim, 3 * hidden, hidden))
            .expect("fresh gru weight name");
        store
            .insert(format!("{prefix}.wh"), init_uniform(rng, hidden, 3 * hidden, hidden))
            .expect("fresh gru weight name");
        store
            .insert(format!("{prefix}.bx"), Array2::zeros((1, 3 * hidden)))
            .expect("fresh gru bias name");
        store
            .insert(format!("{prefix}.bh"), Array2::zeros((1, 3 * hidden)))
            .expect("fresh gru bias name");
        Self {
            wx: format!("{prefix}.wx"),
            wh: format!("{prefix}.wh"),
            bx: format!("{prefix}.bx"),
            bh: format!("{prefix}.bh"),
            in_dim,
            hidden,
        }
    }

    /// One step for a batch of rows: `x` is `n x in`, `h` is `n x hidden`.
    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        x: Var<'t>,
        h: Var<'t>,
    ) -> Var<'t> {
        let hid = self.hidden;
        let wx = tape.param(store, &self.wx);
        let wh = tape.param(store, &self.wh);
        let bx = tape.param(store, &self.bx);
        let bh = tape.param(store, &self.bh);
        let gx = x.matmul(wx).add_rowvec(bx);
        let gh = h.matmul(wh).add_rowvec(bh);
        let r = gx.slice_cols(0..hid).add(gh.slice_cols(0..hid)).sigmoid();
        let z = gx
            .slice_cols(hid..2 * hid)
            .add(gh.slice_cols(hid..2 * hid))
            .sigmoid();
        let n = gx
            .slice_cols(2 * hid..3 * hid)
            .add(r.mul(gh.slice_cols(2 * hid..3 * hid)))
            .tanh();
        let one_minus_z = z.neg().add_scalar(1.0);
        one_minus_z.mul(n).add(z.mul(h))
    }
}

/// Stack of GRU layers; layer `k+1` consumes layer `k`'s new hidden state.
#[derive(Clone)]
pub struct Gru {
    pub layers: Vec<GruLayer>,
}

impl Gru {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        in_dim: usize,
        hidden: usize,
        n_layers: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let layers = (0..n_layers)
            .map(|k| {
                let dim = if k == 0 { in_dim } else { hidden };
                GruLayer::new(store, &format!("{prefix}.g{k}"), dim, hidden, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn hidden(&self) -> usize {
        self.layers[0].hidden
    }

    /// One step. `hs` holds one hidden state per layer and is replaced by the
    /// new states; the return value is the top layer's output.
    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        x: Var<'t>,
        hs: &mut Vec<Var<'t>>,
    ) -> Var<'t> {
        assert_eq!(hs.len(), self.layers.len(), "one hidden state per layer");
        let mut input = x;
        for (layer, h) in self.layers.iter().zip(hs.iter_mut()) {
            let new_h = layer.forward(tape, store, input, *h);
            *h = new_h;
            input = new_h;
        }
        input
    }

    /// Zero initial hidden states for a batch of `n` rows.
    pub fn zero_state<'t>(&self, tape: &'t Tape, n: usize) -> Vec<Var<'t>> {
        self.layers
            .iter()
            .map(|l| tape.constant(Array2::zeros((n, l.hidden))))
            .collect()
    }
}
