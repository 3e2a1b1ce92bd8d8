//! Reverse-mode automatic differentiation over `Array2<f64>`.
//!
//! A [`Tape`] records one forward computation as a flat list of nodes; node
//! ids are assigned in creation order, so iterating ids in reverse is already
//! a valid topological order for backpropagation. [`Var`] is a copyable handle
//! (tape reference + node id) with the usual operator methods.
//!
//! Vectors are represented as `1 x d` or `n x 1` matrices; scalars as `1 x 1`.
//! Named parameters enter the tape through [`Tape::param`], which deduplicates
//! by name so that a weight used in several places accumulates one gradient.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use ndarray::{concatenate, s, Array2, Axis};

use crate::store::ParamStore;

/// Gradient contributions flowing to parent nodes: `(parent id, grad)`.
type BackFn = Box<dyn Fn(&Array2<f64>) -> Vec<(usize, Array2<f64>)>>;

struct Node {
    value: Rc<Array2<f64>>,
    back: Option<BackFn>,
    requires_grad: bool,
}

/// Records one forward pass; dropped wholesale after the backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    param_ids: RefCell<HashMap<String, usize>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    pub id: usize,
}

/// Gradients keyed by node id, as produced by [`Tape::backward`].
pub struct Grads {
    by_id: Vec<Option<Array2<f64>>>,
}

impl Grads {
    /// Gradient of the loss w.r.t. the node, if it received any.
    pub fn get(&self, var: Var<'_>) -> Option<&Array2<f64>> {
        self.by_id.get(var.id).and_then(|g| g.as_ref())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&self, value: Array2<f64>, back: Option<BackFn>, requires_grad: bool) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            back,
            requires_grad,
        });
        nodes.len() - 1
    }

    fn value(&self, id: usize) -> Rc<Array2<f64>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// A constant input; receives no gradient.
    pub fn constant(&self, value: Array2<f64>) -> Var<'_> {
        let id = self.push(value, None, false);
        Var { tape: self, id }
    }

    /// A leaf that accumulates gradient (used for non-parameter leaves such as
    /// sampled noise in gradient checks).
    pub fn leaf(&self, value: Array2<f64>) -> Var<'_> {
        let id = self.push(value, None, true);
        Var { tape: self, id }
    }

    /// Fetches a named parameter from the store, registering it as a leaf.
    /// Repeated calls with the same name return the same node.
    pub fn param<'t>(&'t self, store: &ParamStore, name: &str) -> Var<'t> {
        if let Some(&id) = self.param_ids.borrow().get(name) {
            return Var { tape: self, id };
        }
        let value = store.get(name);
        let id = {
            let mut nodes = self.nodes.borrow_mut();
            nodes.push(Node {
                value,
                back: None,
                requires_grad: true,
            });
            nodes.len() - 1
        };
        self.param_ids.borrow_mut().insert(name.to_string(), id);
        Var { tape: self, id }
    }

    fn unary(
        &self,
        a: Var<'_>,
        value: Array2<f64>,
        back: impl Fn(&Array2<f64>) -> Array2<f64> + 'static,
    ) -> Var<'_> {
        let rg = self.requires_grad(a.id);
        let aid = a.id;
        let back: Option<BackFn> = if rg {
            Some(Box::new(move |g| vec![(aid, back(g))]))
        } else {
            None
        };
        let id = self.push(value, back, rg);
        Var { tape: self, id }
    }

    fn binary(
        &self,
        a: Var<'_>,
        b: Var<'_>,
        value: Array2<f64>,
        back: impl Fn(&Array2<f64>) -> (Array2<f64>, Array2<f64>) + 'static,
    ) -> Var<'_> {
        let rg = self.requires_grad(a.id) || self.requires_grad(b.id);
        let (aid, bid) = (a.id, b.id);
        let back: Option<BackFn> = if rg {
            Some(Box::new(move |g| {
                let (ga, gb) = back(g);
                vec![(aid, ga), (bid, gb)]
            }))
        } else {
            None
        };
        let id = self.push(value, back, rg);
        Var { tape: self, id }
    }

    /// Runs backpropagation from a scalar (`1 x 1`) loss node.
    pub fn backward(&self, loss: Var<'_>) -> Grads {
        let n = self.nodes.borrow().len();
        let mut by_id: Vec<Option<Array2<f64>>> = vec![None; n];
        assert_eq!(
            self.value(loss.id).dim(),
            (1, 1),
            "backward expects a scalar loss"
        );
        by_id[loss.id] = Some(Array2::ones((1, 1)));
        for id in (0..n).rev() {
            let Some(grad) = by_id[id].take() else {
                continue;
            };
            let nodes = self.nodes.borrow();
            let node = &nodes[id];
            if let Some(back) = &node.back {
                let contribs = back(&grad);
                drop(nodes);
                for (pid, g) in contribs {
                    if !self.requires_grad(pid) {
                        continue;
                    }
                    match &mut by_id[pid] {
                        Some(acc) => *acc += &g,
                        slot => *slot = Some(g),
                    }
                }
            } else if node.requires_grad {
                // Leaf: keep the accumulated gradient for retrieval.
                drop(nodes);
                by_id[id] = Some(grad);
            }
        }
        Grads { by_id }
    }

    /// Collects gradients for every named parameter touched by this tape.
    /// Parameters that received no gradient are omitted.
    pub fn param_grads(&self, grads: &Grads) -> HashMap<String, Array2<f64>> {
        let mut out = HashMap::new();
        for (name, &id) in self.param_ids.borrow().iter() {
            if let Some(g) = grads.by_id.get(id).and_then(|g| g.as_ref()) {
                out.insert(name.clone(), g.clone());
            }
        }
        out
    }
}

impl<'t> Var<'t> {
    /// The tape this variable lives on.
    pub fn tape(self) -> &'t Tape {
        self.tape
    }

    /// Shared handle to the forward value.
    pub fn value(self) -> Rc<Array2<f64>> {
        self.tape.value(self.id)
    }

    pub fn dim(self) -> (usize, usize) {
        self.value().dim()
    }

    /// The forward value of a `1 x 1` node.
    pub fn scalar(self) -> f64 {
        let v = self.value();
        assert_eq!(v.dim(), (1, 1), "scalar() on non-scalar var");
        v[(0, 0)]
    }

    pub fn add(self, other: Var<'t>) -> Var<'t> {
        let v = &*self.value() + &*other.value();
        self.tape
            .binary(self, other, v, |g| (g.clone(), g.clone()))
    }

    pub fn sub(self, other: Var<'t>) -> Var<'t> {
        let v = &*self.value() - &*other.value();
        self.tape.binary(self, other, v, |g| (g.clone(), -g))
    }

    /// Elementwise product (same shapes).
    pub fn mul(self, other: Var<'t>) -> Var<'t> {
        let (av, bv) = (self.value(), other.value());
        assert_eq!(av.dim(), bv.dim(), "mul: shape mismatch");
        let v = &*av * &*bv;
        self.tape
            .binary(self, other, v, move |g| (g * &*bv, g * &*av))
    }

    /// Elementwise quotient (same shapes); caller guarantees nonzero divisor.
    pub fn div(self, other: Var<'t>) -> Var<'t> {
        let (av, bv) = (self.value(), other.value());
        assert_eq!(av.dim(), bv.dim(), "div: shape mismatch");
        let v = &*av / &*bv;
        self.tape.binary(self, other, v, move |g| {
            (g / &*bv, -(g * &*av) / (&*bv * &*bv))
        })
    }

    /// Adds a `1 x d` row vector to every row of an `n x d` matrix.
    pub fn add_rowvec(self, row: Var<'t>) -> Var<'t> {
        let (av, rv) = (self.value(), row.value());
        assert_eq!(rv.dim().0, 1, "add_rowvec: rhs must be 1 x d");
        assert_eq!(av.dim().1, rv.dim().1, "add_rowvec: width mismatch");
        let v = &*av + &*rv;
        self.tape.binary(self, row, v, |g| {
            let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
            (g.clone(), gr)
        })
    }

    /// Scales every row of an `n x d` matrix by the matching entry of an
    /// `n x 1` column vector.
    pub fn mul_colvec(self, col: Var<'t>) -> Var<'t> {
        let (av, cv) = (self.value(), col.value());
        assert_eq!(cv.dim().1, 1, "mul_colvec: rhs must be n x 1");
        assert_eq!(av.dim().0, cv.dim().0, "mul_colvec: height mismatch");
        let v = &*av * &*cv;
        self.tape.binary(self, col, v, move |g| {
            let ga = g * &*cv;
            let gc = (g * &*av).sum_axis(Axis(1)).insert_axis(Axis(1));
            (ga, gc)
        })
    }

    pub fn neg(self) -> Var<'t> {
        let v = -&*self.value();
        self.tape.unary(self, v, |g| -g)
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        let v = &*self.value() * c;
        self.tape.unary(self, v, move |g| g * c)
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        let v = &*self.value() + c;
        self.tape.unary(self, v, |g| g.clone())
    }

    pub fn matmul(self, other: Var<'t>) -> Var<'t> {
        let (av, bv) = (self.value(), other.value());
        let v = av.dot(&*bv);
        self.tape.binary(self, other, v, move |g| {
            (g.dot(&bv.t()), av.t().dot(g))
        })
    }

    pub fn transpose(self) -> Var<'t> {
        let v = self.value().t().to_owned();
        self.tape.unary(self, v, |g| g.t().to_owned())
    }

    /// Sum of all entries as a `1 x 1` scalar.
    pub fn sum_all(self) -> Var<'t> {
        let av = self.value();
        let dim = av.dim();
        let v = Array2::from_elem((1, 1), av.sum());
        self.tape
            .unary(self, v, move |g| Array2::from_elem(dim, g[(0, 0)]))
    }

    pub fn mean_all(self) -> Var<'t> {
        let n = {
            let d = self.dim();
            (d.0 * d.1) as f64
        };
        self.sum_all().scale(1.0 / n)
    }

    /// Column sums: `n x d -> 1 x d`.
    pub fn sum_axis0(self) -> Var<'t> {
        let av = self.value();
        let rows = av.dim().0;
        let v = av.sum_axis(Axis(0)).insert_axis(Axis(0));
        self.tape.unary(self, v, move |g| {
            let mut out = Array2::zeros((rows, g.dim().1));
            for mut r in out.rows_mut() {
                r.assign(&g.row(0));
            }
            out
        })
    }

    /// Row sums: `n x d -> n x 1`.
    pub fn sum_axis1(self) -> Var<'t> {
        let av = self.value();
        let cols = av.dim().1;
        let v = av.sum_axis(Axis(1)).insert_axis(Axis(1));
        self.tape.unary(self, v, move |g| {
            let mut out = Array2::zeros((g.dim().0, cols));
            for (i, mut r) in out.rows_mut().into_iter().enumerate() {
                r.fill(g[(i, 0)]);
            }
            out
        })
    }

    pub fn relu(self) -> Var<'t> {
        let av = self.value();
        let v = av.mapv(|x| x.max(0.0));
        self.tape.unary(self, v, move |g| {
            let mut out = g.clone();
            out.zip_mut_with(&av, |gi, &x| {
                if x <= 0.0 {
                    *gi = 0.0;
                }
            });
            out
        })
    }

    pub fn leaky_relu(self, slope: f64) -> Var<'t> {
        let av = self.value();
        let v = av.mapv(|x| if x > 0.0 { x } else { slope * x });
        self.tape.unary(self, v, move |g| {
            let mut out = g.clone();
            out.zip_mut_with(&av, |gi, &x| {
                if x <= 0.0 {
                    *gi *= slope;
                }
            });
            out
        })
    }

    pub fn tanh(self) -> Var<'t> {
        let v = self.value().mapv(f64::tanh);
        let y = v.clone();
        self.tape.unary(self, v, move |g| g * &y.mapv(|t| 1.0 - t * t))
    }

    pub fn sigmoid(self) -> Var<'t> {
        let v = self.value().mapv(|x| 1.0 / (1.0 + (-x).exp()));
        let y = v.clone();
        self.tape
            .unary(self, v, move |g| g * &y.mapv(|s| s * (1.0 - s)))
    }

    pub fn exp(self) -> Var<'t> {
        let v = self.value().mapv(f64::exp);
        let y = v.clone();
        self.tape.unary(self, v, move |g| g * &y)
    }

    /// `ln(max(x, floor))`; gradient is zero where the floor is active.
    pub fn ln_floor(self, floor: f64) -> Var<'t> {
        let av = self.value();
        let v = av.mapv(|x| x.max(floor).ln());
        self.tape.unary(self, v, move |g| {
            let mut out = g.clone();
            out.zip_mut_with(&av, |gi, &x| {
                if x > floor {
                    *gi /= x;
                } else {
                    *gi = 0.0;
                }
            });
            out
        })
    }

    /// Row-wise softmax with the usual max-shift for stability.
    pub fn softmax_rows(self) -> Var<'t> {
        let av = self.value();
        let v = softmax_rows_raw(&av, None);
        let y = v.clone();
        self.tape.unary(self, v, move |g| softmax_rows_back(&y, g))
    }

    /// Row-wise softmax restricted to entries where `mask > 0`; masked entries
    /// get probability zero, and fully masked rows come out all-zero.
    pub fn softmax_rows_masked(self, mask: &Array2<f64>) -> Var<'t> {
        let av = self.value();
        assert_eq!(av.dim(), mask.dim(), "softmax mask shape mismatch");
        let v = softmax_rows_raw(&av, Some(mask));
        let y = v.clone();
        self.tape.unary(self, v, move |g| softmax_rows_back(&y, g))
    }

    /// Horizontal concatenation `[a | b | ...]`.
    pub fn concat_cols(parts: &[Var<'t>]) -> Var<'t> {
        assert!(!parts.is_empty());
        let tape = parts[0].tape;
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let views: Vec<_> = values.iter().map(|v| v.view()).collect();
        let v = concatenate(Axis(1), &views).expect("concat_cols shape mismatch");
        let rg = parts.iter().any(|p| tape.requires_grad(p.id));
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let widths: Vec<usize> = values.iter().map(|v| v.dim().1).collect();
        let back: Option<BackFn> = if rg {
            Some(Box::new(move |g| {
                let mut out = Vec::with_capacity(ids.len());
                let mut start = 0;
                for (&id, &w) in ids.iter().zip(&widths) {
                    out.push((id, g.slice(s![.., start..start + w]).to_owned()));
                    start += w;
                }
                out
            }))
        } else {
            None
        };
        let id = tape.push(v, back, rg);
        Var { tape, id }
    }

    /// Vertical concatenation (stacking rows).
    pub fn concat_rows(parts: &[Var<'t>]) -> Var<'t> {
        assert!(!parts.is_empty());
        let tape = parts[0].tape;
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let views: Vec<_> = values.iter().map(|v| v.view()).collect();
        let v = concatenate(Axis(0), &views).expect("concat_rows shape mismatch");
        let rg = parts.iter().any(|p| tape.requires_grad(p.id));
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let heights: Vec<usize> = values.iter().map(|v| v.dim().0).collect();
        let back: Option<BackFn> = if rg {
            Some(Box::new(move |g| {
                let mut out = Vec::with_capacity(ids.len());
                let mut start = 0;
                for (&id, &h) in ids.iter().zip(&heights) {
                    out.push((id, g.slice(s![start..start + h, ..]).to_owned()));
                    start += h;
                }
                out
            }))
        } else {
            None
        };
        let id = tape.push(v, back, rg);
        Var { tape, id }
    }

    pub fn slice_cols(self, range: std::ops::Range<usize>) -> Var<'t> {
        let av = self.value();
        let dim = av.dim();
        let v = av.slice(s![.., range.clone()]).to_owned();
        self.tape.unary(self, v, move |g| {
            let mut out = Array2::zeros(dim);
            out.slice_mut(s![.., range.clone()]).assign(g);
            out
        })
    }

    pub fn slice_rows(self, range: std::ops::Range<usize>) -> Var<'t> {
        let av = self.value();
        let dim = av.dim();
        let v = av.slice(s![range.clone(), ..]).to_owned();
        self.tape.unary(self, v, move |g| {
            let mut out = Array2::zeros(dim);
            out.slice_mut(s![range.clone(), ..]).assign(g);
            out
        })
    }

    /// Row gather: output row `k` is input row `idx[k]` (indices may repeat).
    pub fn gather_rows(self, idx: &[usize]) -> Var<'t> {
        let av = self.value();
        let (rows, cols) = av.dim();
        for &i in idx {
            assert!(i < rows, "gather_rows: index out of range");
        }
        let mut v = Array2::zeros((idx.len(), cols));
        for (k, &i) in idx.iter().enumerate() {
            v.row_mut(k).assign(&av.row(i));
        }
        let idx = idx.to_vec();
        self.tape.unary(self, v, move |g| {
            let mut out = Array2::zeros((rows, cols));
            for (k, &i) in idx.iter().enumerate() {
                let mut r = out.row_mut(i);
                r += &g.row(k);
            }
            out
        })
    }

    /// Row-major reshape to `rows x cols` (entry order preserved).
    pub fn reshape(self, rows: usize, cols: usize) -> Var<'t> {
        let av = self.value();
        let dim = av.dim();
        assert_eq!(
            dim.0 * dim.1,
            rows * cols,
            "reshape: size mismatch {dim:?} -> ({rows}, {cols})"
        );
        let v = Array2::from_shape_vec((rows, cols), av.iter().cloned().collect())
            .expect("reshape: shape/size agree");
        self.tape.unary(self, v, move |g| {
            Array2::from_shape_vec(dim, g.iter().cloned().collect())
                .expect("reshape backward: shape/size agree")
        })
    }

    /// Straight-through estimator: the forward value is replaced by `hard`
    /// (same shape), while the backward pass treats the op as the identity,
    /// so gradients flow to the smooth surrogate unchanged.
    pub fn straight_through(self, hard: Array2<f64>) -> Var<'t> {
        assert_eq!(
            self.dim(),
            hard.dim(),
            "straight_through: shape mismatch"
        );
        self.tape.unary(self, hard, |g| g.clone())
    }

    /// Row scatter-add: output has `n_out` rows; input row `k` is added into
    /// output row `idx[k]`.
    pub fn scatter_add_rows(self, idx: &[usize], n_out: usize) -> Var<'t> {
        let av = self.value();
        let (rows, cols) = av.dim();
        assert_eq!(rows, idx.len(), "scatter_add_rows: index length mismatch");
        for &i in idx {
            assert!(i < n_out, "scatter_add_rows: index out of range");
        }
        let mut v = Array2::zeros((n_out, cols));
        for (k, &i) in idx.iter().enumerate() {
            let mut r = v.row_mut(i);
            r += &av.row(k);
        }
        let idx = idx.to_vec();
        self.tape.unary(self, v, move |g| {
            let mut out = Array2::zeros((rows, cols));
            for (k, &i) in idx.iter().enumerate() {
                out.row_mut(k).assign(&g.row(i));
            }
            out
        })
    }
}

fn softmax_rows_raw(x: &Array2<f64>, mask: Option<&Array2<f64>>) -> Array2<f64> {
    let (n, d) = x.dim();
    let mut out = Array2::zeros((n, d));
    for i in 0..n {
        let live = |j: usize| mask.map_or(true, |m| m[(i, j)] > 0.0);
        let mut max = f64::NEG_INFINITY;
        for j in 0..d {
            if live(j) {
                max = max.max(x[(i, j)]);
            }
        }
        if max == f64::NEG_INFINITY {
            continue; // fully masked row stays zero
        }
        let mut denom = 0.0;
        for j in 0..d {
            if live(j) {
                let e = (x[(i, j)] - max).exp();
                out[(i, j)] = e;
                denom += e;
            }
        }
        for j in 0..d {
            out[(i, j)] /= denom;
        }
    }
    out
}

fn softmax_rows_back(y: &Array2<f64>, g: &Array2<f64>) -> Array2<f64> {
    let (n, d) = y.dim();
    let mut out = Array2::zeros((n, d));
    for i in 0..n {
        let mut dot = 0.0;
        for j in 0..d {
            dot += g[(i, j)] * y[(i, j)];
        }
        for j in 0..d {
            out[(i, j)] = y[(i, j)] * (g[(i, j)] - dot);
        }
    }
    out
}
