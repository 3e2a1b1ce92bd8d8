//! Evolution of relation-type distributions across prediction periods.
//!
//! Each relation branch owns a two-layer GRU over type distributions: the
//! rows (one per pair, or one per hyperedge) form the batch, the current
//! distribution is the input, and a linear head plus row softmax turns the
//! new hidden state into the next period's distribution. The recurrent state
//! starts at zero for the first period and is threaded through subsequent
//! calls.

use evolvenav_nnet::{Gru, Linear, ParamStore, Tape, Var};
use rand::Rng;

/// GRU and readout head of one relation branch.
#[derive(Clone)]
pub struct EvolutionParams {
    gru: Gru,
    head: Linear,
}

impl EvolutionParams {
    /// Registers parameters under `{prefix}.gru` and `{prefix}.head` for
    /// distributions over `l_types` relation types.
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        l_types: usize,
        gru_hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let gru = Gru::new(store, &format!("{prefix}.gru"), l_types, gru_hidden, 2, rng);
        let head = Linear::new(store, &format!("{prefix}.head"), gru_hidden, l_types, rng);
        Self { gru, head }
    }

    /// Advances the distributions one period. `state` is `None` for the first
    /// period (zero hidden states); the returned state feeds the next call.
    pub fn step<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        z: Var<'t>,
        state: Option<Vec<Var<'t>>>,
    ) -> (Var<'t>, Vec<Var<'t>>) {
        let rows = z.dim().0;
        let mut hs = state.unwrap_or_else(|| self.gru.zero_state(tape, rows));
        let out = self.gru.forward(tape, store, z, &mut hs);
        let z_next = self.head.forward(tape, store, out).softmax_rows();
        (z_next, hs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use evolvenav_nnet::check_gradients;
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_simplex(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
        let mut z = Array2::from_shape_fn((rows, cols), |_| -(rng.gen::<f64>().max(1e-12).ln()));
        for mut row in z.rows_mut() {
            let s: f64 = row.iter().sum();
            row.mapv_inplace(|v| v / s);
        }
        z
    }

    #[test]
    fn evolved_rows_are_distributions_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let evo = EvolutionParams::new(&mut store, "gru_cg", 3, 8, &mut rng);
        let z0 = random_simplex(5, 3, &mut rng);
        let run = |store: &ParamStore| {
            let tape = Tape::new();
            let (z1, st) = evo.step(&tape, store, tape.constant(z0.clone()), None);
            let (z2, _) = evo.step(&tape, store, z1, Some(st));
            (z1.value().as_ref().clone(), z2.value().as_ref().clone())
        };
        let (z1, z2) = run(&store);
        for z in [&z1, &z2] {
            for row in z.rows() {
                let s: f64 = row.iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
                assert!(row.iter().all(|&v| v > 0.0));
            }
        }
        assert_ne!(z1, z2, "evolution moves the distributions");
        let (z1b, z2b) = run(&store);
        assert_eq!(z1, z1b);
        assert_eq!(z2, z2b);
    }

    #[test]
    fn carried_state_changes_the_second_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let evo = EvolutionParams::new(&mut store, "gru_hg", 4, 8, &mut rng);
        let z0 = random_simplex(3, 4, &mut rng);
        let tape = Tape::new();
        let (z1, st) = evo.step(&tape, &store, tape.constant(z0.clone()), None);
        let (with_state, _) = evo.step(&tape, &store, z1, Some(st));
        let (without_state, _) = evo.step(&tape, &store, z1, None);
        assert_ne!(
            &*with_state.value(),
            &*without_state.value(),
            "the hidden state carries information between periods"
        );
    }

    #[test]
    fn two_step_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let evo = EvolutionParams::new(&mut store, "gru_cg", 3, 6, &mut rng);
        let z0 = random_simplex(4, 3, &mut rng);
        let weight = Array2::from_shape_fn((4, 3), |_| rng.gen_range(-1.0..1.0));
        let run = crate::tape_eval(|store, tape| {
            let (z1, st) = evo.step(tape, store, tape.constant(z0.clone()), None);
            let (z2, _) = evo.step(tape, store, z1, Some(st));
            z2.mul(tape.constant(weight.clone())).sum_all()
        });
        let tape = Tape::new();
        let loss = run(&store, &tape);
        let grads = tape.backward(loss);
        let analytic = tape.param_grads(&grads);
        let mut probe = ChaCha8Rng::seed_from_u64(4);
        let report = check_gradients(
            &mut store,
            &analytic,
            |s| {
                let t = Tape::new();
                run(s, &t).scalar()
            },
            4,
            1e-5,
            &mut probe,
        );
        assert!(
            report.max_rel_err < 1e-4,
            "worst {} at {}",
            report.max_rel_err,
            report.worst_name
        );
    }
}
