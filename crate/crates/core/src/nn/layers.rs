//! Building blocks over the tape: dense, residual, GRU and attention layers.

use std::rc::Rc;

use rand::Rng;

use super::tape::{Mat, ParamId, ParamStore, Tape, Var};
use crate::error::Result;

/// Uniform `±1/√fan_in` weights.
pub fn init_weight<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Mat {
    let bound = 1.0 / (rows as f64).sqrt();
    Mat::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Act {
    Identity,
    Tanh,
    Sigmoid,
}

impl Act {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Act::Identity => x,
            Act::Tanh => tape.tanh(x),
            Act::Sigmoid => tape.sigmoid(x),
        }
    }
}

/// `act(x·W + b)`
#[derive(Debug, Clone, Copy)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub act: Act,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        group: u8,
        dims: (usize, usize),
        act: Act,
        rng: &mut R,
    ) -> Self {
        let (i, o) = dims;
        Self {
            weight: store.add(format!("{name}.w"), group, init_weight(i, o, rng)),
            bias: store.add(format!("{name}.b"), group, Mat::zeros((1, o))),
            act,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let y = tape.affine(x, w, b)?;
        Ok(self.act.apply(tape, y))
    }

    pub fn outputs(&self, store: &ParamStore) -> usize {
        store.value(self.weight).ncols()
    }
}

/// `x + W2·tanh(W1·x + b1) + b2`
#[derive(Debug, Clone, Copy)]
pub struct Residual {
    pub inner: Dense,
    pub outer: Dense,
}

impl Residual {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        group: u8,
        width: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            inner: Dense::new(
                store,
                &format!("{name}.inner"),
                group,
                (width, width),
                Act::Tanh,
                rng,
            ),
            outer: Dense::new(
                store,
                &format!("{name}.outer"),
                group,
                (width, width),
                Act::Identity,
                rng,
            ),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.inner.forward(tape, store, x)?;
        let y = self.outer.forward(tape, store, h)?;
        tape.add(x, y)
    }
}

/// Gated recurrent unit; the update gate `z` interpolates from the previous
/// state (`z = 0`) to the candidate (`z = 1`).
#[derive(Debug, Clone, Copy)]
pub struct Gru {
    pub update: (ParamId, ParamId, ParamId),
    pub reset: (ParamId, ParamId, ParamId),
    pub candidate: (ParamId, ParamId, ParamId),
    pub hidden: usize,
}

impl Gru {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        group: u8,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let mut gate = |g: &str| {
            (
                store.add(
                    format!("{name}.{g}.wx"),
                    group,
                    init_weight(input, hidden, rng),
                ),
                store.add(
                    format!("{name}.{g}.wh"),
                    group,
                    init_weight(hidden, hidden, rng),
                ),
                store.add(format!("{name}.{g}.b"), group, Mat::zeros((1, hidden))),
            )
        };
        let update = gate("z");
        let reset = gate("r");
        let candidate = gate("n");
        Self {
            update,
            reset,
            candidate,
            hidden,
        }
    }

    fn affine(
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        h: Var,
        (wx, wh, b): (ParamId, ParamId, ParamId),
    ) -> Result<Var> {
        let wx = tape.param(store, wx);
        let wh = tape.param(store, wh);
        let b = tape.param(store, b);
        let a = tape.matmul(x, wx)?;
        let c = tape.matmul(h, wh)?;
        let s = tape.add(a, c)?;
        tape.add_row(s, b)
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, h: Var) -> Result<Var> {
        let za = Self::affine(tape, store, x, h, self.update)?;
        let z = tape.sigmoid(za);
        let ra = Self::affine(tape, store, x, h, self.reset)?;
        let r = tape.sigmoid(ra);
        let rh = tape.mul(r, h)?;
        let na = Self::affine(tape, store, x, rh, self.candidate)?;
        let n = tape.tanh(na);
        let keep = tape.one_minus(z);
        let old = tape.mul(keep, h)?;
        let new = tape.mul(z, n)?;
        tape.add(old, new)
    }
}

/// Single-query cross-attention: the query comes from the current state, keys
/// and values from a window of past state-action rows.
#[derive(Debug, Clone, Copy)]
pub struct CrossAttention {
    pub query: ParamId,
    pub key: ParamId,
    pub value: ParamId,
}

impl CrossAttention {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        group: u8,
        input: usize,
        width: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            query: store.add(format!("{name}.wq"), group, init_weight(input, width, rng)),
            key: store.add(format!("{name}.wk"), group, init_weight(input, width, rng)),
            value: store.add(format!("{name}.wv"), group, init_weight(input, width, rng)),
        }
    }

    /// `current` is `B×D`, `history` is `(B·T)×D`, `mask` is `B×T`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        current: Var,
        history: Var,
        mask: Rc<Mat>,
    ) -> Result<Var> {
        let wq = tape.param(store, self.query);
        let wk = tape.param(store, self.key);
        let wv = tape.param(store, self.value);
        let q = tape.matmul(current, wq)?;
        let k = tape.matmul(history, wk)?;
        let v = tape.matmul(history, wv)?;
        tape.attention(q, k, v, mask)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::SimRng;
    use rand::SeedableRng;

    #[test]
    fn zero_dense_outputs_zero() {
        let mut rng = SimRng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let d = Dense::new(&mut store, "d", 0, (3, 2), Act::Identity, &mut rng);
        store.value_mut(d.weight).fill(0.0);
        let mut tape = Tape::new(&store);
        let x = tape.constant(Mat::from_elem((4, 3), 1.7));
        let y = d.forward(&mut tape, &store, x).unwrap();
        assert!(tape.value(y).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn residual_with_zero_inner_is_identity() {
        let mut rng = SimRng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let r = Residual::new(&mut store, "r", 0, 3, &mut rng);
        store.value_mut(r.outer.weight).fill(0.0);
        let mut tape = Tape::new(&store);
        let input = Mat::from_shape_fn((2, 3), |(i, j)| i as f64 - j as f64 * 0.5);
        let x = tape.constant(input.clone());
        let y = r.forward(&mut tape, &store, x).unwrap();
        assert_eq!(tape.value(y), &input);
    }

    #[test]
    fn saturated_update_gate_returns_candidate() {
        let mut rng = SimRng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let gru = Gru::new(&mut store, "g", 0, 3, 2, &mut rng);
        store.value_mut(gru.update.2).fill(50.0);
        let xm = Mat::from_shape_fn((1, 3), |(_, j)| 0.2 * j as f64 - 0.1);
        let hm = Mat::from_shape_fn((1, 2), |(_, j)| 0.5 - j as f64);
        let mut tape = Tape::new(&store);
        let x = tape.constant(xm.clone());
        let h = tape.constant(hm.clone());
        let out = gru.forward(&mut tape, &store, x, h).unwrap();

        // candidate evaluated independently
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let (wx, wh, b) = gru.reset;
        let r = (xm.dot(store.value(wx)) + hm.dot(store.value(wh)) + store.value(b)).mapv(sig);
        let (wx, wh, b) = gru.candidate;
        let n = (xm.dot(store.value(wx)) + (&r * &hm).dot(store.value(wh)) + store.value(b))
            .mapv(f64::tanh);
        for (a, c) in tape.value(out).iter().zip(n.iter()) {
            assert!((a - c).abs() < 1e-12);
        }
    }

    #[test]
    fn permuting_identical_history_rows_is_harmless() {
        let mut rng = SimRng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let att = CrossAttention::new(&mut store, "a", 0, 4, 3, &mut rng);
        let cur = Mat::from_shape_fn((1, 4), |(_, j)| j as f64 * 0.3);
        let row_a = [0.1, 0.2, -0.3, 0.4];
        let row_b = [0.9, -0.2, 0.0, 0.1];
        let run = |rows: [[f64; 4]; 3]| {
            let mut tape = Tape::new(&store);
            let c = tape.constant(cur.clone());
            let h = tape.constant(Mat::from_shape_fn((3, 4), |(i, j)| rows[i][j]));
            let y = att
                .forward(&mut tape, &store, c, h, Rc::new(Mat::ones((1, 3))))
                .unwrap();
            tape.value(y).clone()
        };
        let x = run([row_a, row_a, row_b]);
        let y = run([row_b, row_a, row_a]);
        for (a, b) in x.iter().zip(y.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
