//! Intrinsic curiosity module: a bounded feature extractor, a forward model
//! predicting the next feature vector and an inverse model predicting the
//! action taken.

use std::rc::Rc;

use ndarray::{Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::init_weight;
use crate::nn::{
    Act, BlockSpec, Mat, Net, NetSpec, Optimizer, OptimizerKind, ParamId, ParamStore, Tape, Var,
};

pub const EXTRACTOR: u8 = 0;
pub const FORWARD: u8 = 1;
pub const INVERSE: u8 = 2;

/// Floor applied to inverse-model probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// How the extractor is trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ExtractorUpdate {
    /// Inverse step on extractor and inverse model, forward step, then a
    /// combined step on the extractor alone.
    #[default]
    Sequential,
    /// The inverse step touches the inverse model only; the extractor learns
    /// from the combined loss alone.
    CombinedOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IcmConfig {
    pub feature_dim: usize,
    pub hidden: usize,
    pub recurrent: usize,
    pub action_embed: usize,
    /// Learning rate of the inverse step.
    pub lr_inverse: f64,
    /// Learning rate of the forward step.
    pub lr_forward: f64,
    /// Learning rate of the combined extractor step.
    pub lr_extractor: f64,
    /// Weight of the inverse loss in the extractor loss.
    pub inverse_weight: f64,
    pub extractor_update: ExtractorUpdate,
}

impl Default for IcmConfig {
    fn default() -> Self {
        Self {
            feature_dim: 32,
            hidden: 64,
            recurrent: 32,
            action_embed: 16,
            lr_inverse: 3e-4,
            lr_forward: 3e-4,
            lr_extractor: 3e-4,
            inverse_weight: 5.0,
            extractor_update: ExtractorUpdate::Sequential,
        }
    }
}

/// Transitions for one update. Row `i` of every matrix belongs to the same
/// transition; the hidden matrices hold the recurrent states the two models
/// had when the transition was observed.
#[derive(Debug, Clone, PartialEq)]
pub struct IcmBatch {
    pub states: Mat,
    pub actions: Vec<usize>,
    pub next_states: Mat,
    pub forward_hidden: Mat,
    pub inverse_hidden: Mat,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IcmLosses {
    pub inverse: f64,
    pub forward: f64,
    pub extractor: f64,
}

/// Recurrent states carried through one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct IcmHidden {
    pub forward: Mat,
    pub inverse: Mat,
}

/// Result of observing one transition online.
#[derive(Debug, Clone, PartialEq)]
pub struct Curiosity {
    pub reward: f64,
    /// Hidden states before the transition (to be stored for replay).
    pub before: IcmHidden,
}

struct Graph {
    tape: Tape,
    inverse: Option<Var>,
    forward: Option<Var>,
    extractor: Option<Var>,
}

#[derive(Debug, Clone)]
pub struct Icm {
    pub cfg: IcmConfig,
    pub store: ParamStore,
    state_len: usize,
    action_count: usize,
    extractor: Net,
    forward_model: Net,
    inverse_model: Net,
    embedding: ParamId,
    optimizer: Optimizer,
}

/// `½‖a − b‖²`.
pub fn intrinsic_reward(next_feature: &[f64], predicted: &[f64]) -> f64 {
    0.5 * next_feature
        .iter()
        .zip(predicted)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
}

impl Icm {
    pub fn new<R: Rng + ?Sized>(
        state_len: usize,
        action_count: usize,
        cfg: IcmConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if state_len == 0 || action_count == 0 || cfg.feature_dim == 0 {
            return Err(Error::InvalidArgument("empty curiosity module".into()));
        }
        let mut store = ParamStore::new();
        let (f, h, g) = (cfg.feature_dim, cfg.hidden, cfg.recurrent);
        let extractor = Net::new(
            NetSpec::new(
                state_len,
                vec![
                    BlockSpec::Dense {
                        out: h,
                        act: Act::Tanh,
                    },
                    BlockSpec::Residual,
                    BlockSpec::Dense {
                        out: f,
                        act: Act::Sigmoid,
                    },
                ],
            )?,
            &mut store,
            "extractor",
            EXTRACTOR,
            rng,
        );
        let embedding = store.add(
            "forward.embed",
            FORWARD,
            init_weight(action_count, cfg.action_embed, rng),
        );
        let dynamics = |input: usize, out: usize, act: Act| {
            NetSpec::new(
                input,
                vec![
                    BlockSpec::Dense {
                        out: h,
                        act: Act::Tanh,
                    },
                    BlockSpec::Residual,
                    BlockSpec::Gru { hidden: g },
                    BlockSpec::Dense { out, act },
                ],
            )
        };
        let forward_model = Net::new(
            dynamics(f + cfg.action_embed, f, Act::Sigmoid)?,
            &mut store,
            "forward",
            FORWARD,
            rng,
        );
        let inverse_model = Net::new(
            dynamics(2 * f, action_count, Act::Identity)?,
            &mut store,
            "inverse",
            INVERSE,
            rng,
        );
        let optimizer = Optimizer::new(OptimizerKind::Adam, &store);
        Ok(Self {
            cfg,
            store,
            state_len,
            action_count,
            extractor,
            forward_model,
            inverse_model,
            embedding,
            optimizer,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.cfg.feature_dim
    }

    pub fn initial_hidden(&self, rows: usize) -> IcmHidden {
        IcmHidden {
            forward: Mat::zeros((rows, self.cfg.recurrent)),
            inverse: Mat::zeros((rows, self.cfg.recurrent)),
        }
    }

    fn check_states(&self, m: &Mat) -> Result<()> {
        if m.ncols() != self.state_len {
            return Err(Error::ShapeMismatch(format!(
                "state width {} vs {}",
                m.ncols(),
                self.state_len
            )));
        }
        Ok(())
    }

    fn extract_var(&self, tape: &mut Tape, store: &ParamStore, states: &Mat) -> Result<Var> {
        let x = tape.constant(states.clone());
        Ok(self.extractor.forward(tape, store, x, None)?.0)
    }

    fn forward_var(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        phi: Var,
        actions: &[usize],
        hidden: &Mat,
    ) -> Result<(Var, Var)> {
        if let Some(&bad) = actions.iter().find(|&&a| a >= self.action_count) {
            return Err(Error::InvalidArgument(format!(
                "action {bad} outside 0..{}",
                self.action_count
            )));
        }
        let table = tape.param(store, self.embedding);
        let emb = tape.gather(table, Rc::new(actions.to_vec()))?;
        let x = tape.concat_cols(&[phi, emb])?;
        let h = tape.constant(hidden.clone());
        let (out, next) = self.forward_model.forward(tape, store, x, Some(h))?;
        Ok((out, next.expect("forward model is recurrent")))
    }

    fn inverse_var(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        phi: Var,
        phi_next: Var,
        hidden: &Mat,
    ) -> Result<(Var, Var)> {
        let x = tape.concat_cols(&[phi, phi_next])?;
        let h = tape.constant(hidden.clone());
        let (logits, next) = self.inverse_model.forward(tape, store, x, Some(h))?;
        let all = Rc::new(Mat::ones(tape.value(logits).dim()));
        let logp = tape.masked_log_softmax(logits, all)?;
        Ok((logp, next.expect("inverse model is recurrent")))
    }

    /// Feature vectors of a batch of encoded states, each in [0, 1].
    pub fn extract(&self, states: &Mat) -> Result<Mat> {
        self.check_states(states)?;
        let mut tape = Tape::new(&self.store);
        let v = self.extract_var(&mut tape, &self.store, states)?;
        tape.check()?;
        Ok(tape.value(v).clone())
    }

    /// Predicted next features and the forward model's next hidden state.
    pub fn predict_next_feature(
        &self,
        phi: &Mat,
        actions: &[usize],
        hidden: &Mat,
    ) -> Result<(Mat, Mat)> {
        let mut tape = Tape::new(&self.store);
        let p = tape.constant(phi.clone());
        let (out, h) = self.forward_var(&mut tape, &self.store, p, actions, hidden)?;
        tape.check()?;
        Ok((tape.value(out).clone(), tape.value(h).clone()))
    }

    /// Predicted action distribution and the inverse model's next hidden state.
    pub fn predict_action_dist(
        &self,
        phi: &Mat,
        phi_next: &Mat,
        hidden: &Mat,
    ) -> Result<(Mat, Mat)> {
        let mut tape = Tape::new(&self.store);
        let a = tape.constant(phi.clone());
        let b = tape.constant(phi_next.clone());
        let (logp, h) = self.inverse_var(&mut tape, &self.store, a, b, hidden)?;
        tape.check()?;
        Ok((tape.value(logp).mapv(f64::exp), tape.value(h).clone()))
    }

    /// Curiosity reward of one transition; advances `hidden`.
    pub fn observe(
        &self,
        state: &[f64],
        action: usize,
        next_state: &[f64],
        hidden: &mut IcmHidden,
    ) -> Result<Curiosity> {
        let rows = Array2::from_shape_vec(
            (2, state.len()),
            state.iter().chain(next_state).copied().collect(),
        )
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        let phi = self.extract(&rows)?;
        let (cur, next) = (
            phi.slice(ndarray::s![0..1, ..]).to_owned(),
            phi.slice(ndarray::s![1..2, ..]).to_owned(),
        );
        let (pred, fh) = self.predict_next_feature(&cur, &[action], &hidden.forward)?;
        let (_, ih) = self.predict_action_dist(&cur, &next, &hidden.inverse)?;
        let reward = intrinsic_reward(next.as_slice().expect("row"), pred.as_slice().expect("row"));
        let before = IcmHidden {
            forward: fh,
            inverse: ih,
        };
        Ok(Curiosity {
            reward,
            before: std::mem::replace(hidden, before),
        })
    }

    fn graph(
        &self,
        store: &ParamStore,
        batch: &IcmBatch,
        want_inverse: bool,
        want_forward: bool,
    ) -> Result<Graph> {
        let b = batch.actions.len();
        if b == 0 {
            return Err(Error::InvalidArgument("empty curiosity batch".into()));
        }
        self.check_states(&batch.states)?;
        self.check_states(&batch.next_states)?;
        let mut tape = Tape::new(store);
        let phi = self.extract_var(&mut tape, store, &batch.states)?;
        let phi_next = self.extract_var(&mut tape, store, &batch.next_states)?;

        let inverse = if want_inverse {
            let (logp, _) =
                self.inverse_var(&mut tape, store, phi, phi_next, &batch.inverse_hidden)?;
            let picked = tape.pick(logp, Rc::new(batch.actions.clone()))?;
            let prob = tape.exp(picked);
            let guarded = tape.ln_floor(prob, PROB_FLOOR);
            let total = tape.sum_all(guarded);
            Some(tape.scale(total, -1.0 / b as f64))
        } else {
            None
        };
        let forward = if want_forward {
            let (pred, _) =
                self.forward_var(&mut tape, store, phi, &batch.actions, &batch.forward_hidden)?;
            let diff = tape.sub(pred, phi_next)?;
            let sq = tape.square(diff);
            let total = tape.sum_all(sq);
            Some(tape.scale(total, 0.5 / b as f64))
        } else {
            None
        };
        let extractor = match (inverse, forward) {
            (Some(i), Some(f)) => {
                let weighted = tape.scale(i, self.cfg.inverse_weight);
                Some(tape.add(f, weighted)?)
            }
            _ => None,
        };
        tape.check()?;
        Ok(Graph {
            tape,
            inverse,
            forward,
            extractor,
        })
    }

    /// Loss values at the current parameters without updating.
    pub fn losses(&self, batch: &IcmBatch) -> Result<IcmLosses> {
        let g = self.graph(&self.store, batch, true, true)?;
        let value = |v: Option<Var>| g.tape.scalar(v.expect("full graph"));
        Ok(IcmLosses {
            inverse: value(g.inverse),
            forward: value(g.forward),
            extractor: value(g.extractor),
        })
    }

    /// Tape and root of one loss, for gradient checking.
    pub fn loss_tape(
        &self,
        store: &ParamStore,
        batch: &IcmBatch,
        which: IcmLoss,
    ) -> Result<(Tape, Var)> {
        let g = match which {
            IcmLoss::Inverse => self.graph(store, batch, true, false)?,
            IcmLoss::Forward => self.graph(store, batch, false, true)?,
            IcmLoss::Extractor => self.graph(store, batch, true, true)?,
        };
        let root = match which {
            IcmLoss::Inverse => g.inverse,
            IcmLoss::Forward => g.forward,
            IcmLoss::Extractor => g.extractor,
        };
        Ok((g.tape, root.expect("requested loss was built")))
    }

    fn descend(
        &mut self,
        batch: &IcmBatch,
        which: IcmLoss,
        lr: f64,
        select: impl Fn(u8) -> bool,
    ) -> Result<f64> {
        let (tape, root) = self.loss_tape(&self.store, batch, which)?;
        let value = tape.scalar(root);
        self.store.zero_grad();
        tape.backward(root, &mut self.store)?;
        self.optimizer.step(&mut self.store, lr, select);
        Ok(value)
    }

    /// Inverse step, forward step, then extractor step, each on freshly
    /// recomputed losses. Returns the loss values seen by each step.
    pub fn update(&mut self, batch: &IcmBatch) -> Result<IcmLosses> {
        let with_extractor = self.cfg.extractor_update == ExtractorUpdate::Sequential;
        let inverse = self.descend(batch, IcmLoss::Inverse, self.cfg.lr_inverse, |g| {
            g == INVERSE || (with_extractor && g == EXTRACTOR)
        })?;
        let forward = self.descend(batch, IcmLoss::Forward, self.cfg.lr_forward, |g| {
            g == FORWARD
        })?;
        let extractor = self.descend(batch, IcmLoss::Extractor, self.cfg.lr_extractor, |g| {
            g == EXTRACTOR
        })?;
        self.store.zero_grad();
        Ok(IcmLosses {
            inverse,
            forward,
            extractor,
        })
    }

    /// Zero the inverse model's output layer so it predicts uniformly.
    pub fn zero_inverse_head(&mut self) {
        if let Some(head) = self.inverse_model.head() {
            self.store.value_mut(head.weight).fill(0.0);
            self.store.value_mut(head.bias).fill(0.0);
        }
    }

    pub fn stack_rows<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> Result<Mat> {
        let rows: Vec<&[f64]> = rows.into_iter().collect();
        let width = rows.first().map_or(0, |r| r.len());
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Array2::from_shape_vec((rows.len(), width), flat)
            .map_err(|e| Error::ShapeMismatch(e.to_string()))
    }

    pub fn row(m: &Mat, i: usize) -> Vec<f64> {
        m.index_axis(Axis(0), i).to_vec()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IcmLoss {
    Inverse,
    Forward,
    Extractor,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::finite_difference_check;
    use crate::SimRng;
    use rand::SeedableRng;

    fn small(rng: &mut SimRng) -> Icm {
        let cfg = IcmConfig {
            feature_dim: 6,
            hidden: 8,
            recurrent: 5,
            action_embed: 3,
            ..IcmConfig::default()
        };
        Icm::new(7, 5, cfg, rng).unwrap()
    }

    fn random_batch(icm: &Icm, b: usize, rng: &mut SimRng) -> IcmBatch {
        let mut m = |r: usize, c: usize| Mat::from_shape_fn((r, c), |_| rng.random::<f64>());
        let states = m(b, icm.state_len);
        let next_states = m(b, icm.state_len);
        let forward_hidden = m(b, icm.cfg.recurrent) - 0.5;
        let inverse_hidden = m(b, icm.cfg.recurrent) - 0.5;
        let actions = (0..b).map(|i| (i * 3 + 1) % icm.action_count).collect();
        IcmBatch {
            states,
            actions,
            next_states,
            forward_hidden,
            inverse_hidden,
        }
    }

    #[test]
    fn features_are_bounded_and_deterministic() {
        let mut rng = SimRng::seed_from_u64(1);
        let icm = small(&mut rng);
        let states = Mat::from_shape_fn((1000, 7), |_| rng.random_range(-5.0..5.0));
        let phi = icm.extract(&states).unwrap();
        assert!(phi.iter().all(|&x| (0.0..=1.0).contains(&x)));
        assert_eq!(phi, icm.extract(&states).unwrap());
        let rows: std::collections::HashSet<Vec<u64>> = phi
            .outer_iter()
            .map(|r| r.iter().map(|x| x.to_bits()).collect())
            .collect();
        assert_eq!(rows.len(), 1000);
    }

    #[test]
    fn intrinsic_reward_examples() {
        assert_eq!(intrinsic_reward(&[0.2, 0.3], &[0.2, 0.3]), 0.0);
        assert_eq!(intrinsic_reward(&[1.0, 0.0], &[0.0, 0.0]), 0.5);
        assert_eq!(intrinsic_reward(&[1.0; 4], &[0.0; 4]), 2.0);
    }

    #[test]
    fn inverse_model_gives_distributions() {
        let mut rng = SimRng::seed_from_u64(2);
        let mut icm = small(&mut rng);
        let phi = Mat::from_shape_fn((4, 6), |_| rng.random::<f64>());
        let h = icm.initial_hidden(4);
        let (p, _) = icm.predict_action_dist(&phi, &phi, &h.inverse).unwrap();
        for r in p.outer_iter() {
            assert!((r.sum() - 1.0).abs() < 1e-12 && r.iter().all(|&x| x >= 0.0));
        }
        icm.zero_inverse_head();
        let (p, _) = icm.predict_action_dist(&phi, &phi, &h.inverse).unwrap();
        assert!(p.iter().all(|&x| (x - 0.2).abs() < 1e-15));
        let (f, _) = icm
            .predict_next_feature(&phi, &[0, 1, 2, 3], &h.forward)
            .unwrap();
        assert_eq!(f.dim(), (4, 6));
    }

    #[test]
    fn extractor_loss_is_forward_plus_weighted_inverse() {
        let mut rng = SimRng::seed_from_u64(3);
        let icm = small(&mut rng);
        let batch = random_batch(&icm, 5, &mut rng);
        let l = icm.losses(&batch).unwrap();
        assert!((l.extractor - (l.forward + 5.0 * l.inverse)).abs() < 1e-12);
        assert!(l.forward >= 0.0 && l.inverse > 0.0);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = SimRng::seed_from_u64(4);
        let icm = small(&mut rng);
        let batch = random_batch(&icm, 3, &mut rng);
        for (which, group) in [
            (IcmLoss::Inverse, INVERSE),
            (IcmLoss::Forward, FORWARD),
            (IcmLoss::Extractor, EXTRACTOR),
        ] {
            let mut store = icm.store.clone();
            let f = |s: &ParamStore| icm.loss_tape(s, &batch, which);
            let check =
                finite_difference_check(&mut store, &f, &|g| g == group, 20, 1e-6, &mut rng)
                    .unwrap();
            assert!(check.max_rel_err <= 1e-4, "{which:?}: {check:?}");
        }
    }

    #[test]
    fn forward_error_drops_with_training() {
        let mut rng = SimRng::seed_from_u64(5);
        let mut icm = small(&mut rng);
        icm.cfg.lr_forward = 3e-3;
        let batch = random_batch(&icm, 16, &mut rng);
        let before = icm.losses(&batch).unwrap().forward;
        for _ in 0..500 {
            icm.descend(&batch, IcmLoss::Forward, icm.cfg.lr_forward, |g| {
                g == FORWARD
            })
            .unwrap();
        }
        let after = icm.losses(&batch).unwrap().forward;
        assert!(after * 10.0 <= before, "{before} -> {after}");
    }

    #[test]
    fn inverse_model_learns_deterministic_actions() {
        let mut rng = SimRng::seed_from_u64(6);
        let mut icm = small(&mut rng);
        icm.cfg.lr_inverse = 3e-3;
        icm.cfg.lr_extractor = 3e-3;
        // action k moves the state along axis k
        let mut states = Mat::zeros((20, 7));
        let mut next = Mat::zeros((20, 7));
        let mut actions = Vec::new();
        for i in 0..20 {
            let a = i % 5;
            for j in 0..7 {
                states[[i, j]] = ((i * 7 + j) % 11) as f64 / 11.0;
            }
            next.row_mut(i).assign(&states.row(i));
            next[[i, a]] += 1.0;
            actions.push(a);
        }
        let h = icm.initial_hidden(20);
        let batch = IcmBatch {
            states,
            actions,
            next_states: next,
            forward_hidden: h.forward,
            inverse_hidden: h.inverse,
        };
        for _ in 0..500 {
            icm.update(&batch).unwrap();
        }
        let phi = icm.extract(&batch.states).unwrap();
        let phi_next = icm.extract(&batch.next_states).unwrap();
        let (p, _) = icm
            .predict_action_dist(&phi, &phi_next, &batch.inverse_hidden)
            .unwrap();
        let hits = p
            .outer_iter()
            .zip(&batch.actions)
            .filter(|(r, &a)| {
                r.iter()
                    .enumerate()
                    .max_by(|x, y| x.1.total_cmp(y.1))
                    .unwrap()
                    .0
                    == a
            })
            .count();
        assert!(hits >= 18, "{hits}/20");
    }

    #[test]
    fn observe_carries_hidden_state() {
        let mut rng = SimRng::seed_from_u64(7);
        let icm = small(&mut rng);
        let mut h = icm.initial_hidden(1);
        let s = [0.1; 7];
        let c1 = icm.observe(&s, 2, &s, &mut h).unwrap();
        assert_eq!(c1.before, icm.initial_hidden(1));
        assert!(c1.reward >= 0.0);
        let c2 = icm.observe(&s, 2, &s, &mut h).unwrap();
        assert_ne!(c2.before, c1.before);
    }
}
