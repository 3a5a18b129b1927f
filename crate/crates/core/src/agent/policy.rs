//! Attention actor and state-value critic.

use std::rc::Rc;

use rand::Rng;

use super::replay::{Experience, HistoryWindow};
use crate::error::{Error, Result};
use crate::nn::{
    softmax, Act, BlockSpec, CrossAttention, Mat, Net, NetSpec, Optimizer, OptimizerKind,
    ParamStore, Tape, Var,
};

pub const ATTENTION_GROUP: u8 = 0;
pub const BODY_GROUP: u8 = 1;

/// Masked policy over the flat action space. With attention enabled the body
/// sees `[state; attention(state, history)]`, otherwise just the state.
#[derive(Debug, Clone)]
pub struct Actor {
    pub store: ParamStore,
    attention: Option<CrossAttention>,
    body: Net,
    state_len: usize,
    feature_len: usize,
    action_count: usize,
    optimizer: Optimizer,
}

/// Stacked inputs for a batch of decisions.
#[derive(Debug, Clone)]
pub struct PolicyInput {
    pub states: Mat,
    /// `(B·I) × (state_len + feature_len)`.
    pub history: Mat,
    /// `B × I`, 1 where the history row is real.
    pub history_mask: Rc<Mat>,
    /// `B × |A|`, 1 where the action is valid.
    pub action_mask: Rc<Mat>,
}

impl PolicyInput {
    pub fn single(state: &[f64], window: &HistoryWindow, mask: &[bool]) -> Self {
        let hist_mask = Mat::from_shape_fn((1, window.len()), |(_, j)| {
            f64::from(u8::from(window.live[j]))
        });
        let action_mask =
            Mat::from_shape_fn((1, mask.len()), |(_, j)| f64::from(u8::from(mask[j])));
        Self {
            states: Mat::from_shape_vec((1, state.len()), state.to_vec()).expect("row"),
            history: window.rows.clone(),
            history_mask: Rc::new(hist_mask),
            action_mask: Rc::new(action_mask),
        }
    }

    pub fn batch(items: &[&Experience]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
        let (b, d, t, w, a) = (
            items.len(),
            first.state.len(),
            first.history.len(),
            first.history.rows.ncols(),
            first.mask.len(),
        );
        let mut states = Mat::zeros((b, d));
        let mut history = Mat::zeros((b * t, w));
        let mut hist_mask = Mat::zeros((b, t));
        let mut action_mask = Mat::zeros((b, a));
        for (i, e) in items.iter().enumerate() {
            states
                .row_mut(i)
                .assign(&ndarray::ArrayView1::from(&e.state[..]));
            history
                .slice_mut(ndarray::s![i * t..(i + 1) * t, ..])
                .assign(&e.history.rows);
            for j in 0..t {
                hist_mask[[i, j]] = f64::from(u8::from(e.history.live[j]));
            }
            for (j, &m) in e.mask.iter().enumerate() {
                action_mask[[i, j]] = f64::from(u8::from(m));
            }
        }
        Ok(Self {
            states,
            history,
            history_mask: Rc::new(hist_mask),
            action_mask: Rc::new(action_mask),
        })
    }
}

/// Constants of one actor-critic update.
#[derive(Debug, Clone)]
pub struct ActorBatch {
    pub input: PolicyInput,
    pub actions: Vec<usize>,
    /// Advantage of each sampled action, treated as a constant.
    pub advantages: Vec<f64>,
    pub entropy_weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActorConfig {
    pub hidden: usize,
    pub attention_width: usize,
    pub use_attention: bool,
}

impl Default for ActorConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            attention_width: 32,
            use_attention: true,
        }
    }
}

impl Actor {
    pub fn new<R: Rng + ?Sized>(
        state_len: usize,
        feature_len: usize,
        action_count: usize,
        cfg: ActorConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let mut store = ParamStore::new();
        let attention = cfg.use_attention.then(|| {
            CrossAttention::new(
                &mut store,
                "actor.attn",
                ATTENTION_GROUP,
                state_len + feature_len,
                cfg.attention_width,
                rng,
            )
        });
        let input = state_len
            + if cfg.use_attention {
                cfg.attention_width
            } else {
                0
            };
        let spec = NetSpec::new(
            input,
            vec![
                BlockSpec::Dense {
                    out: cfg.hidden,
                    act: Act::Tanh,
                },
                BlockSpec::Residual,
                BlockSpec::Dense {
                    out: action_count,
                    act: Act::Identity,
                },
            ],
        )?;
        let body = Net::new(spec, &mut store, "actor.body", BODY_GROUP, rng);
        let optimizer = Optimizer::new(OptimizerKind::Adam, &store);
        Ok(Self {
            store,
            attention,
            body,
            state_len,
            feature_len,
            action_count,
            optimizer,
        })
    }

    pub fn uses_attention(&self) -> bool {
        self.attention.is_some()
    }

    /// `B × |A|` masked log-probabilities (0 on masked entries).
    pub fn log_probs(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        input: &PolicyInput,
    ) -> Result<Var> {
        let (b, d) = input.states.dim();
        if d != self.state_len || input.action_mask.dim() != (b, self.action_count) {
            return Err(Error::ShapeMismatch(format!(
                "policy input {:?} / mask {:?}",
                input.states.dim(),
                input.action_mask.dim()
            )));
        }
        let s = tape.constant(input.states.clone());
        let x = match &self.attention {
            Some(attn) => {
                let query = tape.constant(Mat::zeros((b, self.feature_len)));
                let current = tape.concat_cols(&[s, query])?;
                let history = tape.constant(input.history.clone());
                let context =
                    attn.forward(tape, store, current, history, input.history_mask.clone())?;
                tape.concat_cols(&[s, context])?
            }
            None => s,
        };
        let (logits, _) = self.body.forward(tape, store, x, None)?;
        tape.masked_log_softmax(logits, input.action_mask.clone())
    }

    /// Action distribution for one decision; masked actions get exactly 0.
    pub fn distribution(
        &self,
        state: &[f64],
        window: &HistoryWindow,
        mask: &[bool],
    ) -> Result<Vec<f64>> {
        if !mask.iter().any(|&m| m) {
            return Err(Error::AllMasked);
        }
        let input = PolicyInput::single(state, window, mask);
        let mut tape = Tape::new(&self.store);
        let logp = self.log_probs(&mut tape, &self.store, &input)?;
        tape.check()?;
        let logits: Vec<f64> = tape.value(logp).iter().copied().collect();
        softmax(&logits, Some(mask))
    }

    /// `−mean[log π(a)·Y − α·H(π)]` with the entropy taken over the valid actions.
    pub fn loss_tape(&self, store: &ParamStore, batch: &ActorBatch) -> Result<(Tape, Var)> {
        let b = batch.actions.len();
        let mut tape = Tape::new(store);
        let logp = self.log_probs(&mut tape, store, &batch.input)?;
        let picked = tape.pick(logp, Rc::new(batch.actions.clone()))?;
        let adv = Mat::from_shape_vec((b, 1), batch.advantages.clone())
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        let weighted = tape.mul_const(picked, Rc::new(adv))?;
        let gain = tape.sum_all(weighted);
        let per_row = tape.neg_entropy(logp);
        let neg_entropy = tape.sum_all(per_row);
        let reg = tape.scale(neg_entropy, batch.entropy_weight);
        let total = tape.add(gain, reg)?;
        let loss = tape.scale(total, -1.0 / b as f64);
        tape.check()?;
        Ok((tape, loss))
    }

    pub fn update(&mut self, batch: &ActorBatch, lr: f64) -> Result<f64> {
        let (tape, loss) = self.loss_tape(&self.store, batch)?;
        let value = tape.scalar(loss);
        self.store.zero_grad();
        tape.backward(loss, &mut self.store)?;
        self.optimizer.step(&mut self.store, lr, |_| true);
        Ok(value)
    }
}

/// State-value network on the raw encoded state.
#[derive(Debug, Clone)]
pub struct Critic {
    pub store: ParamStore,
    net: Net,
    optimizer: Optimizer,
}

impl Critic {
    pub fn new<R: Rng + ?Sized>(state_len: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        let mut store = ParamStore::new();
        let spec = NetSpec::new(
            state_len,
            vec![
                BlockSpec::Dense {
                    out: hidden,
                    act: Act::Tanh,
                },
                BlockSpec::Residual,
                BlockSpec::Dense {
                    out: 1,
                    act: Act::Identity,
                },
            ],
        )?;
        let net = Net::new(spec, &mut store, "critic", 0, rng);
        let optimizer = Optimizer::new(OptimizerKind::Adam, &store);
        Ok(Self {
            store,
            net,
            optimizer,
        })
    }

    fn value_var(&self, tape: &mut Tape, store: &ParamStore, states: &Mat) -> Result<Var> {
        let x = tape.constant(states.clone());
        Ok(self.net.forward(tape, store, x, None)?.0)
    }

    pub fn values(&self, states: &Mat) -> Result<Vec<f64>> {
        let mut tape = Tape::new(&self.store);
        let v = self.value_var(&mut tape, &self.store, states)?;
        tape.check()?;
        Ok(tape.value(v).iter().copied().collect())
    }

    /// `mean (V(s) − target)²` with the targets held constant.
    pub fn loss_tape(
        &self,
        store: &ParamStore,
        states: &Mat,
        targets: &[f64],
    ) -> Result<(Tape, Var)> {
        let mut tape = Tape::new(store);
        let v = self.value_var(&mut tape, store, states)?;
        let t = tape.constant(
            Mat::from_shape_vec((targets.len(), 1), targets.to_vec())
                .map_err(|e| Error::ShapeMismatch(e.to_string()))?,
        );
        let diff = tape.sub(v, t)?;
        let sq = tape.square(diff);
        let loss = tape.mean(sq);
        tape.check()?;
        Ok((tape, loss))
    }

    pub fn update(&mut self, states: &Mat, targets: &[f64], lr: f64) -> Result<f64> {
        let (tape, loss) = self.loss_tape(&self.store, states, targets)?;
        let value = tape.scalar(loss);
        self.store.zero_grad();
        tape.backward(loss, &mut self.store)?;
        self.optimizer.step(&mut self.store, lr, |_| true);
        Ok(value)
    }
}

/// `r + γ·V(s′) − V(s)`, without the bootstrap term at episode end.
pub fn advantage(reward: f64, value: f64, next_value: f64, gamma: f64, done: bool) -> f64 {
    let bootstrap = if done { 0.0 } else { gamma * next_value };
    reward + bootstrap - value
}

/// `R_E + ζ·R_C`.
pub fn total_reward(extrinsic: f64, curiosity: f64, zeta: f64) -> f64 {
    extrinsic + zeta * curiosity
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::finite_difference_check;
    use crate::SimRng;
    use rand::SeedableRng;

    fn window(rng: &mut SimRng, width: usize) -> HistoryWindow {
        let mut w = HistoryWindow::empty(3, width);
        for _ in 0..2 {
            let row: Vec<f64> = (0..width).map(|_| rng.random::<f64>()).collect();
            w.push(&row);
        }
        w
    }

    fn experience(rng: &mut SimRng, d: usize, fa: usize, a: usize) -> Experience {
        let mask: Vec<bool> = (0..a).map(|i| i % 3 != 1).collect();
        Experience {
            state: (0..d).map(|_| rng.random::<f64>()).collect(),
            action: 0,
            reward: rng.random::<f64>() - 0.5,
            next_state: (0..d).map(|_| rng.random::<f64>()).collect(),
            done: false,
            history: window(rng, d + fa),
            mask,
            icm_hidden: None,
        }
    }

    #[test]
    fn masked_actions_get_zero_probability() {
        let mut rng = SimRng::seed_from_u64(1);
        let actor = Actor::new(5, 3, 7, ActorConfig::default(), &mut rng).unwrap();
        let w = window(&mut rng, 8);
        let s = [0.3; 5];
        let mask = [true, false, true, false, false, true, false];
        let p = actor.distribution(&s, &w, &mask).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().zip(&mask).all(|(&x, &m)| m || x == 0.0));
        let only = [false, false, false, true, false, false, false];
        assert_eq!(actor.distribution(&s, &w, &only).unwrap()[3], 1.0);
        assert!(matches!(
            actor.distribution(&s, &w, &[false; 7]),
            Err(Error::AllMasked)
        ));
        let empty = HistoryWindow::empty(3, 8);
        assert!(actor.distribution(&s, &empty, &mask).is_ok());
    }

    #[test]
    fn advantage_examples() {
        assert_eq!(advantage(0.0, 2.0, 2.0, 1.0, false), 0.0);
        assert_eq!(advantage(1.5, 2.0, 9.0, 0.9, true), -0.5);
        assert_eq!(total_reward(-0.4, 1.0, 0.0), -0.4);
        assert!((total_reward(0.0, 1.0, 0.3) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn zero_advantage_without_entropy_gives_no_gradient() {
        let mut rng = SimRng::seed_from_u64(2);
        let mut actor = Actor::new(4, 2, 6, ActorConfig::default(), &mut rng).unwrap();
        let exps: Vec<_> = (0..3).map(|_| experience(&mut rng, 4, 2, 6)).collect();
        let refs: Vec<&Experience> = exps.iter().collect();
        let batch = ActorBatch {
            input: PolicyInput::batch(&refs).unwrap(),
            actions: vec![0, 2, 3],
            advantages: vec![0.0; 3],
            entropy_weight: 0.0,
        };
        let (tape, loss) = actor.loss_tape(&actor.store, &batch).unwrap();
        actor.store.zero_grad();
        tape.backward(loss, &mut actor.store).unwrap();
        assert!(actor
            .store
            .ids()
            .all(|id| actor.store.grad(id).iter().all(|&g| g == 0.0)));
    }

    #[test]
    fn actor_and_critic_gradients_match_finite_differences() {
        let mut rng = SimRng::seed_from_u64(3);
        for use_attention in [true, false] {
            let cfg = ActorConfig {
                hidden: 8,
                attention_width: 4,
                use_attention,
            };
            let actor = Actor::new(4, 2, 6, cfg, &mut rng).unwrap();
            let exps: Vec<_> = (0..3).map(|_| experience(&mut rng, 4, 2, 6)).collect();
            let refs: Vec<&Experience> = exps.iter().collect();
            let batch = ActorBatch {
                input: PolicyInput::batch(&refs).unwrap(),
                actions: vec![0, 2, 3],
                advantages: vec![0.7, -1.2, 0.4],
                entropy_weight: 0.05,
            };
            let mut store = actor.store.clone();
            let f = |s: &ParamStore| actor.loss_tape(s, &batch);
            let check =
                finite_difference_check(&mut store, &f, &|_| true, 20, 1e-6, &mut rng).unwrap();
            assert!(check.max_rel_err <= 1e-4, "{check:?}");
        }
        let critic = Critic::new(4, 8, &mut rng).unwrap();
        let states = Mat::from_shape_fn((5, 4), |_| rng.random::<f64>());
        let targets = [0.1, -0.3, 2.0, 0.0, 1.0];
        let mut store = critic.store.clone();
        let f = |s: &ParamStore| critic.loss_tape(s, &states, &targets);
        let check = finite_difference_check(&mut store, &f, &|_| true, 20, 1e-6, &mut rng).unwrap();
        assert!(check.max_rel_err <= 1e-4, "{check:?}");
    }

    #[test]
    fn critic_reaches_discounted_fixed_point() {
        let mut rng = SimRng::seed_from_u64(4);
        let mut critic = Critic::new(3, 16, &mut rng).unwrap();
        let s = Mat::from_shape_vec((1, 3), vec![0.2, 0.5, 0.9]).unwrap();
        let (r, gamma) = (1.0, 0.9);
        for _ in 0..2000 {
            let v = critic.values(&s).unwrap()[0];
            critic.update(&s, &[r + gamma * v], 3e-2).unwrap();
        }
        let v = critic.values(&s).unwrap()[0];
        let target = r / (1.0 - gamma);
        assert!((v - target).abs() <= 0.01 * target, "{v}");
    }
}
