//! Fixed-capacity experience replay.

use std::collections::VecDeque;

use rand::Rng;

use crate::icm::IcmHidden;
use crate::nn::Mat;

/// The last `I` state-action rows seen before an action was chosen.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryWindow {
    /// `I × (state_len + action_features)`, zero rows where empty.
    pub rows: Mat,
    /// Which rows hold a real pair.
    pub live: Vec<bool>,
}

impl HistoryWindow {
    pub fn empty(len: usize, width: usize) -> Self {
        Self {
            rows: Mat::zeros((len, width)),
            live: vec![false; len],
        }
    }

    /// Append a row, dropping the oldest once full. The newest row is last.
    pub fn push(&mut self, row: &[f64]) {
        let n = self.live.len();
        if n == 0 {
            return;
        }
        for i in 1..n {
            let prev = self.rows.row(i).to_owned();
            self.rows.row_mut(i - 1).assign(&prev);
            self.live[i - 1] = self.live[i];
        }
        self.rows
            .row_mut(n - 1)
            .assign(&ndarray::ArrayView1::from(row));
        self.live[n - 1] = true;
    }

    pub fn len(&self) -> usize {
        self.live.len()
    }

    pub fn is_empty(&self) -> bool {
        self.live.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Experience {
    pub state: Vec<f64>,
    pub action: usize,
    /// Extrinsic plus weighted curiosity reward.
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
    pub history: HistoryWindow,
    /// Valid actions at `state`.
    pub mask: Vec<bool>,
    /// Curiosity-model recurrent states when the transition was observed.
    pub icm_hidden: Option<IcmHidden>,
}

/// First-in first-out ring of experiences.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Experience>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            items: VecDeque::with_capacity(capacity.clamp(1, 1 << 16)),
        }
    }

    pub fn push(&mut self, e: Experience) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(e);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, i: usize) -> Option<&Experience> {
        self.items.get(i)
    }

    /// Up to `n` distinct experiences chosen uniformly.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<&Experience> {
        let n = n.min(self.items.len());
        rand::seq::index::sample(rng, self.items.len(), n)
            .into_iter()
            .map(|i| &self.items[i])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::SimRng;
    use rand::SeedableRng;

    fn exp(tag: usize) -> Experience {
        Experience {
            state: vec![tag as f64],
            action: tag,
            reward: 0.0,
            next_state: vec![0.0],
            done: false,
            history: HistoryWindow::empty(2, 1),
            mask: vec![true],
            icm_hidden: None,
        }
    }

    #[test]
    fn evicts_oldest() {
        let mut b = ReplayBuffer::new(3);
        for i in 0..5 {
            b.push(exp(i));
        }
        assert_eq!(b.len(), 3);
        assert_eq!(b.get(0).unwrap().action, 2);
        assert_eq!(b.get(2).unwrap().action, 4);
    }

    #[test]
    fn sampling_is_seeded_and_distinct() {
        let mut b = ReplayBuffer::new(100);
        for i in 0..50 {
            b.push(exp(i));
        }
        let pick = |seed| {
            b.sample(10, &mut SimRng::seed_from_u64(seed))
                .iter()
                .map(|e| e.action)
                .collect::<Vec<_>>()
        };
        assert_eq!(pick(1), pick(1));
        let mut s = pick(1);
        s.sort();
        s.dedup();
        assert_eq!(s.len(), 10);
        assert_eq!(b.sample(80, &mut SimRng::seed_from_u64(0)).len(), 50);
    }

    #[test]
    fn window_slides() {
        let mut w = HistoryWindow::empty(2, 1);
        w.push(&[1.0]);
        assert_eq!(w.live, vec![false, true]);
        w.push(&[2.0]);
        w.push(&[3.0]);
        assert_eq!(w.live, vec![true, true]);
        assert_eq!(w.rows.column(0).to_vec(), vec![2.0, 3.0]);
    }
}
