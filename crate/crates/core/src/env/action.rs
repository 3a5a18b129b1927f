//! Flat discrete action space.
//!
//! An action is the tuple (receiver, cut size, deceiver set, transmit level,
//! decoy level) flattened row-major in that order. Receiver 0 is the server
//! (or nobody on backward steps), receiver `i > 0` is device `i − 1`. Cut size
//! 0 means no new segment. All deceivers in a set share one power level.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionTuple {
    pub receiver: usize,
    pub cut: usize,
    pub deceiver_set: usize,
    pub tx_level: usize,
    pub decoy_level: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSpace {
    pub devices: usize,
    pub max_cut: usize,
    /// Device indices of every allowed deceiver subset, empty set first.
    pub deceiver_sets: Vec<Vec<usize>>,
    pub levels: Vec<f64>,
}

impl ActionSpace {
    pub fn new(
        devices: usize,
        max_cut: usize,
        max_deceivers: usize,
        levels: Vec<f64>,
    ) -> Result<Self> {
        if levels.is_empty() || levels.iter().any(|&p| !(p > 0.0)) {
            return Err(Error::InvalidArgument(format!("power levels {levels:?}")));
        }
        let mut deceiver_sets = Vec::new();
        for size in 0..=max_deceivers.min(devices) {
            combinations(devices, size, &mut Vec::new(), 0, &mut deceiver_sets);
        }
        Ok(Self {
            devices,
            max_cut,
            deceiver_sets,
            levels,
        })
    }

    pub fn receivers(&self) -> usize {
        self.devices + 1
    }

    pub fn cuts(&self) -> usize {
        self.max_cut + 1
    }

    pub fn size(&self) -> usize {
        self.receivers()
            * self.cuts()
            * self.deceiver_sets.len()
            * self.levels.len()
            * self.levels.len()
    }

    pub fn encode(&self, a: ActionTuple) -> usize {
        let p = self.levels.len();
        (((a.receiver * self.cuts() + a.cut) * self.deceiver_sets.len() + a.deceiver_set) * p
            + a.tx_level)
            * p
            + a.decoy_level
    }

    pub fn decode(&self, id: usize) -> Result<ActionTuple> {
        if id >= self.size() {
            return Err(Error::InvalidArgument(format!(
                "action {id} outside 0..{}",
                self.size()
            )));
        }
        let p = self.levels.len();
        let (rest, decoy_level) = (id / p, id % p);
        let (rest, tx_level) = (rest / p, rest % p);
        let (rest, deceiver_set) = (
            rest / self.deceiver_sets.len(),
            rest % self.deceiver_sets.len(),
        );
        let (receiver, cut) = (rest / self.cuts(), rest % self.cuts());
        Ok(ActionTuple {
            receiver,
            cut,
            deceiver_set,
            tx_level,
            decoy_level,
        })
    }

    /// Width of [`features`](Self::features).
    pub fn feature_len(&self) -> usize {
        self.receivers() + self.cuts() + self.devices + 2
    }

    /// Receiver one-hot, cut one-hot, deceiver multi-hot and the two power
    /// levels scaled to [0, 1].
    pub fn features(&self, id: usize) -> Result<Vec<f64>> {
        let a = self.decode(id)?;
        let mut f = vec![0.0; self.feature_len()];
        f[a.receiver] = 1.0;
        f[self.receivers() + a.cut] = 1.0;
        for &d in &self.deceiver_sets[a.deceiver_set] {
            f[self.receivers() + self.cuts() + d] = 1.0;
        }
        let top = (self.levels.len().max(2) - 1) as f64;
        let n = f.len();
        f[n - 2] = a.tx_level as f64 / top;
        f[n - 1] = a.decoy_level as f64 / top;
        Ok(f)
    }
}

fn combinations(n: usize, k: usize, cur: &mut Vec<usize>, from: usize, out: &mut Vec<Vec<usize>>) {
    if cur.len() == k {
        out.push(cur.clone());
        return;
    }
    for i in from..n {
        cur.push(i);
        combinations(n, k, cur, i + 1, out);
        cur.pop();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_space_size() {
        let s = ActionSpace::new(6, 3, 2, vec![0.05, 0.1, 0.2, 0.4]).unwrap();
        assert_eq!(s.deceiver_sets.len(), 22);
        assert_eq!(s.size(), 7 * 4 * 22 * 16);
        assert!(s.deceiver_sets[0].is_empty());
    }

    #[test]
    fn encode_decode_round_trip() {
        let s = ActionSpace::new(4, 2, 2, vec![0.1, 0.2, 0.3]).unwrap();
        for id in 0..s.size() {
            assert_eq!(s.encode(s.decode(id).unwrap()), id);
        }
        assert!(s.decode(s.size()).is_err());
    }
}
