//! Feed-forward stacks described by a [`NetSpec`].

use rand::Rng;

use super::layers::{Act, Dense, Gru, Residual};
use super::tape::{Mat, ParamStore, Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockSpec {
    Dense {
        out: usize,
        act: Act,
    },
    /// Width-preserving residual block.
    Residual,
    /// Recurrent block; its output is also the new recurrent state.
    Gru {
        hidden: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetSpec {
    pub input: usize,
    pub blocks: Vec<BlockSpec>,
}

impl NetSpec {
    pub fn new(input: usize, blocks: Vec<BlockSpec>) -> Result<Self> {
        let gru_count = blocks
            .iter()
            .filter(|b| matches!(b, BlockSpec::Gru { .. }))
            .count();
        if gru_count > 1 || blocks.is_empty() || input == 0 {
            return Err(Error::InvalidArgument(format!(
                "unsupported net layout {blocks:?}"
            )));
        }
        Ok(Self { input, blocks })
    }

    pub fn output(&self) -> usize {
        self.blocks.iter().fold(self.input, |w, b| match *b {
            BlockSpec::Dense { out, .. } => out,
            BlockSpec::Residual => w,
            BlockSpec::Gru { hidden } => hidden,
        })
    }

    /// Width of the recurrent state, if any.
    pub fn recurrent(&self) -> Option<usize> {
        self.blocks.iter().find_map(|b| match *b {
            BlockSpec::Gru { hidden } => Some(hidden),
            _ => None,
        })
    }
}

#[derive(Debug, Clone, Copy)]
enum Block {
    Dense(Dense),
    Residual(Residual),
    Gru(Gru),
}

#[derive(Debug, Clone)]
pub struct Net {
    pub spec: NetSpec,
    blocks: Vec<Block>,
}

impl Net {
    pub fn new<R: Rng + ?Sized>(
        spec: NetSpec,
        store: &mut ParamStore,
        name: &str,
        group: u8,
        rng: &mut R,
    ) -> Self {
        let mut width = spec.input;
        let mut blocks = Vec::with_capacity(spec.blocks.len());
        for (i, b) in spec.blocks.iter().enumerate() {
            let label = format!("{name}.{i}");
            blocks.push(match *b {
                BlockSpec::Dense { out, act } => {
                    let d = Dense::new(store, &label, group, (width, out), act, rng);
                    width = out;
                    Block::Dense(d)
                }
                BlockSpec::Residual => {
                    Block::Residual(Residual::new(store, &label, group, width, rng))
                }
                BlockSpec::Gru { hidden } => {
                    let g = Gru::new(store, &label, group, width, hidden, rng);
                    width = hidden;
                    Block::Gru(g)
                }
            });
        }
        Self { spec, blocks }
    }

    /// Forward pass. `state` is the previous recurrent state (zeros when
    /// `None`); the second return value is the new one.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        state: Option<Var>,
    ) -> Result<(Var, Option<Var>)> {
        if tape.value(x).ncols() != self.spec.input {
            return Err(Error::ShapeMismatch(format!(
                "net input {} vs {}",
                tape.value(x).ncols(),
                self.spec.input
            )));
        }
        let rows = tape.value(x).nrows();
        let mut h = x;
        let mut next_state = None;
        for b in &self.blocks {
            h = match b {
                Block::Dense(d) => d.forward(tape, store, h)?,
                Block::Residual(r) => r.forward(tape, store, h)?,
                Block::Gru(g) => {
                    let prev = match state {
                        Some(s) => s,
                        None => tape.constant(Mat::zeros((rows, g.hidden))),
                    };
                    let out = g.forward(tape, store, h, prev)?;
                    next_state = Some(out);
                    out
                }
            };
        }
        Ok((h, next_state))
    }

    /// The last dense block, e.g. an output head.
    pub fn head(&self) -> Option<Dense> {
        self.blocks.iter().rev().find_map(|b| match b {
            Block::Dense(d) => Some(*d),
            _ => None,
        })
    }
}
