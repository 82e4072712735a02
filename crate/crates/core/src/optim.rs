//! Adam, step-decay learning-rate schedules and seeded mini-batching.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPSILON: f64 = 1e-8;

/// Moment estimates and step counter for one parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Updates applied so far.
    pub t: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> AdamState {
        AdamState::with_hyper(params, DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_EPSILON)
    }

    pub fn with_hyper(params: &[Tensor], beta1: f64, beta2: f64, epsilon: f64) -> AdamState {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        AdamState {
            beta1,
            beta2,
            epsilon,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One bias-corrected Adam update with learning rate `lr`. All
    /// gradients are validated before anything is modified, so a rejected
    /// step leaves parameters and state untouched.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::Contract(format!(
                "adam: {} params, {} grads, {} moment slots",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.m[i].shape() {
                return Err(Error::Shape(format!(
                    "adam: parameter {i} is {}, gradient {}",
                    p.shape(),
                    g.shape()
                )));
            }
            if !g.is_finite() {
                return Err(Error::Numeric(format!("adam: non-finite gradient for parameter {i}")));
            }
        }

        self.t += 1;
        let t = self.t as i32;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let it = p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
            for ((theta, &g), (m, v)) in it {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *theta -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Step decay: `initial · gamma^(milestones ≤ epoch)`, with `epoch` the
/// number of completed epochs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial: f64,
    pub gamma: f64,
    pub milestones: Vec<usize>,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            initial: 1e-3,
            gamma: 0.5,
            milestones: vec![100, 300, 600],
        }
    }
}

impl LrSchedule {
    pub const MIN_RATE: f64 = 1e-5;
    pub const MAX_RATE: f64 = 5e-3;

    pub fn new(initial: f64, gamma: f64, mut milestones: Vec<usize>) -> Result<LrSchedule> {
        if !(Self::MIN_RATE..=Self::MAX_RATE).contains(&initial) {
            return Err(Error::Contract(format!(
                "initial learning rate {initial} outside [{}, {}]",
                Self::MIN_RATE,
                Self::MAX_RATE
            )));
        }
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::Contract(format!("decay factor {gamma} outside (0, 1]")));
        }
        milestones.sort_unstable();
        Ok(LrSchedule {
            initial,
            gamma,
            milestones,
        })
    }

    pub fn rate(&self, epoch: usize) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| m <= epoch).count();
        self.initial * self.gamma.powi(passed as i32)
    }
}

/// Seeded per-epoch shuffles of `0..len` cut into batches.
#[derive(Clone, Debug)]
pub struct Minibatches {
    len: usize,
    batch_size: usize,
    seed: u64,
}

impl Minibatches {
    pub fn new(len: usize, batch_size: usize, seed: u64) -> Result<Minibatches> {
        if len == 0 {
            return Err(Error::Contract("cannot batch an empty dataset".into()));
        }
        if batch_size == 0 {
            return Err(Error::Contract("batch size must be at least 1".into()));
        }
        Ok(Minibatches { len, batch_size, seed })
    }

    /// Batches for epoch `epoch`; the final batch may be short.
    pub fn epoch(&self, epoch: u64) -> Vec<Vec<usize>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(epoch);
        let mut order: Vec<usize> = (0..self.len).collect();
        order.shuffle(&mut rng);
        order.chunks(self.batch_size).map(<[usize]>::to_vec).collect()
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.len.div_ceil(self.batch_size)
    }
}
