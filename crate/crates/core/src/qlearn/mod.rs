//! Deep Q-learning over the (strategy, logic) action space.
//!
//! The state is the board from the mover's perspective; the network is three
//! affine layers with rectifiers between them; TD targets come from a
//! periodically synchronized target network.

mod network;
mod replay;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use network::{Layer, Mlp, Scalar, NETWORK_MAGIC};
pub use replay::ReplayBuffer;

use crate::catalog::ActionIndex;
use crate::engine::{Board, Player};

pub type QNetwork = Mlp<f32>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("networks have different shapes")]
    ShapeMismatch,
    #[error("training batch is empty")]
    EmptyBatch,
    #[error("replay buffer holds {have} transitions, {need} requested")]
    BufferTooSmall { have: usize, need: usize },
    #[error("invalid network data: {0}")]
    Format(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
}

/// Board cells times the mover's color: the mover's stones are +1.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StateVector(pub Vec<i8>);

impl StateVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn to_input<T: Scalar>(&self) -> Vec<T> {
        self.0.iter().map(|&v| T::from_f64(v as f64)).collect()
    }
}

pub fn encode_state(board: &Board, mover: Player) -> StateVector {
    let m = mover.value();
    StateVector(board.cells().iter().map(|&v| v * m).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub game_id: u64,
    pub turn: u32,
    pub state: StateVector,
    pub action: ActionIndex,
    pub reward: f64,
    pub next_state: StateVector,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub gamma: f64,
    pub lr: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Number of action selections over which epsilon decays linearly.
    pub epsilon_decay_steps: u64,
    pub batch_size: usize,
    /// Train steps between target-network synchronizations.
    pub target_sync_interval: u64,
    pub hidden1: usize,
    pub hidden2: usize,
    pub replay_capacity: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma: 0.95,
            lr: 1e-3,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_steps: 10_000,
            batch_size: 64,
            target_sync_interval: 500,
            hidden1: 512,
            hidden2: 256,
            replay_capacity: 50_000,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), QError> {
        let bad = |m: &str| Err(QError::InvalidConfig(m.to_string()));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must be in [0, 1]");
        }
        if self.lr.is_nan() || self.lr <= 0.0 {
            return bad("lr must be positive");
        }
        if !(0.0 <= self.epsilon_end && self.epsilon_end <= self.epsilon_start && self.epsilon_start <= 1.0) {
            return bad("need 0 <= epsilon_end <= epsilon_start <= 1");
        }
        if self.batch_size == 0 || self.target_sync_interval == 0 || self.replay_capacity == 0 {
            return bad("batch size, sync interval and replay capacity must be positive");
        }
        if self.hidden1 == 0 || self.hidden2 == 0 {
            return bad("hidden widths must be positive");
        }
        Ok(())
    }

    /// Epsilon after `selections` action selections.
    pub fn epsilon_at(&self, selections: u64) -> f64 {
        if self.epsilon_decay_steps == 0 {
            return self.epsilon_end;
        }
        if selections >= self.epsilon_decay_steps {
            return self.epsilon_end;
        }
        let frac = selections as f64 / self.epsilon_decay_steps as f64;
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }

    /// Layer widths for a board of `cells` cells and `actions` actions.
    pub fn dims(&self, cells: usize, actions: usize) -> [usize; 4] {
        [cells, self.hidden1, self.hidden2, actions]
    }
}

pub fn q_forward<T: Scalar>(net: &Mlp<T>, state: &StateVector) -> Result<Vec<T>, QError> {
    net.forward(&state.to_input())
}

/// Index of the largest value; the smallest index wins ties.
pub fn argmax<T: Scalar>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Epsilon-greedy selection. Always draws the exploration coin, so the rng
/// advances identically whatever epsilon is.
pub fn select_action<T: Scalar, R: Rng + ?Sized>(
    net: &Mlp<T>,
    state: &StateVector,
    epsilon: f64,
    rng: &mut R,
) -> Result<ActionIndex, QError> {
    let coin: f64 = rng.random();
    if coin < epsilon {
        return Ok(ActionIndex(rng.random_range(0..net.output_len())));
    }
    Ok(ActionIndex(argmax(&q_forward(net, state)?)))
}

/// TD target `r` (terminal) or `r + gamma * max_a' Q_target(s', a')`.
pub fn td_target<T: Scalar>(target: &Mlp<T>, t: &Transition, gamma: f64) -> Result<T, QError> {
    if t.done {
        return Ok(T::from_f64(t.reward));
    }
    let next = q_forward(target, &t.next_state)?;
    let best = next.iter().copied().fold(T::neg_infinity(), T::max);
    Ok(T::from_f64(t.reward) + T::from_f64(gamma) * best)
}

/// One gradient-descent step on the mean squared TD error of `batch`.
/// Returns the loss before the update. `target` is not modified.
pub fn train_step<T: Scalar>(
    net: &mut Mlp<T>,
    target: &Mlp<T>,
    batch: &[&Transition],
    cfg: &TrainConfig,
) -> Result<f64, QError> {
    if batch.is_empty() {
        return Err(QError::EmptyBatch);
    }
    if !net.same_shape(target) {
        return Err(QError::ShapeMismatch);
    }
    let samples = batch
        .iter()
        .map(|t| Ok((t.state.to_input(), t.action.0, td_target(target, t, cfg.gamma)?)))
        .collect::<Result<Vec<_>, QError>>()?;
    let (loss, grads) = net.loss_and_gradient(&samples)?;
    net.apply_gradient(&grads, T::from_f64(cfg.lr))?;
    Ok(loss.to_f64())
}

pub fn sync_target<T: Scalar>(net: &Mlp<T>, target: &mut Mlp<T>) -> Result<(), QError> {
    target.copy_from(net)
}
