//! Evaluator backends: something that can propose a move, score a candidate
//! position and estimate both sides' win rates.
//!
//! Two implementations ship: [`HeuristicBackend`], a deterministic
//! pattern-weight oracle used offline and in tests, and [`LlmBackend`], which
//! asks a chat-completion endpoint.

mod heuristic;
mod llm;

use std::fmt;
use std::sync::Mutex;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use heuristic::{
    centrality, heuristic_propose_move, heuristic_score_position, line_pattern, pattern_raw,
    HeuristicBackend, HeuristicConfig, LinePattern, PatternWeights, ProposalStyle,
};
pub use llm::{LlmBackend, LlmClient, LlmConfig, LlmError, DEFAULT_TOKEN_ENV};

use crate::catalog::{Logic, Strategy};
use crate::engine::{Board, Player, Position};
use crate::prompting::PromptError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("position {0} is not a legal move")]
    IllegalPosition(Position),
    #[error("board has no empty cell")]
    BoardFull,
    #[error("the game is already over")]
    GameOver,
    #[error("llm request failed: {0}")]
    Llm(#[from] LlmError),
    #[error("could not parse evaluator reply: {0}")]
    Parse(#[from] PromptError),
    #[error("backend returned an invalid value: {0}")]
    InvalidValue(String),
}

/// A move-quality score in `[0, 100]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Score(f64);

impl Score {
    pub const MIN: f64 = 0.0;
    pub const MAX: f64 = 100.0;

    pub fn new(value: f64) -> Result<Score, EvalError> {
        if (Self::MIN..=Self::MAX).contains(&value) {
            Ok(Score(value))
        } else {
            Err(EvalError::InvalidValue(format!("score {value} outside [0, 100]")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Score {
    type Error = String;

    fn try_from(v: f64) -> Result<Self, Self::Error> {
        Score::new(v).map_err(|e| e.to_string())
    }
}

impl From<Score> for f64 {
    fn from(s: Score) -> f64 {
        s.0
    }
}

impl fmt::Display for Score {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3}", self.0)
    }
}

/// Win probabilities from the point of view of the side that just moved.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WinRates {
    p_mover: f64,
    p_opponent: f64,
}

impl WinRates {
    pub fn from_mover(p_mover: f64) -> WinRates {
        let p = if p_mover.is_nan() { 0.5 } else { p_mover.clamp(0.0, 1.0) };
        WinRates {
            p_mover: p,
            p_opponent: 1.0 - p,
        }
    }

    pub fn p_mover(&self) -> f64 {
        self.p_mover
    }

    pub fn p_opponent(&self) -> f64 {
        self.p_opponent
    }

    /// Centered win rate in `[-1, 1]`, used as the per-turn reward.
    pub fn centered(&self) -> f64 {
        2.0 * self.p_mover - 1.0
    }
}

/// The strategy and logic picked for this turn, plus the prompt rendered from
/// them.
#[derive(Debug, Clone, Copy)]
pub struct Guidance<'a> {
    pub strategy: &'a Strategy,
    pub logic: &'a Logic,
    pub prompt: &'a str,
}

#[derive(Debug, Clone, Copy)]
pub struct MoveRequest<'a> {
    pub board: &'a Board,
    pub player: Player,
    /// `None` when the backend plays on its own judgement (e.g. as an
    /// evaluation opponent).
    pub guidance: Option<Guidance<'a>>,
}

impl<'a> MoveRequest<'a> {
    pub fn unguided(board: &'a Board, player: Player) -> Self {
        MoveRequest {
            board,
            player,
            guidance: None,
        }
    }
}

pub trait EvaluatorBackend: Send + Sync {
    /// Identity tag, e.g. `"heuristic"` or `"llm"`.
    fn tag(&self) -> &str;

    /// A candidate move. It may be illegal; `move_select` repairs that.
    fn propose_move(&self, request: &MoveRequest<'_>) -> Result<Position, EvalError>;

    fn score_position(&self, board: &Board, pos: Position, player: Player) -> Result<Score, EvalError>;

    fn estimate_win_rates(&self, board: &Board, mover: Player) -> Result<WinRates, EvalError>;
}

/// Situation evaluation: checks the precondition and the output invariants
/// around the backend call.
pub fn estimate_win_rates(
    backend: &dyn EvaluatorBackend,
    board: &Board,
    mover: Player,
) -> Result<WinRates, EvalError> {
    if board.status().is_over() {
        return Err(EvalError::GameOver);
    }
    let rates = backend.estimate_win_rates(board, mover)?;
    let (a, b) = (rates.p_mover(), rates.p_opponent());
    if !(a >= 0.0 && b >= 0.0 && (a + b - 1.0).abs() <= 1e-6) {
        return Err(EvalError::InvalidValue(format!("win rates ({a}, {b})")));
    }
    Ok(rates)
}

/// Proposes a uniformly random legal move; scores are flat. Used as a weak
/// opponent and in harness tests.
#[derive(Debug)]
pub struct RandomLegalBackend {
    rng: Mutex<ChaCha8Rng>,
}

impl RandomLegalBackend {
    pub fn new(seed: u64) -> Self {
        RandomLegalBackend {
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
        }
    }
}

impl EvaluatorBackend for RandomLegalBackend {
    fn tag(&self) -> &str {
        "random"
    }

    fn propose_move(&self, request: &MoveRequest<'_>) -> Result<Position, EvalError> {
        let legal = request.board.legal_positions();
        let mut rng = self.rng.lock().expect("rng lock poisoned");
        legal.choose(&mut *rng).copied().ok_or(EvalError::BoardFull)
    }

    fn score_position(&self, board: &Board, pos: Position, _player: Player) -> Result<Score, EvalError> {
        if !board.is_empty_at(pos) {
            return Err(EvalError::IllegalPosition(pos));
        }
        Score::new(50.0)
    }

    fn estimate_win_rates(&self, _board: &Board, _mover: Player) -> Result<WinRates, EvalError> {
        Ok(WinRates::from_mover(0.5))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_bounds() {
        assert!(Score::new(0.0).is_ok());
        assert!(Score::new(100.0).is_ok());
        assert!(Score::new(-0.1).is_err());
        assert!(Score::new(100.5).is_err());
        assert!(Score::new(f64::NAN).is_err());
    }

    #[test]
    fn win_rates_sum_to_one() {
        for p in [0.0, 0.3, 1.0, 1.7, -2.0, f64::NAN] {
            let w = WinRates::from_mover(p);
            assert!(w.p_mover() >= 0.0 && w.p_opponent() >= 0.0);
            assert!((w.p_mover() + w.p_opponent() - 1.0).abs() < 1e-12);
            assert!((-1.0..=1.0).contains(&w.centered()));
        }
    }

    #[test]
    fn win_rates_reject_finished_game() {
        let moves: Vec<Position> = [(0, 0), (1, 0), (0, 1), (1, 1), (0, 2), (1, 2), (0, 3), (1, 3), (0, 4)]
            .iter()
            .map(|&(r, c)| Position::new(r, c))
            .collect();
        let board = Board::replay(15, &moves).unwrap();
        let backend = HeuristicBackend::default();
        assert!(matches!(
            estimate_win_rates(&backend, &board, Player::Black),
            Err(EvalError::GameOver)
        ));
    }

    #[test]
    fn random_backend_is_legal_and_seeded() {
        let board = Board::replay(5, &[Position::new(2, 2), Position::new(0, 0)]).unwrap();
        let a = RandomLegalBackend::new(9);
        let b = RandomLegalBackend::new(9);
        for _ in 0..20 {
            let pa = a.propose_move(&MoveRequest::unguided(&board, Player::Black)).unwrap();
            let pb = b.propose_move(&MoveRequest::unguided(&board, Player::Black)).unwrap();
            assert_eq!(pa, pb);
            assert!(board.is_empty_at(pa));
        }
    }
}
