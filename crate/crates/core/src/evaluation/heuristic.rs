//! Deterministic pattern-weight evaluator.
//!
//! A placement at `pos` is valued per direction by the contiguous run it
//! would belong to and how many of that run's two end cells are empty.
//! Gapped shapes such as `X_XX` are not recognized.

use serde::{Deserialize, Serialize};

use super::{EvalError, EvaluatorBackend, MoveRequest, Score, WinRates};
use crate::catalog::{Category, Logic, Strategy};
use crate::engine::{Board, Player, Position, DIRECTIONS, WIN_LENGTH};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatternWeights {
    pub five: f64,
    pub open_four: f64,
    pub closed_four: f64,
    pub open_three: f64,
    pub closed_three: f64,
    pub open_two: f64,
    pub closed_two: f64,
}

impl Default for PatternWeights {
    fn default() -> Self {
        PatternWeights {
            five: 100_000.0,
            open_four: 10_000.0,
            closed_four: 2_500.0,
            open_three: 2_000.0,
            closed_three: 400.0,
            open_two: 100.0,
            closed_two: 20.0,
        }
    }
}

impl PatternWeights {
    pub fn weight(&self, pattern: LinePattern) -> f64 {
        let LinePattern { length, open_ends } = pattern;
        if length >= WIN_LENGTH {
            return self.five;
        }
        match (length, open_ends) {
            (4, 2) => self.open_four,
            (4, 1) => self.closed_four,
            (3, 2) => self.open_three,
            (3, 1) => self.closed_three,
            (2, 2) => self.open_two,
            (2, 1) => self.closed_two,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeuristicConfig {
    pub weights: PatternWeights,
    /// Multiplier on the opponent-pattern term.
    pub defense_weight: f64,
    /// Raw value that maps to a score of 100.
    pub score_scale: f64,
    /// Logistic scale for win-rate estimation.
    pub win_rate_scale: f64,
}

impl Default for HeuristicConfig {
    fn default() -> Self {
        HeuristicConfig {
            weights: PatternWeights::default(),
            defense_weight: 0.8,
            score_scale: 100_000.0,
            win_rate_scale: 10_000.0,
        }
    }
}

/// Shape of the run a stone at some cell would join along one direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinePattern {
    pub length: usize,
    pub open_ends: usize,
}

/// The run `player` would have through `pos` along `(dr, dc)` if a stone were
/// placed there. The current content of `pos` is ignored.
pub fn line_pattern(board: &Board, pos: Position, player: Player, dr: isize, dc: isize) -> LinePattern {
    let color = player.value();
    let size = board.size();
    let mut length = 1;
    let mut open_ends = 0;
    for sign in [-1isize, 1] {
        let mut step = 1;
        loop {
            match pos.offset(dr, dc, sign * step, size) {
                Some(p) if board.get(p) == color => {
                    length += 1;
                    step += 1;
                }
                Some(p) if board.get(p) == 0 => {
                    open_ends += 1;
                    break;
                }
                _ => break,
            }
        }
    }
    LinePattern { length, open_ends }
}

/// Sum of pattern weights `player` would create by placing at `pos`.
pub fn pattern_raw(board: &Board, pos: Position, player: Player, weights: &PatternWeights) -> f64 {
    DIRECTIONS
        .iter()
        .map(|&(dr, dc)| weights.weight(line_pattern(board, pos, player, dr, dc)))
        .sum()
}

/// `size - chebyshev distance to the board center`.
pub fn centrality(board: &Board, pos: Position) -> f64 {
    let center = (board.size() as f64 - 1.0) / 2.0;
    let d = (pos.row as f64 - center).abs().max((pos.col as f64 - center).abs());
    board.size() as f64 - d
}

fn raw_value(board: &Board, pos: Position, player: Player, cfg: &HeuristicConfig) -> f64 {
    pattern_raw(board, pos, player, &cfg.weights)
        + cfg.defense_weight * pattern_raw(board, pos, player.opponent(), &cfg.weights)
        + centrality(board, pos)
}

pub fn heuristic_score_position(
    board: &Board,
    pos: Position,
    player: Player,
    cfg: &HeuristicConfig,
) -> Result<Score, EvalError> {
    if !board.is_empty_at(pos) {
        return Err(EvalError::IllegalPosition(pos));
    }
    let raw = raw_value(board, pos, player, cfg);
    Score::new((100.0 * raw / cfg.score_scale).min(100.0))
}

/// Argmax of [`heuristic_score_position`]; ties go to the smallest row-major
/// index.
pub fn heuristic_propose_move(
    board: &Board,
    player: Player,
    cfg: &HeuristicConfig,
) -> Result<Position, EvalError> {
    let mut best: Option<(Position, f64)> = None;
    for pos in board.legal_positions() {
        let s = heuristic_score_position(board, pos, player, cfg)?.value();
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((pos, s));
        }
    }
    best.map(|(p, _)| p).ok_or(EvalError::BoardFull)
}

/// How the heuristic backend turns a (strategy, logic) pair into a candidate.
///
/// The category sets the attack/defense/centrality mix; the logic picks
/// which rank of the resulting ordering is proposed (best, second, third).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProposalStyle {
    pub attack: f64,
    pub defense: f64,
    pub center: f64,
    pub rank: usize,
}

impl ProposalStyle {
    pub fn for_pair(strategy: &Strategy, logic: &Logic) -> ProposalStyle {
        let (attack, defense, center) = match strategy.category {
            Category::BasicTactics => (1.0, 0.8, 1.0),
            Category::Offensive => (1.0, 0.3, 1.0),
            Category::Defensive => (0.4, 1.2, 1.0),
            Category::Opening => (0.2, 0.2, 50.0),
        };
        ProposalStyle {
            attack,
            defense,
            center,
            rank: logic.id % 3,
        }
    }

    fn propose(&self, board: &Board, player: Player, weights: &PatternWeights) -> Result<Position, EvalError> {
        let mut ranked: Vec<(Position, f64)> = board
            .legal_positions()
            .into_iter()
            .map(|pos| {
                let v = self.attack * pattern_raw(board, pos, player, weights)
                    + self.defense * pattern_raw(board, pos, player.opponent(), weights)
                    + self.center * centrality(board, pos);
                (pos, v)
            })
            .collect();
        if ranked.is_empty() {
            return Err(EvalError::BoardFull);
        }
        // Stable sort keeps row-major order among equal values.
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
        Ok(ranked[self.rank.min(ranked.len() - 1)].0)
    }
}

#[derive(Debug, Clone, Default)]
pub struct HeuristicBackend {
    pub config: HeuristicConfig,
}

impl HeuristicBackend {
    pub fn new(config: HeuristicConfig) -> Self {
        HeuristicBackend { config }
    }

    /// Best attack value available to `side` anywhere on the board.
    fn best_attack(&self, board: &Board, side: Player) -> f64 {
        board
            .legal_positions()
            .into_iter()
            .map(|pos| pattern_raw(board, pos, side, &self.config.weights))
            .fold(0.0, f64::max)
    }
}

impl EvaluatorBackend for HeuristicBackend {
    fn tag(&self) -> &str {
        "heuristic"
    }

    fn propose_move(&self, request: &MoveRequest<'_>) -> Result<Position, EvalError> {
        match request.guidance {
            Some(g) => ProposalStyle::for_pair(g.strategy, g.logic).propose(
                request.board,
                request.player,
                &self.config.weights,
            ),
            None => heuristic_propose_move(request.board, request.player, &self.config),
        }
    }

    fn score_position(&self, board: &Board, pos: Position, player: Player) -> Result<Score, EvalError> {
        heuristic_score_position(board, pos, player, &self.config)
    }

    fn estimate_win_rates(&self, board: &Board, mover: Player) -> Result<WinRates, EvalError> {
        let diff = self.best_attack(board, mover) - self.best_attack(board, mover.opponent());
        let p = 1.0 / (1.0 + (-diff / self.config.win_rate_scale).exp());
        Ok(WinRates::from_mover(p))
    }
}
