//! Local position evaluation: turns a proposed (possibly illegal) candidate
//! into a legal move by scoring the legal cells in the smallest Chebyshev ring
//! around it that has any, and taking the best.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{Board, Player, Position};
use crate::evaluation::{EvaluatorBackend, Score};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SelectError {
    #[error("board has no empty cell")]
    BoardFull,
    #[error("scoring failed for all {0} candidate positions")]
    AllScoresFailed(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LegalRegion {
    pub center: Position,
    /// Chebyshev radius of the ball the positions were taken from.
    pub order: usize,
    /// Empty cells in that ball, row-major.
    pub positions: Vec<Position>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredPosition {
    pub position: Position,
    pub score: Score,
}

/// Default worker count: available parallelism, at least 1.
pub fn default_workers() -> usize {
    thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// Smallest `order >= 1` whose Chebyshev ball around `center` holds an empty
/// cell. Out-of-bounds centers are clamped onto the board.
pub fn legal_region(board: &Board, center: Position) -> Result<LegalRegion, SelectError> {
    if board.is_full() {
        return Err(SelectError::BoardFull);
    }
    let size = board.size();
    let center = Position::new(center.row.min(size - 1), center.col.min(size - 1));
    for order in 1..size {
        let r0 = center.row.saturating_sub(order);
        let c0 = center.col.saturating_sub(order);
        let r1 = (center.row + order).min(size - 1);
        let c1 = (center.col + order).min(size - 1);
        let positions: Vec<Position> = (r0..=r1)
            .flat_map(|r| (c0..=c1).map(move |c| Position::new(r, c)))
            .filter(|&p| board.get(p) == 0)
            .collect();
        if !positions.is_empty() {
            return Ok(LegalRegion {
                center,
                order,
                positions,
            });
        }
    }
    // A ball of radius size-1 covers the whole board.
    Err(SelectError::BoardFull)
}

fn sort_scored(board: &Board, scored: &mut [ScoredPosition]) {
    scored.sort_by(|a, b| {
        b.score
            .value()
            .total_cmp(&a.score.value())
            .then_with(|| board.index(a.position).cmp(&board.index(b.position)))
    });
}

/// Score every position with a pool of `workers` threads. Positions whose
/// scoring fails are dropped. The result is sorted by score descending, then
/// row-major index ascending, so it does not depend on `workers`.
pub fn score_parallel(
    board: &Board,
    positions: &[Position],
    backend: &dyn EvaluatorBackend,
    player: Player,
    workers: usize,
) -> Result<Vec<ScoredPosition>, SelectError> {
    let workers = workers.clamp(1, positions.len().max(1));
    let mut scored: Vec<ScoredPosition> = if workers == 1 {
        positions
            .iter()
            .filter_map(|&p| {
                backend
                    .score_position(board, p, player)
                    .ok()
                    .map(|score| ScoredPosition { position: p, score })
            })
            .collect()
    } else {
        let next = AtomicUsize::new(0);
        let results = Mutex::new(Vec::with_capacity(positions.len()));
        thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(&p) = positions.get(i) else { break };
                    if let Ok(score) = backend.score_position(board, p, player) {
                        results
                            .lock()
                            .expect("results lock poisoned")
                            .push(ScoredPosition { position: p, score });
                    }
                });
            }
        });
        results.into_inner().expect("results lock poisoned")
    };
    if scored.is_empty() {
        return Err(SelectError::AllScoresFailed(positions.len()));
    }
    sort_scored(board, &mut scored);
    Ok(scored)
}

/// Final move for `player`: the best-scoring cell of the legal region around
/// `candidate`. Always legal. Also returns the full scored list.
pub fn choose_move(
    board: &Board,
    candidate: Position,
    backend: &dyn EvaluatorBackend,
    player: Player,
    workers: usize,
) -> Result<(Position, Vec<ScoredPosition>), SelectError> {
    let region = legal_region(board, candidate)?;
    let scored = score_parallel(board, &region.positions, backend, player, workers)?;
    Ok((scored[0].position, scored))
}
