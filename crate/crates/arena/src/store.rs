//! Read-only views of the transition log: game summaries and replays.

use std::path::Path;

use gomoku_core::catalog::Catalog;
use gomoku_core::engine::{Board, Player, Position};
use gomoku_core::persistence::{game_is_complete, load_transitions, load_checkpoint};
use gomoku_core::qlearn::Transition;
use gomoku_core::selfplay::{LOSS_REWARD, WIN_REWARD};
use serde::Serialize;

use crate::error::ArenaError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GameSummary {
    pub game_id: u64,
    pub moves: usize,
    pub complete: bool,
    pub winner: Option<Player>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplayStep {
    pub turn: u32,
    pub player: Player,
    pub position: Position,
    pub action: usize,
    pub strategy: String,
    pub logic: String,
    pub reward: f64,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Replay {
    pub game_id: u64,
    pub size: usize,
    pub steps: Vec<ReplayStep>,
    pub winner: Option<Player>,
    pub complete: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stats {
    pub records: usize,
    pub games: usize,
    pub complete_games: usize,
    pub train_steps: Option<u64>,
    pub selections: Option<u64>,
    pub last_checkpointed_game: Option<u64>,
    pub loss_samples: Vec<f32>,
}

fn load(path: &Path) -> Result<Vec<Transition>, ArenaError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    load_transitions(path)
        .map(|(t, _)| t)
        .map_err(|e| ArenaError::Store(e.to_string()))
}

fn group(transitions: &[Transition]) -> Vec<(u64, Vec<&Transition>)> {
    let mut games: Vec<(u64, Vec<&Transition>)> = Vec::new();
    for t in transitions {
        match games.last_mut() {
            Some((id, recs)) if *id == t.game_id => recs.push(t),
            _ => games.push((t.game_id, vec![t])),
        }
    }
    games
}

fn winner(records: &[&Transition]) -> Option<Player> {
    let last = records.last()?;
    let mover = Player::for_ply(last.turn as usize);
    if !last.done {
        None
    } else if last.reward == WIN_REWARD {
        Some(mover)
    } else if last.reward == LOSS_REWARD {
        Some(mover.opponent())
    } else {
        None
    }
}

pub fn list_games(path: &Path) -> Result<Vec<GameSummary>, ArenaError> {
    let all = load(path)?;
    Ok(group(&all)
        .into_iter()
        .map(|(game_id, recs)| GameSummary {
            game_id,
            moves: recs.len(),
            complete: game_is_complete(&recs),
            winner: winner(&recs),
        })
        .collect())
}

/// Rebuild a game's moves from consecutive pre-move states and check them
/// against the engine.
pub fn replay(path: &Path, catalog: &Catalog, game_id: u64) -> Result<Replay, ArenaError> {
    let all = load(path)?;
    let recs: Vec<&Transition> = all.iter().filter(|t| t.game_id == game_id).collect();
    if recs.is_empty() {
        return Err(ArenaError::UnknownGame(game_id));
    }
    let cells = recs[0].state.len();
    let size = (cells as f64).sqrt().round() as usize;
    if size * size != cells {
        return Err(ArenaError::Store(format!("state of {cells} cells is not square")));
    }
    let corrupt = |turn: usize, why: &str| ArenaError::Store(format!("game {game_id} turn {turn}: {why}"));
    let mut board = Board::new(size).map_err(|e| ArenaError::Store(e.to_string()))?;
    let mut steps = Vec::with_capacity(recs.len());
    for (i, t) in recs.iter().enumerate() {
        let mover = Player::for_ply(i);
        // The next record's state is the opponent's view; this record's own
        // next_state is only the post-move board for the final move.
        let after: Vec<i8> = match recs.get(i + 1) {
            Some(n) => n.state.0.iter().map(|v| v * mover.opponent().value()).collect(),
            None => t.next_state.0.iter().map(|v| v * mover.value()).collect(),
        };
        let placed: Vec<usize> = (0..cells)
            .filter(|&k| board.cells()[k] == 0 && after[k] != 0)
            .collect();
        if placed.len() != 1 || after[placed[0]] != mover.value() {
            return Err(corrupt(i, "states do not differ by one stone of the mover"));
        }
        let position = board.position(placed[0]);
        board = board
            .apply_move(position, mover)
            .map_err(|e| corrupt(i, &e.to_string()))?;
        let (strategy, logic) = catalog
            .decode_action(t.action)
            .map_err(|e| corrupt(i, &e.to_string()))?;
        steps.push(ReplayStep {
            turn: t.turn,
            player: mover,
            position,
            action: t.action.0,
            strategy: strategy.name.clone(),
            logic: logic.name.clone(),
            reward: t.reward,
            done: t.done,
        });
    }
    Ok(Replay {
        game_id,
        size,
        winner: winner(&recs),
        complete: game_is_complete(&recs),
        steps,
    })
}

pub fn stats(store: &Path, checkpoint: &Path) -> Result<Stats, ArenaError> {
    let all = load(store)?;
    let games = group(&all);
    let cp = if checkpoint.exists() {
        Some(load_checkpoint(checkpoint).map_err(|e| ArenaError::Checkpoint(e.to_string()))?)
    } else {
        None
    };
    Ok(Stats {
        records: all.len(),
        games: games.len(),
        complete_games: games.iter().filter(|(_, r)| game_is_complete(r)).count(),
        train_steps: cp.as_ref().map(|c| c.train_steps),
        selections: cp.as_ref().map(|c| c.selections),
        last_checkpointed_game: cp.as_ref().and_then(|c| c.last_game),
        loss_samples: cp.map(|c| c.loss_samples).unwrap_or_default(),
    })
}
