use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use gomoku_core::catalog::Catalog;
use gomoku_core::engine::{Board, GameStatus, Player, Position};
use gomoku_core::evaluation::EvaluatorBackend;
use gomoku_core::move_select::ScoredPosition;
use gomoku_core::prompting::PromptTemplate;
use gomoku_core::qlearn::QNetwork;
use gomoku_core::selfplay::{Pipeline, TurnDecision};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::ArenaError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AiMoveExplanation {
    pub strategy: String,
    pub logic: String,
    pub action: usize,
    pub proposed: Position,
    pub candidates: Vec<ScoredPosition>,
    pub chosen: Position,
    pub elapsed_ms: u64,
}

/// Recorded AI move, replayed verbatim for repeated requests on its turn.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AiMove {
    pub turn: usize,
    pub position: Position,
    pub explanation: AiMoveExplanation,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionView {
    pub id: String,
    pub size: usize,
    pub human: Player,
    pub ai: Player,
    pub backend: String,
    pub status: GameStatus,
    pub side_to_move: Option<Player>,
    /// Row-major cells: 1 black, -1 white, 0 empty.
    pub cells: Vec<i8>,
    pub moves: Vec<(Position, Player)>,
    pub created_at_ms: u64,
}

/// Everything needed to run the move pipeline for one session.
#[derive(Clone)]
pub struct Brain {
    pub catalog: Arc<Catalog>,
    pub template: Arc<PromptTemplate>,
    pub rules: Arc<str>,
    pub backend: Arc<dyn EvaluatorBackend>,
    pub net: Arc<QNetwork>,
    pub workers: usize,
}

impl Brain {
    /// Greedy strategy selection followed by propose and local search.
    pub fn decide(&self, board: &Board, player: Player) -> Result<TurnDecision, ArenaError> {
        let pipeline = Pipeline {
            catalog: &self.catalog,
            template: &self.template,
            rules: &self.rules,
            backend: self.backend.as_ref(),
            workers: self.workers,
        };
        // Epsilon 0: the rng only feeds the (ignored) exploration coin.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        pipeline
            .decide(board, player, &self.net, 0.0, &mut rng)
            .map_err(|e| ArenaError::Backend(e.to_string()))
    }
}

pub struct Session {
    pub id: String,
    pub human: Player,
    pub backend_tag: String,
    pub board: Board,
    pub created_at_ms: u64,
    pub brain: Brain,
    pub last_ai: Option<AiMove>,
}

pub enum AiTurn {
    /// Already answered for this turn.
    Recorded(AiMove),
    /// The AI must compute a move for this board.
    Compute(Board),
}

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

impl Session {
    pub fn new(id: String, board: Board, human: Player, backend_tag: String, brain: Brain) -> Session {
        Session {
            id,
            human,
            backend_tag,
            board,
            created_at_ms: now_ms(),
            brain,
            last_ai: None,
        }
    }

    pub fn ai(&self) -> Player {
        self.human.opponent()
    }

    pub fn view(&self) -> SessionView {
        SessionView {
            id: self.id.clone(),
            size: self.board.size(),
            human: self.human,
            ai: self.ai(),
            backend: self.backend_tag.clone(),
            status: self.board.status().clone(),
            side_to_move: (!self.board.status().is_over()).then(|| self.board.side_to_move()),
            cells: self.board.cells().to_vec(),
            moves: self.board.history().to_vec(),
            created_at_ms: self.created_at_ms,
        }
    }

    pub fn submit_human_move(&mut self, pos: Position) -> Result<(), ArenaError> {
        if self.board.status().is_over() {
            return Err(ArenaError::SessionFinished);
        }
        if self.board.side_to_move() != self.human {
            return Err(ArenaError::NotYourTurn("the human"));
        }
        self.board = self.board.apply_move(pos, self.human)?;
        Ok(())
    }

    /// What an AI-move request should do now. A repeat request right after
    /// the AI moved gets the recorded answer.
    pub fn ai_turn(&self) -> Result<AiTurn, ArenaError> {
        if let Some(last) = &self.last_ai {
            if last.turn + 1 == self.board.move_count() {
                return Ok(AiTurn::Recorded(last.clone()));
            }
        }
        if self.board.status().is_over() {
            return Err(ArenaError::SessionFinished);
        }
        if self.board.side_to_move() != self.ai() {
            return Err(ArenaError::NotYourTurn("the AI"));
        }
        Ok(AiTurn::Compute(self.board.clone()))
    }

    /// Apply a decision computed for `for_board`.
    pub fn apply_ai(&mut self, for_board: &Board, decision: TurnDecision, elapsed_ms: u64) -> Result<AiMove, ArenaError> {
        if self.board.history() != for_board.history() {
            return Err(ArenaError::BadRequest("board changed during AI computation".into()));
        }
        let turn = self.board.move_count();
        self.board = self.board.apply_move(decision.position, self.ai())?;
        let record = AiMove {
            turn,
            position: decision.position,
            explanation: AiMoveExplanation {
                strategy: decision.strategy,
                logic: decision.logic,
                action: decision.action.0,
                proposed: decision.candidate,
                candidates: decision.scored,
                chosen: decision.position,
                elapsed_ms,
            },
        };
        self.last_ai = Some(record.clone());
        Ok(record)
    }
}
