//! Self-play: two agents sharing one Q-network alternate moves until the game
//! ends. Each move is recorded as a transition; rewards are the mover's
//! centered win rate after the move, replaced by +10 / -10 / 0 on the final
//! moves of a finished game.
//!
//! A transition's `next_state` is the board at the same player's next turn
//! (after the opponent replied), so it is appended once the opponent has
//! moved, always before the mover's next turn.

use std::fmt;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{ActionIndex, Catalog, CatalogError};
use crate::engine::{Board, EngineError, GameStatus, Player, Position, DEFAULT_SIZE};
use crate::evaluation::{estimate_win_rates, EvalError, EvaluatorBackend, Guidance, MoveRequest};
use crate::move_select::{choose_move, default_workers, ScoredPosition, SelectError};
use crate::persistence::{
    last_complete_game, load_checkpoint, load_transitions, save_checkpoint, Checkpoint, Clock,
    PersistError, RngState, TransitionLog,
};
use crate::prompting::{render_move_prompt, PromptError, PromptTemplate, DEFAULT_RULES};
use crate::qlearn::{
    encode_state, select_action, sync_target, train_step, Mlp, QError, QNetwork, ReplayBuffer,
    StateVector, TrainConfig, Transition,
};

pub const WIN_REWARD: f64 = 10.0;
pub const LOSS_REWARD: f64 = -10.0;
pub const DRAW_REWARD: f64 = 0.0;

/// Losses are kept every this many train steps for the stats report.
const LOSS_SAMPLE_EVERY: u64 = 10;
const MAX_LOSS_SAMPLES: usize = 256;

#[derive(Debug, Error)]
pub enum SelfPlayError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Select(#[from] SelectError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Q(#[from] QError),
    #[error(transparent)]
    Persist(#[from] PersistError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("inconsistent training state: {0}")]
    Inconsistent(String),
}

/// Everything one move decision needs besides the network.
#[derive(Clone, Copy)]
pub struct Pipeline<'a> {
    pub catalog: &'a Catalog,
    pub template: &'a PromptTemplate,
    pub rules: &'a str,
    pub backend: &'a dyn EvaluatorBackend,
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TurnDecision {
    pub position: Position,
    pub action: ActionIndex,
    pub strategy: String,
    pub logic: String,
    pub candidate: Position,
    pub scored: Vec<ScoredPosition>,
}

impl<'a> Pipeline<'a> {
    /// Pick an action, prompt the backend, and repair its candidate into a
    /// legal move.
    pub fn decide<R: Rng + ?Sized>(
        &self,
        board: &Board,
        player: Player,
        net: &QNetwork,
        epsilon: f64,
        rng: &mut R,
    ) -> Result<TurnDecision, SelfPlayError> {
        let state = encode_state(board, player);
        let action = select_action(net, &state, epsilon, rng)?;
        let (strategy, logic) = self.catalog.decode_action(action)?;
        let prompt = render_move_prompt(self.template, self.rules, board, player, strategy, logic);
        let request = MoveRequest {
            board,
            player,
            guidance: Some(Guidance {
                strategy,
                logic,
                prompt: &prompt,
            }),
        };
        let candidate = match self.backend.propose_move(&request) {
            Ok(p) => p,
            // An unreadable reply still gets a move: search from the center.
            Err(EvalError::Parse(_)) => Position::new(board.size() / 2, board.size() / 2),
            Err(e) => return Err(e.into()),
        };
        let (position, scored) = choose_move(board, candidate, self.backend, player, self.workers)?;
        Ok(TurnDecision {
            position,
            action,
            strategy: strategy.name.clone(),
            logic: logic.name.clone(),
            candidate,
            scored,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Won(Player),
    Draw,
    Truncated,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Won(p) => write!(f, "{p} wins"),
            Outcome::Draw => f.write_str("draw"),
            Outcome::Truncated => f.write_str("truncated"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TurnRecord {
    pub player: Player,
    pub position: Position,
    pub action: ActionIndex,
    pub reward: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GameRecord {
    pub game_id: u64,
    pub turns: Vec<TurnRecord>,
    pub outcome: Outcome,
    /// Set when the game was cut short by a backend failure.
    pub abort_reason: Option<String>,
}

impl GameRecord {
    pub fn move_count(&self) -> usize {
        self.turns.len()
    }

    pub fn moves(&self) -> Vec<Position> {
        self.turns.iter().map(|t| t.position).collect()
    }
}

/// Training state that persists across games of a run.
pub struct Learner {
    pub net: QNetwork,
    pub target: QNetwork,
    pub replay: ReplayBuffer,
    pub rng: ChaCha8Rng,
    pub train_steps: u64,
    pub selections: u64,
    pub last_game: Option<u64>,
    pub loss_samples: Vec<f32>,
}

impl Learner {
    pub fn fresh(cfg: &TrainConfig, cells: usize, actions: usize) -> Learner {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let net: QNetwork = Mlp::new(&cfg.dims(cells, actions), &mut rng);
        Learner {
            target: net.clone(),
            net,
            replay: ReplayBuffer::new(cfg.replay_capacity),
            rng,
            train_steps: 0,
            selections: 0,
            last_game: None,
            loss_samples: Vec::new(),
        }
    }

    pub fn from_checkpoint(cp: Checkpoint, cfg: &TrainConfig) -> Learner {
        let mut rng = ChaCha8Rng::from_seed(cp.rng.seed);
        rng.set_stream(cp.rng.stream);
        rng.set_word_pos(cp.rng.word_pos);
        Learner {
            net: cp.net,
            target: cp.target,
            replay: ReplayBuffer::new(cfg.replay_capacity),
            rng,
            train_steps: cp.train_steps,
            selections: cp.selections,
            last_game: cp.last_game,
            loss_samples: cp.loss_samples,
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            net: self.net.clone(),
            target: self.target.clone(),
            train_steps: self.train_steps,
            selections: self.selections,
            last_game: self.last_game,
            rng: RngState {
                seed: self.rng.get_seed(),
                stream: self.rng.get_stream(),
                word_pos: self.rng.get_word_pos(),
            },
            loss_samples: self.loss_samples.clone(),
        }
    }

    /// Push transitions into replay and run one train step per transition
    /// once the buffer holds a full batch.
    pub fn learn_from(&mut self, transitions: &[Transition], cfg: &TrainConfig) -> Result<Vec<f64>, SelfPlayError> {
        let mut losses = Vec::new();
        for t in transitions {
            self.replay.push(t.clone());
            if self.replay.len() < cfg.batch_size {
                continue;
            }
            losses.push(self.train_once(cfg)?);
        }
        Ok(losses)
    }

    pub fn train_once(&mut self, cfg: &TrainConfig) -> Result<f64, SelfPlayError> {
        let batch = self.replay.sample(cfg.batch_size, &mut self.rng)?;
        let loss = train_step(&mut self.net, &self.target, &batch, cfg)?;
        self.train_steps += 1;
        if self.train_steps.is_multiple_of(cfg.target_sync_interval) {
            sync_target(&self.net, &mut self.target)?;
        }
        if self.train_steps.is_multiple_of(LOSS_SAMPLE_EVERY) {
            self.loss_samples.push(loss as f32);
            if self.loss_samples.len() > MAX_LOSS_SAMPLES {
                self.loss_samples.remove(0);
            }
        }
        Ok(loss)
    }
}

struct Pending {
    turn: u32,
    state: StateVector,
    action: ActionIndex,
    reward: f64,
}

impl Pending {
    fn finish(self, game_id: u64, next_state: StateVector, reward: Option<f64>, done: bool) -> Transition {
        Transition {
            game_id,
            turn: self.turn,
            state: self.state,
            action: self.action,
            reward: reward.unwrap_or(self.reward),
            next_state,
            done,
        }
    }
}

fn slot(p: Player) -> usize {
    match p {
        Player::Black => 0,
        Player::White => 1,
    }
}

/// Play one self-play game. Both sides use `pipelines[side]` with the shared
/// network; every finished transition goes to `sink` (normally the log)
/// before the mover's next turn. Returns the record and the transitions.
#[allow(clippy::too_many_arguments)]
pub fn play_game<R: Rng + ?Sized>(
    game_id: u64,
    pipelines: [&Pipeline<'_>; 2],
    net: &QNetwork,
    cfg: &TrainConfig,
    board_size: usize,
    selections: &mut u64,
    rng: &mut R,
    sink: &mut dyn FnMut(&Transition) -> Result<(), PersistError>,
) -> Result<(GameRecord, Vec<Transition>), SelfPlayError> {
    let mut board = Board::new(board_size)?;
    let mut pending: [Option<Pending>; 2] = [None, None];
    let mut turns = Vec::new();
    let mut transitions = Vec::new();
    let mut abort_reason = None;
    let cap = board_size * board_size;

    let mut emit = |t: Transition, transitions: &mut Vec<Transition>| -> Result<(), SelfPlayError> {
        sink(&t)?;
        transitions.push(t);
        Ok(())
    };

    while !board.status().is_over() && board.move_count() < cap {
        let mover = board.side_to_move();
        let started = Instant::now();
        let epsilon = cfg.epsilon_at(*selections);
        *selections += 1;
        let state = encode_state(&board, mover);
        let decision = match pipelines[slot(mover)].decide(&board, mover, net, epsilon, rng) {
            Ok(d) => d,
            Err(e @ (SelfPlayError::Eval(_) | SelfPlayError::Select(_))) => {
                abort_reason = Some(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        };
        let next = board.apply_move(decision.position, mover)?;
        let reward = if next.status().is_over() {
            DRAW_REWARD
        } else {
            match estimate_win_rates(pipelines[slot(mover)].backend, &next, mover) {
                Ok(w) => w.centered(),
                Err(e) => {
                    abort_reason = Some(e.to_string());
                    0.0
                }
            }
        };
        turns.push(TurnRecord {
            player: mover,
            position: decision.position,
            action: decision.action,
            reward,
            seconds: started.elapsed().as_secs_f64(),
        });
        board = next;
        // The opponent's previous move is now followed by this reply.
        let opp = mover.opponent();
        if !board.status().is_over() && abort_reason.is_none() {
            if let Some(p) = pending[slot(opp)].take() {
                emit(p.finish(game_id, encode_state(&board, opp), None, false), &mut transitions)?;
            }
        }
        pending[slot(mover)] = Some(Pending {
            turn: (turns.len() - 1) as u32,
            state,
            action: decision.action,
            reward,
        });
        if abort_reason.is_some() {
            break;
        }
    }

    let outcome = match (board.status(), &abort_reason) {
        (_, Some(_)) => Outcome::Truncated,
        (GameStatus::Won { winner, .. }, None) => Outcome::Won(*winner),
        (GameStatus::Draw, None) => Outcome::Draw,
        (GameStatus::InProgress, None) => Outcome::Truncated,
    };
    // Terminal rewards for both sides' final moves, in turn order.
    let mut finals: Vec<(Player, Pending)> = [Player::Black, Player::White]
        .into_iter()
        .filter_map(|p| pending[slot(p)].take().map(|pd| (p, pd)))
        .collect();
    finals.sort_by_key(|(_, pd)| pd.turn);
    for (player, pd) in finals {
        let reward = match outcome {
            Outcome::Won(w) if w == player => WIN_REWARD,
            Outcome::Won(_) => LOSS_REWARD,
            Outcome::Draw | Outcome::Truncated => DRAW_REWARD,
        };
        let turn = pd.turn as usize;
        turns[turn].reward = reward;
        emit(pd.finish(game_id, encode_state(&board, player), Some(reward), true), &mut transitions)?;
    }
    Ok((
        GameRecord {
            game_id,
            turns,
            outcome,
            abort_reason,
        },
        transitions,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelfPlayConfig {
    pub board_size: usize,
    pub workers: usize,
    pub train: TrainConfig,
    pub clock: Clock,
}

impl Default for SelfPlayConfig {
    fn default() -> Self {
        SelfPlayConfig {
            board_size: DEFAULT_SIZE,
            workers: default_workers(),
            train: TrainConfig::default(),
            clock: Clock::Wall,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SelfPlaySummary {
    pub games_played: usize,
    pub total_games: u64,
    pub black_wins: usize,
    pub white_wins: usize,
    pub draws: usize,
    pub truncated: usize,
    pub mean_moves: f64,
    pub mean_seconds_per_move: f64,
    pub train_steps: u64,
    pub transitions_written: usize,
    pub loss_samples: Vec<f32>,
}

impl SelfPlaySummary {
    /// Line-oriented `key: value` report.
    pub fn report(&self) -> String {
        let losses: Vec<String> = self.loss_samples.iter().map(|l| format!("{l:.5}")).collect();
        format!(
            "games: {}\ntotal_games: {}\nblack_wins: {}\nwhite_wins: {}\ndraws: {}\ntruncated: {}\n\
             mean_moves: {:.2}\nmean_seconds_per_move: {:.4}\ntrain_steps: {}\ntransitions: {}\n\
             loss_samples: {}\n",
            self.games_played,
            self.total_games,
            self.black_wins,
            self.white_wins,
            self.draws,
            self.truncated,
            self.mean_moves,
            self.mean_seconds_per_move,
            self.train_steps,
            self.transitions_written,
            losses.join(" ")
        )
    }
}

/// Restore the learner from `checkpoint_path` (or start fresh), cut the log
/// back to the checkpoint's last game, and refill replay from it.
pub fn resume_learner(
    cfg: &SelfPlayConfig,
    catalog: &Catalog,
    log: &mut TransitionLog,
    checkpoint_path: &Path,
) -> Result<Learner, SelfPlayError> {
    let cells = cfg.board_size * cfg.board_size;
    let mut learner = if checkpoint_path.exists() {
        Learner::from_checkpoint(load_checkpoint(checkpoint_path)?, &cfg.train)
    } else {
        Learner::fresh(&cfg.train, cells, catalog.action_space_size())
    };
    let dims = learner.net.dims();
    if dims[0] != cells || *dims.last().unwrap() != catalog.action_space_size() {
        return Err(SelfPlayError::Inconsistent(format!(
            "checkpoint network {dims:?} does not fit {cells} cells and {} actions",
            catalog.action_space_size()
        )));
    }
    // Records past the checkpoint belong to a game that must be replayed.
    log.truncate_after(learner.last_game)?;
    let (kept, _) = load_transitions(log.path())?;
    if last_complete_game(&kept) != learner.last_game {
        return Err(SelfPlayError::Inconsistent(format!(
            "store ends at game {:?} but checkpoint at {:?}",
            last_complete_game(&kept),
            learner.last_game
        )));
    }
    for t in kept {
        learner.replay.push(t);
    }
    Ok(learner)
}

/// Play games until `n_games` have been completed in total, training after
/// each and checkpointing after each. Resumes where a previous run stopped.
pub fn run_selfplay(
    n_games: u64,
    cfg: &SelfPlayConfig,
    catalog: &Catalog,
    backend: &dyn EvaluatorBackend,
    log_path: &Path,
    checkpoint_path: &Path,
) -> Result<SelfPlaySummary, SelfPlayError> {
    cfg.train.validate()?;
    let mut log = TransitionLog::open(log_path, cfg.clock)?;
    let mut learner = resume_learner(cfg, catalog, &mut log, checkpoint_path)?;
    let template = PromptTemplate::default();
    let pipeline = Pipeline {
        catalog,
        template: &template,
        rules: DEFAULT_RULES,
        backend,
        workers: cfg.workers,
    };
    let mut summary = SelfPlaySummary::default();
    let mut total_moves = 0usize;
    let mut total_seconds = 0.0;
    let first = learner.last_game.map_or(0, |g| g + 1);
    for game_id in first..n_games {
        let (record, transitions) = {
            let Learner {
                net, rng, selections, ..
            } = &mut learner;
            play_game(
                game_id,
                [&pipeline, &pipeline],
                net,
                &cfg.train,
                cfg.board_size,
                selections,
                rng,
                &mut |t| log.append(t),
            )?
        };
        learner.learn_from(&transitions, &cfg.train)?;
        learner.last_game = Some(game_id);
        save_checkpoint(&learner.checkpoint(), checkpoint_path)?;

        summary.games_played += 1;
        summary.transitions_written += transitions.len();
        match record.outcome {
            Outcome::Won(Player::Black) => summary.black_wins += 1,
            Outcome::Won(Player::White) => summary.white_wins += 1,
            Outcome::Draw => summary.draws += 1,
            Outcome::Truncated => summary.truncated += 1,
        }
        total_moves += record.move_count();
        total_seconds += record.turns.iter().map(|t| t.seconds).sum::<f64>();
    }
    summary.total_games = learner.last_game.map_or(0, |g| g + 1);
    summary.train_steps = learner.train_steps;
    summary.loss_samples = learner.loss_samples.clone();
    if summary.games_played > 0 {
        summary.mean_moves = total_moves as f64 / summary.games_played as f64;
    }
    if total_moves > 0 {
        summary.mean_seconds_per_move = total_seconds / total_moves as f64;
    }
    Ok(summary)
}

/// Offline retraining from a stored log: fill replay with every stored
/// transition and run `steps` train steps.
pub fn train_offline(
    steps: u64,
    cfg: &SelfPlayConfig,
    catalog: &Catalog,
    log_path: &Path,
    checkpoint_path: &Path,
) -> Result<(u64, Option<f64>), SelfPlayError> {
    cfg.train.validate()?;
    let cells = cfg.board_size * cfg.board_size;
    let mut learner = if checkpoint_path.exists() {
        Learner::from_checkpoint(load_checkpoint(checkpoint_path)?, &cfg.train)
    } else {
        Learner::fresh(&cfg.train, cells, catalog.action_space_size())
    };
    let (stored, _) = load_transitions(log_path)?;
    for t in stored {
        learner.replay.push(t);
    }
    let mut last = None;
    for _ in 0..steps {
        last = Some(learner.train_once(&cfg.train)?);
    }
    save_checkpoint(&learner.checkpoint(), checkpoint_path)?;
    Ok((learner.train_steps, last))
}

/// Something that picks a move for one side.
pub trait Policy {
    fn choose(&mut self, board: &Board, player: Player) -> Result<Position, SelfPlayError>;
}

/// Greedy (epsilon 0) strategy selection through the full move pipeline.
pub struct DqnPolicy<'a> {
    pub pipeline: Pipeline<'a>,
    pub net: &'a QNetwork,
    pub rng: ChaCha8Rng,
}

impl Policy for DqnPolicy<'_> {
    fn choose(&mut self, board: &Board, player: Player) -> Result<Position, SelfPlayError> {
        Ok(self.pipeline.decide(board, player, self.net, 0.0, &mut self.rng)?.position)
    }
}

/// Uniformly random legal moves.
pub struct RandomPolicy(pub ChaCha8Rng);

impl Policy for RandomPolicy {
    fn choose(&mut self, board: &Board, _player: Player) -> Result<Position, SelfPlayError> {
        let legal = board.legal_positions();
        if legal.is_empty() {
            return Err(SelectError::BoardFull.into());
        }
        Ok(legal[self.0.random_range(0..legal.len())])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurvivalReport {
    pub mean_steps: f64,
    pub steps: Vec<u32>,
    pub outcomes: Vec<Outcome>,
}

/// Play `n_games` with `policy` as black against `opponent`. Survival steps
/// are the policy's own move count when the game ends. Game `i` differs from
/// the others only through the opponent's first reply, drawn (seeded) from
/// the empty cells within distance 2 of black's first stone; afterwards the
/// opponent plays its own proposals, repaired to legality if needed.
pub fn evaluate_survival(
    policy: &mut dyn Policy,
    opponent: &dyn EvaluatorBackend,
    n_games: usize,
    seed: u64,
    board_size: usize,
    workers: usize,
) -> Result<SurvivalReport, SelfPlayError> {
    let mut steps = Vec::with_capacity(n_games);
    let mut outcomes = Vec::with_capacity(n_games);
    for game in 0..n_games {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(game as u64);
        let mut board = Board::new(board_size)?;
        let mut own_moves = 0u32;
        while !board.status().is_over() {
            let mover = board.side_to_move();
            let pos = if mover == Player::Black {
                own_moves += 1;
                policy.choose(&board, mover)?
            } else if board.move_count() == 1 {
                let (first, _) = board.history()[0];
                let near: Vec<Position> = board
                    .legal_positions()
                    .into_iter()
                    .filter(|p| p.chebyshev(first) <= 2)
                    .collect();
                near[rng.random_range(0..near.len())]
            } else {
                let candidate = opponent.propose_move(&MoveRequest::unguided(&board, mover))?;
                if board.is_empty_at(candidate) {
                    candidate
                } else {
                    choose_move(&board, candidate, opponent, mover, workers)?.0
                }
            };
            board = board.apply_move(pos, mover)?;
        }
        outcomes.push(match board.status() {
            GameStatus::Won { winner, .. } => Outcome::Won(*winner),
            _ => Outcome::Draw,
        });
        steps.push(own_moves);
    }
    let mean_steps = if steps.is_empty() {
        0.0
    } else {
        steps.iter().map(|&s| s as f64).sum::<f64>() / steps.len() as f64
    };
    Ok(SurvivalReport {
        mean_steps,
        steps,
        outcomes,
    })
}
