//! Board representation, move rules and win detection.
//!
//! Freestyle rules: black (+1) moves first, players alternate, and any
//! contiguous run of five or more stones of one color wins (overlines
//! included). There are no forbidden moves.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_SIZE: usize = 15;
pub const MIN_SIZE: usize = 5;
pub const MAX_SIZE: usize = 25;
pub const WIN_LENGTH: usize = 5;

/// The four line directions: horizontal, vertical, diagonal, anti-diagonal.
pub const DIRECTIONS: [(isize, isize); 4] = [(0, 1), (1, 0), (1, 1), (1, -1)];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EngineError {
    #[error("board size {0} outside [{MIN_SIZE}, {MAX_SIZE}]")]
    InvalidSize(usize),
    #[error("position {0} is already occupied")]
    Occupied(Position),
    #[error("position ({row},{col}) is outside a {size}x{size} board")]
    OutOfBounds { row: usize, col: usize, size: usize },
    #[error("it is {expected}'s turn, not {got}'s")]
    WrongTurn { expected: Player, got: Player },
    #[error("the game is already over")]
    GameOver,
    #[error("invalid cell array: {0}")]
    InvalidCells(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Position {
    pub row: usize,
    pub col: usize,
}

impl Position {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }

    /// Chebyshev (king-move) distance.
    pub fn chebyshev(self, other: Position) -> usize {
        self.row.abs_diff(other.row).max(self.col.abs_diff(other.col))
    }

    /// Offset by `(dr, dc) * step`, or `None` if it leaves a `size` board.
    pub fn offset(self, dr: isize, dc: isize, step: isize, size: usize) -> Option<Position> {
        let r = self.row as isize + dr * step;
        let c = self.col as isize + dc * step;
        if r < 0 || c < 0 || r >= size as isize || c >= size as isize {
            None
        } else {
            Some(Position::new(r as usize, c as usize))
        }
    }
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.row, self.col)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Player {
    Black,
    White,
}

impl Player {
    pub const fn value(self) -> i8 {
        match self {
            Player::Black => 1,
            Player::White => -1,
        }
    }

    pub const fn opponent(self) -> Player {
        match self {
            Player::Black => Player::White,
            Player::White => Player::Black,
        }
    }

    pub fn from_value(v: i8) -> Option<Player> {
        match v {
            1 => Some(Player::Black),
            -1 => Some(Player::White),
            _ => None,
        }
    }

    /// Side to move at ply `n` (0-based).
    pub const fn for_ply(n: usize) -> Player {
        if n.is_multiple_of(2) {
            Player::Black
        } else {
            Player::White
        }
    }
}

impl fmt::Display for Player {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Player::Black => "black",
            Player::White => "white",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum GameStatus {
    InProgress,
    Won { winner: Player, line: Vec<Position> },
    Draw,
}

impl GameStatus {
    pub fn is_over(&self) -> bool {
        !matches!(self, GameStatus::InProgress)
    }

    pub fn winner(&self) -> Option<Player> {
        match self {
            GameStatus::Won { winner, .. } => Some(*winner),
            _ => None,
        }
    }
}

/// An immutable game position. Mutating operations return a new board.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Board {
    size: usize,
    cells: Vec<i8>,
    history: Vec<(Position, Player)>,
    status: GameStatus,
}

impl Board {
    pub fn new(size: usize) -> Result<Board, EngineError> {
        if !(MIN_SIZE..=MAX_SIZE).contains(&size) {
            return Err(EngineError::InvalidSize(size));
        }
        Ok(Board {
            size,
            cells: vec![0; size * size],
            history: Vec::new(),
            status: GameStatus::InProgress,
        })
    }

    /// Rebuild a board by replaying `moves` from empty, enforcing every rule.
    pub fn replay(size: usize, moves: &[Position]) -> Result<Board, EngineError> {
        let mut board = Board::new(size)?;
        for &pos in moves {
            board = board.apply_move(pos, board.side_to_move())?;
        }
        Ok(board)
    }

    /// Companion of [`Board::serialize_row_major`]: rebuilds a board from its
    /// cell array. The history is canonical (stones interleaved black/white in
    /// row-major order), since the original move order is not recoverable.
    pub fn from_row_major(size: usize, cells: &[i8]) -> Result<Board, EngineError> {
        if !(MIN_SIZE..=MAX_SIZE).contains(&size) {
            return Err(EngineError::InvalidSize(size));
        }
        if cells.len() != size * size {
            return Err(EngineError::InvalidCells(format!(
                "expected {} cells, got {}",
                size * size,
                cells.len()
            )));
        }
        let mut blacks = Vec::new();
        let mut whites = Vec::new();
        for (k, &v) in cells.iter().enumerate() {
            let pos = Position::new(k / size, k % size);
            match v {
                1 => blacks.push(pos),
                -1 => whites.push(pos),
                0 => {}
                other => {
                    return Err(EngineError::InvalidCells(format!("cell value {other} at index {k}")))
                }
            }
        }
        if blacks.len() != whites.len() && blacks.len() != whites.len() + 1 {
            return Err(EngineError::InvalidCells(format!(
                "{} black vs {} white stones",
                blacks.len(),
                whites.len()
            )));
        }
        let mut history = Vec::with_capacity(blacks.len() + whites.len());
        for (i, &b) in blacks.iter().enumerate() {
            history.push((b, Player::Black));
            if let Some(&w) = whites.get(i) {
                history.push((w, Player::White));
            }
        }
        let mut board = Board {
            size,
            cells: cells.to_vec(),
            history,
            status: GameStatus::InProgress,
        };
        board.status = board.game_status();
        Ok(board)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn cells(&self) -> &[i8] {
        &self.cells
    }

    pub fn history(&self) -> &[(Position, Player)] {
        &self.history
    }

    pub fn move_count(&self) -> usize {
        self.history.len()
    }

    pub fn last_move(&self) -> Option<(Position, Player)> {
        self.history.last().copied()
    }

    pub fn side_to_move(&self) -> Player {
        Player::for_ply(self.history.len())
    }

    /// Cached status, maintained incrementally by [`Board::apply_move`].
    pub fn status(&self) -> &GameStatus {
        &self.status
    }

    pub fn is_full(&self) -> bool {
        self.history.len() == self.cells.len()
    }

    pub fn in_bounds(&self, pos: Position) -> bool {
        pos.row < self.size && pos.col < self.size
    }

    pub fn index(&self, pos: Position) -> usize {
        pos.row * self.size + pos.col
    }

    pub fn position(&self, index: usize) -> Position {
        Position::new(index / self.size, index % self.size)
    }

    /// Cell value at `pos`: +1, -1 or 0. Panics when out of bounds.
    pub fn get(&self, pos: Position) -> i8 {
        self.cells[self.index(pos)]
    }

    pub fn is_empty_at(&self, pos: Position) -> bool {
        self.in_bounds(pos) && self.get(pos) == 0
    }

    fn check_bounds(&self, pos: Position) -> Result<(), EngineError> {
        if self.in_bounds(pos) {
            Ok(())
        } else {
            Err(EngineError::OutOfBounds {
                row: pos.row,
                col: pos.col,
                size: self.size,
            })
        }
    }

    pub fn apply_move(&self, pos: Position, player: Player) -> Result<Board, EngineError> {
        if self.status.is_over() {
            return Err(EngineError::GameOver);
        }
        self.check_bounds(pos)?;
        let expected = self.side_to_move();
        if player != expected {
            return Err(EngineError::WrongTurn {
                expected,
                got: player,
            });
        }
        if self.get(pos) != 0 {
            return Err(EngineError::Occupied(pos));
        }
        let mut next = self.clone();
        let idx = next.index(pos);
        next.cells[idx] = player.value();
        next.history.push((pos, player));
        // Only the newest stone can create a winning run.
        next.status = match next.winning_line_through(pos) {
            Some(line) => GameStatus::Won {
                winner: player,
                line,
            },
            None if next.is_full() => GameStatus::Draw,
            None => GameStatus::InProgress,
        };
        Ok(next)
    }

    /// The board with the last move taken back, rebuilt by replaying history.
    pub fn undo(&self) -> Option<Board> {
        let (_, rest) = self.history.split_last()?;
        let moves: Vec<Position> = rest.iter().map(|(p, _)| *p).collect();
        Board::replay(self.size, &moves).ok()
    }

    /// Empty cells in row-major order.
    pub fn legal_positions(&self) -> Vec<Position> {
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == 0)
            .map(|(k, _)| self.position(k))
            .collect()
    }

    pub fn serialize_row_major(&self) -> Vec<i8> {
        self.cells.clone()
    }

    /// Maximal same-color run through `pos` along `(dr, dc)`, ordered from
    /// the negative end. Empty when `pos` is empty.
    pub fn run_through(&self, pos: Position, dr: isize, dc: isize) -> Vec<Position> {
        let color = self.get(pos);
        if color == 0 {
            return Vec::new();
        }
        let mut back = 0;
        while let Some(p) = pos.offset(dr, dc, -(back + 1), self.size) {
            if self.get(p) != color {
                break;
            }
            back += 1;
        }
        let mut run = Vec::new();
        let mut step = -back;
        while let Some(p) = pos.offset(dr, dc, step, self.size) {
            if self.get(p) != color {
                break;
            }
            run.push(p);
            step += 1;
        }
        run
    }

    fn winning_line_through(&self, pos: Position) -> Option<Vec<Position>> {
        DIRECTIONS
            .iter()
            .map(|&(dr, dc)| self.run_through(pos, dr, dc))
            .find(|run| run.len() >= WIN_LENGTH)
    }

    /// Full-board status scan. The reported line is the first maximal run of
    /// length >= 5 found in row-major order, directions in [`DIRECTIONS`] order.
    pub fn game_status(&self) -> GameStatus {
        for k in 0..self.cells.len() {
            let color = self.cells[k];
            if color == 0 {
                continue;
            }
            let pos = self.position(k);
            for &(dr, dc) in &DIRECTIONS {
                // Only start counting at the first stone of a run.
                if let Some(prev) = pos.offset(dr, dc, -1, self.size) {
                    if self.get(prev) == color {
                        continue;
                    }
                }
                let run = self.run_through(pos, dr, dc);
                if run.len() >= WIN_LENGTH {
                    return GameStatus::Won {
                        winner: Player::from_value(color).expect("nonzero cell"),
                        line: run,
                    };
                }
            }
        }
        if self.cells.iter().all(|&v| v != 0) {
            GameStatus::Draw
        } else {
            GameStatus::InProgress
        }
    }

    /// Text rendering: `X` black, `O` white, `.` empty, with coordinates.
    pub fn to_text(&self) -> String {
        let mut out = String::from("   ");
        for c in 0..self.size {
            out.push_str(&format!("{:>3}", c));
        }
        out.push('\n');
        for r in 0..self.size {
            out.push_str(&format!("{:>3}", r));
            for c in 0..self.size {
                let ch = match self.get(Position::new(r, c)) {
                    1 => 'X',
                    -1 => 'O',
                    _ => '.',
                };
                out.push_str(&format!("{:>3}", ch));
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(r: usize, c: usize) -> Position {
        Position::new(r, c)
    }

    #[test]
    fn new_board_sizes() {
        let b = Board::new(15).unwrap();
        assert_eq!(b.cells().len(), 225);
        assert!(b.cells().iter().all(|&v| v == 0));
        assert!(b.history().is_empty());
        assert_eq!(Board::new(5).unwrap().cells().len(), 25);
        assert_eq!(Board::new(4), Err(EngineError::InvalidSize(4)));
        assert_eq!(Board::new(26), Err(EngineError::InvalidSize(26)));
    }

    #[test]
    fn apply_move_rules() {
        let b = Board::new(15).unwrap();
        let b1 = b.apply_move(p(7, 7), Player::Black).unwrap();
        assert_eq!(b1.get(p(7, 7)), 1);
        assert_eq!(b1.cells().iter().filter(|&&v| v != 0).count(), 1);
        assert_eq!(
            b1.apply_move(p(7, 7), Player::White),
            Err(EngineError::Occupied(p(7, 7)))
        );
        assert_eq!(
            b1.apply_move(p(0, 0), Player::Black),
            Err(EngineError::WrongTurn {
                expected: Player::White,
                got: Player::Black
            })
        );
        assert!(matches!(
            b1.apply_move(p(15, 0), Player::White),
            Err(EngineError::OutOfBounds { .. })
        ));
        // original untouched
        assert!(b.cells().iter().all(|&v| v == 0));
    }

    #[test]
    fn no_moves_after_win() {
        let moves = [p(0, 0), p(1, 0), p(0, 1), p(1, 1), p(0, 2), p(1, 2), p(0, 3), p(1, 3), p(0, 4)];
        let b = Board::replay(15, &moves).unwrap();
        assert_eq!(b.status().winner(), Some(Player::Black));
        assert_eq!(b.apply_move(p(5, 5), Player::White), Err(EngineError::GameOver));
    }

    #[test]
    fn legal_positions_order() {
        let b = Board::new(15).unwrap();
        let legal = b.legal_positions();
        assert_eq!(legal.len(), 225);
        assert_eq!(&legal[..2], &[p(0, 0), p(0, 1)]);
        let b = Board::replay(15, &[p(0, 0), p(0, 1)]).unwrap();
        let legal = b.legal_positions();
        assert_eq!(legal.len(), 223);
        assert_eq!(legal[0], p(0, 2));
    }

    #[test]
    fn full_board_has_no_legal_positions() {
        // Column-pair pattern on 5x5 that never forms five: fill by rows with
        // colors alternating every two columns, shifted per row.
        let size = 5;
        let mut cells = vec![0i8; 25];
        for r in 0..size {
            for c in 0..size {
                cells[r * size + c] = if ((c + 2 * r) / 2) % 2 == 0 { 1 } else { -1 };
            }
        }
        let blacks = cells.iter().filter(|&&v| v == 1).count();
        let whites = 25 - blacks;
        assert!(blacks.abs_diff(whites) <= 1, "{blacks} vs {whites}");
        let b = Board::from_row_major(size, &cells).unwrap();
        assert!(b.legal_positions().is_empty());
        assert_eq!(b.game_status(), GameStatus::Draw);
    }

    #[test]
    fn horizontal_five_wins() {
        let moves = [p(7, 3), p(0, 0), p(7, 4), p(0, 2), p(7, 5), p(0, 4), p(7, 6), p(0, 6), p(7, 7)];
        let b = Board::replay(15, &moves).unwrap();
        let expected = GameStatus::Won {
            winner: Player::Black,
            line: vec![p(7, 3), p(7, 4), p(7, 5), p(7, 6), p(7, 7)],
        };
        assert_eq!(b.game_status(), expected);
        assert_eq!(b.status(), &expected);
        assert_eq!(Board::new(15).unwrap().game_status(), GameStatus::InProgress);
    }

    #[test]
    fn diagonal_white_wins() {
        let moves = [
            p(0, 10), p(2, 2), p(0, 12), p(3, 3), p(10, 0), p(4, 4),
            p(12, 0), p(5, 5), p(14, 14), p(6, 6),
        ];
        let b = Board::replay(15, &moves).unwrap();
        assert_eq!(b.game_status().winner(), Some(Player::White));
        assert_eq!(b.status().winner(), Some(Player::White));
    }

    #[test]
    fn overline_counts() {
        // Black fills (3,0)..(3,2) and (3,4)..(3,5), then plugs (3,3): run of six.
        let moves = [
            p(3, 0), p(9, 0), p(3, 1), p(9, 2), p(3, 2), p(9, 4),
            p(3, 4), p(9, 6), p(3, 5), p(9, 8), p(3, 3),
        ];
        let b = Board::replay(15, &moves).unwrap();
        match b.game_status() {
            GameStatus::Won { winner, line } => {
                assert_eq!(winner, Player::Black);
                assert_eq!(line.len(), 6);
            }
            other => panic!("expected win, got {other:?}"),
        }
    }

    #[test]
    fn serialize_indices() {
        let b = Board::new(5).unwrap();
        assert_eq!(b.serialize_row_major(), vec![0; 25]);
        let b = Board::replay(15, &[p(7, 7), p(7, 8)]).unwrap();
        let s = b.serialize_row_major();
        assert_eq!(s[112], 1);
        assert_eq!(s[113], -1);
        assert_eq!(s.iter().filter(|&&v| v != 0).count(), 2);
    }

    #[test]
    fn undo_restores_previous() {
        let b0 = Board::replay(15, &[p(7, 7), p(7, 8), p(8, 8)]).unwrap();
        let b1 = b0.apply_move(p(6, 6), Player::White).unwrap();
        assert_eq!(b1.undo().unwrap(), b0);
    }

    #[test]
    fn from_row_major_rejects_bad_counts() {
        let mut cells = vec![0i8; 25];
        cells[0] = 1;
        cells[1] = 1;
        assert!(matches!(
            Board::from_row_major(5, &cells),
            Err(EngineError::InvalidCells(_))
        ));
    }
}
