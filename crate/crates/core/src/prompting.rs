//! Prompt rendering for the move, scoring and win-rate requests, and parsers
//! for the evaluator's free-text replies.

use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

use crate::catalog::{Logic, Strategy};
use crate::engine::{Board, Player, Position};
use crate::evaluation::{Score, WinRates};

pub const DEFAULT_MOVE_TEMPLATE: &str = include_str!("../assets/move_prompt.txt");
pub const DEFAULT_RULES: &str = include_str!("../assets/rules.txt");

/// Every placeholder a move template must contain.
pub const PLACEHOLDERS: [&str; 7] = [
    "rule",
    "board_size",
    "player_id",
    "think",
    "relationship",
    "zero_position",
    "board_array",
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PromptError {
    #[error("template does not contain placeholder {{{0}}}")]
    UnresolvedPlaceholder(String),
    #[error("template contains unknown placeholder {{{0}}}")]
    UnknownPlaceholder(String),
    #[error("template has an unbalanced brace at byte {0}")]
    UnbalancedBrace(usize),
    #[error("no (row, col) pair found in reply")]
    NoPositionFound,
    #[error("position ({row},{col}) is outside a {size}x{size} board")]
    OutOfBounds { row: usize, col: usize, size: usize },
    #[error("no score found in reply")]
    NoScoreFound,
    #[error("score {0} outside [0, 100]")]
    OutOfRange(f64),
    #[error("no win-rate percentages found in reply")]
    NoWinRatesFound,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    body: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate::new(DEFAULT_MOVE_TEMPLATE).expect("shipped template is valid")
    }
}

impl PromptTemplate {
    /// Validate a template: only known placeholders, all of them present.
    pub fn new(body: impl Into<String>) -> Result<PromptTemplate, PromptError> {
        let body = body.into();
        let mut seen = Vec::new();
        let mut rest = body.as_str();
        let mut offset = 0;
        while let Some(open) = rest.find(['{', '}']) {
            if rest.as_bytes()[open] == b'}' {
                return Err(PromptError::UnbalancedBrace(offset + open));
            }
            let after = &rest[open + 1..];
            let close = after
                .find('}')
                .ok_or(PromptError::UnbalancedBrace(offset + open))?;
            let name = &after[..close];
            if name.contains('{') {
                return Err(PromptError::UnbalancedBrace(offset + open));
            }
            if !PLACEHOLDERS.contains(&name) {
                return Err(PromptError::UnknownPlaceholder(name.to_string()));
            }
            seen.push(name.to_string());
            let consumed = open + 1 + close + 1;
            rest = &rest[consumed..];
            offset += consumed;
        }
        if let Some(missing) = PLACEHOLDERS.iter().find(|p| !seen.iter().any(|s| s == *p)) {
            return Err(PromptError::UnresolvedPlaceholder(missing.to_string()));
        }
        Ok(PromptTemplate { body })
    }

    pub fn body(&self) -> &str {
        &self.body
    }
}

// Substituted text must not reintroduce placeholder syntax.
fn sanitize(text: &str) -> String {
    text.replace('{', "(").replace('}', ")")
}

pub fn format_positions(positions: &[Position]) -> String {
    positions
        .iter()
        .map(|p| format!("({},{})", p.row, p.col))
        .collect::<Vec<_>>()
        .join(", ")
}

pub fn format_board_array(board: &Board) -> String {
    let values: Vec<String> = board
        .serialize_row_major()
        .iter()
        .map(|v| v.to_string())
        .collect();
    format!("[{}]", values.join(", "))
}

pub fn render_move_prompt(
    template: &PromptTemplate,
    rules_text: &str,
    board: &Board,
    player: Player,
    strategy: &Strategy,
    logic: &Logic,
) -> String {
    let size = board.size();
    let values = [
        ("rule", sanitize(rules_text.trim())),
        ("board_size", format!("{size}*{size}")),
        ("player_id", player.value().to_string()),
        ("think", sanitize(&format!("\"{}\" ({})", strategy.name, strategy.description))),
        ("relationship", sanitize(&format!("{} reasoning ({})", logic.name, logic.description))),
        ("zero_position", format_positions(&board.legal_positions())),
        ("board_array", format_board_array(board)),
    ];
    let mut out = template.body().to_string();
    for (name, value) in values {
        out = out.replace(&format!("{{{name}}}"), &value);
    }
    out
}

pub fn render_score_prompt(board: &Board, pos: Position, player: Player) -> String {
    let size = board.size();
    format!(
        "You are judging Gomoku positions on a {size}*{size} board. The board array below is read \
         row by row, left to right, with 1 for black stones, -1 for white stones and 0 for empty \
         cells.\n\nBoard array: {}\n\nThe player with value {} ({}) considers placing a stone at \
         (row, col) = ({}, {}), using 0-based indices. Rate how good this move is for that player, \
         taking into account both the attacking lines it builds and the opponent threats it stops. \
         Answer with a single integer score from 0 (useless) to 100 (wins or must be played), and \
         put that score last in your reply.",
        format_board_array(board),
        player.value(),
        player,
        pos.row,
        pos.col,
    )
}

pub fn render_win_rate_prompt(board: &Board, mover: Player) -> String {
    let size = board.size();
    format!(
        "You are evaluating a Gomoku game on a {size}*{size} board. The board array below is read \
         row by row, left to right, with 1 for black stones, -1 for white stones and 0 for empty \
         cells.\n\nBoard array: {}\n\n{} has just moved. Estimate each player's chance of winning \
         from this position. Reply in the form \"Black NN%, White NN%\" with the two percentages \
         summing to 100.",
        format_board_array(board),
        capitalize(&mover.to_string()),
    )
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

fn paren_pair_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\(\s*(\d+)\s*,\s*(\d+)\s*\)").unwrap())
}

fn bare_pair_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(\d+)\s*,\s*(\d+)").unwrap())
}

fn number_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"-?\d+(?:\.\d+)?").unwrap())
}

fn win_rate_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)\b(black|white)\b[^0-9%]*?(\d+(?:\.\d+)?)\s*%").unwrap()
    })
}

/// Extract the last `(r, c)` pair in the reply. Parenthesized pairs take
/// precedence over bare `r,c` pairs, so trailing prose such as "scores 3, 4"
/// cannot override an explicit answer.
pub fn parse_position(reply: &str, size: usize) -> Result<Position, PromptError> {
    let caps = paren_pair_re()
        .captures_iter(reply)
        .last()
        .or_else(|| bare_pair_re().captures_iter(reply).last())
        .ok_or(PromptError::NoPositionFound)?;
    // Absurdly long digit strings are out of bounds too.
    let row = caps[1].parse::<usize>().unwrap_or(usize::MAX);
    let col = caps[2].parse::<usize>().unwrap_or(usize::MAX);
    if row >= size || col >= size {
        return Err(PromptError::OutOfBounds { row, col, size });
    }
    Ok(Position::new(row, col))
}

pub fn parse_score(reply: &str) -> Result<Score, PromptError> {
    let m = number_re()
        .find_iter(reply)
        .last()
        .ok_or(PromptError::NoScoreFound)?;
    let value: f64 = m.as_str().parse().map_err(|_| PromptError::NoScoreFound)?;
    Score::new(value).map_err(|_| PromptError::OutOfRange(value))
}

/// Parse "Black NN%, White NN%" (either order, last mention of each color
/// wins) and normalize to the mover's perspective.
pub fn parse_win_rates(reply: &str, mover: Player) -> Result<WinRates, PromptError> {
    let mut black = None;
    let mut white = None;
    for caps in win_rate_re().captures_iter(reply) {
        let v: f64 = caps[2].parse().map_err(|_| PromptError::NoWinRatesFound)?;
        if caps[1].eq_ignore_ascii_case("black") {
            black = Some(v);
        } else {
            white = Some(v);
        }
    }
    let (b, w) = match (black, white) {
        (Some(b), Some(w)) => (b, w),
        (Some(b), None) if b <= 100.0 => (b, 100.0 - b),
        (None, Some(w)) if w <= 100.0 => (100.0 - w, w),
        _ => return Err(PromptError::NoWinRatesFound),
    };
    let total = b + w;
    let p_black = if total > 0.0 { b / total } else { 0.5 };
    let p_mover = match mover {
        Player::Black => p_black,
        Player::White => 1.0 - p_black,
    };
    Ok(WinRates::from_mover(p_mover))
}
