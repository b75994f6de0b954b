//! Durable state-action-reward store and network checkpoints.
//!
//! The transition log is a text file with one record per line:
//!
//! ```text
//! game_id \t turn \t done(0/1) \t action \t reward \t state \t next_state \t unix_ms \n
//! ```
//!
//! `state` and `next_state` are space-separated cell values. A record is
//! committed once its newline is on disk; each append is synced before it
//! returns. A trailing line without a newline is a torn write and is dropped
//! on load. For a 15x15 board a record is at most
//! [`MAX_RECORD_BYTES_15`] bytes.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use thiserror::Error;

use crate::catalog::ActionIndex;
use crate::qlearn::{QError, QNetwork, StateVector, Transition};

/// Upper bound on one record for 225-cell states: two states of at most 225
/// values of width 2 plus 224 separators each, five numeric fields, the
/// timestamp and eight separators/newline.
pub const MAX_RECORD_BYTES_15: usize = 2 * (225 * 2 + 224) + 20 + 10 + 1 + 20 + 32 + 20 + 8;

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("corrupt record at line {line}: {reason}")]
    CorruptRecord { line: usize, reason: String },
    #[error("invalid checkpoint: {0}")]
    Format(String),
}

impl From<QError> for PersistError {
    fn from(e: QError) -> Self {
        PersistError::Format(e.to_string())
    }
}

/// Where record timestamps come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Clock {
    /// Milliseconds since the Unix epoch.
    #[default]
    Wall,
    /// `game_id * 1000 + turn`: reproducible across runs.
    Logical,
}

impl Clock {
    fn stamp(self, t: &Transition) -> u64 {
        match self {
            Clock::Wall => SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis() as u64)
                .unwrap_or(0),
            Clock::Logical => t.game_id * 1000 + t.turn as u64,
        }
    }
}

fn write_state(out: &mut String, s: &StateVector) {
    for (i, v) in s.0.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&v.to_string());
    }
}

// Shortest round-trip form; exponent notation keeps tiny values short.
fn format_reward(r: f64) -> String {
    if r != 0.0 && r.abs() < 1e-4 {
        format!("{r:e}")
    } else {
        format!("{r}")
    }
}

pub fn format_record(t: &Transition, timestamp_ms: u64) -> String {
    let mut line = format!(
        "{}\t{}\t{}\t{}\t{}\t",
        t.game_id,
        t.turn,
        t.done as u8,
        t.action.0,
        format_reward(t.reward)
    );
    write_state(&mut line, &t.state);
    line.push('\t');
    write_state(&mut line, &t.next_state);
    line.push('\t');
    line.push_str(&timestamp_ms.to_string());
    line.push('\n');
    line
}

fn parse_state(field: &str) -> Result<StateVector, String> {
    if field.is_empty() {
        return Ok(StateVector(Vec::new()));
    }
    field
        .split(' ')
        .map(|v| match v {
            "0" => Ok(0),
            "1" => Ok(1),
            "-1" => Ok(-1),
            other => Err(format!("bad cell value {other:?}")),
        })
        .collect::<Result<Vec<i8>, _>>()
        .map(StateVector)
}

/// Parse one record line (without its newline). Returns the transition and
/// its timestamp.
pub fn parse_record(line: &str) -> Result<(Transition, u64), String> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 8 {
        return Err(format!("expected 8 fields, found {}", fields.len()));
    }
    let num = |i: usize, name: &str| -> Result<u64, String> {
        fields[i].parse::<u64>().map_err(|e| format!("{name}: {e}"))
    };
    let game_id = num(0, "game_id")?;
    let turn = u32::try_from(num(1, "turn")?).map_err(|e| format!("turn: {e}"))?;
    let done = match fields[2] {
        "0" => false,
        "1" => true,
        other => return Err(format!("done: {other:?}")),
    };
    let action = ActionIndex(num(3, "action")? as usize);
    let reward: f64 = fields[4].parse().map_err(|e| format!("reward: {e}"))?;
    if !reward.is_finite() {
        return Err("reward is not finite".into());
    }
    let state = parse_state(fields[5])?;
    let next_state = parse_state(fields[6])?;
    if state.len() != next_state.len() {
        return Err("state and next_state lengths differ".into());
    }
    let ts = num(7, "timestamp")?;
    Ok((
        Transition {
            game_id,
            turn,
            state,
            action,
            reward,
            next_state,
            done,
        },
        ts,
    ))
}

/// Complete records of a log plus the number of torn trailing records (0 or
/// 1). Malformed complete lines are reported as corruption.
#[derive(Debug, Clone, Default)]
pub struct LoadedLog {
    pub transitions: Vec<Transition>,
    pub timestamps: Vec<u64>,
    pub truncated: usize,
    /// Byte length of the committed prefix.
    pub committed_len: u64,
}

pub fn load_log(path: &Path) -> Result<LoadedLog, PersistError> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let committed_len = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    let truncated = usize::from(committed_len < bytes.len());
    let text = std::str::from_utf8(&bytes[..committed_len]).map_err(|e| PersistError::CorruptRecord {
        line: 0,
        reason: format!("invalid utf-8: {e}"),
    })?;
    let mut out = LoadedLog {
        truncated,
        committed_len: committed_len as u64,
        ..LoadedLog::default()
    };
    let mut prev: Option<(u64, u32)> = None;
    for (i, line) in text.lines().enumerate() {
        let (t, ts) = parse_record(line).map_err(|reason| PersistError::CorruptRecord { line: i + 1, reason })?;
        let key = (t.game_id, t.turn);
        if prev.is_some_and(|p| key <= p) {
            return Err(PersistError::CorruptRecord {
                line: i + 1,
                reason: format!("record ({}, {}) out of order", t.game_id, t.turn),
            });
        }
        prev = Some(key);
        out.transitions.push(t);
        out.timestamps.push(ts);
    }
    Ok(out)
}

pub fn load_transitions(path: &Path) -> Result<(Vec<Transition>, usize), PersistError> {
    let log = load_log(path)?;
    Ok((log.transitions, log.truncated))
}

/// `(game_id, turn)` of the last committed record, if any.
pub fn resume_cursor(path: &Path) -> Result<Option<(u64, u32)>, PersistError> {
    if !path.exists() {
        return Ok(None);
    }
    let log = load_log(path)?;
    Ok(log.transitions.last().map(|t| (t.game_id, t.turn)))
}

/// Whether the records of one game (in turn order) form a finished game: the
/// final move's record and the previous move's record are both terminal.
pub fn game_is_complete(records: &[&Transition]) -> bool {
    match records {
        [] => false,
        [only] => only.done,
        [.., a, b] => a.done && b.done && b.turn == a.turn + 1,
    }
}

/// Highest game id in `transitions` whose records are complete, provided
/// every earlier game is also complete.
pub fn last_complete_game(transitions: &[Transition]) -> Option<u64> {
    let mut last = None;
    let mut i = 0;
    while i < transitions.len() {
        let id = transitions[i].game_id;
        let mut j = i;
        while j < transitions.len() && transitions[j].game_id == id {
            j += 1;
        }
        let records: Vec<&Transition> = transitions[i..j].iter().collect();
        if !game_is_complete(&records) {
            break;
        }
        last = Some(id);
        i = j;
    }
    last
}

/// Append handle on a transition log.
#[derive(Debug)]
pub struct TransitionLog {
    path: PathBuf,
    file: File,
    count: u64,
    cursor: Option<(u64, u32)>,
    clock: Clock,
}

impl TransitionLog {
    /// Open (creating if needed) for appending. A torn trailing record is cut
    /// off so new records start on a fresh line.
    pub fn open(path: &Path, clock: Clock) -> Result<TransitionLog, PersistError> {
        let file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(path)?;
        let log = load_log(path)?;
        if log.truncated > 0 {
            file.set_len(log.committed_len)?;
            file.sync_all()?;
        }
        Ok(TransitionLog {
            path: path.to_path_buf(),
            file,
            count: log.transitions.len() as u64,
            cursor: log.transitions.last().map(|t| (t.game_id, t.turn)),
            clock,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> u64 {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn cursor(&self) -> Option<(u64, u32)> {
        self.cursor
    }

    /// Write one record and sync it to storage before returning.
    pub fn append(&mut self, t: &Transition) -> Result<(), PersistError> {
        let key = (t.game_id, t.turn);
        if self.cursor.is_some_and(|c| key <= c) {
            return Err(PersistError::CorruptRecord {
                line: self.count as usize + 1,
                reason: format!("append of ({}, {}) after {:?}", t.game_id, t.turn, self.cursor),
            });
        }
        let line = format_record(t, self.clock.stamp(t));
        self.file.write_all(line.as_bytes())?;
        self.file.sync_data()?;
        self.count += 1;
        self.cursor = Some(key);
        Ok(())
    }

    /// Drop every record with `game_id > keep_through` (all records when
    /// `None`). Records are ordered, so this truncates a suffix.
    pub fn truncate_after(&mut self, keep_through: Option<u64>) -> Result<usize, PersistError> {
        let log = load_log(&self.path)?;
        let mut offset = 0u64;
        let mut kept = 0usize;
        let mut cursor = None;
        for (t, ts) in log.transitions.iter().zip(&log.timestamps) {
            if keep_through.is_none_or(|k| t.game_id > k) {
                break;
            }
            offset += format_record(t, *ts).len() as u64;
            kept += 1;
            cursor = Some((t.game_id, t.turn));
        }
        let dropped = log.transitions.len() - kept;
        if offset != log.committed_len || log.truncated > 0 {
            self.file.set_len(offset)?;
            self.file.seek(SeekFrom::End(0))?;
            self.file.sync_all()?;
        }
        self.count = kept as u64;
        self.cursor = cursor;
        Ok(dropped)
    }
}

/// Resumable training state: both networks, counters and the rng position.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub net: QNetwork,
    pub target: QNetwork,
    pub train_steps: u64,
    /// Action selections so far (drives the epsilon schedule).
    pub selections: u64,
    pub last_game: Option<u64>,
    pub rng: RngState,
    /// Recent training losses, oldest first.
    pub loss_samples: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

const TRAILER_MAGIC: &[u8; 4] = b"GCKP";

impl Checkpoint {
    /// A checkpoint holding just `net` (target equal to it, counters zero).
    pub fn from_network(net: QNetwork) -> Checkpoint {
        Checkpoint {
            target: net.clone(),
            net,
            train_steps: 0,
            selections: 0,
            last_game: None,
            rng: RngState::default(),
            loss_samples: Vec::new(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.net.write_to(&mut out).expect("writing to a Vec cannot fail");
        self.target.write_to(&mut out).expect("writing to a Vec cannot fail");
        out.extend_from_slice(TRAILER_MAGIC);
        out.extend_from_slice(&self.train_steps.to_le_bytes());
        out.extend_from_slice(&self.selections.to_le_bytes());
        out.extend_from_slice(&self.last_game.map_or(-1i64, |g| g as i64).to_le_bytes());
        out.extend_from_slice(&self.rng.seed);
        out.extend_from_slice(&self.rng.stream.to_le_bytes());
        out.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        out.extend_from_slice(&(self.loss_samples.len() as u32).to_le_bytes());
        for v in &self.loss_samples {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Parse a checkpoint. A bare network (no target or trailer) is accepted
    /// and yields a fresh training state around it.
    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint, PersistError> {
        let mut r = bytes;
        let net = QNetwork::read_from(&mut r)?;
        if r.is_empty() {
            return Ok(Checkpoint::from_network(net));
        }
        let target = QNetwork::read_from(&mut r)?;
        if !net.same_shape(&target) {
            return Err(PersistError::Format("target network shape differs".into()));
        }
        let fmt = |what: &str| PersistError::Format(format!("truncated trailer ({what})"));
        let mut take = |n: usize, what: &str| -> Result<&[u8], PersistError> {
            if r.len() < n {
                return Err(fmt(what));
            }
            let (head, tail) = r.split_at(n);
            r = tail;
            Ok(head)
        };
        if take(4, "magic")? != TRAILER_MAGIC {
            return Err(PersistError::Format("bad trailer magic".into()));
        }
        let train_steps = u64::from_le_bytes(take(8, "train steps")?.try_into().unwrap());
        let selections = u64::from_le_bytes(take(8, "selections")?.try_into().unwrap());
        let last = i64::from_le_bytes(take(8, "last game")?.try_into().unwrap());
        let seed: [u8; 32] = take(32, "seed")?.try_into().unwrap();
        let stream = u64::from_le_bytes(take(8, "stream")?.try_into().unwrap());
        let word_pos = u128::from_le_bytes(take(16, "word pos")?.try_into().unwrap());
        let n = u32::from_le_bytes(take(4, "loss count")?.try_into().unwrap()) as usize;
        let mut loss_samples = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            loss_samples.push(f32::from_le_bytes(take(4, "loss")?.try_into().unwrap()));
        }
        if !r.is_empty() {
            return Err(PersistError::Format("trailing bytes after checkpoint".into()));
        }
        Ok(Checkpoint {
            net,
            target,
            train_steps,
            selections,
            last_game: (last >= 0).then_some(last as u64),
            rng: RngState {
                seed,
                stream,
                word_pos,
            },
            loss_samples,
        })
    }
}

fn temp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".tmp");
    path.with_file_name(name)
}

/// First half of a save: write and sync the temporary file.
fn write_temp(cp: &Checkpoint, path: &Path) -> Result<PathBuf, PersistError> {
    let tmp = temp_path(path);
    let mut w = BufWriter::new(File::create(&tmp)?);
    w.write_all(&cp.to_bytes())?;
    let file = w.into_inner().map_err(|e| e.into_error())?;
    file.sync_all()?;
    Ok(tmp)
}

/// Save atomically: write a temporary sibling, sync, then rename over `path`.
pub fn save_checkpoint(cp: &Checkpoint, path: &Path) -> Result<(), PersistError> {
    let tmp = write_temp(cp, path)?;
    fs::rename(&tmp, path)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        // Persist the rename itself; not all platforms allow opening dirs.
        if let Ok(d) = File::open(dir) {
            let _ = d.sync_all();
        }
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, PersistError> {
    Checkpoint::from_bytes(&fs::read(path)?)
}
