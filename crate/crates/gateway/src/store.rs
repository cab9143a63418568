//! Append-only session log (`sessions.jsonl`) and replay.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use pricenego::corpus::{Role, Scenario};
use pricenego::policy::{Action, RatioClass};
use pricenego::session::{Move, NegotiationSession};

use crate::error::{GatewayError, Result};
use crate::protocol::{MessageType, Rating, WireMessage};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    In,
    Out,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Created {
        session_id: String,
        scenario_id: String,
        human_role: Role,
        first_mover: Role,
        max_turns: usize,
    },
    Message {
        session_id: String,
        direction: Direction,
        message: WireMessage,
    },
    /// A move the state machine accepted.
    Turn {
        session_id: String,
        speaker: Role,
        action: Action,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ratio: Option<RatioClass>,
        text: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        offer_price: Option<f64>,
    },
    Rating {
        session_id: String,
        rating: Rating,
    },
}

impl LogRecord {
    pub fn session_id(&self) -> &str {
        match self {
            LogRecord::Created { session_id, .. }
            | LogRecord::Message { session_id, .. }
            | LogRecord::Turn { session_id, .. }
            | LogRecord::Rating { session_id, .. } => session_id,
        }
    }
}

/// Appends records, one JSON line each, flushed as written. Without a path
/// records are dropped.
#[derive(Debug, Default)]
pub struct SessionLog {
    file: Option<File>,
    path: Option<PathBuf>,
}

impl SessionLog {
    pub fn disabled() -> Self {
        Self::default()
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self {
            file: Some(file),
            path: Some(path),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn append(&mut self, record: &LogRecord) -> Result<()> {
        if let Some(f) = &mut self.file {
            let mut line = serde_json::to_string(record)?;
            line.push('\n');
            f.write_all(line.as_bytes())?;
            f.flush()?;
        }
        Ok(())
    }
}

pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<LogRecord>> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| GatewayError::Log {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

/// Everything the log holds about one session, in order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SessionHistory {
    pub created: Option<LogRecord>,
    pub turns: Vec<LogRecord>,
    pub messages: Vec<(Direction, WireMessage)>,
    /// Last rating written wins.
    pub rating: Option<Rating>,
}

pub fn group_sessions(records: &[LogRecord]) -> BTreeMap<String, SessionHistory> {
    let mut out: BTreeMap<String, SessionHistory> = BTreeMap::new();
    for r in records {
        let h = out.entry(r.session_id().to_string()).or_default();
        match r {
            LogRecord::Created { .. } => h.created = Some(r.clone()),
            LogRecord::Turn { .. } => h.turns.push(r.clone()),
            LogRecord::Message { direction, message, .. } => h.messages.push((*direction, message.clone())),
            LogRecord::Rating { rating, .. } => h.rating = Some(*rating),
        }
    }
    out
}

/// Result of replaying one session's accepted moves.
#[derive(Clone, Debug, PartialEq)]
pub struct Replay {
    pub session_id: String,
    /// `(agreed, price)` from the logged outcome message, if any.
    pub recorded: Option<(bool, Option<f64>)>,
    /// `(agreed, price)` after replay, if the replayed session ended.
    pub replayed: Option<(bool, Option<f64>)>,
    pub outcome_messages: usize,
    pub seq_increasing: bool,
}

impl Replay {
    /// Same outcome, exactly one outcome message once ended, and strictly
    /// increasing sequence numbers.
    pub fn consistent(&self) -> bool {
        let outcomes_ok = match self.replayed {
            Some(_) => self.outcome_messages == 1,
            None => self.outcome_messages == 0,
        };
        self.recorded == self.replayed && outcomes_ok && self.seq_increasing
    }
}

/// Rebuilds each session from its creation record and accepted moves.
pub fn replay(records: &[LogRecord], scenarios: &BTreeMap<String, Scenario>) -> Result<Vec<Replay>> {
    let mut out = Vec::new();
    for (id, h) in group_sessions(records) {
        let Some(LogRecord::Created {
            scenario_id,
            first_mover,
            max_turns,
            ..
        }) = &h.created
        else {
            return Err(GatewayError::UnknownSession(id));
        };
        let scenario = scenarios
            .get(scenario_id)
            .ok_or_else(|| GatewayError::UnknownScenario(scenario_id.clone()))?;
        let mut session = NegotiationSession::new(scenario.clone(), *first_mover, *max_turns)?;
        for t in &h.turns {
            let LogRecord::Turn {
                speaker,
                action,
                ratio,
                text,
                offer_price,
                ..
            } = t
            else {
                unreachable!("grouped as turns")
            };
            let mut mv = Move::new(*action, text.clone());
            mv.ratio = *ratio;
            mv.offer_price = *offer_price;
            session.step(*speaker, mv)?;
        }
        let outcomes: Vec<&WireMessage> = h
            .messages
            .iter()
            .filter(|(d, m)| *d == Direction::Out && m.kind == MessageType::Outcome)
            .map(|(_, m)| m)
            .collect();
        let o = session.outcome();
        out.push(Replay {
            session_id: id,
            recorded: outcomes.first().map(|m| (m.agreed.unwrap_or(false), m.price)),
            replayed: session.is_over().then_some((o.agreed, o.price)),
            outcome_messages: outcomes.len(),
            seq_increasing: h.messages.windows(2).all(|w| w[0].1.seq < w[1].1.seq),
        });
    }
    Ok(out)
}
