use std::fmt;

use serde::{Deserialize, Serialize};

use super::{EventKind, TurnRecord};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Intent {
    Intro,
    Inquiry,
    Inform,
    ProposePrice,
    CounterPrice,
    Agree,
    Offer,
    Accept,
    Reject,
    Quit,
    Unknown,
}

impl Intent {
    pub fn as_str(self) -> &'static str {
        match self {
            Intent::Intro => "intro",
            Intent::Inquiry => "inquiry",
            Intent::Inform => "inform",
            Intent::ProposePrice => "propose-price",
            Intent::CounterPrice => "counter-price",
            Intent::Agree => "agree",
            Intent::Offer => "offer",
            Intent::Accept => "accept",
            Intent::Reject => "reject",
            Intent::Quit => "quit",
            Intent::Unknown => "unknown",
        }
    }
}

impl fmt::Display for Intent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

const GREETINGS: &[&str] = &["hi", "hello", "hey", "greetings", "howdy", "hiya", "morning", "evening"];
const AGREEMENT: &[&str] = &[
    "deal", "ok", "okay", "sure", "agreed", "agree", "yes", "yeah", "great", "sounds", "alright", "perfect", "fine",
];

/// Rule-based intent label for a tokenized turn.
pub fn extract_intent(turn: &TurnRecord, prev_turn: Option<&TurnRecord>) -> Intent {
    label(
        &turn.tokens,
        turn.event.map(|e| e.kind),
        prev_turn.is_some_and(|p| p.speaker != turn.speaker && p.has_price()),
    )
}

pub(crate) fn label(tokens: &[String], event: Option<EventKind>, opponent_priced: bool) -> Intent {
    if let Some(kind) = event {
        return match kind {
            EventKind::Offer => Intent::Offer,
            EventKind::Accept => Intent::Accept,
            EventKind::Reject => Intent::Reject,
            EventKind::Quit => Intent::Quit,
        };
    }
    if tokens.is_empty() {
        return Intent::Unknown;
    }
    let has = |set: &[&str]| tokens.iter().any(|t| set.contains(&t.as_str()));
    if tokens.iter().any(|t| t == super::PRICE_TOKEN) {
        return if opponent_priced {
            Intent::CounterPrice
        } else {
            Intent::ProposePrice
        };
    }
    if has(GREETINGS) {
        Intent::Intro
    } else if tokens.iter().any(|t| t == "?") {
        Intent::Inquiry
    } else if has(AGREEMENT) {
        Intent::Agree
    } else {
        Intent::Inform
    }
}
