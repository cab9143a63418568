use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::tokenize::{parse_amount, PRICE_TOKEN};
use super::Role;
use crate::policy::Action;

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const END: &str = "<end>";

/// Token/index map. Reserved tokens occupy the lowest indices: pad, unknown,
/// end, `<price>`, then one start token per (role, action).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub const PAD_ID: usize = 0;
    pub const UNK_ID: usize = 1;
    pub const END_ID: usize = 2;
    pub const PRICE_ID: usize = 3;
    const START_BASE: usize = 4;
    pub const NUM_RESERVED: usize = Self::START_BASE + 12;

    pub fn start_token(role: Role, action: Action) -> String {
        format!("<{}:{}>", role.as_str(), action.name())
    }

    fn reserved() -> Vec<String> {
        let mut tokens: Vec<String> = [PAD, UNK, END, PRICE_TOKEN].iter().map(|s| s.to_string()).collect();
        for role in Role::ALL {
            for action in Action::ALL {
                tokens.push(Self::start_token(role, action));
            }
        }
        tokens
    }

    /// Builds from token streams, most frequent first (ties lexical). Tokens
    /// seen fewer than `min_count` times and anything parsing as a bare
    /// amount are left out.
    pub fn build<'a, I>(streams: I, min_count: usize) -> Self
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for stream in streams {
            for t in stream {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
        let reserved = Self::reserved();
        let mut entries: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_count && parse_amount(t).is_none() && !reserved.iter().any(|r| r == t))
            .collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let mut tokens = reserved;
        tokens.extend(entries.into_iter().map(|(t, _)| t.to_string()));
        Self::from(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(Self::UNK_ID)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn start_id(&self, role: Role, action: Action) -> usize {
        Self::START_BASE + role.index() * Action::ALL.len() + action.index()
    }

    pub fn is_start(&self, id: usize) -> bool {
        (Self::START_BASE..Self::NUM_RESERVED).contains(&id)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}
