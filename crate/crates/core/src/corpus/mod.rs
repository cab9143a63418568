//! Scenarios, human dialogues and the external item catalog.
//!
//! Utterances are tokenized with every detected price replaced by the
//! `<price>` sentinel; the numeric values travel alongside the tokens.

mod intent;
mod io;
mod labels;
mod tokenize;
mod vocab;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::policy::{Action, RatioClass};

pub use intent::{extract_intent, Intent};
pub use io::{
    load_catalog, load_dialogues, load_embeddings, load_scenarios, parse_catalog, parse_dialogues,
    parse_scenarios, write_dialogues,
};
pub use labels::{class_frequencies, derive_labels, ground_truth_price, ground_truth_prices, standing_prices};
pub use tokenize::{
    detokenize, format_price, parse_amount, reinsert_prices, tokenize, tokenize_with_price_abstraction,
    PRICE_TOKEN,
};
pub use vocab::{Vocabulary, END, PAD, UNK};

/// Maximum tokens per utterance.
pub const MAX_TOKENS: usize = 40;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Seller,
    Buyer,
}

impl Role {
    pub const ALL: [Role; 2] = [Role::Seller, Role::Buyer];

    pub fn opponent(self) -> Role {
        match self {
            Role::Seller => Role::Buyer,
            Role::Buyer => Role::Seller,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Role::Seller => 0,
            Role::Buyer => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Seller => "seller",
            Role::Buyer => "buyer",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Bike,
    Car,
    Electronics,
    Furniture,
    Housing,
    Phone,
}

impl Category {
    pub const ALL: [Category; 6] = [
        Category::Bike,
        Category::Car,
        Category::Electronics,
        Category::Furniture,
        Category::Housing,
        Category::Phone,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Bike => "bike",
            Category::Car => "car",
            Category::Electronics => "electronics",
            Category::Furniture => "furniture",
            Category::Housing => "housing",
            Category::Phone => "phone",
        }
    }
}

/// An advertised item plus the per-role price goals of one negotiation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub category: Category,
    pub title: String,
    pub description: String,
    pub listing_price: f64,
    pub seller_bottom: f64,
    pub buyer_target: f64,
    pub image_features: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_url: Option<String>,
}

impl Scenario {
    pub fn validate(&self) -> crate::Result<()> {
        use crate::Error::Invariant;
        for (name, v) in [
            ("listing_price", self.listing_price),
            ("seller_bottom", self.seller_bottom),
            ("buyer_target", self.buyer_target),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Invariant(format!("{name} must be finite and positive, got {v}")));
            }
        }
        if self.buyer_target >= self.listing_price {
            return Err(Invariant(format!(
                "buyer_target {} must be below listing_price {}",
                self.buyer_target, self.listing_price
            )));
        }
        if self.seller_bottom >= self.listing_price {
            return Err(Invariant(format!(
                "seller_bottom {} must be below listing_price {}",
                self.seller_bottom, self.listing_price
            )));
        }
        if self.image_features.iter().any(|v| !v.is_finite()) {
            return Err(Invariant("image_features contain non-finite values".into()));
        }
        Ok(())
    }

    pub fn title_tokens(&self) -> Vec<String> {
        tokenize(&self.title, Some(self.listing_price)).0
    }

    pub fn description_tokens(&self) -> Vec<String> {
        tokenize(&self.description, Some(self.listing_price)).0
    }

    /// The catalog-item view of this scenario's advertisement.
    pub fn as_item(&self) -> CatalogItem {
        CatalogItem {
            id: self.id.clone(),
            category: self.category,
            title: self.title.clone(),
            description: self.description.clone(),
            listing_price: self.listing_price,
            image_features: self.image_features.clone(),
        }
    }
}

/// An external listing; the memory cells of the matching network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CatalogItem {
    pub id: String,
    pub category: Category,
    pub title: String,
    pub description: String,
    pub listing_price: f64,
    pub image_features: Vec<f64>,
}

impl CatalogItem {
    pub fn validate(&self) -> crate::Result<()> {
        if !self.listing_price.is_finite() || self.listing_price <= 0.0 {
            return Err(crate::Error::Invariant(format!(
                "listing_price must be finite and positive, got {}",
                self.listing_price
            )));
        }
        if self.image_features.iter().any(|v| v.is_nan()) {
            return Err(crate::Error::Invariant("image_features contain NaN".into()));
        }
        Ok(())
    }

    pub fn title_tokens(&self) -> Vec<String> {
        tokenize(&self.title, Some(self.listing_price)).0
    }

    pub fn description_tokens(&self) -> Vec<String> {
        tokenize(&self.description, Some(self.listing_price)).0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Offer,
    Accept,
    Reject,
    Quit,
}

impl EventKind {
    pub fn action(self) -> Action {
        match self {
            EventKind::Offer => Action::Offer,
            EventKind::Accept => Action::Accept,
            EventKind::Reject => Action::Reject,
            EventKind::Quit => Action::Quit,
        }
    }

    pub fn is_terminal(self) -> bool {
        !matches!(self, EventKind::Offer)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    #[serde(rename = "type")]
    pub kind: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub price: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndReason {
    Accept,
    Reject,
    Quit,
    MaxTurns,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub agreed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub price: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub turns: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ended_by: Option<EndReason>,
}

impl Outcome {
    pub fn no_agreement() -> Self {
        Self {
            agreed: false,
            price: None,
            turns: None,
            ended_by: None,
        }
    }
}

/// Vocabulary over every dialogue token and the title and description of
/// each listed item.
pub fn corpus_vocabulary(dialogues: &[Dialogue], items: &[CatalogItem], min_count: usize) -> Vocabulary {
    let mut streams: Vec<Vec<String>> = dialogues.iter().flat_map(|d| d.turns.iter().map(|t| t.tokens.clone())).collect();
    for item in items {
        streams.push(item.title_tokens());
        streams.push(item.description_tokens());
    }
    Vocabulary::build(streams.iter().map(Vec::as_slice), min_count)
}

/// One utterance (and optional formal event) of a dialogue.
#[derive(Clone, Debug, PartialEq)]
pub struct TurnRecord {
    pub speaker: Role,
    pub text: String,
    pub tokens: Vec<String>,
    pub price_values: Vec<f64>,
    pub event: Option<Event>,
    pub action: Action,
    pub ratio_class: Option<RatioClass>,
    pub intent: Intent,
}

impl TurnRecord {
    pub fn has_price(&self) -> bool {
        !self.price_values.is_empty()
    }

    /// The most conceding price mentioned in the turn for its speaker:
    /// lowest for a seller, highest for a buyer.
    pub fn best_price(&self) -> Option<f64> {
        best_price(self.speaker, &self.price_values)
    }
}

pub(crate) fn best_price(role: Role, prices: &[f64]) -> Option<f64> {
    let iter = prices.iter().copied();
    match role {
        Role::Seller => iter.reduce(f64::min),
        Role::Buyer => iter.reduce(f64::max),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dialogue {
    pub scenario_id: String,
    pub turns: Vec<TurnRecord>,
    pub outcome: Outcome,
}

// On-disk shapes of `dialogues.jsonl`.

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnRecordFile {
    pub speaker: Role,
    #[serde(default)]
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event: Option<Event>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DialogueFile {
    pub scenario_id: String,
    pub turns: Vec<TurnRecordFile>,
    pub outcome: Outcome,
}

impl From<&Dialogue> for DialogueFile {
    fn from(d: &Dialogue) -> Self {
        DialogueFile {
            scenario_id: d.scenario_id.clone(),
            turns: d
                .turns
                .iter()
                .map(|t| TurnRecordFile {
                    speaker: t.speaker,
                    text: t.text.clone(),
                    event: t.event,
                })
                .collect(),
            outcome: d.outcome.clone(),
        }
    }
}
