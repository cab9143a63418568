//! Supervised action/ratio targets for human turns, ground-truth prices and
//! class counts.
//!
//! Human dialogues carry no action labels, so they are derived: formal
//! events map one-to-one, a priced turn that moves toward the opponent is a
//! concession, anything else keeps negotiating.

use std::collections::HashMap;

use super::intent::label;
use super::tokenize::tokenize;
use super::{best_price, Dialogue, DialogueFile, EventKind, Role, Scenario, TurnRecord, MAX_TOKENS, PRICE_TOKEN};
use crate::error::{Error, Result};
use crate::policy::{concession_range, initial_price, Action, RatioClass};

/// Tokenizes and labels every turn of a raw dialogue.
pub fn derive_labels(file: &DialogueFile, scenario: &Scenario) -> Dialogue {
    let mut current = [
        initial_price(Role::Seller, scenario),
        initial_price(Role::Buyer, scenario),
    ];
    let mut turns: Vec<TurnRecord> = Vec::with_capacity(file.turns.len());
    for raw in &file.turns {
        let role = raw.speaker;
        let (mut tokens, mut prices) = tokenize(&raw.text, Some(scenario.listing_price));
        if tokens.len() > MAX_TOKENS {
            tokens.truncate(MAX_TOKENS);
            let kept = tokens.iter().filter(|t| *t == PRICE_TOKEN).count();
            prices.truncate(kept);
        }
        let mentioned = best_price(role, &prices);
        let before = current[role.index()];
        let range = concession_range(role, scenario);

        let new_price = turn_price(raw.event.map(|e| (e.kind, e.price)), mentioned, before);
        let action = match raw.event {
            Some(ev) => ev.kind.action(),
            None => match mentioned {
                Some(p) if moves_toward_opponent(role, before, p) => Action::Concede,
                _ => Action::Negotiate,
            },
        };
        let ratio_class = match action {
            Action::Concede | Action::Offer => {
                let step = new_price.map_or(0.0, |p| (p - before).abs());
                Some(if range > 0.0 {
                    RatioClass::nearest(step / range)
                } else {
                    RatioClass::R0
                })
            }
            _ => None,
        };
        if let Some(p) = new_price {
            current[role.index()] = p;
        }
        let opponent_priced = turns
            .last()
            .is_some_and(|p| p.speaker != role && p.has_price());
        let intent = label(&tokens, raw.event.map(|e| e.kind), opponent_priced);
        turns.push(TurnRecord {
            speaker: role,
            text: raw.text.clone(),
            tokens,
            price_values: prices,
            event: raw.event,
            action,
            ratio_class,
            intent,
        });
    }
    Dialogue {
        scenario_id: file.scenario_id.clone(),
        turns,
        outcome: file.outcome.clone(),
    }
}

/// The speaker's standing price after a turn, if the turn sets one: an
/// offer's price, else the most conceding price mentioned.
fn turn_price(event: Option<(EventKind, Option<f64>)>, mentioned: Option<f64>, before: f64) -> Option<f64> {
    match event {
        Some((EventKind::Offer, price)) => Some(price.or(mentioned).unwrap_or(before)),
        _ => mentioned,
    }
}

/// Standing `[seller, buyer]` prices just before each turn, starting from
/// the initial prices.
pub fn standing_prices(dialogue: &Dialogue, scenario: &Scenario) -> Vec<[f64; 2]> {
    let mut current = [
        initial_price(Role::Seller, scenario),
        initial_price(Role::Buyer, scenario),
    ];
    let mut out = Vec::with_capacity(dialogue.turns.len());
    for t in &dialogue.turns {
        out.push(current);
        let i = t.speaker.index();
        if let Some(p) = turn_price(t.event.map(|e| (e.kind, e.price)), t.best_price(), current[i]) {
            current[i] = p;
        }
    }
    out
}

fn moves_toward_opponent(role: Role, before: f64, after: f64) -> bool {
    match role {
        Role::Seller => after < before,
        Role::Buyer => after > before,
    }
}

/// Mean agreed price across the item's human dialogues.
pub fn ground_truth_price(scenario_id: &str, dialogues: &[Dialogue]) -> Result<f64> {
    let agreed: Vec<f64> = dialogues
        .iter()
        .filter(|d| d.scenario_id == scenario_id && d.outcome.agreed)
        .filter_map(|d| d.outcome.price)
        .collect();
    if agreed.is_empty() {
        return Err(Error::NoAgreementData(scenario_id.to_string()));
    }
    Ok(agreed.iter().sum::<f64>() / agreed.len() as f64)
}

/// Ground truth for every scenario with at least one agreement.
pub fn ground_truth_prices(dialogues: &[Dialogue]) -> HashMap<String, f64> {
    let mut sums: HashMap<String, (f64, usize)> = HashMap::new();
    for d in dialogues {
        if let (true, Some(p)) = (d.outcome.agreed, d.outcome.price) {
            let e = sums.entry(d.scenario_id.clone()).or_default();
            e.0 += p;
            e.1 += 1;
        }
    }
    sums.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}

/// Per-class counts of action labels and ratio labels over all turns.
pub fn class_frequencies(dialogues: &[Dialogue]) -> ([usize; 6], [usize; 6]) {
    let mut actions = [0usize; 6];
    let mut ratios = [0usize; 6];
    for turn in dialogues.iter().flat_map(|d| &d.turns) {
        actions[turn.action.index()] += 1;
        if let Some(r) = turn.ratio_class {
            ratios[r.index()] += 1;
        }
    }
    (actions, ratios)
}
