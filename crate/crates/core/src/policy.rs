//! Decision heads and price arithmetic.
//!
//! The action predictor picks one of six dialogue acts from the dialogue
//! state. When it chooses to concede or offer, the price adjuster picks how
//! far to move along the role's concession range, and [`adjust_price`]
//! turns that into a concrete price.

use std::fmt;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::corpus::{Role, Scenario};
use crate::encoder::DialogueState;
use crate::error::{Error, Result};
use crate::learn::{Graph, Mlp, ParamStore, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Negotiate,
    Concede,
    Offer,
    Accept,
    Reject,
    Quit,
}

impl Action {
    pub const ALL: [Action; 6] = [
        Action::Negotiate,
        Action::Concede,
        Action::Offer,
        Action::Accept,
        Action::Reject,
        Action::Quit,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::Negotiate => "negotiate",
            Action::Concede => "concede",
            Action::Offer => "offer",
            Action::Accept => "accept",
            Action::Reject => "reject",
            Action::Quit => "quit",
        }
    }

    /// Whether the price adjuster runs for this action.
    pub fn moves_price(self) -> bool {
        matches!(self, Action::Concede | Action::Offer)
    }

    pub fn one_hot(self) -> Vec<f64> {
        let mut v = vec![0.0; 6];
        v[self.index()] = 1.0;
        v
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Action {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Action::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Invariant(format!("unknown action {s}")))
    }
}

/// Fraction of the concession range moved in one step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RatioClass {
    R0,
    R20,
    R40,
    R60,
    R80,
    R100,
}

impl RatioClass {
    pub const ALL: [RatioClass; 6] = [
        RatioClass::R0,
        RatioClass::R20,
        RatioClass::R40,
        RatioClass::R60,
        RatioClass::R80,
        RatioClass::R100,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<RatioClass> {
        Self::ALL.get(i).copied()
    }

    pub fn value(self) -> f64 {
        self.index() as f64 * 0.2
    }

    /// Closest grid point to `step` (clamped to [0, 1]); ties go to the smaller class.
    pub fn nearest(step: f64) -> RatioClass {
        let x = if step.is_nan() { 0.0 } else { step.clamp(0.0, 1.0) } / 0.2;
        let lo = x.floor();
        let idx = if x - lo > 0.5 + 1e-9 { lo + 1.0 } else { lo };
        Self::from_index((idx as usize).min(5)).expect("index in range")
    }
}

/// Legal actions for the current phase.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ActionMask([bool; 6]);

impl ActionMask {
    pub fn all() -> Self {
        Self([true; 6])
    }

    pub fn only(actions: &[Action]) -> Self {
        let mut m = [false; 6];
        for a in actions {
            m[a.index()] = true;
        }
        Self(m)
    }

    pub fn allows(&self, action: Action) -> bool {
        self.0[action.index()]
    }

    pub fn is_empty(&self) -> bool {
        !self.0.iter().any(|b| *b)
    }

    pub fn actions(&self) -> Vec<Action> {
        Action::ALL.into_iter().filter(|a| self.allows(*a)).collect()
    }

    /// `0` for legal entries, `-inf` for masked ones.
    pub fn additive(&self) -> Vec<f64> {
        self.0.iter().map(|b| if *b { 0.0 } else { f64::NEG_INFINITY }).collect()
    }
}

/// Buyer: listing minus target. Seller: 30% of listing.
pub fn concession_range(role: Role, scenario: &Scenario) -> f64 {
    match role {
        Role::Buyer => scenario.listing_price - scenario.buyer_target,
        Role::Seller => 0.3 * scenario.listing_price,
    }
}

/// Seller opens at the listing price, buyer at its target.
pub fn initial_price(role: Role, scenario: &Scenario) -> f64 {
    match role {
        Role::Seller => scenario.listing_price,
        Role::Buyer => scenario.buyer_target,
    }
}

pub fn round_cents(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Moves `current` toward the opponent by `ratio` of the concession range,
/// rounded to cents. The result never crosses the opponent's standing
/// proposal and never moves back past `current`.
pub fn adjust_price(role: Role, current: f64, ratio: RatioClass, scenario: &Scenario, opponent: Option<f64>) -> f64 {
    let step = ratio.value() * concession_range(role, scenario);
    match role {
        Role::Seller => {
            let mut p = round_cents(current - step);
            if let Some(o) = opponent {
                p = p.max(o);
            }
            p.min(current)
        }
        Role::Buyer => {
            let mut p = round_cents(current + step);
            if let Some(o) = opponent {
                p = p.min(o);
            }
            p.max(current)
        }
    }
}

/// 4-layer perceptron: dialogue state to six action logits.
#[derive(Clone, Debug)]
pub struct ActionPredictor {
    pub mlp: Mlp,
}

/// 4-layer perceptron: dialogue state plus action one-hot to six ratio logits.
#[derive(Clone, Debug)]
pub struct PriceAdjuster {
    pub mlp: Mlp,
}

const HEAD_DEPTH: usize = 4;

impl ActionPredictor {
    pub const PREFIX: &'static str = "ap";

    pub fn new(store: &mut ParamStore, config: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let h = config.head_hidden;
        Self {
            mlp: Mlp::new(store, Self::PREFIX, &[config.state_dim(), h, h, h, 6], rng),
        }
    }

    pub fn lookup(store: &ParamStore) -> Result<Self> {
        Ok(Self {
            mlp: Mlp::lookup(store, Self::PREFIX, HEAD_DEPTH)?,
        })
    }

    pub fn logits(&self, g: &mut Graph, state: Var) -> Var {
        self.mlp.forward(g, state)
    }

    /// Log-probabilities with illegal actions at `-inf`.
    pub fn masked_log_probs(&self, g: &mut Graph, state: Var, mask: &ActionMask) -> Result<Var> {
        if mask.is_empty() {
            return Err(Error::EmptyMask);
        }
        let logits = self.logits(g, state);
        let m = g.constant_vec(mask.additive());
        let masked = g.add(logits, m);
        Ok(g.log_softmax(masked))
    }

    pub fn predict_action(&self, store: &ParamStore, state: &DialogueState, mask: &ActionMask) -> Result<Vec<f64>> {
        let mut g = Graph::frozen(store);
        let s = g.constant_vec(state.to_vec());
        let lp = self.masked_log_probs(&mut g, s, mask)?;
        Ok(g.data(lp).iter().map(|v| v.exp()).collect())
    }
}

impl PriceAdjuster {
    pub const PREFIX: &'static str = "pa";

    pub fn new(store: &mut ParamStore, config: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let h = config.head_hidden;
        Self {
            mlp: Mlp::new(store, Self::PREFIX, &[config.state_dim() + 6, h, h, h, 6], rng),
        }
    }

    pub fn lookup(store: &ParamStore) -> Result<Self> {
        Ok(Self {
            mlp: Mlp::lookup(store, Self::PREFIX, HEAD_DEPTH)?,
        })
    }

    pub fn logits(&self, g: &mut Graph, state: Var, action: Action) -> Result<Var> {
        if !action.moves_price() {
            return Err(Error::RatioNotInvoked(action.to_string()));
        }
        let a = g.constant_vec(action.one_hot());
        let x = g.concat(&[state, a]);
        Ok(self.mlp.forward(g, x))
    }

    pub fn log_probs(&self, g: &mut Graph, state: Var, action: Action) -> Result<Var> {
        let logits = self.logits(g, state, action)?;
        Ok(g.log_softmax(logits))
    }

    pub fn predict_ratio(&self, store: &ParamStore, state: &DialogueState, action: Action) -> Result<Vec<f64>> {
        let mut g = Graph::frozen(store);
        let s = g.constant_vec(state.to_vec());
        let lp = self.log_probs(&mut g, s, action)?;
        Ok(g.data(lp).iter().map(|v| v.exp()).collect())
    }
}
