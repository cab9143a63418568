//! Negotiation state machine, the agent turn pipeline and self-play.

use std::fmt;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    best_price, tokenize_with_price_abstraction, DialogueFile, EndReason, Event, EventKind, Outcome, Role, Scenario,
    TurnRecordFile,
};
use crate::encoder::{assemble_state, DialogueState, PriceFrame};
use crate::error::{Error, Result};
use crate::generator::{apply_copy, AttentionMemory, DecodeMode};
use crate::learn::{argmax, sample_categorical, Graph};
use crate::model::{constant_rows, Negotiator, PreparedScenario, StateSnapshot};
use crate::policy::{adjust_price, initial_price, Action, ActionMask, RatioClass};

pub const DEFAULT_MAX_TURNS: usize = 20;

/// Reward for a negotiation that ends without agreement.
pub const NO_AGREEMENT_REWARD: f64 = -0.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "phase", rename_all = "snake_case")]
pub enum Phase {
    Open,
    OfferPending { by: Role, price: f64 },
    Agreed { price: f64 },
    Rejected,
    Quit,
    MaxTurns,
}

impl Phase {
    pub fn is_terminal(&self) -> bool {
        !matches!(self, Phase::Open | Phase::OfferPending { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Phase::Open => "open",
            Phase::OfferPending { .. } => "offer_pending",
            Phase::Agreed { .. } => "agreed",
            Phase::Rejected => "rejected",
            Phase::Quit => "quit",
            Phase::MaxTurns => "max_turns",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Actions `actor` may take in `phase`. Empty once the session has ended.
pub fn legal_actions(phase: &Phase, actor: Role) -> ActionMask {
    use Action::*;
    match phase {
        Phase::Open => ActionMask::only(&[Negotiate, Concede, Offer, Quit]),
        Phase::OfferPending { by, .. } if *by != actor => ActionMask::only(&[Accept, Reject, Quit]),
        Phase::OfferPending { .. } => ActionMask::only(&[Quit]),
        _ => ActionMask::only(&[]),
    }
}

/// One move submitted to [`NegotiationSession::step`].
#[derive(Clone, Debug, PartialEq)]
pub struct Move {
    pub action: Action,
    /// Concession ratio chosen by a policy; moves the actor's price.
    pub ratio: Option<RatioClass>,
    pub text: String,
    /// Explicit offer price, as sent by a human client.
    pub offer_price: Option<f64>,
}

impl Move {
    pub fn new(action: Action, text: impl Into<String>) -> Self {
        Self {
            action,
            ratio: None,
            text: text.into(),
            offer_price: None,
        }
    }

    pub fn with_ratio(mut self, ratio: RatioClass) -> Self {
        self.ratio = Some(ratio);
        self
    }

    pub fn with_offer_price(mut self, price: f64) -> Self {
        self.offer_price = Some(price);
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SessionTurn {
    pub speaker: Role,
    pub action: Action,
    pub ratio: Option<RatioClass>,
    pub text: String,
    /// Price-abstracted tokens of `text`.
    pub tokens: Vec<String>,
    pub prices: Vec<f64>,
    pub event: Option<Event>,
}

#[derive(Clone, Debug)]
pub struct NegotiationSession {
    scenario: Scenario,
    phase: Phase,
    to_move: Role,
    /// Last committed proposal per role, indexed by [`Role::index`].
    proposals: [f64; 2],
    /// Adjusted price not yet voiced in an utterance.
    tentative: [f64; 2],
    max_turns: usize,
    transcript: Vec<SessionTurn>,
    ended_by: Option<EndReason>,
}

impl NegotiationSession {
    pub fn new(scenario: Scenario, first_mover: Role, max_turns: usize) -> Result<Self> {
        if max_turns < 2 {
            return Err(Error::Invariant(format!("max_turns must be at least 2, got {max_turns}")));
        }
        let proposals = [
            initial_price(Role::Seller, &scenario),
            initial_price(Role::Buyer, &scenario),
        ];
        Ok(Self {
            scenario,
            phase: Phase::Open,
            to_move: first_mover,
            proposals,
            tentative: proposals,
            max_turns,
            transcript: Vec::new(),
            ended_by: None,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn to_move(&self) -> Role {
        self.to_move
    }

    pub fn proposal(&self, role: Role) -> f64 {
        self.proposals[role.index()]
    }

    pub fn max_turns(&self) -> usize {
        self.max_turns
    }

    pub fn transcript(&self) -> &[SessionTurn] {
        &self.transcript
    }

    pub fn is_over(&self) -> bool {
        self.phase.is_terminal()
    }

    pub fn legal_actions(&self, actor: Role) -> ActionMask {
        legal_actions(&self.phase, actor)
    }

    /// The price a `ratio` concession by `actor` would move to. Starts from
    /// the actor's tentative price pulled back inside the opponent's
    /// standing proposal, so committed prices stay monotone and never cross.
    pub fn adjusted_price(&self, actor: Role, ratio: RatioClass) -> f64 {
        let own = self.proposals[actor.index()];
        let opp = self.proposals[actor.opponent().index()];
        let tentative = self.tentative[actor.index()];
        let base = match actor {
            Role::Seller => tentative.max(opp).min(own),
            Role::Buyer => tentative.min(opp).max(own),
        };
        adjust_price(actor, base, ratio, &self.scenario, Some(opp))
    }

    /// The value a price slot in `actor`'s utterance stands for.
    pub fn slot_price(&self, actor: Role, action: Action, ratio: Option<RatioClass>) -> f64 {
        match (action, self.phase, ratio) {
            (Action::Accept, Phase::OfferPending { price, .. }, _) => price,
            (_, _, Some(r)) => self.adjusted_price(actor, r),
            _ => self.proposals[actor.index()],
        }
    }

    /// Classifies a free-text human turn: a mentioned price that moves
    /// toward the opponent is a concession.
    pub fn classify_utterance(&self, actor: Role, text: &str) -> Action {
        let (_, prices) = tokenize_with_price_abstraction(text, &self.scenario);
        let own = self.proposals[actor.index()];
        match (actor, best_price(actor, &prices)) {
            (Role::Seller, Some(p)) if p < own => Action::Concede,
            (Role::Buyer, Some(p)) if p > own => Action::Concede,
            _ => Action::Negotiate,
        }
    }

    pub fn step(&mut self, actor: Role, mv: Move) -> Result<&SessionTurn> {
        let illegal = |phase: &Phase| Error::IllegalAction {
            action: mv.action.to_string(),
            phase: phase.to_string(),
        };
        if self.phase.is_terminal() {
            return Err(illegal(&self.phase));
        }
        if actor != self.to_move {
            return Err(Error::WrongActor(actor.as_str().into()));
        }
        if !self.legal_actions(actor).allows(mv.action) {
            return Err(illegal(&self.phase));
        }
        if mv.ratio.is_some() && !mv.action.moves_price() {
            return Err(Error::RatioNotInvoked(mv.action.to_string()));
        }
        if let Some(p) = mv.offer_price {
            if mv.action != Action::Offer || !p.is_finite() || p <= 0.0 {
                return Err(Error::Invariant(format!("offer price {p} on {}", mv.action)));
            }
        }

        let (tokens, prices) = tokenize_with_price_abstraction(&mv.text, &self.scenario);
        let i = actor.index();
        let adjusted = mv.ratio.map(|r| self.adjusted_price(actor, r));
        if let Some(a) = adjusted {
            self.tentative[i] = a;
        }
        let proposing = matches!(mv.action, Action::Negotiate | Action::Concede | Action::Offer);
        let commit = match (adjusted, best_price(actor, &prices)) {
            (Some(a), Some(_)) => Some(a),
            (None, Some(m)) if proposing => Some(m),
            _ => None,
        };
        if let Some(p) = commit {
            self.proposals[i] = p;
            self.tentative[i] = p;
        }

        let event = match mv.action {
            Action::Offer => {
                let price = mv.offer_price.unwrap_or(self.proposals[i]);
                self.proposals[i] = price;
                self.tentative[i] = price;
                self.phase = Phase::OfferPending { by: actor, price };
                Some(Event {
                    kind: EventKind::Offer,
                    price: Some(price),
                })
            }
            Action::Accept => {
                let Phase::OfferPending { price, .. } = self.phase else {
                    unreachable!("mask admits accept only while an offer is pending")
                };
                self.phase = Phase::Agreed { price };
                self.ended_by = Some(EndReason::Accept);
                Some(Event {
                    kind: EventKind::Accept,
                    price: None,
                })
            }
            Action::Reject => {
                self.phase = Phase::Rejected;
                self.ended_by = Some(EndReason::Reject);
                Some(Event {
                    kind: EventKind::Reject,
                    price: None,
                })
            }
            Action::Quit => {
                self.phase = Phase::Quit;
                self.ended_by = Some(EndReason::Quit);
                Some(Event {
                    kind: EventKind::Quit,
                    price: None,
                })
            }
            Action::Negotiate | Action::Concede => None,
        };

        self.transcript.push(SessionTurn {
            speaker: actor,
            action: mv.action,
            ratio: mv.ratio,
            text: mv.text,
            tokens,
            prices,
            event,
        });
        self.to_move = actor.opponent();
        if !self.phase.is_terminal() && self.transcript.len() >= self.max_turns {
            self.phase = Phase::MaxTurns;
            self.ended_by = Some(EndReason::MaxTurns);
        }
        Ok(self.transcript.last().expect("just pushed"))
    }

    /// Ends a live session with a Quit by `actor`, whoever holds the turn.
    pub fn abandon(&mut self, actor: Role) -> Result<()> {
        if self.phase.is_terminal() {
            return Err(Error::IllegalAction {
                action: Action::Quit.to_string(),
                phase: self.phase.to_string(),
            });
        }
        self.to_move = actor;
        self.step(actor, Move::new(Action::Quit, "")).map(|_| ())
    }

    pub fn outcome(&self) -> Outcome {
        let price = match self.phase {
            Phase::Agreed { price } => Some(price),
            _ => None,
        };
        Outcome {
            agreed: price.is_some(),
            price,
            turns: Some(self.transcript.len()),
            ended_by: self.ended_by,
        }
    }

    pub fn to_dialogue_file(&self) -> DialogueFile {
        DialogueFile {
            scenario_id: self.scenario.id.clone(),
            turns: self
                .transcript
                .iter()
                .map(|t| TurnRecordFile {
                    speaker: t.speaker,
                    text: t.text.clone(),
                    event: t.event,
                })
                .collect(),
            outcome: self.outcome(),
        }
    }
}

/// `-|price - estimate| / listing` for an agreement, a fixed penalty otherwise.
pub fn reward(outcome: &Outcome, estimate: f64, listing: f64) -> f64 {
    match (outcome.agreed, outcome.price) {
        (true, Some(p)) => -(p - estimate).abs() / listing,
        _ => NO_AGREEMENT_REWARD,
    }
}

/// How the two policy heads pick among their probabilities.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PolicyMode {
    Greedy,
    Sample,
}

/// Everything an agent decided on one turn.
#[derive(Clone, Debug)]
pub struct Decision {
    pub role: Role,
    pub action: Action,
    pub ratio: Option<RatioClass>,
    pub text: String,
    pub state: DialogueState,
    pub mask: ActionMask,
}

impl Decision {
    pub fn to_move(&self) -> Move {
        Move {
            action: self.action,
            ratio: self.ratio,
            text: self.text.clone(),
            offer_price: None,
        }
    }
}

/// One role played by a model in one session. Keeps the turn-level
/// recurrent state between turns so each turn is encoded once.
#[derive(Clone, Debug)]
pub struct Agent<'a> {
    model: &'a Negotiator,
    prepared: &'a PreparedScenario,
    role: Role,
    seen: usize,
    history: StateSnapshot,
    history_out: Vec<f64>,
    last_outputs: Vec<Vec<f64>>,
}

impl<'a> Agent<'a> {
    pub fn new(model: &'a Negotiator, prepared: &'a PreparedScenario, role: Role) -> Self {
        let mut g = Graph::frozen(&model.store);
        let seed = g.constant_vec(prepared.seed.clone());
        let state = model.encoder.history_init(&mut g, seed);
        Self {
            model,
            prepared,
            role,
            seen: 0,
            history: StateSnapshot::capture(&g, &state),
            history_out: prepared.seed.clone(),
            last_outputs: Vec::new(),
        }
    }

    pub fn role(&self) -> Role {
        self.role
    }

    /// Current history vector (after every transcript turn seen so far).
    pub fn history(&self) -> &[f64] {
        &self.history_out
    }

    fn catch_up(&mut self, turns: &[SessionTurn]) {
        let model = self.model;
        for turn in &turns[self.seen..] {
            let mut g = Graph::frozen(&model.store);
            let state = self.history.restore(&mut g);
            let ids = model.turn_ids(turn.speaker, turn.action, &turn.tokens);
            let enc = model.encoder.encode_turn(&mut g, &ids);
            let next = model.encoder.step_history(&mut g, &state, enc.vector);
            self.history_out = g.data(next.last().expect("non-empty").h).to_vec();
            self.history = StateSnapshot::capture(&g, &next);
            self.last_outputs = enc.outputs.iter().map(|v| g.data(*v).to_vec()).collect();
        }
        self.seen = turns.len();
    }

    /// Dialogue state from this agent's point of view.
    pub fn observe(&mut self, session: &NegotiationSession) -> DialogueState {
        self.catch_up(session.transcript());
        let frame = PriceFrame::for_role(self.role, session.scenario());
        assemble_state(
            self.history_out.clone(),
            session.proposal(self.role),
            session.proposal(self.role.opponent()),
            self.prepared.estimate,
            &frame,
        )
    }

    /// Encode, act, adjust, decode and fill the price slot.
    pub fn act(&mut self, session: &NegotiationSession, policy: PolicyMode, text: DecodeMode, rng: &mut ChaCha8Rng) -> Result<Decision> {
        if session.to_move() != self.role {
            return Err(Error::WrongActor(self.role.as_str().into()));
        }
        let model = self.model;
        let state = self.observe(session);
        let mask = session.legal_actions(self.role);
        let pick = |probs: &[f64], rng: &mut ChaCha8Rng| match policy {
            PolicyMode::Greedy => argmax(probs),
            PolicyMode::Sample => sample_categorical(probs, rng),
        };
        let probs = model.actions.predict_action(&model.store, &state, &mask)?;
        let action = Action::from_index(pick(&probs, rng)).expect("six actions");
        let ratio = if action.moves_price() {
            let probs = model.prices.predict_ratio(&model.store, &state, action)?;
            Some(RatioClass::from_index(pick(&probs, rng)).expect("six ratios"))
        } else {
            None
        };
        let price = session.slot_price(self.role, action, ratio);

        let mut g = Graph::frozen(&model.store);
        let init = self.history.restore(&mut g);
        let mut rows = constant_rows(&mut g, &self.prepared.listing_rows);
        rows.extend(constant_rows(&mut g, &self.last_outputs));
        let memory = AttentionMemory::new(&mut g, &rows, model.config.dim);
        let start = model.vocab.start_id(self.role, action);
        let ids = model
            .decoder
            .decode(&mut g, init, &memory, start, &model.vocab, text, rng, model.config.max_tokens, true);
        let tokens: Vec<String> = ids.iter().map(|i| model.vocab.token(*i).to_string()).collect();
        let text = apply_copy(&tokens, Some(price))?;
        Ok(Decision {
            role: self.role,
            action,
            ratio,
            text,
            state,
            mask,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SelfPlayConfig {
    pub max_turns: usize,
    pub first_mover: Role,
    pub policy: PolicyMode,
    pub text: DecodeMode,
}

impl Default for SelfPlayConfig {
    fn default() -> Self {
        Self {
            max_turns: DEFAULT_MAX_TURNS,
            first_mover: Role::Buyer,
            policy: PolicyMode::Greedy,
            text: DecodeMode::Greedy,
        }
    }
}

/// A model together with its view of the scenario being played.
#[derive(Clone, Copy, Debug)]
pub struct Participant<'a> {
    pub model: &'a Negotiator,
    pub prepared: &'a PreparedScenario,
}

#[derive(Clone, Debug)]
pub struct Episode {
    pub session: NegotiationSession,
    pub decisions: Vec<Decision>,
}

impl Episode {
    pub fn outcome(&self) -> Outcome {
        self.session.outcome()
    }
}

/// Plays one negotiation between `seller` and `buyer` until it ends or
/// hits `max_turns`.
pub fn selfplay(seller: Participant, buyer: Participant, config: SelfPlayConfig, rng: &mut ChaCha8Rng) -> Result<Episode> {
    let mut session = NegotiationSession::new(seller.prepared.scenario.clone(), config.first_mover, config.max_turns)?;
    let mut agents = [
        Agent::new(seller.model, seller.prepared, Role::Seller),
        Agent::new(buyer.model, buyer.prepared, Role::Buyer),
    ];
    let mut decisions = Vec::new();
    while !session.is_over() {
        let role = session.to_move();
        let decision = agents[role.index()].act(&session, config.policy, config.text, rng)?;
        session.step(role, decision.to_move())?;
        decisions.push(decision);
    }
    Ok(Episode { session, decisions })
}
