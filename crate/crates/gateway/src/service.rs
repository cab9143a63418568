//! Live negotiation sessions between a human and the agent.
//!
//! Every session has one sequence counter shared by both directions: a
//! client message must carry a `seq` above the last one seen, and each
//! reply takes the next free number.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use pricenego::corpus::{Role, Scenario};
use pricenego::generator::DecodeMode;
use pricenego::model::{Negotiator, PreparedScenario};
use pricenego::policy::Action;
use pricenego::session::{Agent, Move, NegotiationSession, Phase, PolicyMode, DEFAULT_MAX_TURNS};
use pricenego::valuation::Catalog;

use crate::error::{GatewayError, Result};
use crate::protocol::{legal_messages, MessageType, Rating, WireMessage};
use crate::store::{Direction, LogRecord, SessionLog};

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    pub max_turns: usize,
    pub idle_timeout: Duration,
    pub seed: u64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            max_turns: DEFAULT_MAX_TURNS,
            idle_timeout: Duration::from_secs(300),
            seed: 0,
        }
    }
}

/// What `POST /sessions` returns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Created {
    pub session_id: String,
    pub human_role: Role,
    pub agent_role: Role,
    /// The agent's opening messages when it moves first.
    pub messages: Vec<WireMessage>,
}

/// Scenario fields shown to a human participant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioView {
    pub id: String,
    pub title: String,
    pub description: String,
    pub listing_price: f64,
    pub category: String,
    pub image_url: Option<String>,
}

impl From<&Scenario> for ScenarioView {
    fn from(s: &Scenario) -> Self {
        Self {
            id: s.id.clone(),
            title: s.title.clone(),
            description: s.description.clone(),
            listing_price: s.listing_price,
            category: s.category.as_str().to_string(),
            image_url: s.image_url.clone(),
        }
    }
}

struct Live {
    scenario_id: String,
    human: Role,
    session: NegotiationSession,
    last_seq: u64,
    outbox: Vec<WireMessage>,
    touched: Instant,
    rng: ChaCha8Rng,
}

pub struct Service {
    model: Arc<Negotiator>,
    scenarios: BTreeMap<String, PreparedScenario>,
    sessions: Mutex<HashMap<String, Arc<Mutex<Live>>>>,
    log: Mutex<SessionLog>,
    next_id: AtomicU64,
    config: ServiceConfig,
}

impl Service {
    /// Prepares every scenario against `catalog` once; `first_id` is where
    /// session numbering starts (past any ids already in the log).
    pub fn new(model: Arc<Negotiator>, scenarios: &[Scenario], catalog: &Catalog, log: SessionLog, first_id: u64, config: ServiceConfig) -> Result<Self> {
        let mut prepared = BTreeMap::new();
        for s in scenarios {
            prepared.insert(s.id.clone(), model.prepare(s, catalog)?);
        }
        Ok(Self {
            model,
            scenarios: prepared,
            sessions: Mutex::new(HashMap::new()),
            log: Mutex::new(log),
            next_id: AtomicU64::new(first_id),
            config,
        })
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn scenario(&self, id: &str) -> Option<&Scenario> {
        self.scenarios.get(id).map(|p| &p.scenario)
    }

    pub fn scenario_ids(&self) -> impl Iterator<Item = &str> {
        self.scenarios.keys().map(String::as_str)
    }

    fn live(&self, id: &str) -> Result<Arc<Mutex<Live>>> {
        self.sessions
            .lock()
            .expect("session map")
            .get(id)
            .cloned()
            .ok_or_else(|| GatewayError::UnknownSession(id.to_string()))
    }

    fn append(&self, record: LogRecord) -> Result<()> {
        self.log.lock().expect("log").append(&record)
    }

    pub fn create_session(&self, scenario_id: &str, human_role: Role, first_mover: Role) -> Result<Created> {
        let prepared = self
            .scenarios
            .get(scenario_id)
            .ok_or_else(|| GatewayError::UnknownScenario(scenario_id.to_string()))?;
        let n = self.next_id.fetch_add(1, Ordering::SeqCst);
        let id = format!("{n:06}");
        let session = NegotiationSession::new(prepared.scenario.clone(), first_mover, self.config.max_turns)?;
        let mut live = Live {
            scenario_id: scenario_id.to_string(),
            human: human_role,
            session,
            last_seq: 0,
            outbox: Vec::new(),
            touched: Instant::now(),
            rng: ChaCha8Rng::seed_from_u64(self.config.seed ^ n),
        };
        self.append(LogRecord::Created {
            session_id: id.clone(),
            scenario_id: scenario_id.to_string(),
            human_role,
            first_mover,
            max_turns: self.config.max_turns,
        })?;
        let messages = if first_mover != human_role {
            self.agent_turn(&id, &mut live, prepared)?
        } else {
            Vec::new()
        };
        self.sessions
            .lock()
            .expect("session map")
            .insert(id.clone(), Arc::new(Mutex::new(live)));
        Ok(Created {
            session_id: id,
            human_role,
            agent_role: human_role.opponent(),
            messages,
        })
    }

    /// Applies one client message and returns every reply, in seq order.
    /// Messages that are malformed or illegal in the current phase get an
    /// `error` reply and leave the session as it was.
    pub fn handle_message(&self, session_id: &str, msg: WireMessage) -> Result<Vec<WireMessage>> {
        let live = self.live(session_id)?;
        let mut live = live.lock().expect("session");
        let live = &mut *live;
        live.touched = Instant::now();

        if msg.seq <= live.last_seq {
            // The stale message itself stays out of the log so logged seqs
            // keep increasing.
            let reason = format!("seq must exceed {}, got {}", live.last_seq, msg.seq);
            let err = self.emit(session_id, live, MessageType::Error, |m| m.with_text(reason))?;
            return Ok(vec![err]);
        }
        live.last_seq = msg.seq;
        self.append(LogRecord::Message {
            session_id: session_id.to_string(),
            direction: Direction::In,
            message: msg.clone(),
        })?;

        if let Some(reason) = self.refusal(session_id, live, &msg) {
            let err = self.emit(session_id, live, MessageType::Error, |m| m.with_text(reason))?;
            return Ok(vec![err]);
        }

        let human = live.human;
        let text = msg.text.clone().unwrap_or_default();
        let mv = match msg.kind {
            MessageType::Utterance => Move::new(live.session.classify_utterance(human, &text), text),
            MessageType::Offer => Move::new(Action::Offer, text).with_offer_price(msg.price.expect("shape checked")),
            MessageType::Accept => Move::new(Action::Accept, text),
            MessageType::Reject => Move::new(Action::Reject, text),
            MessageType::Quit => Move::new(Action::Quit, text),
            MessageType::Outcome | MessageType::Error => unreachable!("refused above"),
        };
        self.step(session_id, live, human, mv)?;

        let mut out = Vec::new();
        if live.session.is_over() {
            out.push(self.emit_outcome(session_id, live)?);
        } else {
            let prepared = &self.scenarios[&live.scenario_id];
            out.extend(self.agent_turn(session_id, live, prepared)?);
        }
        Ok(out)
    }

    /// An `error` for input that never parsed as a message.
    pub fn error_reply(&self, session_id: &str, reason: impl Into<String>) -> Result<WireMessage> {
        let live = self.live(session_id)?;
        let mut live = live.lock().expect("session");
        let reason = reason.into();
        self.emit(session_id, &mut live, MessageType::Error, |m| m.with_text(reason))
    }

    fn refusal(&self, session_id: &str, live: &Live, msg: &WireMessage) -> Option<String> {
        if msg.session_id != session_id {
            return Some(format!("message addressed to session {}", msg.session_id));
        }
        if !MessageType::CLIENT.contains(&msg.kind) {
            return Some(format!("clients may not send {:?}", msg.kind));
        }
        if let Err(e) = msg.check_shape() {
            return Some(e);
        }
        let phase = live.session.phase();
        if phase.is_terminal() {
            return Some(format!("session has ended ({phase})"));
        }
        if live.session.to_move() != live.human {
            return Some("not your turn".into());
        }
        if !legal_messages(&phase, live.human).contains(&msg.kind) {
            return Some(format!("{:?} is not allowed while {phase}", msg.kind).to_lowercase());
        }
        None
    }

    fn step(&self, session_id: &str, live: &mut Live, speaker: Role, mv: Move) -> Result<()> {
        let record = LogRecord::Turn {
            session_id: session_id.to_string(),
            speaker,
            action: mv.action,
            ratio: mv.ratio,
            text: mv.text.clone(),
            offer_price: mv.offer_price,
        };
        live.session.step(speaker, mv)?;
        self.append(record)
    }

    fn emit(&self, session_id: &str, live: &mut Live, kind: MessageType, build: impl FnOnce(WireMessage) -> WireMessage) -> Result<WireMessage> {
        live.last_seq += 1;
        let msg = build(WireMessage::new(kind, session_id, live.last_seq));
        self.append(LogRecord::Message {
            session_id: session_id.to_string(),
            direction: Direction::Out,
            message: msg.clone(),
        })?;
        live.outbox.push(msg.clone());
        Ok(msg)
    }

    fn emit_outcome(&self, session_id: &str, live: &mut Live) -> Result<WireMessage> {
        let o = live.session.outcome();
        let phase = live.session.phase();
        self.emit(session_id, live, MessageType::Outcome, |mut m| {
            m.agreed = Some(o.agreed);
            m.price = o.price;
            m.with_text(phase.name())
        })
    }

    /// One greedy agent turn, then the outcome if the session ended.
    fn agent_turn(&self, session_id: &str, live: &mut Live, prepared: &PreparedScenario) -> Result<Vec<WireMessage>> {
        let role = live.human.opponent();
        let mut agent = Agent::new(&self.model, prepared, role);
        let d = agent.act(&live.session, PolicyMode::Greedy, DecodeMode::Greedy, &mut live.rng)?;
        self.step(session_id, live, role, d.to_move())?;
        let kind = MessageType::for_action(d.action);
        let price = match (d.action, live.session.phase()) {
            (Action::Offer, Phase::OfferPending { price, .. }) => Some(price),
            _ => None,
        };
        let mut out = vec![self.emit(session_id, live, kind, |m| {
            let m = m.with_text(d.text.clone()).with_role(role);
            match price {
                Some(p) => m.with_price(p),
                None => m,
            }
        })?];
        if live.session.is_over() {
            out.push(self.emit_outcome(session_id, live)?);
        }
        Ok(out)
    }

    /// Stores a rating for an ended session; a later rating replaces it.
    pub fn submit_rating(&self, session_id: &str, rating: Rating) -> Result<()> {
        rating.validate().map_err(GatewayError::InvalidRating)?;
        let live = self.live(session_id)?;
        let live = live.lock().expect("session");
        if !live.session.is_over() {
            return Err(GatewayError::NotTerminal(session_id.to_string()));
        }
        self.append(LogRecord::Rating {
            session_id: session_id.to_string(),
            rating,
        })
    }

    /// Ends every live session untouched since `now - idle_timeout` as a
    /// quit by whoever holds the turn. Returns the ids expired.
    pub fn expire_idle(&self, now: Instant) -> Result<Vec<String>> {
        let all: Vec<(String, Arc<Mutex<Live>>)> = {
            let map = self.sessions.lock().expect("session map");
            map.iter().map(|(k, v)| (k.clone(), v.clone())).collect()
        };
        let mut expired = Vec::new();
        for (id, live) in all {
            let mut live = live.lock().expect("session");
            let live = &mut *live;
            if live.session.is_over() || now.saturating_duration_since(live.touched) < self.config.idle_timeout {
                continue;
            }
            let idle = live.session.to_move();
            live.session.abandon(idle)?;
            self.append(LogRecord::Turn {
                session_id: id.clone(),
                speaker: idle,
                action: Action::Quit,
                ratio: None,
                text: String::new(),
                offer_price: None,
            })?;
            self.emit(&id, live, MessageType::Quit, |m| m.with_text("idle timeout").with_role(idle))?;
            self.emit_outcome(&id, live)?;
            expired.push(id);
        }
        expired.sort();
        Ok(expired)
    }

    /// Server messages with `seq` above `after`.
    pub fn outgoing_since(&self, session_id: &str, after: u64) -> Result<Vec<WireMessage>> {
        let live = self.live(session_id)?;
        let live = live.lock().expect("session");
        Ok(live.outbox.iter().filter(|m| m.seq > after).cloned().collect())
    }

    pub fn phase(&self, session_id: &str) -> Result<Phase> {
        Ok(self.live(session_id)?.lock().expect("session").session.phase())
    }

    /// Highest seq used so far; the next client message must exceed it.
    pub fn last_seq(&self, session_id: &str) -> Result<u64> {
        Ok(self.live(session_id)?.lock().expect("session").last_seq)
    }

    /// Standing proposal of `role`.
    pub fn proposal(&self, session_id: &str, role: Role) -> Result<f64> {
        Ok(self.live(session_id)?.lock().expect("session").session.proposal(role))
    }

    pub fn human_role(&self, session_id: &str) -> Result<Role> {
        Ok(self.live(session_id)?.lock().expect("session").human)
    }
}
