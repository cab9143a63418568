//! Wire schema shared by the server, the terminal client and any browser
//! client. One JSON object per line.

use serde::{Deserialize, Serialize};

use pricenego::corpus::Role;
use pricenego::policy::Action;
use pricenego::session::{legal_actions, Phase};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageType {
    Utterance,
    Offer,
    Accept,
    Reject,
    Quit,
    Outcome,
    Error,
}

impl MessageType {
    pub const CLIENT: [MessageType; 5] = [
        MessageType::Utterance,
        MessageType::Offer,
        MessageType::Accept,
        MessageType::Reject,
        MessageType::Quit,
    ];

    /// The wire type a session action travels as. Negotiate and concede
    /// are both plain utterances on the wire.
    pub fn for_action(action: Action) -> Self {
        match action {
            Action::Negotiate | Action::Concede => MessageType::Utterance,
            Action::Offer => MessageType::Offer,
            Action::Accept => MessageType::Accept,
            Action::Reject => MessageType::Reject,
            Action::Quit => MessageType::Quit,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireMessage {
    #[serde(rename = "type")]
    pub kind: MessageType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub price: Option<f64>,
    /// Set on `outcome` only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agreed: Option<bool>,
    /// Speaker of a move; absent on `outcome` and `error`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<Role>,
    pub session_id: String,
    pub seq: u64,
}

impl WireMessage {
    pub fn new(kind: MessageType, session_id: impl Into<String>, seq: u64) -> Self {
        Self {
            kind,
            text: None,
            price: None,
            agreed: None,
            role: None,
            session_id: session_id.into(),
            seq,
        }
    }

    pub fn utterance(session_id: impl Into<String>, seq: u64, text: impl Into<String>) -> Self {
        Self::new(MessageType::Utterance, session_id, seq).with_text(text)
    }

    pub fn offer(session_id: impl Into<String>, seq: u64, price: f64) -> Self {
        Self::new(MessageType::Offer, session_id, seq).with_price(price)
    }

    pub fn with_text(mut self, text: impl Into<String>) -> Self {
        self.text = Some(text.into());
        self
    }

    pub fn with_price(mut self, price: f64) -> Self {
        self.price = Some(price);
        self
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.role = Some(role);
        self
    }

    /// Shape rules every message must satisfy: offers carry a positive
    /// price, outcomes carry `agreed` (and a price when agreed),
    /// utterances carry text.
    pub fn check_shape(&self) -> Result<(), String> {
        match self.kind {
            MessageType::Offer => match self.price {
                Some(p) if p.is_finite() && p > 0.0 => Ok(()),
                Some(p) => Err(format!("offer price must be positive, got {p}")),
                None => Err("offer needs a price".into()),
            },
            MessageType::Outcome => match (self.agreed, self.price) {
                (None, _) => Err("outcome needs agreed".into()),
                (Some(true), None) => Err("agreed outcome needs a price".into()),
                _ => Ok(()),
            },
            MessageType::Utterance if self.text.as_deref().is_none_or(|t| t.trim().is_empty()) => {
                Err("utterance needs text".into())
            }
            _ => Ok(()),
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("wire messages serialize")
    }
}

/// Post-chat questionnaire, each score in 1..=5.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rating {
    pub human_likeness: u8,
    pub language: u8,
    pub pricing: u8,
}

impl Rating {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("human_likeness", self.human_likeness),
            ("language", self.language),
            ("pricing", self.pricing),
        ] {
            if !(1..=5).contains(&v) {
                return Err(format!("{name} must be in 1..=5, got {v}"));
            }
        }
        Ok(())
    }
}

/// Message types the human may send in `phase`.
pub fn legal_messages(phase: &Phase, human: Role) -> Vec<MessageType> {
    let mut out: Vec<MessageType> = legal_actions(phase, human)
        .actions()
        .into_iter()
        .map(MessageType::for_action)
        .collect();
    out.dedup();
    out
}

/// One row of the phase table shared with clients.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseRow {
    pub phase: String,
    /// For `offer_pending`: whether the viewer or the other side offered.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offer_by: Option<String>,
    pub legal: Vec<MessageType>,
}

/// Every distinguishable phase from one participant's point of view.
pub fn phase_table() -> Vec<PhaseRow> {
    let me = Role::Buyer;
    let rows = [
        (Phase::Open, None),
        (Phase::OfferPending { by: me.opponent(), price: 1.0 }, Some("other")),
        (Phase::OfferPending { by: me, price: 1.0 }, Some("self")),
        (Phase::Agreed { price: 1.0 }, None),
        (Phase::Rejected, None),
        (Phase::Quit, None),
        (Phase::MaxTurns, None),
    ];
    rows.into_iter()
        .map(|(phase, by)| PhaseRow {
            phase: phase.name().to_string(),
            offer_by: by.map(str::to_string),
            legal: legal_messages(&phase, me),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn serializes_with_type_tag_and_omits_empty_fields() {
        let m = WireMessage::offer("abc", 3, 450.0).with_text("450 and it is yours");
        assert_eq!(
            m.to_line(),
            r#"{"type":"offer","text":"450 and it is yours","price":450.0,"session_id":"abc","seq":3}"#
        );
        let back: WireMessage = serde_json::from_str(&m.to_line()).unwrap();
        assert_eq!(back, m);
        let q: WireMessage = serde_json::from_str(r#"{"type":"quit","session_id":"x","seq":1}"#).unwrap();
        assert_eq!(q.kind, MessageType::Quit);
        assert!(serde_json::from_str::<WireMessage>(r#"{"type":"haggle","session_id":"x","seq":1}"#).is_err());
    }

    #[test]
    fn shape_rules() {
        assert!(WireMessage::new(MessageType::Offer, "s", 1).check_shape().is_err());
        assert!(WireMessage::offer("s", 1, -3.0).check_shape().is_err());
        assert!(WireMessage::offer("s", 1, 3.0).check_shape().is_ok());
        assert!(WireMessage::utterance("s", 1, "  ").check_shape().is_err());
        let mut o = WireMessage::new(MessageType::Outcome, "s", 1);
        assert!(o.check_shape().is_err());
        o.agreed = Some(true);
        assert!(o.check_shape().is_err());
        o.price = Some(10.0);
        assert!(o.check_shape().is_ok());
        o.agreed = Some(false);
        o.price = None;
        assert!(o.check_shape().is_ok());
    }

    #[test]
    fn rating_bounds() {
        let ok = Rating {
            human_likeness: 5,
            language: 1,
            pricing: 3,
        };
        assert!(ok.validate().is_ok());
        assert!(Rating { pricing: 6, ..ok }.validate().is_err());
        assert!(Rating { language: 0, ..ok }.validate().is_err());
    }

    #[test]
    fn phase_table_follows_action_masks() {
        use MessageType::*;
        let t = phase_table();
        assert_eq!(t.len(), 7);
        assert_eq!(t[0].legal, [Utterance, Offer, Quit]);
        assert_eq!(t[1].legal, [Accept, Reject, Quit]);
        assert_eq!(t[2].legal, [Quit]);
        assert!(t[3..].iter().all(|r| r.legal.is_empty()));
    }
}
