//! Terminal chat against the agent, driving a [`Service`] in-process.
//!
//! Plain lines are utterances. Commands:
//!
//! ```text
//! /offer 450 [text]   propose a final price
//! /accept             accept the pending offer
//! /reject             reject the pending offer
//! /quit [text]        leave without a deal
//! /rate 5 4 3         human-likeness, language, pricing (after the end)
//! /help
//! ```

use std::io::{BufRead, Write};

use pricenego::corpus::{format_price, Role};

use crate::error::Result;
use crate::protocol::{MessageType, Rating, WireMessage};
use crate::service::Service;

#[derive(Clone, Debug, PartialEq)]
pub enum Command {
    Send(WireMessage),
    Rate(Rating),
    Help,
}

/// Parses one input line into a command addressed to `session_id`.
pub fn parse_command(line: &str, session_id: &str, seq: u64) -> std::result::Result<Command, String> {
    let line = line.trim();
    let Some(rest) = line.strip_prefix('/') else {
        return Ok(Command::Send(WireMessage::utterance(session_id, seq, line)));
    };
    let (name, args) = rest.split_once(char::is_whitespace).unwrap_or((rest, ""));
    let args = args.trim();
    let with_text = |m: WireMessage, text: &str| if text.is_empty() { m } else { m.with_text(text) };
    match name {
        "offer" => {
            let (amount, text) = args.split_once(char::is_whitespace).unwrap_or((args, ""));
            let price: f64 = amount
                .trim_start_matches('$')
                .replace(',', "")
                .parse()
                .map_err(|_| format!("not a price: {amount:?}"))?;
            Ok(Command::Send(with_text(WireMessage::offer(session_id, seq, price), text.trim())))
        }
        "accept" => Ok(Command::Send(with_text(WireMessage::new(MessageType::Accept, session_id, seq), args))),
        "reject" => Ok(Command::Send(with_text(WireMessage::new(MessageType::Reject, session_id, seq), args))),
        "quit" => Ok(Command::Send(with_text(WireMessage::new(MessageType::Quit, session_id, seq), args))),
        "rate" => {
            let scores: Vec<u8> = args
                .split_whitespace()
                .map(|s| s.parse().map_err(|_| format!("not a score: {s:?}")))
                .collect::<std::result::Result<_, _>>()?;
            let [human_likeness, language, pricing] = scores[..] else {
                return Err("rate needs three scores".into());
            };
            Ok(Command::Rate(Rating {
                human_likeness,
                language,
                pricing,
            }))
        }
        "help" => Ok(Command::Help),
        other => Err(format!("unknown command /{other}")),
    }
}

/// One line of terminal output for a server message.
pub fn render(m: &WireMessage) -> String {
    let who = m.role.map(Role::as_str).unwrap_or("agent");
    let text = m.text.as_deref().unwrap_or("");
    match m.kind {
        MessageType::Utterance => format!("{who}: {text}"),
        MessageType::Offer => format!("{who}: {text} [offer {}]", format_price(m.price.unwrap_or(0.0))),
        MessageType::Accept => format!("{who}: {text} [accept]"),
        MessageType::Reject => format!("{who}: {text} [reject]"),
        MessageType::Quit => format!("{who}: {text} [quit]"),
        MessageType::Outcome => match (m.agreed, m.price) {
            (Some(true), Some(p)) => format!("== deal at {} ==", format_price(p)),
            _ => format!("== no deal ({text}) =="),
        },
        MessageType::Error => format!("!! {text}"),
    }
}

/// What a chat run produced.
#[derive(Clone, Debug, PartialEq)]
pub struct ChatSummary {
    pub session_id: String,
    pub ended: bool,
    pub agreed: Option<bool>,
    pub price: Option<f64>,
    /// Server messages in the order shown.
    pub transcript: Vec<WireMessage>,
    pub rated: bool,
}

/// Runs one session to the end of `input`.
pub fn run_chat<R: BufRead, W: Write>(service: &Service, scenario_id: &str, human: Role, first_mover: Role, input: R, mut out: W) -> Result<ChatSummary> {
    let created = service.create_session(scenario_id, human, first_mover)?;
    let id = created.session_id;
    if let Some(s) = service.scenario(scenario_id) {
        writeln!(out, "{} ({}), listed at {}", s.title, s.category.as_str(), format_price(s.listing_price))?;
        writeln!(out, "{}", s.description)?;
    }
    writeln!(out, "session {id}: you are the {}. /help lists commands.", human.as_str())?;
    let mut summary = ChatSummary {
        session_id: id.clone(),
        ended: false,
        agreed: None,
        price: None,
        transcript: Vec::new(),
        rated: false,
    };
    let show = |messages: Vec<WireMessage>, out: &mut W, summary: &mut ChatSummary| -> Result<()> {
        for m in messages {
            writeln!(out, "{}", render(&m))?;
            if m.kind == MessageType::Outcome {
                summary.ended = true;
                summary.agreed = m.agreed;
                summary.price = m.price;
            }
            summary.transcript.push(m);
        }
        Ok(())
    };
    show(created.messages, &mut out, &mut summary)?;

    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let seq = service.last_seq(&id)? + 1;
        match parse_command(&line, &id, seq) {
            Ok(Command::Send(msg)) => {
                let replies = service.handle_message(&id, msg)?;
                show(replies, &mut out, &mut summary)?;
                if summary.ended {
                    writeln!(out, "rate the agent with /rate <human-likeness> <language> <pricing>")?;
                }
            }
            Ok(Command::Rate(r)) => match service.submit_rating(&id, r) {
                Ok(()) => {
                    summary.rated = true;
                    writeln!(out, "thanks, rating saved")?;
                }
                Err(e) => writeln!(out, "!! {e}")?,
            },
            Ok(Command::Help) => writeln!(out, "{}", HELP)?,
            Err(e) => writeln!(out, "!! {e}")?,
        }
    }
    Ok(summary)
}

const HELP: &str = "text: say something | /offer P [text] | /accept | /reject | /quit | /rate a b c";

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_commands() {
        assert_eq!(
            parse_command("hello there", "s", 4).unwrap(),
            Command::Send(WireMessage::utterance("s", 4, "hello there"))
        );
        assert_eq!(
            parse_command("/offer $1,250 final answer", "s", 2).unwrap(),
            Command::Send(WireMessage::offer("s", 2, 1250.0).with_text("final answer"))
        );
        assert_eq!(
            parse_command("/accept", "s", 3).unwrap(),
            Command::Send(WireMessage::new(MessageType::Accept, "s", 3))
        );
        assert_eq!(
            parse_command("/rate 5 4 3", "s", 1).unwrap(),
            Command::Rate(Rating {
                human_likeness: 5,
                language: 4,
                pricing: 3
            })
        );
        assert!(parse_command("/rate 5 4", "s", 1).is_err());
        assert!(parse_command("/offer lots", "s", 1).is_err());
        assert!(parse_command("/haggle", "s", 1).is_err());
    }

    #[test]
    fn renders_outcomes() {
        let mut o = WireMessage::new(MessageType::Outcome, "s", 9).with_text("agreed");
        o.agreed = Some(true);
        o.price = Some(450.0);
        assert_eq!(render(&o), "== deal at $450 ==");
        let offer = WireMessage::offer("s", 3, 99.5).with_text("last price").with_role(Role::Seller);
        assert_eq!(render(&offer), "seller: last price [offer $99.50]");
    }
}
