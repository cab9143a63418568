//! Language and pricing metrics over generated and human dialogues.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{best_price, Dialogue, EventKind, Role, Scenario};
use crate::error::{Error, Result};
use crate::policy::initial_price;

pub const MAX_ORDER: usize = 4;

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus BLEU with clipped n-gram precisions up to `max_order` and a
/// brevity penalty against the closest reference length. Each hypothesis
/// may have several references. With `smoothing`, orders above one get
/// add-one counts whenever some precision would be zero.
pub fn bleu(hypotheses: &[Vec<String>], references: &[Vec<Vec<String>>], max_order: usize, smoothing: bool) -> Result<f64> {
    if hypotheses.is_empty() || hypotheses.len() != references.len() {
        return Err(Error::Empty("aligned bleu corpus"));
    }
    if references.iter().any(|r| r.is_empty()) {
        return Err(Error::Empty("references for a hypothesis"));
    }
    let mut matches = vec![0usize; max_order];
    let mut totals = vec![0usize; max_order];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (hyp, refs) in hypotheses.iter().zip(references) {
        hyp_len += hyp.len();
        ref_len += refs
            .iter()
            .map(|r| r.len())
            .min_by_key(|len| (len.abs_diff(hyp.len()), *len))
            .expect("non-empty");
        for n in 1..=max_order {
            let mut max_ref: HashMap<&[String], usize> = HashMap::new();
            for r in refs {
                for (g, c) in ngram_counts(r, n) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(c);
                }
            }
            for (g, c) in ngram_counts(hyp, n) {
                matches[n - 1] += c.min(max_ref.get(g).copied().unwrap_or(0));
            }
            totals[n - 1] += hyp.len().saturating_sub(n - 1);
        }
    }
    if matches[0] == 0 {
        return Ok(0.0);
    }
    let smooth = smoothing && matches.iter().any(|m| *m == 0);
    let mut log_sum = 0.0;
    for n in 0..max_order {
        let (m, t) = if smooth && n > 0 {
            (matches[n] + 1, totals[n] + 1)
        } else {
            (matches[n], totals[n])
        };
        if m == 0 {
            return Ok(0.0);
        }
        log_sum += (m as f64 / t as f64).ln();
    }
    let bp = if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    Ok(bp * (log_sum / max_order as f64).exp())
}

fn intent_sequence(d: &Dialogue) -> Vec<String> {
    d.turns.iter().map(|t| t.intent.as_str().to_string()).collect()
}

fn word_sequence(d: &Dialogue) -> Vec<String> {
    d.turns.iter().flat_map(|t| t.tokens.iter().cloned()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioBleu {
    pub score: f64,
    /// Generated dialogues whose scenario has no human reference.
    pub skipped: usize,
}

/// BLEU of each generated dialogue against every human dialogue of the
/// same scenario, over a per-dialogue token sequence.
fn scenario_bleu(generated: &[Dialogue], human: &[Dialogue], sequence: fn(&Dialogue) -> Vec<String>) -> Result<ScenarioBleu> {
    let mut by_scenario: HashMap<&str, Vec<Vec<String>>> = HashMap::new();
    for h in human {
        by_scenario.entry(h.scenario_id.as_str()).or_default().push(sequence(h));
    }
    let mut hyps = Vec::new();
    let mut refs = Vec::new();
    let mut skipped = 0;
    for d in generated {
        match by_scenario.get(d.scenario_id.as_str()) {
            Some(r) => {
                hyps.push(sequence(d));
                refs.push(r.clone());
            }
            None => skipped += 1,
        }
    }
    Ok(ScenarioBleu {
        score: bleu(&hyps, &refs, MAX_ORDER, true)?,
        skipped,
    })
}

/// BLEU over concatenated per-turn intent labels.
pub fn ibleu(generated: &[Dialogue], human: &[Dialogue]) -> Result<ScenarioBleu> {
    scenario_bleu(generated, human, intent_sequence)
}

/// BLEU over whole-dialogue price-abstracted token sequences.
pub fn dialogue_bleu(generated: &[Dialogue], human: &[Dialogue]) -> Result<ScenarioBleu> {
    scenario_bleu(generated, human, word_sequence)
}

/// Distinct utterances over utterances, distinct tokens over tokens.
/// Event-only turns with no text are not utterances.
pub fn diversity(dialogues: &[Dialogue]) -> (f64, f64) {
    let utterances: Vec<&str> = dialogues
        .iter()
        .flat_map(|d| &d.turns)
        .map(|t| t.text.trim())
        .filter(|t| !t.is_empty())
        .collect();
    let tokens: Vec<&String> = dialogues.iter().flat_map(|d| &d.turns).flat_map(|t| &t.tokens).collect();
    let ratio = |distinct: usize, total: usize| if total == 0 { 0.0 } else { distinct as f64 / total as f64 };
    (
        ratio(utterances.iter().collect::<HashSet<_>>().len(), utterances.len()),
        ratio(tokens.iter().collect::<HashSet<_>>().len(), tokens.len()),
    )
}

/// Mean number of turns per dialogue.
pub fn avg_dialogue_length(dialogues: &[Dialogue]) -> f64 {
    if dialogues.is_empty() {
        return 0.0;
    }
    dialogues.iter().map(|d| d.turns.len()).sum::<usize>() as f64 / dialogues.len() as f64
}

/// Whether a role regresses past its own earlier price or crosses the
/// opponent's standing one. Prices are each turn's most conceding mention
/// followed by any offer price.
pub fn has_price_inconsistency(d: &Dialogue) -> bool {
    let mut last: [Option<f64>; 2] = [None, None];
    for t in &d.turns {
        let role = t.speaker;
        let offered = t.event.filter(|e| e.kind == EventKind::Offer).and_then(|e| e.price);
        for p in best_price(role, &t.price_values).into_iter().chain(offered) {
            let own = last[role.index()];
            let opp = last[role.opponent().index()];
            let bad = match role {
                Role::Seller => own.is_some_and(|o| p > o) || opp.is_some_and(|o| p < o),
                Role::Buyer => own.is_some_and(|o| p < o) || opp.is_some_and(|o| p > o),
            };
            if bad {
                return true;
            }
            last[role.index()] = Some(p);
        }
    }
    false
}

fn rate(flags: impl Iterator<Item = bool>) -> f64 {
    let (mut bad, mut n) = (0usize, 0usize);
    for f in flags {
        n += 1;
        bad += usize::from(f);
    }
    if n == 0 {
        0.0
    } else {
        bad as f64 / n as f64
    }
}

pub fn price_inconsistency(dialogues: &[Dialogue]) -> f64 {
    rate(dialogues.iter().map(has_price_inconsistency))
}

/// Whether some offer's price differs from the last price its role
/// mentioned (counting the offer turn's own text), or from the role's
/// initial price when it never mentioned one.
pub fn has_offer_inconsistency(d: &Dialogue, scenario: &Scenario) -> bool {
    let mut last = [initial_price(Role::Seller, scenario), initial_price(Role::Buyer, scenario)];
    for t in &d.turns {
        if let Some(p) = best_price(t.speaker, &t.price_values) {
            last[t.speaker.index()] = p;
        }
        if let Some(e) = t.event.filter(|e| e.kind == EventKind::Offer) {
            let offered = e.price.unwrap_or(last[t.speaker.index()]);
            if (offered - last[t.speaker.index()]).abs() > 1e-6 {
                return true;
            }
        }
    }
    false
}

pub fn offer_inconsistency(dialogues: &[Dialogue], scenarios: &HashMap<String, Scenario>) -> Result<f64> {
    let flags = dialogues
        .iter()
        .map(|d| {
            let s = scenarios
                .get(&d.scenario_id)
                .ok_or_else(|| Error::Invariant(format!("unknown scenario {}", d.scenario_id)))?;
            Ok(has_offer_inconsistency(d, s))
        })
        .collect::<Result<Vec<bool>>>()?;
    Ok(rate(flags.into_iter()))
}

/// Mean absolute distance between agreed and ground-truth prices over the
/// agreed dialogues that have a ground truth.
pub fn human_divergence(dialogues: &[Dialogue], truth: &HashMap<String, f64>) -> Result<f64> {
    let gaps: Vec<f64> = dialogues
        .iter()
        .filter_map(|d| Some((d.outcome.price.filter(|_| d.outcome.agreed)?, truth.get(&d.scenario_id)?)))
        .map(|(p, t)| (p - t).abs())
        .collect();
    if gaps.is_empty() {
        return Err(Error::Empty("agreed dialogues with a ground-truth price"));
    }
    Ok(gaps.iter().sum::<f64>() / gaps.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub ibleu: f64,
    pub bleu: f64,
    pub sentence_diversity: f64,
    pub vocab_diversity: f64,
    pub avg_dialogue_length: f64,
    pub price_inconsistency_rate: f64,
    pub offer_inconsistency_rate: f64,
    /// `None` when no generated dialogue reached an agreement.
    pub human_divergence: Option<f64>,
    pub dialogues: usize,
    pub skipped_without_reference: usize,
}

impl MetricReport {
    /// Scores `generated` against `human`; ground truth is the mean human
    /// agreed price per scenario.
    pub fn compute(generated: &[Dialogue], human: &[Dialogue], scenarios: &[Scenario]) -> Result<Self> {
        let by_id: HashMap<String, Scenario> = scenarios.iter().map(|s| (s.id.clone(), s.clone())).collect();
        let ib = ibleu(generated, human)?;
        let bl = dialogue_bleu(generated, human)?;
        let (sentence, vocab) = diversity(generated);
        let truth = crate::corpus::ground_truth_prices(human);
        Ok(Self {
            ibleu: ib.score,
            bleu: bl.score,
            sentence_diversity: sentence,
            vocab_diversity: vocab,
            avg_dialogue_length: avg_dialogue_length(generated),
            price_inconsistency_rate: price_inconsistency(generated),
            offer_inconsistency_rate: offer_inconsistency(generated, &by_id)?,
            human_divergence: human_divergence(generated, &truth).ok(),
            dialogues: generated.len(),
            skipped_without_reference: ib.skipped,
        })
    }

    /// Aligned two-group table: language metrics then pricing metrics.
    pub fn table(&self, label: &str) -> String {
        let cols = [
            ("IBLEU", format!("{:.2}", 100.0 * self.ibleu)),
            ("BLEU", format!("{:.2}", 100.0 * self.bleu)),
            ("Sent.Div", format!("{:.3}", self.sentence_diversity)),
            ("Vocab.Div", format!("{:.3}", self.vocab_diversity)),
            ("Length", format!("{:.2}", self.avg_dialogue_length)),
            ("Price.Inc", format!("{:.0}%", 100.0 * self.price_inconsistency_rate)),
            ("Offer.Inc", format!("{:.0}%", 100.0 * self.offer_inconsistency_rate)),
            (
                "Divergence",
                self.human_divergence.map_or_else(|| "-".to_string(), |v| format!("${v:.0}")),
            ),
        ];
        let first = label.len().max(5);
        let mut head = format!("{:<first$}", "Model");
        let mut row = format!("{label:<first$}");
        for (name, value) in &cols {
            let w = name.len().max(value.len());
            let _ = write!(head, "  {name:>w$}");
            let _ = write!(row, "  {value:>w$}");
        }
        format!("{:<first$}  {:-^w$}\n{head}\n{row}\n", "", " language | pricing ", w = head.len() - first - 2)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}
