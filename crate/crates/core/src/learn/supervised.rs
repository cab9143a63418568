//! The three supervised stages: value estimation, the language model and
//! the two policy heads. Each stage trains only its own parameters.

use std::collections::HashMap;
use std::fs::File;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::autodiff::{Graph, Var};
use super::nn::LstmState;
use super::loss::{class_weights, l1_mean, weighted_ce};
use super::optim::Adam;
use crate::config::TrainConfig;
use crate::corpus::{class_frequencies, ground_truth_prices, standing_prices, Dialogue, Role, Scenario, TurnRecord, MAX_TOKENS};
use crate::encoder::{assemble_state, DialogueState, PriceFrame};
use crate::error::{Error, Result};
use crate::generator::{AttentionMemory, DecodeMode};
use crate::model::{Negotiator, PreparedScenario};
use crate::policy::{Action, RatioClass};
use crate::valuation::{Catalog, ItemView};

/// One line of the training metrics log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricRow {
    pub stage: String,
    /// Epoch for supervised stages, episode for reinforcement.
    pub step: usize,
    /// Mean loss, or mean reward for reinforcement.
    pub value: f64,
    pub lr: f64,
}

/// Keeps every row in memory and optionally mirrors it to a CSV file.
#[derive(Debug, Default)]
pub struct MetricsLog {
    writer: Option<csv::Writer<File>>,
    pub rows: Vec<MetricRow>,
}

impl MetricsLog {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self {
            writer: Some(csv::Writer::from_path(path)?),
            rows: Vec::new(),
        })
    }

    pub fn record(&mut self, stage: &str, step: usize, value: f64, lr: f64) -> Result<()> {
        let row = MetricRow {
            stage: stage.to_string(),
            step,
            value,
            lr,
        };
        if let Some(w) = &mut self.writer {
            w.serialize(&row)?;
            w.flush()?;
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn stage(&self, stage: &str) -> Vec<f64> {
        self.rows.iter().filter(|r| r.stage == stage).map(|r| r.value).collect()
    }
}

fn trainable(prefixes: &'static [&'static str]) -> impl Fn(&str) -> bool {
    move |name| {
        prefixes
            .iter()
            .any(|p| name.strip_prefix(p).is_some_and(|rest| rest.starts_with('.')))
    }
}

pub const OVE_PARAMS: &[&str] = &["ove"];
pub const LANGUAGE_PARAMS: &[&str] = &["enc", "dec"];
pub const POLICY_PARAMS: &[&str] = &["ap", "pa"];

/// Shuffled mini-batch epochs over `n` examples. `batch_loss` returns the
/// summed loss over its batch and how many terms it contains; the mean is
/// what gets differentiated.
#[allow(clippy::too_many_arguments)]
fn run_epochs<F>(
    model: &mut Negotiator,
    n: usize,
    config: &TrainConfig,
    stage: &str,
    params: &'static [&'static str],
    clip: bool,
    log: &mut MetricsLog,
    mut batch_loss: F,
) -> Result<Vec<f64>>
where
    F: FnMut(&Negotiator, &mut Graph, &[usize]) -> Result<Option<(Var, usize)>>,
{
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(model.store.len());
    let mut order: Vec<usize> = (0..n).collect();
    let mut losses = Vec::with_capacity(config.total_epochs());
    for epoch in 0..config.total_epochs() {
        let lr = config.lr_at(epoch);
        order.shuffle(&mut rng);
        let (mut total, mut count) = (0.0, 0usize);
        for batch in order.chunks(config.batch_size) {
            let dropout_rng = ChaCha8Rng::seed_from_u64(rng.gen());
            let grads = {
                let mut g = Graph::with_trainable(&model.store, trainable(params));
                g.enable_dropout(config.dropout, dropout_rng);
                let Some((sum, terms)) = batch_loss(model, &mut g, batch)? else {
                    continue;
                };
                total += g.scalar(sum);
                count += terms;
                let mean = g.scale(sum, 1.0 / terms as f64);
                let mut grads = g.backward(mean)?;
                if let (true, Some(max)) = (clip, config.clip_norm) {
                    grads.clip_global_norm(max);
                }
                grads
            };
            adam.step(&mut model.store, &grads, lr)?;
        }
        let mean = if count == 0 { 0.0 } else { total / count as f64 };
        log.record(stage, epoch, mean, lr)?;
        losses.push(mean);
    }
    model.mark_stage(stage);
    Ok(losses)
}

/// An item to value together with its agreed-price target.
#[derive(Clone, Debug)]
pub struct OveExample {
    pub item: ItemView,
    pub target: f64,
}

/// Scenarios with at least one agreed dialogue, targeting their mean agreed price.
pub fn ove_examples(model: &Negotiator, scenarios: &[Scenario], dialogues: &[Dialogue]) -> Vec<OveExample> {
    let truth = ground_truth_prices(dialogues);
    scenarios
        .iter()
        .filter_map(|s| {
            truth.get(&s.id).map(|&target| OveExample {
                item: model.item_view(s),
                target,
            })
        })
        .collect()
}

/// Stage 1: mean absolute error of the matching network's estimate.
pub fn train_ove(model: &mut Negotiator, catalog: &Catalog, examples: &[OveExample], config: &TrainConfig, log: &mut MetricsLog) -> Result<Vec<f64>> {
    if examples.is_empty() {
        return Err(Error::Prerequisite("value estimation needs items with agreed prices".into()));
    }
    let k = model.config.neighbors;
    let neighbors = examples
        .iter()
        .map(|e| catalog.knn(&e.item, k))
        .collect::<Result<Vec<_>>>()?;
    run_epochs(model, examples.len(), config, "ove", OVE_PARAMS, false, log, |m, g, batch| {
        let mut estimates = Vec::with_capacity(batch.len());
        let mut targets = Vec::with_capacity(batch.len());
        for &i in batch {
            let rows = catalog.neighbors(&neighbors[i]);
            estimates.push(m.ove.forward(g, &examples[i].item, &rows)?.estimate);
            targets.push(examples[i].target);
        }
        let mean = l1_mean(g, &estimates, &targets);
        Ok(Some((g.scale(mean, batch.len() as f64), batch.len())))
    })
}

/// Walks a dialogue inside `g`, handing `visit` the decoder context for
/// every non-empty turn: the history state before it, the attention memory
/// (listing plus previous turn) and the gold token ids. The listing and
/// history are encoded in `g`, so a trainable graph trains the encoder too.
fn walk_turns<F>(model: &Negotiator, g: &mut Graph, prepared: &PreparedScenario, dialogue: &Dialogue, mut visit: F) -> Result<()>
where
    F: FnMut(&mut Graph, &TurnRecord, Vec<LstmState>, &AttentionMemory, &[usize]) -> Result<()>,
{
    let enc = &model.encoder;
    let mut listing = Vec::new();
    for tokens in [prepared.scenario.title_tokens(), prepared.scenario.description_tokens()] {
        let ids: Vec<usize> = model.vocab.encode(&tokens).into_iter().take(MAX_TOKENS).collect();
        listing.extend(enc.encode_turn(g, &ids).outputs);
    }
    let seed = g.constant_vec(prepared.seed.clone());
    let mut state = enc.history_init(g, seed);
    let mut previous: Vec<Var> = Vec::new();
    for turn in &dialogue.turns {
        let gold: Vec<usize> = model
            .vocab
            .encode(&turn.tokens)
            .into_iter()
            .take(model.config.max_tokens)
            .collect();
        if !gold.is_empty() {
            let mut rows = listing.clone();
            rows.extend(previous.iter().copied());
            let memory = AttentionMemory::new(g, &rows, model.config.dim);
            visit(g, turn, state.clone(), &memory, &gold)?;
        }
        let encoded = enc.encode_turn(g, &model.turn_ids(turn.speaker, turn.action, &turn.tokens));
        state = enc.step_history(g, &state, encoded.vector);
        previous = encoded.outputs;
    }
    Ok(())
}

/// Per-turn mean negative log-likelihoods with their token counts.
fn dialogue_nll(model: &Negotiator, g: &mut Graph, prepared: &PreparedScenario, dialogue: &Dialogue) -> Result<Vec<(Var, usize)>> {
    let mut out = Vec::new();
    walk_turns(model, g, prepared, dialogue, |g, turn, init, memory, gold| {
        let start = model.vocab.start_id(turn.speaker, turn.action);
        let nll = model.decoder.teacher_forced_nll(g, init, memory, start, gold)?;
        out.push((nll, gold.len() + 1));
        Ok(())
    })?;
    Ok(out)
}

fn by_id(prepared: &[PreparedScenario]) -> HashMap<&str, &PreparedScenario> {
    prepared.iter().map(|p| (p.scenario.id.as_str(), p)).collect()
}

fn lookup<'a>(map: &HashMap<&str, &'a PreparedScenario>, id: &str) -> Result<&'a PreparedScenario> {
    map.get(id)
        .copied()
        .ok_or_else(|| Error::Prerequisite(format!("scenario {id} was not prepared")))
}

/// Stage 2: encoder and decoder on the mean per-turn negative
/// log-likelihood of the human utterances.
pub fn train_language(model: &mut Negotiator, prepared: &[PreparedScenario], dialogues: &[Dialogue], config: &TrainConfig, log: &mut MetricsLog) -> Result<Vec<f64>> {
    let map = by_id(prepared);
    for d in dialogues {
        lookup(&map, &d.scenario_id)?;
    }
    if !dialogues.iter().flat_map(|d| &d.turns).any(|t| !t.tokens.is_empty()) {
        return Err(Error::Prerequisite("language model needs non-empty utterances".into()));
    }
    run_epochs(model, dialogues.len(), config, "language", LANGUAGE_PARAMS, true, log, |m, g, batch| {
        let mut terms = Vec::new();
        for &i in batch {
            let d = &dialogues[i];
            terms.extend(dialogue_nll(m, g, lookup(&map, &d.scenario_id)?, d)?.into_iter().map(|(v, _)| v));
        }
        let n = terms.len();
        Ok(g.add_all(&terms).map(|sum| (sum, n)))
    })
}

/// Token-weighted mean negative log-likelihood over every non-empty turn,
/// without dropout.
pub fn corpus_nll(model: &Negotiator, prepared: &[PreparedScenario], dialogues: &[Dialogue]) -> Result<f64> {
    let map = by_id(prepared);
    let (mut total, mut tokens) = (0.0, 0usize);
    for d in dialogues {
        let mut g = Graph::frozen(&model.store);
        for (nll, n) in dialogue_nll(model, &mut g, lookup(&map, &d.scenario_id)?, d)? {
            total += g.scalar(nll) * n as f64;
            tokens += n;
        }
    }
    if tokens == 0 {
        return Err(Error::Empty("utterances"));
    }
    Ok(total / tokens as f64)
}

/// Greedy decoding of every non-empty turn from its gold context, paired
/// with the gold tokens: `(gold, decoded)`.
pub fn greedy_reconstructions(model: &Negotiator, prepared: &[PreparedScenario], dialogues: &[Dialogue]) -> Result<Vec<(Vec<String>, Vec<String>)>> {
    let map = by_id(prepared);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut out = Vec::new();
    for d in dialogues {
        let mut g = Graph::frozen(&model.store);
        walk_turns(model, &mut g, lookup(&map, &d.scenario_id)?, d, |g, turn, init, memory, gold| {
            let start = model.vocab.start_id(turn.speaker, turn.action);
            let ids = model.decoder.decode(
                g,
                init,
                memory,
                start,
                &model.vocab,
                DecodeMode::Greedy,
                &mut rng,
                model.config.max_tokens,
                true,
            );
            let words = |ids: &[usize]| ids.iter().map(|i| model.vocab.token(*i).to_string()).collect();
            out.push((words(gold), words(&ids)));
            Ok(())
        })?;
    }
    Ok(out)
}

/// A human decision with the state the speaker saw.
#[derive(Clone, Debug)]
pub struct PolicyExample {
    pub state: DialogueState,
    pub role: Role,
    pub action: Action,
    pub ratio: Option<RatioClass>,
}

/// Dialogue states before every turn, computed with the frozen encoder.
pub fn policy_examples(model: &Negotiator, prepared: &[PreparedScenario], dialogues: &[Dialogue]) -> Result<Vec<PolicyExample>> {
    let map = by_id(prepared);
    let mut out = Vec::new();
    for d in dialogues {
        let p = lookup(&map, &d.scenario_id)?;
        let prices = standing_prices(d, &p.scenario);
        let mut g = Graph::frozen(&model.store);
        let seed = g.constant_vec(p.seed.clone());
        let mut state = model.encoder.history_init(&mut g, seed);
        let mut history = p.seed.clone();
        for (turn, standing) in d.turns.iter().zip(prices) {
            let frame = PriceFrame::for_role(turn.speaker, &p.scenario);
            let own = standing[turn.speaker.index()];
            let opp = standing[turn.speaker.opponent().index()];
            out.push(PolicyExample {
                state: assemble_state(history.clone(), own, opp, p.estimate, &frame),
                role: turn.speaker,
                action: turn.action,
                ratio: turn.ratio_class.filter(|_| turn.action.moves_price()),
            });
            let ids = model.turn_ids(turn.speaker, turn.action, &turn.tokens);
            let encoded = model.encoder.encode_turn(&mut g, &ids);
            state = model.encoder.step_history(&mut g, &state, encoded.vector);
            history = g.data(state.last().expect("layers").h).to_vec();
        }
    }
    Ok(out)
}

/// Stage 3: class-weighted cross-entropy for the action predictor and,
/// on price-moving turns, the price adjuster given the gold action.
pub fn train_policy(model: &mut Negotiator, examples: &[PolicyExample], weights: ([f64; 6], [f64; 6]), config: &TrainConfig, log: &mut MetricsLog) -> Result<Vec<f64>> {
    if examples.is_empty() {
        return Err(Error::Prerequisite("policy heads need labelled turns".into()));
    }
    let (aw, rw) = weights;
    run_epochs(model, examples.len(), config, "policy", POLICY_PARAMS, false, log, |m, g, batch| {
        let mut terms = Vec::with_capacity(2 * batch.len());
        for &i in batch {
            let e = &examples[i];
            let s = g.constant_vec(e.state.to_vec());
            let logits = m.actions.logits(g, s);
            terms.push(weighted_ce(g, logits, e.action.index(), aw[e.action.index()]));
            if let Some(r) = e.ratio {
                let logits = m.prices.logits(g, s, e.action)?;
                terms.push(weighted_ce(g, logits, r.index(), rw[r.index()]));
            }
        }
        let sum = g.add_all(&terms).expect("non-empty batch");
        Ok(Some((sum, batch.len())))
    })
}

/// Inverse-square-root class weights for actions and ratios.
pub fn policy_weights(dialogues: &[Dialogue]) -> ([f64; 6], [f64; 6]) {
    let (a, r) = class_frequencies(dialogues);
    let to_array = |v: Vec<f64>| -> [f64; 6] { v.try_into().expect("six classes") };
    (to_array(class_weights(&a)), to_array(class_weights(&r)))
}

/// Everything the supervised pipeline reads.
#[derive(Clone, Copy, Debug)]
pub struct TrainingCorpus<'a> {
    pub scenarios: &'a [Scenario],
    pub dialogues: &'a [Dialogue],
    pub catalog: &'a Catalog,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SupervisedReport {
    pub ove: Vec<f64>,
    pub language: Vec<f64>,
    pub policy: Vec<f64>,
}

/// Runs the three stages in order. Later stages see the scenario
/// preparation produced by earlier ones.
pub fn train_supervised(model: &mut Negotiator, corpus: TrainingCorpus, config: &TrainConfig, log: &mut MetricsLog) -> Result<SupervisedReport> {
    let examples = ove_examples(model, corpus.scenarios, corpus.dialogues);
    let ove = train_ove(model, corpus.catalog, &examples, config, log)?;
    let prepared = prepare_all(model, corpus.scenarios, corpus.catalog)?;
    let language = train_language(model, &prepared, corpus.dialogues, config, log)?;
    let prepared = prepare_all(model, corpus.scenarios, corpus.catalog)?;
    let examples = policy_examples(model, &prepared, corpus.dialogues)?;
    let policy = train_policy(model, &examples, policy_weights(corpus.dialogues), config, log)?;
    Ok(SupervisedReport { ove, language, policy })
}

pub fn prepare_all(model: &Negotiator, scenarios: &[Scenario], catalog: &Catalog) -> Result<Vec<PreparedScenario>> {
    scenarios.iter().map(|s| model.prepare(s, catalog)).collect()
}
