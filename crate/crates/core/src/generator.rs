//! Utterance decoder: a stacked LSTM started from the dialogue-history state,
//! bilinear global attention over word-level encodings of the listing and the
//! previous utterance, and an affine vocabulary layer with log-softmax.
//! Prices never come out of the vocabulary: the decoder emits a `<price>`
//! slot and [`apply_copy`] fills it with the policy's price.

use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::corpus::{detokenize, format_price, Vocabulary, PRICE_TOKEN};
use crate::error::{Error, Result};
use crate::learn::{argmax, nn, sample_categorical, softmax, Graph, Linear, LstmStack, LstmState, ParamId, ParamStore, Var};

/// Stacked word-level encodings the decoder attends over.
#[derive(Clone, Copy, Debug)]
pub struct AttentionMemory {
    pub rows: Var,
    pub len: usize,
}

impl AttentionMemory {
    /// Stacks `rows`; a single zero row when there is nothing to attend to.
    pub fn new(g: &mut Graph, rows: &[Var], dim: usize) -> Self {
        if rows.is_empty() {
            let zero = g.zeros(dim);
            return Self {
                rows: g.stack(&[zero]),
                len: 1,
            };
        }
        Self {
            rows: g.stack(rows),
            len: rows.len(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DecodeMode {
    Greedy,
    Sample { temperature: f64 },
}

/// One decoder step.
#[derive(Clone, Debug)]
pub struct DecodeStep {
    pub log_probs: Var,
    pub attention: Var,
    pub state: Vec<LstmState>,
}

#[derive(Clone, Debug)]
pub struct Decoder {
    pub embeddings: ParamId,
    pub lstm: LstmStack,
    pub attn: ParamId,
    pub out: Linear,
}

impl Decoder {
    /// Input embeddings are shared with the encoder table `embeddings`.
    pub fn new(store: &mut ParamStore, config: &ModelConfig, vocab_len: usize, embeddings: ParamId, rng: &mut ChaCha8Rng) -> Self {
        let d = config.dim;
        Self {
            embeddings,
            lstm: LstmStack::new(store, "dec.lstm", d, d, config.rnn_layers, rng),
            attn: store.add("dec.attn", nn::glorot(rng, d, d)),
            out: Linear::new(store, "dec.out", 2 * d, vocab_len, rng),
        }
    }

    pub fn lookup(store: &ParamStore, config: &ModelConfig, embeddings: ParamId) -> Result<Self> {
        Ok(Self {
            embeddings,
            lstm: LstmStack::lookup(store, "dec.lstm", config.rnn_layers)?,
            attn: store.id("dec.attn")?,
            out: Linear::lookup(store, "dec.out")?,
        })
    }

    pub fn vocab_len(&self) -> usize {
        self.out.output
    }

    /// Feeds `token`, attends with the new top hidden state and scores the
    /// next token.
    pub fn step(&self, g: &mut Graph, token: usize, state: &[LstmState], memory: &AttentionMemory) -> DecodeStep {
        let x = g.embed(self.embeddings, token);
        let state = self.lstm.step(g, x, state);
        let h = state.last().expect("non-empty stack").h;
        let w = g.param(self.attn);
        let wh = g.matvec(w, h);
        let scores = g.matvec(memory.rows, wh);
        let attention = g.softmax(scores);
        let context = g.matvec_t(memory.rows, attention);
        let joined = g.concat(&[h, context]);
        let joined = g.dropout(joined);
        let logits = self.out.forward(g, joined);
        DecodeStep {
            log_probs: g.log_softmax(logits),
            attention,
            state,
        }
    }

    /// Generates up to `max_len` token ids after `start`, stopping at the
    /// end token (not included). Padding, unknown and start tokens are never
    /// emitted; neither is the price slot unless `allow_price`.
    #[allow(clippy::too_many_arguments)]
    pub fn decode(
        &self,
        g: &mut Graph,
        init: Vec<LstmState>,
        memory: &AttentionMemory,
        start: usize,
        vocab: &Vocabulary,
        mode: DecodeMode,
        rng: &mut ChaCha8Rng,
        max_len: usize,
        allow_price: bool,
    ) -> Vec<usize> {
        let banned = |id: usize| {
            id == Vocabulary::PAD_ID || id == Vocabulary::UNK_ID || vocab.is_start(id) || (!allow_price && id == Vocabulary::PRICE_ID)
        };
        let mut state = init;
        let mut token = start;
        let mut out = Vec::new();
        while out.len() < max_len {
            let step = self.step(g, token, &state, memory);
            state = step.state;
            let scores: Vec<f64> = g
                .data(step.log_probs)
                .iter()
                .enumerate()
                .map(|(i, lp)| if banned(i) { f64::NEG_INFINITY } else { *lp })
                .collect();
            token = match mode {
                DecodeMode::Greedy => argmax(&scores),
                DecodeMode::Sample { temperature } => {
                    let scaled: Vec<f64> = scores.iter().map(|s| s / temperature).collect();
                    sample_categorical(&softmax(&scaled), rng)
                }
            };
            if token == Vocabulary::END_ID {
                break;
            }
            out.push(token);
        }
        out
    }

    /// Mean per-token negative log-likelihood of `gold` followed by the end
    /// token, feeding gold tokens as inputs.
    pub fn teacher_forced_nll(&self, g: &mut Graph, init: Vec<LstmState>, memory: &AttentionMemory, start: usize, gold: &[usize]) -> Result<Var> {
        if gold.is_empty() {
            return Err(Error::Empty("gold turn"));
        }
        let mut state = init;
        let inputs = std::iter::once(start).chain(gold.iter().copied());
        let targets = gold.iter().copied().chain(std::iter::once(Vocabulary::END_ID));
        let mut terms = Vec::with_capacity(gold.len() + 1);
        for (input, target) in inputs.zip(targets) {
            let step = self.step(g, input, &state, memory);
            state = step.state;
            terms.push(g.pick(step.log_probs, target));
        }
        let n = terms.len();
        let total = g.add_all(&terms).expect("non-empty");
        Ok(g.scale(total, -1.0 / n as f64))
    }
}

/// Replaces every price slot with `price` and joins the tokens.
pub fn apply_copy(tokens: &[String], price: Option<f64>) -> Result<String> {
    let filled: Vec<String> = tokens
        .iter()
        .map(|t| match (t.as_str(), price) {
            (PRICE_TOKEN, Some(p)) => Ok(format_price(p)),
            (PRICE_TOKEN, None) => Err(Error::MissingPrice),
            _ => Ok(t.clone()),
        })
        .collect::<Result<_>>()?;
    Ok(detokenize(&filled))
}
