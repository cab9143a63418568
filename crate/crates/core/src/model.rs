//! The full negotiator: every parameterized block over one parameter store,
//! plus the vocabulary and sizes needed to rebuild it from a checkpoint.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::corpus::{Role, Scenario, Vocabulary, MAX_TOKENS};
use crate::encoder::HierarchicalEncoder;
use crate::error::{Error, Result};
use crate::generator::Decoder;
use crate::learn::{Graph, LstmState, ParamStore, Var};
use crate::policy::{Action, ActionPredictor, PriceAdjuster};
use crate::valuation::{self, Catalog, ItemView, MatchingNetwork, SimilarityResult};

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocab: Vocabulary,
    #[serde(default)]
    stages: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct Negotiator {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub store: ParamStore,
    pub ove: MatchingNetwork,
    pub encoder: HierarchicalEncoder,
    pub decoder: Decoder,
    pub actions: ActionPredictor,
    pub prices: PriceAdjuster,
    /// Training stages completed so far, in order.
    pub stages: Vec<String>,
}

impl Negotiator {
    /// Fresh parameters drawn from `config.seed`.
    pub fn new(config: ModelConfig, vocab: Vocabulary) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let n = vocab.len();
        let ove = MatchingNetwork::new(&mut store, &config, n, &mut rng);
        let encoder = HierarchicalEncoder::new(&mut store, &config, n, &mut rng);
        let decoder = Decoder::new(&mut store, &config, n, encoder.embeddings, &mut rng);
        let actions = ActionPredictor::new(&mut store, &config, &mut rng);
        let prices = PriceAdjuster::new(&mut store, &config, &mut rng);
        Self {
            config,
            vocab,
            store,
            ove,
            encoder,
            decoder,
            actions,
            prices,
            stages: Vec::new(),
        }
    }

    pub fn has_stage(&self, stage: &str) -> bool {
        self.stages.iter().any(|s| s == stage)
    }

    pub fn mark_stage(&mut self, stage: &str) {
        if !self.has_stage(stage) {
            self.stages.push(stage.to_string());
        }
    }

    /// Copies pretrained word vectors into both token tables; `None` rows
    /// keep their random initialization.
    pub fn load_word_vectors(&mut self, rows: &[Option<Vec<f64>>]) -> Result<()> {
        for table in [self.ove.banks[0].tokens, self.encoder.embeddings] {
            let t = self.store.get_mut(table);
            for (i, row) in rows.iter().enumerate() {
                if let Some(v) = row {
                    if v.len() != t.cols() {
                        return Err(Error::Dimension {
                            expected: t.cols(),
                            got: v.len(),
                        });
                    }
                    t.row_mut(i).copy_from_slice(v);
                }
            }
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, out: W) -> Result<()> {
        let header = serde_json::to_string(&Header {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            stages: self.stages.clone(),
        })?;
        self.store.write_checkpoint(&header, out)
    }

    pub fn read_from<R: Read>(input: R) -> Result<Self> {
        let (loaded, header) = ParamStore::read_checkpoint(input)?;
        let header: Header = serde_json::from_str(&header).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
        let mut model = Self::new(header.config, header.vocab);
        if loaded.len() != model.store.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                model.store.len(),
                loaded.len()
            )));
        }
        model.store.load_from(&loaded)?;
        model.stages = header.stages;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        self.write_to(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    /// `<role:action>` followed by the turn's (truncated) token ids: the
    /// sequence the word encoder sees for a history turn.
    pub fn turn_ids(&self, speaker: Role, action: Action, tokens: &[String]) -> Vec<usize> {
        let mut ids = Vec::with_capacity(tokens.len().min(MAX_TOKENS) + 1);
        ids.push(self.vocab.start_id(speaker, action));
        ids.extend(tokens.iter().take(MAX_TOKENS).map(|t| self.vocab.id(t)));
        ids
    }

    pub fn item_view(&self, scenario: &Scenario) -> ItemView {
        ItemView::new(&scenario.as_item(), &self.vocab)
    }

    /// Valuation and listing encodings for one scenario. These only depend
    /// on frozen blocks, so they are computed once per scenario.
    pub fn prepare(&self, scenario: &Scenario, catalog: &Catalog) -> Result<PreparedScenario> {
        let item = self.item_view(scenario);
        let est = valuation::estimate(&self.ove, &self.store, &item, catalog, self.config.neighbors)?;
        let mut g = Graph::frozen(&self.store);
        let title = self.vocab.encode(&scenario.title_tokens());
        let description = self.vocab.encode(&scenario.description_tokens());
        let mut listing_rows = Vec::new();
        for ids in [&title, &description] {
            let ids: Vec<usize> = ids.iter().take(MAX_TOKENS).copied().collect();
            let enc = self.encoder.encode_turn(&mut g, &ids);
            listing_rows.extend(enc.outputs.iter().map(|v| g.data(*v).to_vec()));
        }
        Ok(PreparedScenario {
            scenario: scenario.clone(),
            estimate: est.price,
            seed: est.representation,
            neighbors: est.neighbors,
            listing_rows,
        })
    }
}

/// A scenario with its value estimate and the frozen encodings the dialogue
/// modules consume.
#[derive(Clone, Debug)]
pub struct PreparedScenario {
    pub scenario: Scenario,
    /// Estimated agreement price.
    pub estimate: f64,
    /// Final matching-network representation; seeds the history encoder.
    pub seed: Vec<f64>,
    pub neighbors: SimilarityResult,
    /// Word-encoder outputs over the title then the description.
    pub listing_rows: Vec<Vec<f64>>,
}

/// Numeric snapshot of recurrent state, for carrying state across graphs.
#[derive(Clone, Debug, PartialEq)]
pub struct StateSnapshot(pub Vec<(Vec<f64>, Vec<f64>)>);

impl StateSnapshot {
    pub fn capture(g: &Graph, state: &[LstmState]) -> Self {
        Self(state.iter().map(|s| (g.data(s.h).to_vec(), g.data(s.c).to_vec())).collect())
    }

    pub fn restore(&self, g: &mut Graph) -> Vec<LstmState> {
        self.0
            .iter()
            .map(|(h, c)| LstmState {
                h: g.constant_vec(h.clone()),
                c: g.constant_vec(c.clone()),
            })
            .collect()
    }
}

/// Constant rows as graph variables.
pub fn constant_rows(g: &mut Graph, rows: &[Vec<f64>]) -> Vec<Var> {
    rows.iter().map(|r| g.constant_vec(r.clone())).collect()
}
