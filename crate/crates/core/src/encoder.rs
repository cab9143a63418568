//! Hierarchical dialogue encoding: a word-level LSTM turns each utterance into
//! a vector, a turn-level LSTM seeded with the matching network's final
//! representation folds those into a history vector, and three bucketed price
//! one-hots complete the dialogue state.

use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::corpus::{Role, Scenario};
use crate::error::{Error, Result};
use crate::learn::{nn, Graph, LstmStack, LstmState, ParamId, ParamStore, Var};

pub const PRICE_BUCKETS: usize = 7;

/// A role's normalization frame: `target` maps to 1, `bottom` to 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PriceFrame {
    pub role: Role,
    pub target: f64,
    pub bottom: f64,
}

impl PriceFrame {
    /// Seller: listing to 70% of listing. Buyer: its target to the listing.
    pub fn for_role(role: Role, scenario: &Scenario) -> Self {
        match role {
            Role::Seller => Self {
                role,
                target: scenario.listing_price,
                bottom: 0.7 * scenario.listing_price,
            },
            Role::Buyer => Self {
                role,
                target: scenario.buyer_target,
                bottom: scenario.listing_price,
            },
        }
    }

    pub fn normalize(&self, price: f64) -> f64 {
        normalize_price(price, self)
    }
}

/// `(p - bottom) / (target - bottom)`; not clipped to [0, 1].
pub fn normalize_price(price: f64, frame: &PriceFrame) -> f64 {
    (price - frame.bottom) / (frame.target - frame.bottom)
}

/// Bucket 0 below 0, buckets 1..=5 split [0, 1] in fifths (1.0 goes to 5),
/// bucket 6 above 1.
pub fn price_bucket(x: f64) -> Result<usize> {
    if x.is_nan() {
        return Err(Error::Invariant("price bucket of NaN".into()));
    }
    Ok(if x < 0.0 {
        0
    } else if x > 1.0 {
        6
    } else if x == 1.0 {
        5
    } else {
        (1 + (x * 5.0).floor() as usize).min(5)
    })
}

/// History encoding followed by the agent, opponent and estimate price buckets.
#[derive(Clone, Debug, PartialEq)]
pub struct DialogueState {
    pub history: Vec<f64>,
    pub agent_bucket: usize,
    pub opponent_bucket: usize,
    pub estimate_bucket: usize,
}

impl DialogueState {
    pub fn len(&self) -> usize {
        self.history.len() + 3 * PRICE_BUCKETS
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn one_hots(&self) -> Vec<f64> {
        let mut v = vec![0.0; 3 * PRICE_BUCKETS];
        v[self.agent_bucket] = 1.0;
        v[PRICE_BUCKETS + self.opponent_bucket] = 1.0;
        v[2 * PRICE_BUCKETS + self.estimate_bucket] = 1.0;
        v
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.history.clone();
        v.extend(self.one_hots());
        v
    }
}

/// All prices are normalized in the agent's own frame.
pub fn assemble_state(history: Vec<f64>, agent_price: f64, opponent_price: f64, estimate: f64, frame: &PriceFrame) -> DialogueState {
    let bucket = |p: f64| price_bucket(frame.normalize(p)).expect("prices are finite");
    DialogueState {
        history,
        agent_bucket: bucket(agent_price),
        opponent_bucket: bucket(opponent_price),
        estimate_bucket: bucket(estimate),
    }
}

/// Word-level outputs of one utterance.
#[derive(Clone, Debug)]
pub struct EncodedTurn {
    /// Top-layer hidden state after each token.
    pub outputs: Vec<Var>,
    /// Final top-layer hidden state; zero for an empty utterance.
    pub vector: Var,
}

#[derive(Clone, Debug)]
pub struct HierarchicalEncoder {
    pub embeddings: ParamId,
    pub word: LstmStack,
    pub history: LstmStack,
}

impl HierarchicalEncoder {
    pub const EMBEDDINGS: &'static str = "enc.emb";

    pub fn new(store: &mut ParamStore, config: &ModelConfig, vocab_len: usize, rng: &mut ChaCha8Rng) -> Self {
        let d = config.dim;
        let embeddings = store.add(Self::EMBEDDINGS, nn::uniform(rng, vocab_len, d, 0.1));
        let word = LstmStack::new(store, "enc.word", d, d, config.rnn_layers, rng);
        let history = LstmStack::new(store, "enc.hist", d, d, config.rnn_layers, rng);
        Self { embeddings, word, history }
    }

    pub fn lookup(store: &ParamStore, config: &ModelConfig) -> Result<Self> {
        Ok(Self {
            embeddings: store.id(Self::EMBEDDINGS)?,
            word: LstmStack::lookup(store, "enc.word", config.rnn_layers)?,
            history: LstmStack::lookup(store, "enc.hist", config.rnn_layers)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.word.hidden
    }

    pub fn embed_tokens(&self, g: &mut Graph, ids: &[usize]) -> Vec<Var> {
        ids.iter().map(|id| g.embed(self.embeddings, *id)).collect()
    }

    pub fn encode_turn(&self, g: &mut Graph, ids: &[usize]) -> EncodedTurn {
        if ids.is_empty() {
            return EncodedTurn {
                outputs: Vec::new(),
                vector: g.zeros(self.dim()),
            };
        }
        let inputs = self.embed_tokens(g, ids);
        let init = self.word.zero_state(g);
        let (outputs, _) = self.word.run(g, &inputs, init);
        let vector = *outputs.last().expect("non-empty");
        EncodedTurn { outputs, vector }
    }

    /// Turn-level state before any turn: the seed in layer 1's hidden
    /// vector, zeros elsewhere.
    pub fn history_init(&self, g: &mut Graph, seed: Var) -> Vec<LstmState> {
        let mut state = self.history.zero_state(g);
        state[0].h = seed;
        state
    }

    pub fn step_history(&self, g: &mut Graph, state: &[LstmState], turn: Var) -> Vec<LstmState> {
        self.history.step(g, turn, state)
    }

    /// History vector after consuming `turns`; the seed itself when empty.
    pub fn encode_history(&self, g: &mut Graph, turns: &[Var], seed: Var) -> (Var, Vec<LstmState>) {
        let mut state = self.history_init(g, seed);
        if turns.is_empty() {
            return (seed, state);
        }
        for t in turns {
            state = self.step_history(g, &state, *t);
        }
        (state.last().expect("non-empty").h, state)
    }
}

/// Reads the history vector out of a turn-level state.
pub fn history_output(state: &[LstmState], seed: Var, turns_seen: usize) -> Var {
    if turns_seen == 0 {
        seed
    } else {
        state.last().expect("non-empty").h
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Category;
    use crate::learn::{check_gradients, GradCheck, Tensor};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn scenario() -> Scenario {
        Scenario {
            id: "s".into(),
            category: Category::Car,
            title: String::new(),
            description: String::new(),
            listing_price: 1000.0,
            seller_bottom: 700.0,
            buyer_target: 700.0,
            image_features: vec![],
            image_url: None,
        }
    }

    #[test]
    fn normalize_examples() {
        let mut s = scenario();
        s.listing_price = 100.0;
        s.buyer_target = 70.0;
        let seller = PriceFrame::for_role(Role::Seller, &s);
        assert_eq!(seller.normalize(100.0), 1.0);
        assert!(seller.normalize(70.0).abs() < 1e-12);
        assert!((seller.normalize(84.0) - 0.4667).abs() < 1e-4);
        let buyer = PriceFrame::for_role(Role::Buyer, &s);
        assert_eq!(buyer.normalize(70.0), 1.0);
        assert_eq!(buyer.normalize(100.0), 0.0);
    }

    #[test]
    fn bucket_examples() {
        assert_eq!(price_bucket(-0.3).unwrap(), 0);
        assert_eq!(price_bucket(0.0).unwrap(), 1);
        assert_eq!(price_bucket(0.2).unwrap(), 2);
        assert_eq!(price_bucket(0.4667).unwrap(), 3);
        assert_eq!(price_bucket(0.8).unwrap(), 5);
        assert_eq!(price_bucket(1.0).unwrap(), 5);
        assert_eq!(price_bucket(1.0000001).unwrap(), 6);
        assert_eq!(price_bucket(f64::INFINITY).unwrap(), 6);
        assert!(price_bucket(f64::NAN).is_err());
    }

    #[test]
    fn assemble_examples() {
        let s = scenario();
        let frame = PriceFrame::for_role(Role::Seller, &s);
        let st = assemble_state(vec![0.0; 300], 1000.0, 1000.0, 1000.0, &frame);
        assert_eq!((st.agent_bucket, st.opponent_bucket, st.estimate_bucket), (5, 5, 5));
        let st = assemble_state(vec![0.0; 300], 1000.0, 500.0, 890.0, &frame);
        assert_eq!((st.agent_bucket, st.opponent_bucket, st.estimate_bucket), (5, 0, 4));
        let v = st.to_vec();
        assert_eq!(v.len(), 321);
        assert_eq!(v[300..].iter().filter(|x| **x == 1.0).count(), 3);
        assert_eq!(v[300..].iter().sum::<f64>(), 3.0);
    }

    proptest! {
        #[test]
        fn bucket_is_monotone(a in -3.0f64..4.0, b in -3.0f64..4.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(price_bucket(lo).unwrap() <= price_bucket(hi).unwrap());
        }

        #[test]
        fn normalize_is_affine(p in 1.0f64..5000.0, q in 1.0f64..5000.0, lambda in 0.0f64..1.0) {
            let frame = PriceFrame::for_role(Role::Buyer, &scenario());
            let lhs = frame.normalize(lambda * p + (1.0 - lambda) * q);
            let rhs = lambda * frame.normalize(p) + (1.0 - lambda) * frame.normalize(q);
            prop_assert!((lhs - rhs).abs() < 1e-9);
        }

        #[test]
        fn state_has_three_ones(h in proptest::collection::vec(-1.0f64..1.0, 6), a in 1.0f64..3000.0, o in 1.0f64..3000.0, e in 1.0f64..3000.0) {
            let frame = PriceFrame::for_role(Role::Seller, &scenario());
            let st = assemble_state(h, a, o, e, &frame);
            let v = st.to_vec();
            prop_assert_eq!(v.len(), 6 + 21);
            prop_assert_eq!(v[6..].iter().filter(|x| **x == 1.0).count(), 3);
        }
    }

    fn tiny(dim: usize, seed: u64) -> (ParamStore, HierarchicalEncoder) {
        let config = ModelConfig {
            dim,
            ..ModelConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let enc = HierarchicalEncoder::new(&mut store, &config, 9, &mut rng);
        (store, enc)
    }

    #[test]
    fn empty_turn_is_zero_and_encoding_is_deterministic() {
        let (store, enc) = tiny(4, 1);
        let mut g = Graph::frozen(&store);
        let e = enc.encode_turn(&mut g, &[]);
        assert!(g.data(e.vector).iter().all(|v| *v == 0.0));
        let a = enc.encode_turn(&mut g, &[3, 4, 5]).vector;
        let b = enc.encode_turn(&mut g, &[3, 4, 5]).vector;
        assert_eq!(g.data(a), g.data(b));
    }

    #[test]
    fn single_token_with_zero_recurrent_weights() {
        // One layer, d = 2, recurrent half of the fused weight zeroed: the
        // first step is fully determined by the input transform.
        let config = ModelConfig {
            dim: 2,
            rnn_layers: 1,
            ..ModelConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let enc = HierarchicalEncoder::new(&mut store, &config, 3, &mut rng);
        let w = enc.word.layers[0].w;
        let b = enc.word.layers[0].b;
        for r in 0..8 {
            store.get_mut(w).row_mut(r)[2..].fill(0.0);
        }
        *store.get_mut(b) = Tensor::vector(vec![0.1, -0.2, 0.0, 0.3, 0.5, 0.5, -0.1, 0.2]);
        let x: Vec<f64> = store.get(enc.embeddings).row(2).to_vec();
        let wm = store.get(w).clone();
        let bv = store.get(b).data().to_vec();
        let pre = |r: usize| wm.row(r)[0] * x[0] + wm.row(r)[1] * x[1] + bv[r];
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let expected: Vec<f64> = (0..2)
            .map(|k| {
                let i = sig(pre(k));
                let c_hat = pre(4 + k).tanh();
                let o = sig(pre(6 + k));
                o * (i * c_hat).tanh()
            })
            .collect();
        let mut g = Graph::frozen(&store);
        let out = enc.encode_turn(&mut g, &[2]).vector;
        for (a, e) in g.data(out).iter().zip(&expected) {
            assert!((a - e).abs() < 1e-14);
        }
    }

    #[test]
    fn history_base_case_prefix_and_seed_sensitivity() {
        let (store, enc) = tiny(6, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut g = Graph::frozen(&store);
        let seed_vals: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let seed = g.constant_vec(seed_vals.clone());
        let (h0, _) = enc.encode_history(&mut g, &[], seed);
        assert_eq!(g.data(h0), seed_vals.as_slice());

        let a = enc.encode_turn(&mut g, &[3, 4]).vector;
        let b = enc.encode_turn(&mut g, &[5]).vector;
        let (full, _) = enc.encode_history(&mut g, &[a, b], seed);
        let (_, after_a) = enc.encode_history(&mut g, &[a], seed);
        let stepped = enc.step_history(&mut g, &after_a, b);
        assert_eq!(g.data(full), g.data(stepped.last().unwrap().h));

        let other: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let other = g.constant_vec(other);
        let (alt, _) = enc.encode_history(&mut g, &[a, b], other);
        let diff: f64 = g.data(full).iter().zip(g.data(alt)).map(|(x, y)| (x - y).abs()).sum();
        assert!(diff > 1e-6);
    }

    #[test]
    fn encoder_gradients_match_finite_differences() {
        for seed in 0..5 {
            let (mut store, enc) = tiny(3, 100 + seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let seed_vals: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let target: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let report = check_gradients(&mut store, GradCheck::default(), |g| {
                let seed = g.constant_vec(seed_vals.clone());
                let a = enc.encode_turn(g, &[1, 4, 7]).vector;
                let b = enc.encode_turn(g, &[8, 2]).vector;
                let (h, _) = enc.encode_history(g, &[a, b], seed);
                let t = g.constant_vec(target.clone());
                g.dot(h, t)
            });
            assert!(report.max_rel_error <= 1e-4, "{report:?}");
        }
    }
}
