//! Market-value estimation from similar catalog listings.
//!
//! Retrieval ranks the catalog by a mix of visual, textual and price
//! similarity. The matching network then attends over the retrieved items in
//! three residual hops, each hop reading keys from one multimodal embedding
//! bank and values from the next, and reads out a convex combination of the
//! neighbors' listing prices. A scalar affine "discount" map turns that
//! listing-based figure into an agreement-price estimate.

use std::cmp::Ordering;
use std::collections::HashMap;

use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::corpus::{CatalogItem, Category, Vocabulary};
use crate::error::{Error, Result};
use crate::learn::{nn, Graph, Linear, Mlp, ParamId, ParamStore, Tensor, Var};

pub const BANKS: usize = 4;
pub const HOPS: usize = 3;

/// An item prepared for retrieval and embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct ItemView {
    pub id: String,
    pub category: Category,
    pub features: Vec<f64>,
    pub token_ids: Vec<usize>,
    pub listing_price: f64,
    bag: Vec<(String, f64)>,
}

impl ItemView {
    pub fn new(item: &CatalogItem, vocab: &Vocabulary) -> Self {
        let mut tokens = item.title_tokens();
        tokens.extend(item.description_tokens());
        let mut counts: HashMap<String, f64> = HashMap::new();
        for t in &tokens {
            *counts.entry(t.clone()).or_default() += 1.0;
        }
        let mut bag: Vec<(String, f64)> = counts.into_iter().collect();
        bag.sort_by(|a, b| a.0.cmp(&b.0));
        Self {
            id: item.id.clone(),
            category: item.category,
            features: item.image_features.clone(),
            token_ids: vocab.encode(&tokens),
            listing_price: item.listing_price,
            bag,
        }
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

fn bag_cosine(a: &[(String, f64)], b: &[(String, f64)]) -> f64 {
    let (mut i, mut j, mut dot) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            Ordering::Less => i += 1,
            Ordering::Greater => j += 1,
            Ordering::Equal => {
                dot += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    let na: f64 = a.iter().map(|x| x.1 * x.1).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x.1 * x.1).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

/// Equal-weight mix of rescaled visual cosine, rescaled bag-of-words cosine
/// and relative price closeness. In [0, 1]; 1 for identical items.
pub fn similarity(a: &ItemView, b: &ItemView) -> f64 {
    let visual = (cosine(&a.features, &b.features) + 1.0) / 2.0;
    let text = (bag_cosine(&a.bag, &b.bag) + 1.0) / 2.0;
    let price = 1.0 - (a.listing_price - b.listing_price).abs() / a.listing_price.max(b.listing_price);
    (visual + text + price) / 3.0
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityResult {
    pub ids: Vec<String>,
    pub indices: Vec<usize>,
    pub scores: Vec<f64>,
}

/// Prepared catalog for exact nearest-neighbor scans.
#[derive(Clone, Debug)]
pub struct Catalog {
    pub items: Vec<ItemView>,
}

impl Catalog {
    pub fn new(items: &[CatalogItem], vocab: &Vocabulary) -> Self {
        Self {
            items: items.iter().map(|i| ItemView::new(i, vocab)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Top-`k` by similarity. Same-category items are taken first, other
    /// categories fill any shortfall; the selection is returned sorted by
    /// score, ties broken by id. An entry sharing the query's id is never
    /// its own neighbor.
    pub fn knn(&self, item: &ItemView, k: usize) -> Result<SimilarityResult> {
        if self.items.is_empty() {
            return Err(Error::EmptyCatalog);
        }
        let mut scored: Vec<(usize, f64)> = self
            .items
            .iter()
            .enumerate()
            .filter(|(_, c)| c.id != item.id)
            .map(|(i, c)| (i, similarity(item, c)))
            .collect();
        let items = &self.items;
        let by_score = |a: &(usize, f64), b: &(usize, f64)| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(Ordering::Equal)
                .then_with(|| items[a.0].id.cmp(&items[b.0].id))
        };
        scored.sort_by(by_score);
        let (mut chosen, rest): (Vec<_>, Vec<_>) = scored
            .into_iter()
            .partition(|(i, _)| self.items[*i].category == item.category);
        chosen.truncate(k);
        chosen.extend(rest.into_iter().take(k - chosen.len()));
        chosen.sort_by(by_score);
        Ok(SimilarityResult {
            ids: chosen.iter().map(|(i, _)| self.items[*i].id.clone()).collect(),
            indices: chosen.iter().map(|(i, _)| *i).collect(),
            scores: chosen.iter().map(|(_, s)| *s).collect(),
        })
    }

    pub fn neighbors(&self, result: &SimilarityResult) -> Vec<&ItemView> {
        result.indices.iter().map(|i| &self.items[*i]).collect()
    }
}

/// Visual projection plus summed token embeddings, fused by a 2-layer perceptron.
#[derive(Clone, Debug)]
pub struct MultimodalEmbedder {
    pub visual: Linear,
    pub fusion: Mlp,
    pub tokens: ParamId,
}

impl MultimodalEmbedder {
    pub fn new(store: &mut ParamStore, name: &str, config: &ModelConfig, tokens: ParamId, rng: &mut ChaCha8Rng) -> Self {
        let d = config.dim;
        Self {
            visual: Linear::new(store, &format!("{name}.vis"), config.feature_dim, d, rng),
            fusion: Mlp::new(store, &format!("{name}.fuse"), &[2 * d, d, d], rng),
            tokens,
        }
    }

    pub fn lookup(store: &ParamStore, name: &str, tokens: ParamId) -> Result<Self> {
        Ok(Self {
            visual: Linear::lookup(store, &format!("{name}.vis"))?,
            fusion: Mlp::lookup(store, &format!("{name}.fuse"), 2)?,
            tokens,
        })
    }

    pub fn dim(&self) -> usize {
        self.visual.output
    }

    pub fn embed(&self, g: &mut Graph, item: &ItemView) -> Result<Var> {
        if item.features.len() != self.visual.input {
            return Err(Error::Dimension {
                expected: self.visual.input,
                got: item.features.len(),
            });
        }
        let features = g.constant_vec(item.features.clone());
        let visual = self.visual.forward(g, features);
        let words: Vec<Var> = item.token_ids.iter().map(|id| g.embed(self.tokens, *id)).collect();
        let text = match g.add_all(&words) {
            Some(t) => t,
            None => g.zeros(self.dim()),
        };
        let joined = g.concat(&[visual, text]);
        Ok(self.fusion.forward(g, joined))
    }
}

/// Output of one matching-network pass.
#[derive(Clone, Debug)]
pub struct MatchOutput {
    /// Discounted estimate.
    pub estimate: Var,
    /// Attention-weighted mean of neighbor listings, before the discount.
    pub raw: Var,
    /// Attention weights of each hop.
    pub weights: Vec<Var>,
    /// Final item representation, seed of the dialogue history encoder.
    pub representation: Var,
}

#[derive(Clone, Debug)]
pub struct MatchingNetwork {
    pub banks: Vec<MultimodalEmbedder>,
    pub discount_w: ParamId,
    pub discount_b: ParamId,
}

impl MatchingNetwork {
    pub const TOKENS: &'static str = "ove.tok";

    pub fn new(store: &mut ParamStore, config: &ModelConfig, vocab_len: usize, rng: &mut ChaCha8Rng) -> Self {
        let tokens = store.add(Self::TOKENS, nn::uniform(rng, vocab_len, config.dim, 0.1));
        let banks = (0..BANKS)
            .map(|b| MultimodalEmbedder::new(store, &format!("ove.bank{b}"), config, tokens, rng))
            .collect();
        let discount_w = store.add("ove.discount.w", Tensor::scalar(1.0));
        let discount_b = store.add("ove.discount.b", Tensor::scalar(0.0));
        Self {
            banks,
            discount_w,
            discount_b,
        }
    }

    pub fn lookup(store: &ParamStore) -> Result<Self> {
        let tokens = store.id(Self::TOKENS)?;
        let banks = (0..BANKS)
            .map(|b| MultimodalEmbedder::lookup(store, &format!("ove.bank{b}"), tokens))
            .collect::<Result<_>>()?;
        Ok(Self {
            banks,
            discount_w: store.id("ove.discount.w")?,
            discount_b: store.id("ove.discount.b")?,
        })
    }

    /// Three attention hops over `neighbors`. Hop `l` keys come from bank
    /// `l - 1`, values from bank `l`; the query starts at bank 0.
    pub fn forward(&self, g: &mut Graph, item: &ItemView, neighbors: &[&ItemView]) -> Result<MatchOutput> {
        if neighbors.is_empty() {
            return Err(Error::EmptyCatalog);
        }
        let mut banks: Vec<Vec<Var>> = Vec::with_capacity(BANKS);
        for bank in &self.banks {
            let rows = neighbors.iter().map(|n| bank.embed(g, n)).collect::<Result<Vec<_>>>()?;
            banks.push(rows);
        }
        let mut u = self.banks[0].embed(g, item)?;
        let mut weights = Vec::with_capacity(HOPS);
        for hop in 1..=HOPS {
            let keys = g.stack(&banks[hop - 1]);
            let values = g.stack(&banks[hop]);
            let logits = g.matvec(keys, u);
            let w = g.softmax(logits);
            let read = g.matvec_t(values, w);
            u = g.add(u, read);
            weights.push(w);
        }
        let listings = g.constant_vec(neighbors.iter().map(|n| n.listing_price).collect());
        let last = *weights.last().expect("three hops");
        let raw = g.dot(last, listings);
        let dw = g.param(self.discount_w);
        let db = g.param(self.discount_b);
        let scaled = g.mul(dw, raw);
        let estimate = g.add(scaled, db);
        Ok(MatchOutput {
            estimate,
            raw,
            weights,
            representation: u,
        })
    }

    pub fn discount(&self, store: &ParamStore) -> (f64, f64) {
        (store.get(self.discount_w).item(), store.get(self.discount_b).item())
    }
}

/// Result of a full retrieval-plus-matching estimate.
#[derive(Clone, Debug)]
pub struct Estimate {
    pub price: f64,
    pub neighbors: SimilarityResult,
    pub weights: Vec<f64>,
    pub representation: Vec<f64>,
}

/// Retrieval then matching, clamped to `[0.1, 2] x` the item's listing.
pub fn estimate(net: &MatchingNetwork, store: &ParamStore, item: &ItemView, catalog: &Catalog, k: usize) -> Result<Estimate> {
    let neighbors = catalog.knn(item, k)?;
    let rows = catalog.neighbors(&neighbors);
    let mut g = Graph::frozen(store);
    let out = net.forward(&mut g, item, &rows)?;
    let price = g
        .scalar(out.estimate)
        .clamp(0.1 * item.listing_price, 2.0 * item.listing_price);
    Ok(Estimate {
        price,
        weights: g.data(*out.weights.last().expect("hops")).to_vec(),
        representation: g.data(out.representation).to_vec(),
        neighbors,
    })
}

/// Category mean of ground-truth prices; global mean for unseen categories.
pub fn baseline_averaging(category: Category, training: &[(Category, f64)]) -> f64 {
    let mean = |xs: Vec<f64>| xs.iter().sum::<f64>() / xs.len() as f64;
    let same: Vec<f64> = training.iter().filter(|(c, _)| *c == category).map(|(_, p)| *p).collect();
    if same.is_empty() {
        mean(training.iter().map(|(_, p)| *p).collect())
    } else {
        mean(same)
    }
}

/// Mean listing of the `k` nearest items, discounted by `discount_ratio`.
pub fn baseline_oknn(item: &ItemView, catalog: &Catalog, k: usize, discount_ratio: f64) -> Result<f64> {
    let result = catalog.knn(item, k)?;
    let rows = catalog.neighbors(&result);
    let mean = rows.iter().map(|r| r.listing_price).sum::<f64>() / rows.len() as f64;
    Ok(mean * (1.0 - discount_ratio))
}

/// Catalog-free regressor: the item's own multimodal embedding through a
/// 2-layer perceptron to a scalar.
#[derive(Clone, Debug)]
pub struct AttentionValueEstimator {
    pub embedder: MultimodalEmbedder,
    pub head: Mlp,
}

impl AttentionValueEstimator {
    /// `bias` initializes the output offset, typically the training mean.
    pub fn new(store: &mut ParamStore, config: &ModelConfig, vocab_len: usize, bias: f64, rng: &mut ChaCha8Rng) -> Self {
        let tokens = store.add("ave.tok", nn::uniform(rng, vocab_len, config.dim, 0.1));
        let embedder = MultimodalEmbedder::new(store, "ave.emb", config, tokens, rng);
        let head = Mlp::new(store, "ave.head", &[config.dim, config.dim, 1], rng);
        store.get_mut(head.output_layer().b).fill(bias);
        Self { embedder, head }
    }

    pub fn forward(&self, g: &mut Graph, item: &ItemView) -> Result<Var> {
        let e = self.embedder.embed(g, item)?;
        Ok(self.head.forward(g, e))
    }

    pub fn predict(&self, store: &ParamStore, item: &ItemView) -> Result<f64> {
        let mut g = Graph::frozen(store);
        let out = self.forward(&mut g, item)?;
        Ok(g.scalar(out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learn::{check_gradients, GradCheck};
    use rand::{Rng, SeedableRng};

    fn vocab() -> Vocabulary {
        let words: Vec<String> = ["red", "blue", "bike", "car", "fast", "old", "new"].iter().map(|s| s.to_string()).collect();
        Vocabulary::build([words.as_slice()], 1)
    }

    fn item(id: &str, features: Vec<f64>, title: &str, price: f64) -> CatalogItem {
        CatalogItem {
            id: id.into(),
            category: Category::Bike,
            title: title.into(),
            description: String::new(),
            listing_price: price,
            image_features: features,
        }
    }

    fn view(id: &str, features: Vec<f64>, title: &str, price: f64) -> ItemView {
        ItemView::new(&item(id, features, title, price), &vocab())
    }

    #[test]
    fn self_similarity_is_one() {
        let a = view("a", vec![0.3, -1.0, 2.0], "red bike", 120.0);
        assert!((similarity(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_equal_price_is_two_thirds() {
        let a = view("a", vec![1.0, 0.0], "red", 100.0);
        let b = view("b", vec![0.0, 1.0], "blue", 100.0);
        assert!((similarity(&a, &b) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn half_price_identical_features_is_five_sixths() {
        let a = view("a", vec![1.0, 2.0], "red bike", 100.0);
        let b = view("b", vec![1.0, 2.0], "red bike", 50.0);
        assert!((similarity(&a, &b) - 5.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn zero_features_use_zero_cosine() {
        let a = view("a", vec![0.0, 0.0], "", 100.0);
        let b = view("b", vec![1.0, 0.0], "", 100.0);
        assert!((similarity(&a, &b) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn knn_cases() {
        let v = vocab();
        let query = item("q", vec![1.0, 0.0], "red bike", 100.0);
        let mut clone = query.clone();
        clone.id = "clone".into();
        let items = vec![
            item("far", vec![-1.0, 0.0], "car", 400.0),
            clone,
            item("mid", vec![0.0, 1.0], "red", 100.0),
        ];
        let catalog = Catalog::new(&items, &v);
        let q = ItemView::new(&query, &v);
        let r = catalog.knn(&q, 3).unwrap();
        assert_eq!(r.ids, vec!["clone", "mid", "far"]);
        assert!((r.scores[0] - 1.0).abs() < 1e-12);
        assert!(r.scores.windows(2).all(|w| w[0] >= w[1]));

        // Brute force over the catalog for a K=2 query.
        let mut brute: Vec<(String, f64)> = catalog.items.iter().map(|c| (c.id.clone(), similarity(&q, c))).collect();
        brute.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        let top2 = catalog.knn(&q, 2).unwrap();
        assert_eq!(top2.ids, brute[..2].iter().map(|b| b.0.clone()).collect::<Vec<_>>());

        let empty = Catalog::new(&[], &v);
        assert!(matches!(empty.knn(&q, 2), Err(Error::EmptyCatalog)));
    }

    #[test]
    fn knn_prefers_category_then_fills() {
        let v = vocab();
        let mut other = item("other", vec![1.0, 0.0], "red bike", 100.0);
        other.category = Category::Car;
        let items = vec![other, item("same", vec![0.0, 1.0], "blue", 300.0)];
        let catalog = Catalog::new(&items, &v);
        let q = ItemView::new(&item("q", vec![1.0, 0.0], "red bike", 100.0), &v);
        assert_eq!(catalog.knn(&q, 1).unwrap().ids, vec!["same"]);
        let both = catalog.knn(&q, 2).unwrap();
        assert_eq!(both.ids, vec!["other", "same"]);
    }

    fn small(seed: u64, feature_dim: usize) -> (ModelConfig, ParamStore, MatchingNetwork, ChaCha8Rng) {
        let config = ModelConfig {
            dim: 3,
            feature_dim,
            ..ModelConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let net = MatchingNetwork::new(&mut store, &config, vocab().len(), &mut rng);
        (config, store, net, rng)
    }

    fn random_view(rng: &mut ChaCha8Rng, id: usize, f: usize) -> ItemView {
        let words = ["red", "blue", "bike", "fast", "old"];
        let title = (0..rng.gen_range(0..4)).map(|_| words[rng.gen_range(0..5)]).collect::<Vec<_>>().join(" ");
        let features = (0..f).map(|_| rng.gen_range(-1.0..1.0)).collect();
        view(&format!("i{id}"), features, &title, rng.gen_range(50.0..500.0))
    }

    #[test]
    fn embedder_zero_case_and_dimension_error() {
        let (_, mut store, net, _) = small(1, 4);
        let bank = &net.banks[0];
        for layer in &bank.fusion.layers {
            store.get_mut(layer.w).fill(0.0);
            store.get_mut(layer.b).fill(0.0);
        }
        let mut g = Graph::frozen(&store);
        let out = bank.embed(&mut g, &view("z", vec![0.0; 4], "", 10.0)).unwrap();
        assert!(g.data(out).iter().all(|v| *v == 0.0));
        let err = bank.embed(&mut g, &view("z", vec![0.0; 3], "", 10.0)).unwrap_err();
        assert!(matches!(err, Error::Dimension { expected: 4, got: 3 }));
    }

    #[test]
    fn embedder_hand_trace() {
        // d = 3, F = 2: zero visual input, one-token title, identity-like fusion.
        let (_, mut store, net, _) = small(2, 2);
        let bank = &net.banks[1];
        let tok = vocab().id("red");
        let v = store.get(bank.tokens).row(tok).to_vec();
        let l0 = bank.fusion.layers[0];
        let l1 = bank.fusion.layers[1];
        let mut w0 = Tensor::zeros(3, 6);
        for i in 0..3 {
            w0.row_mut(i)[3 + i] = 1.0;
        }
        *store.get_mut(l0.w) = w0;
        *store.get_mut(l0.b) = Tensor::vector(vec![0.5, 0.0, -0.25]);
        let mut w1 = Tensor::zeros(3, 3);
        for i in 0..3 {
            w1.row_mut(i)[i] = 2.0;
        }
        *store.get_mut(l1.w) = w1;
        *store.get_mut(l1.b) = Tensor::vector(vec![0.0, 1.0, 0.0]);
        let bvis = store.get(bank.visual.b).data().to_vec();
        let _ = bvis;
        let expected: Vec<f64> = (0..3)
            .map(|i| {
                let hidden = (v[i] + [0.5, 0.0, -0.25][i]).max(0.0);
                2.0 * hidden + [0.0, 1.0, 0.0][i]
            })
            .collect();
        let mut g = Graph::frozen(&store);
        let out = bank.embed(&mut g, &view("x", vec![0.0, 0.0], "red", 10.0)).unwrap();
        for (a, e) in g.data(out).iter().zip(&expected) {
            assert!((a - e).abs() < 1e-14);
        }
        let again = bank.embed(&mut g, &view("y", vec![0.0, 0.0], "red", 99.0)).unwrap();
        assert_eq!(g.data(out), g.data(again));
    }

    #[test]
    fn identical_neighbors_give_their_listing() {
        let (_, store, net, mut rng) = small(3, 4);
        let q = random_view(&mut rng, 0, 4);
        let n = view("n", vec![0.2, 0.1, 0.0, -0.3], "red bike", 250.0);
        let rows = vec![&n, &n, &n];
        let mut g = Graph::frozen(&store);
        let out = net.forward(&mut g, &q, &rows).unwrap();
        assert!((g.scalar(out.estimate) - 250.0).abs() < 1e-9);
    }

    #[test]
    fn uniform_last_hop_with_discount() {
        // Make every key identical so hop-3 logits are equal: weights (1/2, 1/2).
        let (_, mut store, net, mut rng) = small(4, 4);
        store.get_mut(net.discount_w).fill(0.89);
        let q = random_view(&mut rng, 0, 4);
        let a = view("a", vec![0.5; 4], "red", 100.0);
        let b = view("b", vec![0.5; 4], "red", 200.0);
        let mut g = Graph::frozen(&store);
        let out = net.forward(&mut g, &q, &[&a, &b]).unwrap();
        assert!((g.scalar(out.estimate) - 133.5).abs() < 1e-9);
    }

    #[test]
    fn attention_properties() {
        let (_, store, net, mut rng) = small(5, 4);
        let q = random_view(&mut rng, 0, 4);
        let ns: Vec<ItemView> = (1..6).map(|i| random_view(&mut rng, i, 4)).collect();
        let rows: Vec<&ItemView> = ns.iter().collect();
        let mut g = Graph::frozen(&store);
        let out = net.forward(&mut g, &q, &rows).unwrap();
        for w in &out.weights {
            let w = g.data(*w);
            assert!(w.iter().all(|x| (0.0..=1.0).contains(x)));
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let raw = g.scalar(out.raw);
        let lo = ns.iter().map(|n| n.listing_price).fold(f64::INFINITY, f64::min);
        let hi = ns.iter().map(|n| n.listing_price).fold(f64::NEG_INFINITY, f64::max);
        assert!(raw >= lo - 1e-9 && raw <= hi + 1e-9);

        // Permuting neighbors permutes the weights and keeps the estimate.
        let perm = [3usize, 0, 4, 1, 2];
        let permuted: Vec<&ItemView> = perm.iter().map(|i| &ns[*i]).collect();
        let mut g2 = Graph::frozen(&store);
        let out2 = net.forward(&mut g2, &q, &permuted).unwrap();
        assert!((g.scalar(out.estimate) - g2.scalar(out2.estimate)).abs() < 1e-9);
        let w1 = g.data(out.weights[2]);
        let w2 = g2.data(out2.weights[2]);
        for (pos, src) in perm.iter().enumerate() {
            assert!((w2[pos] - w1[*src]).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let mut g_store = ParamStore::new();
        let z = g_store.add("z", Tensor::vector(vec![0.3, -1.2, 2.0]));
        let mut g = Graph::frozen(&g_store);
        let a = g.param(z);
        let c = g.constant_vec(vec![50.0; 3]);
        let b = g.add(a, c);
        let sa = g.softmax(a);
        let sb = g.softmax(b);
        for (x, y) in g.data(sa).iter().zip(g.data(sb)) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn matching_gradients_match_finite_differences() {
        for seed in 0..5 {
            let (_, mut store, net, mut rng) = small(10 + seed, 2);
            let q = random_view(&mut rng, 0, 2);
            let ns: Vec<ItemView> = (1..4).map(|i| random_view(&mut rng, i, 2)).collect();
            let target = rng.gen_range(50.0..500.0);
            let report = check_gradients(&mut store, GradCheck::default(), |g| {
                let rows: Vec<&ItemView> = ns.iter().collect();
                let out = net.forward(g, &q, &rows).unwrap();
                crate::learn::loss::l1_mean(g, &[out.estimate], &[target])
            });
            assert!(report.max_rel_error <= 1e-4, "seed {seed}: {report:?}");
        }
    }

    #[test]
    fn baselines() {
        assert_eq!(baseline_averaging(Category::Bike, &[(Category::Bike, 100.0)]), 100.0);
        assert_eq!(baseline_averaging(Category::Bike, &[(Category::Bike, 80.0), (Category::Bike, 120.0), (Category::Car, 1.0)]), 100.0);
        assert_eq!(baseline_averaging(Category::Phone, &[(Category::Bike, 80.0), (Category::Car, 120.0)]), 100.0);

        let v = vocab();
        let same = vec![item("a", vec![1.0], "red", 100.0), item("b", vec![1.0], "red", 100.0)];
        let q = ItemView::new(&item("q", vec![1.0], "red", 100.0), &v);
        assert_eq!(baseline_oknn(&q, &Catalog::new(&same, &v), 2, 0.0).unwrap(), 100.0);
        let two = vec![item("a", vec![1.0], "red", 100.0), item("b", vec![1.0], "red", 200.0)];
        assert!((baseline_oknn(&q, &Catalog::new(&two, &v), 2, 0.11).unwrap() - 133.5).abs() < 1e-9);
    }

    #[test]
    fn ave_zero_final_layer_returns_bias() {
        let config = ModelConfig {
            dim: 3,
            feature_dim: 2,
            ..ModelConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut store = ParamStore::new();
        let ave = AttentionValueEstimator::new(&mut store, &config, vocab().len(), 321.0, &mut rng);
        store.get_mut(ave.head.output_layer().w).fill(0.0);
        for i in 0..4 {
            let x = random_view(&mut rng, i, 2);
            assert_eq!(ave.predict(&store, &x).unwrap(), 321.0);
        }
    }

    #[test]
    fn estimate_clamps_and_matches_convex_case() {
        let (_, store, net, _) = small(6, 2);
        let v = vocab();
        let items: Vec<CatalogItem> = (0..4).map(|i| item(&format!("c{i}"), vec![1.0, 0.5], "red", 300.0)).collect();
        let catalog = Catalog::new(&items, &v);
        let q = ItemView::new(&item("q", vec![0.2, 0.1], "bike", 310.0), &v);
        let e = estimate(&net, &store, &q, &catalog, 3).unwrap();
        assert!((e.price - 300.0).abs() < 1e-9);
        assert_eq!(e.neighbors.ids.len(), 3);
        let q_cheap = ItemView::new(&item("q", vec![0.2, 0.1], "bike", 100.0), &v);
        let e = estimate(&net, &store, &q_cheap, &catalog, 3).unwrap();
        assert_eq!(e.price, 200.0);
    }
}
