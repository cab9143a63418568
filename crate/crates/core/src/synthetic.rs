//! A small generated marketplace: catalog items whose features and wording
//! track their price, scenarios drawn from them, and rule-driven dialogues
//! played through the real session state machine.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{derive_labels, format_price, CatalogItem, Category, Dialogue, DialogueFile, Role, Scenario, Vocabulary};
use crate::error::Result;
use crate::policy::{Action, RatioClass};
use crate::session::{Move, NegotiationSession, Phase};

const LOG_MIN: f64 = 3.5;
const LOG_MAX: f64 = 10.5;

#[derive(Clone, Debug, PartialEq)]
pub struct WorldConfig {
    pub items: usize,
    pub scenarios: usize,
    pub dialogues_per_scenario: usize,
    pub feature_dim: usize,
    /// True value as a fraction of the listing price.
    pub value_ratio: f64,
    /// Std-dev of the additive feature noise.
    pub noise: f64,
    pub max_turns: usize,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            items: 200,
            scenarios: 20,
            dialogues_per_scenario: 4,
            feature_dim: 16,
            value_ratio: 0.89,
            noise: 0.02,
            max_turns: 20,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug)]
pub struct World {
    pub catalog: Vec<CatalogItem>,
    pub scenarios: Vec<Scenario>,
    pub dialogues: Vec<DialogueFile>,
}

impl World {
    pub fn generate(config: &WorldConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let catalog = catalog(config, &mut rng);
        let scenarios: Vec<Scenario> = catalog
            .iter()
            .take(config.scenarios)
            .enumerate()
            .map(|(i, item)| scenario_for(item, i))
            .collect();
        let mut dialogues = Vec::new();
        for s in &scenarios {
            for k in 0..config.dialogues_per_scenario {
                let first = if k % 2 == 0 { Role::Buyer } else { Role::Seller };
                dialogues.push(rule_dialogue(s, first, config.max_turns, &mut rng)?);
            }
        }
        Ok(Self {
            catalog,
            scenarios,
            dialogues,
        })
    }

    /// True value of a catalog item under this world's pricing.
    pub fn true_value(item: &CatalogItem, config: &WorldConfig) -> f64 {
        item.listing_price * config.value_ratio
    }

    /// Every token of the dialogues, scenario listings and catalog text.
    pub fn vocabulary(&self) -> Vocabulary {
        crate::corpus::corpus_vocabulary(&self.labeled(), &self.catalog, 1)
    }

    pub fn labeled(&self) -> Vec<Dialogue> {
        self.dialogues
            .iter()
            .map(|d| {
                let s = self
                    .scenarios
                    .iter()
                    .find(|s| s.id == d.scenario_id)
                    .expect("dialogue scenario exists");
                derive_labels(d, s)
            })
            .collect()
    }
}

fn noun(category: Category) -> &'static str {
    match category {
        Category::Bike => "bike",
        Category::Car => "car",
        Category::Electronics => "laptop",
        Category::Furniture => "sofa",
        Category::Housing => "apartment",
        Category::Phone => "phone",
    }
}

fn price_range(category: Category) -> (f64, f64) {
    match category {
        Category::Bike => (80.0, 2500.0),
        Category::Car => (1500.0, 30000.0),
        Category::Electronics => (60.0, 2000.0),
        Category::Furniture => (40.0, 1800.0),
        Category::Housing => (600.0, 5000.0),
        Category::Phone => (50.0, 1200.0),
    }
}

/// Wording tier from position in the overall log-price range.
fn tier_words(z: f64) -> (&'static str, &'static str) {
    if z < 0.35 {
        ("used", "some wear but works")
    } else if z < 0.6 {
        ("good", "well kept and clean")
    } else {
        ("premium", "like new with all extras")
    }
}

/// Items with log-uniform listing prices. Features are Gaussian bumps over
/// normalized log price plus noise, so feature similarity tracks price.
pub fn catalog(config: &WorldConfig, rng: &mut ChaCha8Rng) -> Vec<CatalogItem> {
    let f = config.feature_dim.max(1);
    let width = 1.5 / f as f64;
    (0..config.items)
        .map(|i| {
            let category = Category::ALL[i % Category::ALL.len()];
            let (lo, hi) = price_range(category);
            let listing = (rng.gen_range(lo.ln()..hi.ln())).exp().round().max(1.0);
            let z = ((listing.ln() - LOG_MIN) / (LOG_MAX - LOG_MIN)).clamp(0.0, 1.0);
            let image_features = (0..f)
                .map(|j| {
                    let mu = if f == 1 { 0.5 } else { j as f64 / (f - 1) as f64 };
                    let bump = (-(z - mu).powi(2) / (2.0 * width * width)).exp();
                    bump + config.noise * rng.gen_range(-1.0..1.0)
                })
                .collect();
            let (adj, phrase) = tier_words(z);
            let n = noun(category);
            CatalogItem {
                id: format!("item{i:04}"),
                category,
                title: format!("{adj} {n}"),
                description: format!("{phrase} {n} for sale"),
                listing_price: listing,
                image_features,
            }
        })
        .collect()
}

/// Buyer targets cycle through 50%, 70% and 90% of the listing; the seller's
/// bottom is 70%.
pub fn scenario_for(item: &CatalogItem, index: usize) -> Scenario {
    let target = [0.5, 0.7, 0.9][index % 3];
    Scenario {
        id: format!("s{index:03}"),
        category: item.category,
        title: item.title.clone(),
        description: item.description.clone(),
        listing_price: item.listing_price,
        seller_bottom: (item.listing_price * 0.7).round(),
        buyer_target: (item.listing_price * target).round(),
        image_features: item.image_features.clone(),
        image_url: None,
    }
}

/// Fixed phrasing for a move. The variant depends only on the speaker, the
/// action and how often the speaker has already used it, so a decoder that
/// sees the history can reproduce it exactly.
pub fn template(role: Role, action: Action, nth: usize, noun: &str, price: Option<f64>) -> String {
    let p = price.map(format_price).unwrap_or_default();
    match (role, action, nth % 2) {
        (Role::Buyer, Action::Negotiate, 0) => format!("hi , is the {noun} still available ?"),
        (Role::Buyer, Action::Negotiate, _) => "can you tell me more about it ?".into(),
        (Role::Seller, Action::Negotiate, 0) => format!("yes , the {noun} is in great shape ."),
        (Role::Seller, Action::Negotiate, _) => "it works perfectly and comes with everything .".into(),
        (Role::Buyer, Action::Concede, 0) => format!("how about {p} ?"),
        (Role::Buyer, Action::Concede, _) => format!("i could go up to {p} ."),
        (Role::Seller, Action::Concede, 0) => format!("i can come down to {p} ."),
        (Role::Seller, Action::Concede, _) => format!("the best i can do is {p} ."),
        (Role::Buyer, Action::Offer, _) => format!("my final offer is {p} ."),
        (Role::Seller, Action::Offer, _) => format!("{p} and it is yours ."),
        (Role::Buyer, Action::Accept, _) => "deal , thank you !".into(),
        (Role::Seller, Action::Accept, _) => "great , it is a deal .".into(),
        (Role::Buyer, Action::Reject, _) => "sorry , that is too much for me .".into(),
        (Role::Seller, Action::Reject, _) => "sorry , that is too low .".into(),
        (_, Action::Quit, _) => "i will pass , thanks .".into(),
    }
}

/// Plays two rule-following traders. Each opens with small talk, then
/// concedes by 20% or 40% of its range (60% once impatient) until the gap
/// is small, then offers. The other side accepts offers near its own
/// standing price or inside a private reservation price.
pub fn rule_dialogue(scenario: &Scenario, first: Role, max_turns: usize, rng: &mut ChaCha8Rng) -> Result<DialogueFile> {
    let listing = scenario.listing_price;
    let reservation = [
        listing * rng.gen_range(0.72..0.95),
        listing * rng.gen_range(0.8..1.0),
    ];
    let patience = rng.gen_range(4..9);
    let mut session = NegotiationSession::new(scenario.clone(), first, max_turns)?;
    let mut used = [[0usize; 6]; 2];
    let n = noun(scenario.category);
    while !session.is_over() {
        let role = session.to_move();
        let i = role.index();
        let spoken = session.transcript().iter().filter(|t| t.speaker == role).count();
        let mine = session.proposal(role);
        let theirs = session.proposal(role.opponent());
        let (action, price) = match session.phase() {
            Phase::OfferPending { price, .. } => {
                let near = (price - mine).abs() <= 0.1 * listing;
                let acceptable = near
                    || match role {
                        Role::Seller => price >= reservation[i],
                        Role::Buyer => price <= reservation[i],
                    };
                if acceptable && rng.gen_bool(0.9) {
                    (Action::Accept, None)
                } else if rng.gen_bool(0.7) {
                    (Action::Reject, None)
                } else {
                    (Action::Quit, None)
                }
            }
            _ if spoken == 0 || (spoken < 3 && rng.gen_bool(0.2)) => (Action::Negotiate, None),
            _ if (mine - theirs).abs() <= 0.08 * listing => (Action::Offer, Some(mine)),
            _ if spoken >= patience + 2 && rng.gen_bool(0.3) => (Action::Quit, None),
            _ => {
                let ratio = if spoken >= patience {
                    RatioClass::R60
                } else {
                    *[RatioClass::R20, RatioClass::R40].choose(rng).expect("non-empty")
                };
                (Action::Concede, Some(session.adjusted_price(role, ratio)))
            }
        };
        let text = template(role, action, used[i][action.index()], n, price);
        used[i][action.index()] += 1;
        let mut mv = Move::new(action, text);
        if let (Action::Offer, Some(p)) = (action, price) {
            mv = mv.with_offer_price(p);
        }
        session.step(role, mv)?;
    }
    Ok(session.to_dialogue_file())
}
