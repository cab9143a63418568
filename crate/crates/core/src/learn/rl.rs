//! REINFORCE on the two policy heads, driven by self-play against a copy
//! of the same model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::autodiff::Graph;
use super::optim::Adam;
use super::params::ParamStore;
use super::supervised::MetricsLog;
use super::tensor::softmax;
use crate::config::{ModelConfig, TrainConfig};
use crate::corpus::Role;
use crate::error::{Error, Result};
use crate::generator::DecodeMode;
use crate::model::{Negotiator, PreparedScenario};
use crate::policy::{Action, ActionMask, ActionPredictor, PriceAdjuster, RatioClass};
use crate::session::{reward, selfplay, Decision, Participant, PolicyMode, SelfPlayConfig};

/// One sampled choice: the state it was made in and what was picked.
#[derive(Clone, Debug)]
pub struct Choice {
    pub state: Vec<f64>,
    pub mask: ActionMask,
    pub action: Action,
    pub ratio: Option<RatioClass>,
}

impl From<&Decision> for Choice {
    fn from(d: &Decision) -> Self {
        Self {
            state: d.state.to_vec(),
            mask: d.mask,
            action: d.action,
            ratio: d.ratio,
        }
    }
}

/// Mean of the rewards seen so far; before any reward it adopts the first
/// one, so the first advantage is zero.
#[derive(Clone, Debug, Default)]
pub struct RunningMean {
    sum: f64,
    n: usize,
}

impl RunningMean {
    pub fn value_or(&self, first: f64) -> f64 {
        if self.n == 0 {
            first
        } else {
            self.sum / self.n as f64
        }
    }

    pub fn push(&mut self, x: f64) {
        self.sum += x;
        self.n += 1;
    }
}

fn policy_param(name: &str) -> bool {
    name.starts_with("ap.") || name.starts_with("pa.")
}

/// One gradient step on `-advantage * sum log pi(choice)`. Returns the L2
/// norm of the resulting parameter change.
pub fn reinforce_step(
    store: &mut ParamStore,
    actions: &ActionPredictor,
    prices: Option<&PriceAdjuster>,
    adam: &mut Adam,
    choices: &[Choice],
    advantage: f64,
    lr: f64,
) -> Result<f64> {
    if choices.is_empty() || advantage == 0.0 {
        return Ok(0.0);
    }
    let grads = {
        let mut g = Graph::with_trainable(store, policy_param);
        let mut terms = Vec::with_capacity(2 * choices.len());
        for c in choices {
            let s = g.constant_vec(c.state.clone());
            let lp = actions.masked_log_probs(&mut g, s, &c.mask)?;
            terms.push(g.pick(lp, c.action.index()));
            if let (Some(pa), Some(r)) = (prices, c.ratio) {
                let lp = pa.log_probs(&mut g, s, c.action)?;
                terms.push(g.pick(lp, r.index()));
            }
        }
        let total = g.add_all(&terms).expect("non-empty");
        let loss = g.scale(total, -advantage);
        g.backward(loss)?
    };
    let before: Vec<(usize, Vec<f64>)> = grads.iter().map(|(id, _)| (id.index(), store.get(id).data().to_vec())).collect();
    adam.step(store, &grads, lr)?;
    let moved: f64 = grads
        .iter()
        .zip(&before)
        .map(|((id, _), (_, old))| {
            store
                .get(id)
                .data()
                .iter()
                .zip(old)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
        })
        .sum();
    Ok(moved.sqrt())
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RlReport {
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    /// Norm of each episode's parameter change.
    pub update_norms: Vec<f64>,
}

/// Self-play episodes on scenarios drawn uniformly from `prepared`. Both
/// sides sample actions and ratios from the current policy and decode text
/// greedily; every decision in the episode shares the episode's advantage.
pub fn train_rl(model: &mut Negotiator, prepared: &[PreparedScenario], config: &TrainConfig, log: &mut MetricsLog) -> Result<RlReport> {
    train_rl_with(model, prepared, config, log, |outcome, p| {
        reward(outcome, p.estimate, p.scenario.listing_price)
    })
}

/// [`train_rl`] with a caller-supplied reward, for sanity worlds.
pub fn train_rl_with<F>(model: &mut Negotiator, prepared: &[PreparedScenario], config: &TrainConfig, log: &mut MetricsLog, reward_of: F) -> Result<RlReport>
where
    F: Fn(&crate::corpus::Outcome, &PreparedScenario) -> f64,
{
    config.validate()?;
    if prepared.is_empty() {
        return Err(Error::Prerequisite("reinforcement needs at least one scenario".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(model.store.len());
    let mut baseline = RunningMean::default();
    let mut report = RlReport::default();
    for episode in 0..config.rl_episodes {
        let p = &prepared[rng.gen_range(0..prepared.len())];
        let play = SelfPlayConfig {
            max_turns: config.rl_max_turns,
            first_mover: if episode % 2 == 0 { Role::Buyer } else { Role::Seller },
            policy: PolicyMode::Sample,
            text: DecodeMode::Greedy,
        };
        let player = Participant { model, prepared: p };
        let ep = selfplay(player, player, play, &mut rng)?;
        let r = reward_of(&ep.outcome(), p);
        let advantage = if config.rl_baseline { r - baseline.value_or(r) } else { r };
        baseline.push(r);
        let choices: Vec<Choice> = ep.decisions.iter().map(Choice::from).collect();
        let (actions, prices) = (model.actions.clone(), model.prices.clone());
        let norm = reinforce_step(&mut model.store, &actions, Some(&prices), &mut adam, &choices, advantage, config.rl_lr)?;
        log.record("rl", episode, r, config.rl_lr)?;
        report.rewards.push(r);
        report.advantages.push(advantage);
        report.update_norms.push(norm);
    }
    model.mark_stage("rl");
    Ok(report)
}

/// Two fixed random states, two legal actions (accept or reject); in each
/// state one action pays 1 and the other 0. Returns, after every episode,
/// the mean probability the policy puts on the paying action.
pub fn bandit(config: &ModelConfig, episodes: usize, lr: f64, seed: u64) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let head = ActionPredictor::new(&mut store, config, &mut rng);
    let states: Vec<Vec<f64>> = (0..2)
        .map(|_| (0..config.state_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let paying = [Action::Accept, Action::Reject];
    let mask = ActionMask::only(&paying);
    let mut adam = Adam::new(store.len());
    let mut baseline = RunningMean::default();
    let mut history = Vec::with_capacity(episodes);
    let mass = |store: &ParamStore| -> Result<f64> {
        let mut total = 0.0;
        for (s, a) in states.iter().zip(paying) {
            let mut g = Graph::frozen(store);
            let x = g.constant_vec(s.clone());
            let lp = head.masked_log_probs(&mut g, x, &mask)?;
            total += g.data(lp)[a.index()].exp();
        }
        Ok(total / states.len() as f64)
    };
    for _ in 0..episodes {
        let k = rng.gen_range(0..states.len());
        let probs = {
            let mut g = Graph::frozen(&store);
            let x = g.constant_vec(states[k].clone());
            let logits = head.logits(&mut g, x);
            let masked: Vec<f64> = g.data(logits).iter().zip(mask.additive()).map(|(l, m)| l + m).collect();
            softmax(&masked)
        };
        let action = Action::from_index(super::tensor::sample_categorical(&probs, &mut rng)).expect("six actions");
        let r = if action == paying[k] { 1.0 } else { 0.0 };
        let advantage = r - baseline.value_or(r);
        baseline.push(r);
        let choice = Choice {
            state: states[k].clone(),
            mask,
            action,
            ratio: None,
        };
        reinforce_step(&mut store, &head, None, &mut adam, &[choice], advantage, lr)?;
        history.push(mass(&store)?);
    }
    Ok(history)
}
