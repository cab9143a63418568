#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use gateway::service::{Service, ServiceConfig};
use gateway::store::SessionLog;
use pricenego::config::ModelConfig;
use pricenego::corpus::Scenario;
use pricenego::model::Negotiator;
use pricenego::synthetic::{World, WorldConfig};
use pricenego::valuation::Catalog;

pub fn world() -> World {
    World::generate(&WorldConfig {
        items: 24,
        scenarios: 6,
        dialogues_per_scenario: 2,
        feature_dim: 6,
        ..WorldConfig::default()
    })
    .unwrap()
}

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        dim: 8,
        feature_dim: 6,
        neighbors: 4,
        head_hidden: 8,
        rnn_layers: 1,
        max_tokens: 12,
        ..ModelConfig::default()
    }
}

/// An untrained agent whose action head ignores the state and prefers
/// actions in the order of `bias` (indexed like `Action::ALL`).
pub fn biased_model(world: &World, bias: [f64; 6]) -> Negotiator {
    let mut model = Negotiator::new(tiny_config(), world.vocabulary());
    let out = *model.actions.mlp.output_layer();
    model.store.get_mut(out.w).fill(0.0);
    model.store.get_mut(out.b).data_mut().copy_from_slice(&bias);
    model
}

/// An untrained agent over the small world: enough to drive the protocol.
pub fn service(log: SessionLog, idle_timeout: Duration) -> (Service, World) {
    let world = world();
    let model = Negotiator::new(tiny_config(), world.vocabulary());
    (service_with(model, &world, log, idle_timeout), world)
}

pub fn service_with(model: Negotiator, world: &World, log: SessionLog, idle_timeout: Duration) -> Service {
    let catalog = Catalog::new(&world.catalog, &model.vocab);
    let config = ServiceConfig {
        idle_timeout,
        ..ServiceConfig::default()
    };
    Service::new(Arc::new(model), &world.scenarios, &catalog, log, 1, config).unwrap()
}

pub fn scenario_map(scenarios: &[Scenario]) -> std::collections::BTreeMap<String, Scenario> {
    scenarios.iter().map(|s| (s.id.clone(), s.clone())).collect()
}

pub fn write_jsonl<T: serde::Serialize>(path: &Path, rows: &[T]) {
    let text: String = rows.iter().map(|r| serde_json::to_string(r).unwrap() + "\n").collect();
    std::fs::write(path, text).unwrap();
}
