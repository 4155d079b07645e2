use colier_core::document::{Layer, LayerId};
use colier_core::SessionDocument;
use serde::{Deserialize, Serialize};

/// Relative weights of the intent categories a workload draws from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ConflictMix {
    pub draw: f64,
    pub layer_prop: f64,
    pub structure: f64,
    pub lock: f64,
    pub vca: f64,
}

impl Default for ConflictMix {
    fn default() -> Self {
        ConflictMix { draw: 3.0, layer_prop: 2.0, structure: 2.0, lock: 1.0, vca: 2.0 }
    }
}

impl ConflictMix {
    pub fn weights(&self) -> [f64; 5] {
        [self.draw, self.layer_prop, self.structure, self.lock, self.vca]
    }
}

/// The document every simulated session starts from: an empty canvas plus
/// `layers` blank layers with ids `T0`, `T1`, ...
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SessionTemplate {
    pub width: u32,
    pub height: u32,
    pub layers: u32,
}

impl Default for SessionTemplate {
    fn default() -> Self {
        SessionTemplate { width: 640, height: 480, layers: 2 }
    }
}

impl SessionTemplate {
    pub fn layer_id(i: u32) -> LayerId {
        LayerId::new(format!("T{i}"))
    }

    pub fn build(&self) -> SessionDocument {
        let mut doc = SessionDocument::new("simulation", self.width, self.height, 0);
        doc.layers = (0..self.layers)
            .map(|i| Layer::new(Self::layer_id(i), format!("Layer {i}")))
            .collect();
        doc
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ScenarioConfig {
    pub clients: u32,
    /// Total edit intents, spread over all clients.
    pub ops: u32,
    /// Per-message delay, drawn uniformly from `min..=max` milliseconds.
    pub latency_ms: (u64, u64),
    pub seed: u64,
    pub conflict_mix: ConflictMix,
    pub session_template: SessionTemplate,
    /// Lets client-to-server messages overtake each other.
    #[serde(default)]
    pub reorder_upstream: bool,
    /// Wall-clock bound on a run; exceeding it means the run never settles.
    pub wall_limit_ms: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            clients: 2,
            ops: 100,
            latency_ms: (0, 50),
            seed: 0,
            conflict_mix: ConflictMix::default(),
            session_template: SessionTemplate::default(),
            reorder_upstream: false,
            wall_limit_ms: 30_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("at least one client is needed")]
    NoClients,
    #[error("latency range {0}..{1} is empty")]
    LatencyRange(u64, u64),
    #[error("conflict weights must be finite, non-negative and not all zero")]
    Weights,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.clients == 0 {
            return Err(ConfigError::NoClients);
        }
        let (min, max) = self.latency_ms;
        if min > max {
            return Err(ConfigError::LatencyRange(min, max));
        }
        let w = self.conflict_mix.weights();
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) || w.iter().sum::<f64>() <= 0.0 {
            return Err(ConfigError::Weights);
        }
        Ok(())
    }
}
