//! Seeded edit workloads.
//!
//! A schedule holds abstract intents ("delete some layer"). They are turned
//! into concrete actions only when the client submits them, against whatever
//! its local replica looks like at that moment, so clients routinely target
//! layers a peer has just deleted or locked.

use std::collections::BTreeMap;

use colier_core::document::{Color, DocAction, LayerId, LayerPatch, PathCommand, Transform2D, VcaId};
use colier_core::{Effect, SessionDocument};
use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::config::ScenarioConfig;

/// Largest pause between two intents of one client.
const MAX_THINK_MS: u64 = 50;

/// Share of intents aimed at an id from the shared namespace instead of a
/// layer the client can see.
const BLIND_TARGET: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Category {
    Draw,
    LayerProp,
    Structure,
    Lock,
    Vca,
}

impl Category {
    pub const ALL: [Category; 5] =
        [Category::Draw, Category::LayerProp, Category::Structure, Category::Lock, Category::Vca];

    pub fn kinds(self) -> &'static [IntentKind] {
        use IntentKind::*;
        match self {
            Category::Draw => &[Stroke, Stroke, Stroke, Undo, Redo],
            Category::LayerProp => &[Opacity, Visibility, Rename, Transform, Transform],
            Category::Structure => &[AddLayer, AddLayer, DeleteLayer, ReorderLayer],
            Category::Lock => &[Lock, Unlock, ExclusiveLock, ExclusiveUnlock],
            Category::Vca => &[AddVca, AddVca, RemoveVca, ReorderVca, UpdateParam, UpdateParam, SetEnabled],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IntentKind {
    Stroke,
    Undo,
    Redo,
    Opacity,
    Visibility,
    Rename,
    Transform,
    AddLayer,
    DeleteLayer,
    ReorderLayer,
    Lock,
    Unlock,
    ExclusiveLock,
    ExclusiveUnlock,
    AddVca,
    RemoveVca,
    ReorderVca,
    UpdateParam,
    SetEnabled,
}

impl IntentKind {
    pub fn category(self) -> Category {
        Category::ALL
            .into_iter()
            .find(|c| c.kinds().contains(&self))
            .expect("every kind has a category")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Intent {
    /// Virtual milliseconds after the client's previous submission (after
    /// its join for the first intent).
    pub delay_ms: u64,
    pub kind: IntentKind,
    /// Seeds the choices made at submit time.
    pub entropy: u64,
}

/// Intents per client, in submission order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schedule {
    pub per_client: Vec<Vec<Intent>>,
}

impl Schedule {
    pub fn total(&self) -> usize {
        self.per_client.iter().map(Vec::len).sum()
    }
}

/// Draws `config.ops` intents and deals them to random clients.
pub fn generate_ops(config: &ScenarioConfig) -> Schedule {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut per_client = vec![Vec::new(); config.clients as usize];
    if per_client.is_empty() {
        return Schedule { per_client };
    }
    let weights = WeightedIndex::new(config.conflict_mix.weights()).expect("validated weights");
    for _ in 0..config.ops {
        let client = rng.gen_range(0..per_client.len());
        let kinds = Category::ALL[weights.sample(&mut rng)].kinds();
        let intent = Intent {
            delay_ms: rng.gen_range(0..=MAX_THINK_MS),
            kind: kinds[rng.gen_range(0..kinds.len())],
            entropy: rng.gen(),
        };
        per_client[client].push(intent);
    }
    Schedule { per_client }
}

fn round(v: f64, places: i32) -> f64 {
    let k = 10f64.powi(places);
    (v * k).round() / k
}

fn pick_layer(rng: &mut ChaCha8Rng, doc: &SessionDocument, last_seq: u64) -> LayerId {
    if doc.layers.is_empty() || rng.gen_bool(BLIND_TARGET) {
        LayerId::for_seq(rng.gen_range(1..=last_seq + 1))
    } else {
        doc.layers[rng.gen_range(0..doc.layers.len())].id.clone()
    }
}

/// Picks a layer and, when it has one, an effect instance on it.
fn pick_vca(rng: &mut ChaCha8Rng, doc: &SessionDocument, last_seq: u64) -> (LayerId, VcaId, Option<Effect>) {
    let layer_id = pick_layer(rng, doc, last_seq);
    match doc.layer(&layer_id).filter(|l| !l.pipeline.is_empty()) {
        Some(layer) => {
            let vca = &layer.pipeline[rng.gen_range(0..layer.pipeline.len())];
            (layer_id, vca.id.clone(), Some(vca.effect))
        }
        None => (layer_id, VcaId::for_seq(rng.gen_range(1..=last_seq + 1)), None),
    }
}

fn random_params(rng: &mut ChaCha8Rng, effect: Effect) -> BTreeMap<String, f64> {
    effect
        .params()
        .iter()
        .map(|p| {
            let v = if p.integer {
                rng.gen_range(p.min as i64..=p.max as i64) as f64
            } else {
                round(rng.gen_range(p.min..=p.max), 4)
            };
            (p.name.to_owned(), v)
        })
        .collect()
}

fn random_path(rng: &mut ChaCha8Rng, doc: &SessionDocument) -> Vec<PathCommand> {
    let (w, h) = (doc.meta.width as f64, doc.meta.height as f64);
    let point = |rng: &mut ChaCha8Rng| (round(rng.gen_range(0.0..w), 2), round(rng.gen_range(0.0..h), 2));
    let (x, y) = point(rng);
    let mut path = vec![PathCommand::MoveTo { x, y }];
    for _ in 0..rng.gen_range(1..=6) {
        let (x, y) = point(rng);
        if rng.gen_bool(0.5) {
            path.push(PathCommand::LineTo { x, y });
        } else {
            let (cx, cy) = point(rng);
            path.push(PathCommand::QuadTo { cx, cy, x, y });
        }
    }
    path
}

/// Turns `intent` into an action against a replica at `last_seq`.
pub fn resolve_intent(intent: &Intent, doc: &SessionDocument, last_seq: u64, color: Color) -> DocAction {
    let mut rng = ChaCha8Rng::seed_from_u64(intent.entropy);
    let rng = &mut rng;
    let layer = |rng: &mut ChaCha8Rng| pick_layer(rng, doc, last_seq);
    let patch = |patch: LayerPatch, rng: &mut ChaCha8Rng| DocAction::UpdateLayerProperty { layer_id: layer(rng), patch };
    match intent.kind {
        IntentKind::Stroke => DocAction::NewPath {
            layer_id: Some(layer(rng)),
            stroke_id: None,
            color,
            width: rng.gen_range(1..=20) as f64,
            path: random_path(rng, doc),
        },
        IntentKind::Undo => DocAction::UndoPath { layer_id: layer(rng) },
        IntentKind::Redo => DocAction::RedoPath { layer_id: layer(rng) },
        IntentKind::Opacity => {
            let opacity = round(rng.gen_range(0.0..=1.0), 3);
            patch(LayerPatch { opacity: Some(opacity), ..Default::default() }, rng)
        }
        IntentKind::Visibility => {
            let visible = rng.gen_bool(0.5);
            patch(LayerPatch { visible: Some(visible), ..Default::default() }, rng)
        }
        IntentKind::Rename => {
            let name = format!("layer {}", rng.gen_range(0..1000));
            patch(LayerPatch { name: Some(name), ..Default::default() }, rng)
        }
        IntentKind::Transform => {
            let transform = Transform2D {
                tx: round(rng.gen_range(-100.0..=100.0), 2),
                ty: round(rng.gen_range(-100.0..=100.0), 2),
                rotation: round(rng.gen_range(0.0..360.0), 2),
                scale_x: round(rng.gen_range(0.5..=2.0), 3),
                scale_y: round(rng.gen_range(0.5..=2.0), 3),
            };
            patch(LayerPatch { transform: Some(transform), ..Default::default() }, rng)
        }
        IntentKind::AddLayer => {
            DocAction::AddLayer { layer_id: None, name: format!("layer {}", rng.gen_range(0..1000)), asset: None }
        }
        IntentKind::DeleteLayer => DocAction::DeleteLayer { layer_id: layer(rng) },
        IntentKind::ReorderLayer => {
            let layer_id = layer(rng);
            let to_index = rng.gen_range(0..doc.layers.len().max(1)) as u32;
            DocAction::ReorderLayer { layer_id, to_index }
        }
        IntentKind::Lock => DocAction::Lock { layer_id: layer(rng) },
        IntentKind::Unlock => DocAction::Unlock { layer_id: layer(rng) },
        IntentKind::ExclusiveLock => DocAction::ExclusiveLock { layer_id: layer(rng) },
        IntentKind::ExclusiveUnlock => DocAction::ExclusiveUnlock { layer_id: layer(rng) },
        IntentKind::AddVca => {
            let layer_id = layer(rng);
            let effect = Effect::ALL[rng.gen_range(0..Effect::ALL.len())];
            let params = random_params(rng, effect);
            DocAction::AddVca { layer_id, vca_id: None, effect, enabled: true, params }
        }
        IntentKind::RemoveVca => {
            let (layer_id, vca_id, _) = pick_vca(rng, doc, last_seq);
            DocAction::RemoveVca { layer_id, vca_id }
        }
        IntentKind::ReorderVca => {
            let (layer_id, vca_id, _) = pick_vca(rng, doc, last_seq);
            let len = doc.layer(&layer_id).map_or(1, |l| l.pipeline.len().max(1));
            DocAction::ReorderVca { layer_id, vca_id, to_index: rng.gen_range(0..len) as u32 }
        }
        IntentKind::UpdateParam => {
            let (layer_id, vca_id, effect) = pick_vca(rng, doc, last_seq);
            let params = random_params(rng, effect.unwrap_or(Effect::Contrast));
            DocAction::UpdateVcaParam { layer_id, vca_id, params }
        }
        IntentKind::SetEnabled => {
            let (layer_id, vca_id, _) = pick_vca(rng, doc, last_seq);
            DocAction::SetVcaEnabled { layer_id, vca_id, enabled: rng.gen_bool(0.5) }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ConflictMix, SessionTemplate};

    #[test]
    fn every_kind_belongs_to_exactly_one_category() {
        for c in Category::ALL {
            for k in c.kinds() {
                assert_eq!(k.category(), c);
            }
        }
    }

    #[test]
    fn zero_weight_categories_never_appear() {
        let mix = ConflictMix { draw: 0.0, layer_prop: 0.0, structure: 0.0, lock: 1.0, vca: 0.0 };
        let config = ScenarioConfig { ops: 300, conflict_mix: mix, ..Default::default() };
        let schedule = generate_ops(&config);
        assert_eq!(schedule.total(), 300);
        assert!(schedule.per_client.iter().flatten().all(|i| i.kind.category() == Category::Lock));
    }

    #[test]
    fn resolution_is_deterministic_and_respects_ranges() {
        let doc = SessionTemplate::default().build();
        let config = ScenarioConfig { ops: 500, seed: 9, ..Default::default() };
        for intent in generate_ops(&config).per_client.iter().flatten() {
            let a = resolve_intent(intent, &doc, 0, Color::rgb(1, 2, 3));
            assert_eq!(a, resolve_intent(intent, &doc, 0, Color::rgb(1, 2, 3)));
            if let DocAction::AddVca { params, .. } | DocAction::UpdateVcaParam { params, .. } = &a {
                for (name, v) in params {
                    let (_, spec) = colier_core::effect::find_param(name).unwrap();
                    assert!(spec.accepts(*v), "{name}={v}");
                }
            }
            if let DocAction::NewPath { path, .. } = &a {
                assert!(matches!(path[0], PathCommand::MoveTo { .. }));
            }
        }
    }

    #[test]
    fn an_empty_replica_still_yields_a_target() {
        let doc = SessionDocument::new("e", 8, 8, 0);
        let intent = Intent { delay_ms: 0, kind: IntentKind::DeleteLayer, entropy: 1 };
        let DocAction::DeleteLayer { layer_id } = resolve_intent(&intent, &doc, 4, Color::rgb(0, 0, 0)) else {
            panic!()
        };
        assert!((1..=5).any(|s| LayerId::for_seq(s) == layer_id));
    }
}
