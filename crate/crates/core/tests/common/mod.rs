//! Generators shared by the property suites.
#![allow(dead_code)]

use std::collections::BTreeMap;

use colier_core::document::{
    ChangeMessage, ClientId, Color, DocAction, LayerId, LayerPatch, PathCommand, Transform2D,
    VcaId,
};
use colier_core::effect::Effect;
use proptest::prelude::*;

pub const CLIENTS: [&str; 3] = ["alice", "bob", "carol"];

pub const SAMPLE_FRAME: &str = r##"{"module": "drawing",
 "message": {
  "newPath": {
   "timeStamp": "1617804631471", 
   "clientId":  "m82pY9bvAeIAAAH", 
   "color":     "#795EB3", 
   "width":     "10", 
   "path": [["M",446.99,38],
            ["Q",447,38,448,38],
            ["Q",449,38,449.5,38],
            ["Q",450,38,451,38.5],
            ["Q",452,39,452.5,39],
            ["L",453.01,39]]}}}"##;

pub fn sample_path() -> Vec<PathCommand> {
    vec![
        PathCommand::MoveTo { x: 446.99, y: 38.0 },
        PathCommand::QuadTo { cx: 447.0, cy: 38.0, x: 448.0, y: 38.0 },
        PathCommand::QuadTo { cx: 449.0, cy: 38.0, x: 449.5, y: 38.0 },
        PathCommand::QuadTo { cx: 450.0, cy: 38.0, x: 451.0, y: 38.5 },
        PathCommand::QuadTo { cx: 452.0, cy: 39.0, x: 452.5, y: 39.0 },
        PathCommand::LineTo { x: 453.01, y: 39.0 },
    ]
}

/// Ids of entities created at seq 1..=24; most generated changes hit one.
pub fn layer_id() -> impl Strategy<Value = LayerId> {
    (1u64..24).prop_map(LayerId::for_seq)
}

pub fn vca_id() -> impl Strategy<Value = VcaId> {
    (1u64..24).prop_map(VcaId::for_seq)
}

pub fn client() -> impl Strategy<Value = ClientId> {
    prop::sample::select(&CLIENTS[..]).prop_map(ClientId::from)
}

pub fn color() -> impl Strategy<Value = Color> {
    any::<[u8; 3]>().prop_map(Color)
}

/// Reals with at most six fractional digits.
pub fn coord() -> impl Strategy<Value = f64> {
    (-20_000_000i64..20_000_000).prop_map(|m| m as f64 / 1000.0)
}

pub fn path() -> impl Strategy<Value = Vec<PathCommand>> {
    let segment = prop_oneof![
        (coord(), coord()).prop_map(|(x, y)| PathCommand::LineTo { x, y }),
        (coord(), coord(), coord(), coord())
            .prop_map(|(cx, cy, x, y)| PathCommand::QuadTo { cx, cy, x, y }),
        (coord(), coord()).prop_map(|(x, y)| PathCommand::MoveTo { x, y }),
    ];
    ((coord(), coord()), prop::collection::vec(segment, 0..6)).prop_map(|((x, y), rest)| {
        let mut p = vec![PathCommand::MoveTo { x, y }];
        p.extend(rest);
        p
    })
}

pub fn effect() -> impl Strategy<Value = Effect> {
    prop::sample::select(&Effect::ALL[..])
}

/// In-range value for the single parameter of `effect`.
pub fn param_for(effect: Effect) -> BoxedStrategy<(String, f64)> {
    let spec = effect.params()[0];
    let name = spec.name.to_owned();
    if spec.integer {
        ((spec.min as i64)..=(spec.max as i64))
            .prop_map(move |v| (name.clone(), v as f64))
            .boxed()
    } else {
        (0u32..=1000)
            .prop_map(move |k| (name.clone(), spec.min + (spec.max - spec.min) * k as f64 / 1000.0))
            .boxed()
    }
}

pub fn transform() -> impl Strategy<Value = Transform2D> {
    (coord(), coord(), 0u32..3600, 1u32..4000, 1u32..4000).prop_map(|(tx, ty, r, sx, sy)| {
        Transform2D {
            tx,
            ty,
            rotation: r as f64 / 10.0,
            scale_x: sx as f64 / 1000.0,
            scale_y: sy as f64 / 1000.0,
        }
    })
}

pub fn patch() -> impl Strategy<Value = LayerPatch> {
    (
        prop::option::of(any::<bool>()),
        prop::option::of((0u32..=1000).prop_map(|k| k as f64 / 1000.0)),
        prop::option::of("[a-z ]{0,8}"),
        prop::option::of(transform()),
    )
        .prop_map(|(visible, opacity, name, transform)| LayerPatch {
            visible,
            opacity,
            name,
            transform,
        })
}

/// Document actions as a client would send them: ids of new entities are
/// left for the sequencer.
pub fn action() -> impl Strategy<Value = DocAction> {
    prop_oneof![
        4 => ("[A-Za-z0-9 ]{0,10}").prop_map(|name| DocAction::AddLayer { layer_id: None, name, asset: None }),
        1 => layer_id().prop_map(|layer_id| DocAction::DeleteLayer { layer_id }),
        1 => (layer_id(), 0u32..6).prop_map(|(layer_id, to_index)| DocAction::ReorderLayer { layer_id, to_index }),
        3 => (layer_id(), patch()).prop_map(|(layer_id, patch)| DocAction::UpdateLayerProperty { layer_id, patch }),
        1 => layer_id().prop_map(|layer_id| DocAction::Lock { layer_id }),
        1 => layer_id().prop_map(|layer_id| DocAction::Unlock { layer_id }),
        1 => layer_id().prop_map(|layer_id| DocAction::ExclusiveLock { layer_id }),
        1 => layer_id().prop_map(|layer_id| DocAction::ExclusiveUnlock { layer_id }),
        4 => (layer_id(), color(), 1u32..400, path()).prop_map(|(l, color, w, path)| DocAction::NewPath {
            layer_id: Some(l),
            stroke_id: None,
            color,
            width: w as f64 / 10.0,
            path,
        }),
        2 => layer_id().prop_map(|layer_id| DocAction::UndoPath { layer_id }),
        1 => layer_id().prop_map(|layer_id| DocAction::RedoPath { layer_id }),
        2 => (layer_id(), effect(), any::<bool>())
            .prop_flat_map(|(l, e, enabled)| (Just(l), Just(e), Just(enabled), prop::option::of(param_for(e))))
            .prop_map(|(layer_id, effect, enabled, p)| DocAction::AddVca {
                layer_id,
                vca_id: None,
                effect,
                enabled,
                params: p.into_iter().collect(),
            }),
        1 => (layer_id(), vca_id()).prop_map(|(layer_id, vca_id)| DocAction::RemoveVca { layer_id, vca_id }),
        1 => (layer_id(), vca_id(), 0u32..4).prop_map(|(layer_id, vca_id, to_index)| DocAction::ReorderVca { layer_id, vca_id, to_index }),
        2 => (layer_id(), vca_id(), effect().prop_flat_map(param_for))
            .prop_map(|(layer_id, vca_id, (k, v))| DocAction::UpdateVcaParam { layer_id, vca_id, params: BTreeMap::from([(k, v)]) }),
        1 => (layer_id(), vca_id(), any::<bool>()).prop_map(|(layer_id, vca_id, enabled)| DocAction::SetVcaEnabled { layer_id, vca_id, enabled }),
    ]
}

pub fn change() -> impl Strategy<Value = ChangeMessage> {
    (client(), 0i64..2_000_000_000_000, action())
        .prop_map(|(client_id, time_stamp, action)| ChangeMessage { client_id, time_stamp, action })
}
