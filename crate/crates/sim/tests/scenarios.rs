use std::collections::BTreeMap;

use colier_core::document::{DocAction, LayerId, LayerPatch, VcaId};
use colier_core::{Effect, SessionDocument};
use colier_sim::{
    check_convergence, generate_ops, run_scenario, Category, ConflictMix, IntentKind, ScenarioConfig,
    ScriptedChange, SessionTemplate, SimError, Simulation,
};
use proptest::prelude::*;

fn config(clients: u32, ops: u32, latency: (u64, u64), seed: u64) -> ScenarioConfig {
    ScenarioConfig { clients, ops, latency_ms: latency, seed, ..Default::default() }
}

#[test]
fn same_seed_same_schedule() {
    let c = config(3, 200, (0, 100), 42);
    assert_eq!(generate_ops(&c), generate_ops(&c));
    assert_ne!(generate_ops(&c), generate_ops(&ScenarioConfig { seed: 43, ..c }));
}

#[test]
fn structure_only_mix_yields_structure_intents() {
    let mix = ConflictMix { draw: 0.0, layer_prop: 0.0, structure: 1.0, lock: 0.0, vca: 0.0 };
    let c = ScenarioConfig { conflict_mix: mix, ..config(4, 400, (0, 10), 1) };
    let kinds: Vec<IntentKind> = generate_ops(&c).per_client.into_iter().flatten().map(|i| i.kind).collect();
    assert_eq!(kinds.len(), 400);
    assert!(kinds
        .iter()
        .all(|k| matches!(k, IntentKind::AddLayer | IntentKind::DeleteLayer | IntentKind::ReorderLayer)));
    assert!(kinds.iter().all(|k| k.category() == Category::Structure));
}

#[test]
fn zero_ops_gives_empty_schedules() {
    let s = generate_ops(&config(3, 0, (0, 0), 5));
    assert_eq!(s.per_client.len(), 3);
    assert!(s.per_client.iter().all(Vec::is_empty));
}

#[test]
fn null_scenario() {
    let r = run_scenario(&config(1, 0, (0, 0), 0)).unwrap();
    assert!(r.converged);
    assert_eq!(r.final_seq, 0);
    assert_eq!(r.rejected(), 0);
    assert_eq!(r.total_intents, 0);
}

#[test]
fn zero_clients_is_a_config_error() {
    assert!(matches!(run_scenario(&config(0, 10, (0, 0), 0)), Err(SimError::Config(_))));
}

#[test]
fn two_concurrent_adds_land_in_arrival_order() {
    let add = |name: &str| DocAction::AddLayer { layer_id: None, name: name.into(), asset: None };
    let template = SessionTemplate { layers: 0, ..Default::default() };
    let c = ScenarioConfig { session_template: template.clone(), ..config(2, 0, (0, 0), 3) };
    let script = vec![
        ScriptedChange { client: 1, at_ms: 10, action: add("from b") },
        ScriptedChange { client: 0, at_ms: 10, action: add("from a") },
    ];
    let mut sim = Simulation::scripted(c, script).unwrap();
    let r = sim.run().unwrap();
    assert!(r.converged);
    assert_eq!(r.final_seq, 2);

    // oracle: the server changelog replayed onto the template
    let session = sim.hub().session("sim").unwrap();
    let replayed = session.log().replay_from_scratch(&template.build(), 2).unwrap();
    let names = |d: &SessionDocument| d.layers.iter().map(|l| l.name.clone()).collect::<Vec<_>>();
    assert_eq!(names(&replayed), ["from b", "from a"]);
    for i in 0..2 {
        assert_eq!(names(sim.client_document(i)), names(&replayed));
    }
}

#[test]
fn withheld_event_is_reported_with_its_field() {
    let c = ScenarioConfig { session_template: SessionTemplate { layers: 1, ..Default::default() }, ..config(2, 0, (5, 5), 0) };
    let t0 = SessionTemplate::layer_id(0);
    let patch = LayerPatch { opacity: Some(0.25), ..Default::default() };
    let script = vec![ScriptedChange { client: 0, at_ms: 50, action: DocAction::UpdateLayerProperty { layer_id: t0, patch } }];
    let mut sim = Simulation::scripted(c, script).unwrap();
    sim.run().unwrap();
    let server = sim.server_document().clone();
    // a replica that missed the last event is the state just before it
    let stale = sim.hub().session("sim").unwrap().log().replay_from_scratch(sim.hub().session("sim").unwrap().base(), 0).unwrap();
    let verdict = check_convergence(&server, &[sim.client_document(0), &stale]);
    assert!(!verdict.converged);
    let d = verdict.divergence.unwrap();
    assert_eq!(d.client, 1);
    assert_eq!(d.path, "layers[0].opacity");
}

#[test]
fn delete_versus_edit_drops_the_later_edit() {
    let c = ScenarioConfig { session_template: SessionTemplate { layers: 1, ..Default::default() }, ..config(2, 0, (20, 20), 0) };
    let l = SessionTemplate::layer_id(0);
    let patch = LayerPatch { opacity: Some(0.5), ..Default::default() };
    let script = vec![
        ScriptedChange { client: 0, at_ms: 100, action: DocAction::DeleteLayer { layer_id: l.clone() } },
        ScriptedChange { client: 1, at_ms: 101, action: DocAction::UpdateLayerProperty { layer_id: l.clone(), patch } },
    ];
    let mut sim = Simulation::scripted(c, script).unwrap();
    let r = sim.run().unwrap();
    assert_eq!(r.rejected_count.get("StaleTarget"), Some(&1));
    assert_eq!(r.rejected(), 1);
    assert!(r.converged);
    assert!(sim.server_document().layer(&l).is_none());
}

#[test]
fn last_processed_parameter_write_wins() {
    let c = ScenarioConfig { session_template: SessionTemplate { layers: 1, ..Default::default() }, ..config(3, 0, (10, 10), 0) };
    let l = SessionTemplate::layer_id(0);
    let mut script = vec![ScriptedChange {
        client: 0,
        at_ms: 50,
        action: DocAction::AddVca { layer_id: l.clone(), vca_id: None, effect: Effect::Contrast, enabled: true, params: BTreeMap::new() },
    }];
    let vca = VcaId::for_seq(1);
    for (client, v) in [(0, 0.2), (1, 0.5), (2, 0.9)] {
        let params = BTreeMap::from([("factor".to_owned(), v)]);
        let action = DocAction::UpdateVcaParam { layer_id: l.clone(), vca_id: vca.clone(), params };
        script.push(ScriptedChange { client, at_ms: 100 + client as i64, action });
    }
    let mut sim = Simulation::scripted(c, script).unwrap();
    let r = sim.run().unwrap();
    assert!(r.converged);
    assert_eq!(r.rejected(), 0);
    let last = sim.hub().session("sim").unwrap().log().entries().last().unwrap().clone();
    let DocAction::UpdateVcaParam { params, .. } = &last.change.action else { panic!() };
    let value = sim.server_document().layers[0].vca(&vca).unwrap().param("factor");
    assert_eq!(value, Some(params["factor"]));
    assert_eq!(value, Some(0.9));
}

#[test]
fn scripted_change_before_join_fails() {
    let script = vec![ScriptedChange { client: 0, at_ms: 0, action: DocAction::UndoPath { layer_id: LayerId::new("T0") } }];
    let mut sim = Simulation::scripted(config(1, 0, (10, 10), 0), script).unwrap();
    assert!(matches!(sim.run(), Err(SimError::Client { client: 0, .. })));
    assert!(matches!(Simulation::scripted(config(1, 0, (0, 0), 0), vec![ScriptedChange { client: 3, at_ms: 0, action: DocAction::UndoPath { layer_id: LayerId::new("T0") } }]), Err(SimError::UnknownClient(3))));
}

#[test]
fn reordered_uplinks_still_converge() {
    let c = ScenarioConfig { reorder_upstream: true, ..config(4, 400, (0, 150), 17) };
    let r = run_scenario(&c).unwrap();
    assert!(r.passed(), "{}", r.to_json());
}

#[test]
fn report_json_round_trips() {
    let r = run_scenario(&config(2, 50, (0, 30), 8)).unwrap();
    let back: colier_sim::ScenarioReport = serde_json::from_str(&r.to_json()).unwrap();
    assert_eq!(back, r);
    assert!(r.to_json().contains("\"perClientFinalHash\""));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn runs_are_reproducible_and_account_for_every_intent(
        clients in 1u32..=4,
        ops in 0u32..=250,
        lo in 0u64..=100,
        span in 0u64..=100,
        seed in any::<u64>(),
    ) {
        let c = config(clients, ops, (lo, lo + span), seed);
        let a = run_scenario(&c).unwrap();
        let b = run_scenario(&c).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.passed(), "{}", a.to_json());
        prop_assert_eq!(a.total_intents, ops as u64);
        prop_assert_eq!(a.accepted + a.rejected(), a.total_intents);
        prop_assert_eq!(a.unmatched_rejections, 0);
        prop_assert!(a.per_client_final_hash.iter().all(|h| *h == a.server_hash));
    }
}
