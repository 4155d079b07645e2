//! The discrete-event loop.
//!
//! Everything happens on one thread against a virtual millisecond clock.
//! Each client has an upstream and a downstream link; a message on a link is
//! delayed by a uniform draw from the latency range and, unless upstream
//! reordering is switched on, never overtakes an earlier one on that link.
//! Frames cross the links as encoded text, exactly as they would on a socket.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap, VecDeque};
use std::time::{Duration, Instant};

use colier_client::{ClientCore, ClientError, Notification};
use colier_core::document::{ClientId, Color, DocAction};
use colier_core::protocol::{decode_message, encode_message, Message, Presence};
use colier_core::SessionDocument;
use colier_server::{ConnId, Hub};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ConfigError, ScenarioConfig};
use crate::convergence::{check_convergence, document_hash};
use crate::workload::{generate_ops, resolve_intent, Intent, Schedule};

const SESSION: &str = "sim";

/// How often the wall clock is consulted, in processed steps.
const WALL_CHECK_EVERY: u64 = 1024;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("no quiescence within {0} ms of wall time")]
    Timeout(u64),
    #[error("nothing left to deliver but client {0} is not idle")]
    Stalled(usize),
    #[error("client {client}: {source}")]
    Client { client: usize, source: ClientError },
    #[error("scripted change for client {0}, which does not exist")]
    UnknownClient(usize),
    #[error("undecodable frame: {0}")]
    Frame(String),
}

/// A concrete change submitted by `client` at virtual time `at_ms`. The
/// time has to leave room for the join round trip.
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptedChange {
    pub client: usize,
    pub at_ms: i64,
    pub action: DocAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ScenarioReport {
    pub config: ScenarioConfig,
    pub converged: bool,
    /// `client <i> at <path>` for the first replica that differs.
    pub divergence: Option<String>,
    pub final_seq: u64,
    pub server_hash: String,
    pub per_client_final_hash: Vec<String>,
    pub total_intents: u64,
    pub accepted: u64,
    /// Rejections of submitted changes, by reason.
    pub rejected_count: BTreeMap<String, u64>,
    /// Rejections that matched no pending change.
    pub unmatched_rejections: u64,
    /// Longest time from a submission to any replica applying it.
    pub max_observed_propagation_ms: u64,
    pub ordering_violations: u64,
    pub virtual_duration_ms: u64,
}

impl ScenarioReport {
    pub fn rejected(&self) -> u64 {
        self.rejected_count.values().sum()
    }

    pub fn passed(&self) -> bool {
        self.converged && self.ordering_violations == 0
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

enum Step {
    ToServer { client: usize, frame: String },
    ToClient { client: usize, frame: String },
    Submit { client: usize },
    Scripted { client: usize, action: DocAction },
}

struct Scheduled {
    at: i64,
    order: u64,
    step: Step,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.order) == (other.at, other.order)
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

// BinaryHeap is a max-heap; earliest first, ties in scheduling order.
impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at, other.order).cmp(&(self.at, self.order))
    }
}

struct SimClient {
    conn: ConnId,
    core: ClientCore,
    intents: VecDeque<Intent>,
    started: bool,
    last_applied: u64,
    up_free: i64,
    down_free: i64,
}

#[derive(Default)]
struct Stats {
    total: u64,
    accepted: u64,
    rejected: BTreeMap<String, u64>,
    unmatched: u64,
    max_propagation: i64,
    violations: u64,
}

pub struct Simulation {
    config: ScenarioConfig,
    hub: Hub,
    clients: Vec<SimClient>,
    by_conn: HashMap<ConnId, usize>,
    queue: BinaryHeap<Scheduled>,
    order: u64,
    now: i64,
    latency: ChaCha8Rng,
    submitted_at: HashMap<(ClientId, i64), i64>,
    stats: Stats,
}

/// Generates the workload for `config` and runs it to quiescence.
pub fn run_scenario(config: &ScenarioConfig) -> Result<ScenarioReport, SimError> {
    Simulation::new(config.clone())?.run()
}

impl Simulation {
    /// A run of the seeded workload.
    pub fn new(config: ScenarioConfig) -> Result<Self, SimError> {
        config.validate()?;
        let schedule = generate_ops(&config);
        Simulation::build(config, schedule, Vec::new())
    }

    /// A run of `script` alone; `config.ops` is ignored.
    pub fn scripted(config: ScenarioConfig, script: Vec<ScriptedChange>) -> Result<Self, SimError> {
        config.validate()?;
        let schedule = Schedule { per_client: vec![Vec::new(); config.clients as usize] };
        Simulation::build(config, schedule, script)
    }

    fn build(config: ScenarioConfig, schedule: Schedule, script: Vec<ScriptedChange>) -> Result<Self, SimError> {
        let mut hub = Hub::new(config.seed);
        hub.create_session(SESSION, config.session_template.build())
            .expect("fresh in-memory hub");
        let mut latency = ChaCha8Rng::seed_from_u64(config.seed);
        latency.set_stream(1);
        let mut sim = Simulation {
            config,
            hub,
            clients: Vec::new(),
            by_conn: HashMap::new(),
            queue: BinaryHeap::new(),
            order: 0,
            now: 0,
            latency,
            submitted_at: HashMap::new(),
            stats: Stats::default(),
        };
        for (i, intents) in schedule.per_client.into_iter().enumerate() {
            let (conn, greeting) = sim.hub.connect();
            sim.by_conn.insert(conn, i);
            sim.clients.push(SimClient {
                conn,
                core: ClientCore::new(SESSION),
                intents: intents.into(),
                started: false,
                last_applied: 0,
                up_free: 0,
                down_free: 0,
            });
            for out in greeting {
                sim.send_down(i, out.frame());
            }
            let join = sim.clients[i].core.join_message(None, Some(format!("sim-{i}")));
            sim.send_up(i, &join);
        }
        for s in script {
            if s.client >= sim.clients.len() {
                return Err(SimError::UnknownClient(s.client));
            }
            sim.schedule(s.at_ms, Step::Scripted { client: s.client, action: s.action });
        }
        Ok(sim)
    }

    pub fn hub(&self) -> &Hub {
        &self.hub
    }

    pub fn server_document(&self) -> &SessionDocument {
        self.hub.session(SESSION).expect("sim session").document()
    }

    pub fn client(&self, i: usize) -> &ClientCore {
        &self.clients[i].core
    }

    pub fn client_document(&self, i: usize) -> &SessionDocument {
        self.clients[i].core.store().document()
    }

    /// Virtual time of the last processed step.
    pub fn now(&self) -> i64 {
        self.now
    }

    fn schedule(&mut self, at: i64, step: Step) {
        self.order += 1;
        self.queue.push(Scheduled { at, order: self.order, step });
    }

    fn delay(&mut self) -> i64 {
        let (min, max) = self.config.latency_ms;
        self.latency.gen_range(min..=max) as i64
    }

    fn send_up(&mut self, client: usize, msg: &Message) {
        let mut at = self.now + self.delay();
        if !self.config.reorder_upstream {
            at = at.max(self.clients[client].up_free);
            self.clients[client].up_free = at;
        }
        self.schedule(at, Step::ToServer { client, frame: encode_message(msg) });
    }

    fn send_down(&mut self, client: usize, frame: String) {
        let at = (self.now + self.delay()).max(self.clients[client].down_free);
        self.clients[client].down_free = at;
        self.schedule(at, Step::ToClient { client, frame });
    }

    /// Processes steps until nothing is in flight and every client is idle.
    pub fn run(&mut self) -> Result<ScenarioReport, SimError> {
        let started = Instant::now();
        let limit = Duration::from_millis(self.config.wall_limit_ms);
        let mut steps = 0u64;
        while let Some(next) = self.queue.pop() {
            self.now = next.at;
            self.step(next.step)?;
            steps += 1;
            if steps % WALL_CHECK_EVERY == 0 && started.elapsed() > limit {
                return Err(SimError::Timeout(self.config.wall_limit_ms));
            }
        }
        if let Some(i) = self.clients.iter().position(|c| !c.core.is_idle() || !c.intents.is_empty()) {
            return Err(SimError::Stalled(i));
        }
        Ok(self.report())
    }

    fn step(&mut self, step: Step) -> Result<(), SimError> {
        match step {
            Step::ToServer { client, frame } => {
                let conn = self.clients[client].conn;
                for out in self.hub.handle_frame(conn, frame.as_bytes(), self.now) {
                    let to = self.by_conn[&out.conn];
                    self.send_down(to, out.frame());
                }
            }
            Step::ToClient { client, frame } => {
                let msg = decode_message(frame.as_bytes()).map_err(|e| SimError::Frame(e.to_string()))?;
                let up = self.clients[client]
                    .core
                    .on_message(msg)
                    .map_err(|source| SimError::Client { client, source })?;
                for n in up.notifications {
                    self.observe(client, n);
                }
                for msg in &up.outgoing {
                    self.send_up(client, msg);
                }
            }
            Step::Submit { client } => {
                let c = &mut self.clients[client];
                let intent = c.intents.pop_front().expect("submit scheduled with an intent left");
                let store = c.core.store();
                let color = store.color().unwrap_or(Color::rgb(0, 0, 0));
                let action = resolve_intent(&intent, store.document(), store.last_seq(), color);
                self.submit(client, action)?;
                if let Some(next) = self.clients[client].intents.front() {
                    let at = self.now + next.delay_ms as i64;
                    self.schedule(at, Step::Submit { client });
                }
            }
            Step::Scripted { client, action } => self.submit(client, action)?,
        }
        Ok(())
    }

    /// Sends one change. Transforms are bracketed by selecting and releasing
    /// the layer, the way an interactive drag would be.
    fn submit(&mut self, client: usize, action: DocAction) -> Result<(), SimError> {
        let err = |source| SimError::Client { client, source };
        let dragged = action.is_transform_update().then(|| action.target_layer().cloned()).flatten();
        if let Some(layer) = &dragged {
            let select = self.clients[client]
                .core
                .presence_message(Presence::SelectLayer { layer_id: Some(layer.clone()) })
                .map_err(err)?;
            self.send_up(client, &select);
        }
        let msg = self.clients[client].core.submit_change(action, self.now).map_err(err)?;
        if let Message::Change(change) = &msg {
            self.submitted_at.insert((change.client_id.clone(), change.time_stamp), self.now);
        }
        self.stats.total += 1;
        self.send_up(client, &msg);
        if dragged.is_some() {
            let release = self.clients[client]
                .core
                .presence_message(Presence::SelectLayer { layer_id: None })
                .map_err(err)?;
            self.send_up(client, &release);
        }
        Ok(())
    }

    fn observe(&mut self, client: usize, n: Notification) {
        match n {
            Notification::Resynced { seq } => {
                let c = &mut self.clients[client];
                c.last_applied = seq;
                if c.started {
                    // links are ordered, so a gap is a sequencing bug
                    self.stats.violations += 1;
                } else {
                    c.started = true;
                    if let Some(first) = c.intents.front() {
                        let at = self.now + first.delay_ms as i64;
                        self.schedule(at, Step::Submit { client });
                    }
                }
            }
            Notification::Applied(event) => {
                let c = &mut self.clients[client];
                let logged = self
                    .hub
                    .session(SESSION)
                    .and_then(|s| s.log().entries().get(event.seq as usize - 1));
                if event.seq != c.last_applied + 1 || logged != Some(&event) {
                    self.stats.violations += 1;
                }
                c.last_applied = event.seq;
                let key = (event.change.client_id.clone(), event.change.time_stamp);
                if let Some(sent) = self.submitted_at.get(&key) {
                    self.stats.max_propagation = self.stats.max_propagation.max(self.now - sent);
                }
            }
            Notification::Accepted(_) => self.stats.accepted += 1,
            Notification::Rejected { rejection, pending } => {
                if pending.is_some() {
                    *self.stats.rejected.entry(rejection.reason.as_str().to_owned()).or_default() += 1;
                } else {
                    self.stats.unmatched += 1;
                }
            }
            _ => {}
        }
    }

    fn report(&self) -> ScenarioReport {
        let server = self.server_document();
        let docs: Vec<&SessionDocument> = self.clients.iter().map(|c| c.core.store().document()).collect();
        let verdict = check_convergence(server, &docs);
        ScenarioReport {
            config: self.config.clone(),
            converged: verdict.converged,
            divergence: verdict.divergence.map(|d| format!("client {} at {}", d.client, d.path)),
            final_seq: self.hub.session(SESSION).expect("sim session").head(),
            server_hash: document_hash(server),
            per_client_final_hash: docs.iter().map(|d| document_hash(d)).collect(),
            total_intents: self.stats.total,
            accepted: self.stats.accepted,
            rejected_count: self.stats.rejected.clone(),
            unmatched_rejections: self.stats.unmatched,
            max_observed_propagation_ms: self.stats.max_propagation.max(0) as u64,
            ordering_violations: self.stats.violations,
            virtual_duration_ms: self.now.max(0) as u64,
        }
    }
}
