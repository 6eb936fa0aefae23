//! Scenario configuration: objects, adversary assignment, workload, and
//! the machine builder.
//!
//! A configuration names `n` and `f` for a primary object and a workload;
//! multi-object setups (dispatcher plus targets) can either rely on the
//! derived registry or spell out `objects` explicitly. Validation resolves
//! everything into a [`ValidatedScenario`] that the simulator consumes.

use alloc::boxed::Box;
use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::adversary::{self, AdversaryEnv, AdversaryKind, Params};
use crate::atomic::{AtomicClient, SbdsoServer, StubLedgerServer, TargetInfo, TargetKind};
use crate::bdso::{self, AdmissionMode, GsetQuorums, TargetSelection};
use crate::brb;
use crate::ids::{ObjectId, ProcessId};
use crate::machine::{OpSpec, ProcessMachine};
use crate::record::Record;
use crate::swbdlo::{self, PrefixRule, SwQuorums};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// Seeded random choice among pending actions, with forced delivery at
    /// fairness deadlines.
    Fair,
    /// Strict enqueue order.
    Fifo,
    /// Newest-first, i.e. maximal reordering within the fairness bound.
    Adversary,
}

/// One Byzantine process assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversaryAssignment {
    pub process: ProcessId,
    pub kind: AdversaryKind,
    #[serde(default)]
    pub params: Params,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectKindName {
    Gset,
    Sbdso,
    Swbdlo,
    LedgerStub,
    Brb,
}

/// Explicit object registry entry used when the derived layout is not
/// enough.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpecConfig {
    pub id: ObjectId,
    pub kind: ObjectKindName,
    /// Server indices hosting this object.
    pub servers: Vec<u32>,
    pub f: usize,
    #[serde(default)]
    pub writer: Option<ProcessId>,
    /// Restrict admission to a registered client set of the given size
    /// threshold (defaults to the dispatcher servers and `f+1`).
    #[serde(default)]
    pub restricted: bool,
    #[serde(default)]
    pub admission_clients: Option<Vec<ProcessId>>,
    #[serde(default)]
    pub admission_quorum: Option<usize>,
    /// Override of the replica insertion threshold, for threshold studies.
    #[serde(default)]
    pub insert_quorum: Option<usize>,
    #[serde(default)]
    pub prefix_rule: Option<PrefixRule>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WorkloadConfig {
    /// Interleaved adds and gets from the correct clients, then one final
    /// get per correct client once the network is quiet.
    RandomGset {
        #[serde(default = "twenty")]
        adds: usize,
        #[serde(default = "twenty")]
        gets: usize,
    },
    /// Single client, random add/get mix with repeating payloads.
    SequentialGset {
        #[serde(default = "thirty")]
        ops: usize,
    },
    /// Single writer, random append/get mix.
    SequentialLedger {
        #[serde(default = "thirty")]
        ops: usize,
    },
    /// Writer appends concurrently with reader gets, then settled final
    /// gets.
    SwAppends {
        #[serde(default = "thirty")]
        appends: usize,
        #[serde(default = "ten")]
        gets: usize,
    },
    AtomicAppends {
        #[serde(default = "one")]
        pairs: usize,
    },
    AtomicAdds {
        #[serde(default = "one")]
        pairs: usize,
    },
    /// Every server broadcasts a few payloads.
    BrbBroadcasts {
        #[serde(default = "two")]
        per_server: usize,
    },
    /// Explicit operation list.
    Script { entries: Vec<ScriptEntryConfig> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntryConfig {
    pub process: ProcessId,
    #[serde(default)]
    pub op: Option<OpSpec>,
    /// Hold this process's next entry until the network is quiet.
    #[serde(default)]
    pub await_quiescence: bool,
}

fn one() -> usize {
    1
}
fn two() -> usize {
    2
}
fn ten() -> usize {
    10
}
fn twenty() -> usize {
    20
}
fn thirty() -> usize {
    30
}
fn default_step_limit() -> u64 {
    500_000
}
fn default_fairness() -> u64 {
    4
}
fn default_policy() -> Policy {
    Policy::Fair
}
fn default_true() -> bool {
    true
}
fn default_selection() -> TargetSelection {
    TargetSelection::SeededRandom
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    /// Servers of the primary object (ignored if `objects` is given).
    pub n: usize,
    pub f: usize,
    #[serde(default)]
    pub clients: usize,
    #[serde(default)]
    pub objects: Vec<ObjectSpecConfig>,
    #[serde(default)]
    pub byzantine_servers: Vec<AdversaryAssignment>,
    #[serde(default)]
    pub byzantine_clients: Vec<AdversaryAssignment>,
    pub workload: WorkloadConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_step_limit")]
    pub step_limit: u64,
    #[serde(default = "default_policy")]
    pub policy: Policy,
    /// Multiplier for the forced-delivery deadline: an action enqueued with
    /// `q` others pending must be scheduled within `fairness_bound * q`
    /// choices.
    #[serde(default = "default_fairness")]
    pub fairness_bound: u64,
    /// Reject configurations outside the resilience bounds instead of
    /// clamping fan-outs.
    #[serde(default = "default_true")]
    pub strict_bounds: bool,
    #[serde(default = "default_selection")]
    pub target_selection: TargetSelection,
    /// Checker properties to run after the scenario (defaults per
    /// workload).
    #[serde(default)]
    pub properties: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConfigError {
    Invalid(String),
}

impl core::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            ConfigError::Invalid(msg) => write!(f, "invalid scenario: {msg}"),
        }
    }
}

fn invalid(msg: String) -> ConfigError {
    ConfigError::Invalid(msg)
}

/// Fully resolved per-object information.
#[derive(Debug, Clone)]
pub struct ObjectInfo {
    pub id: ObjectId,
    pub servers: Vec<ProcessId>,
    pub f: usize,
    pub kind: ObjectKind,
}

#[derive(Debug, Clone)]
pub enum ObjectKind {
    Gset { quorums: GsetQuorums, mode: AdmissionMode },
    Sbdso { quorums: GsetQuorums, targets: BTreeMap<ObjectId, TargetInfo> },
    SwBdlo { quorums: SwQuorums, writer: ProcessId, prefix_rule: PrefixRule },
    LedgerStub { allowed: BTreeSet<ProcessId>, quorum: usize },
    Brb,
}

#[derive(Debug, Clone)]
pub struct ValidatedScenario {
    pub config: ScenarioConfig,
    pub objects: BTreeMap<ObjectId, ObjectInfo>,
    pub primary: ObjectId,
    pub servers: Vec<ProcessId>,
    pub clients: Vec<ProcessId>,
    pub adversaries: BTreeMap<ProcessId, AdversaryAssignment>,
    pub properties: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScriptItem {
    Op(OpSpec),
    /// Released once no envelopes are pending and no operation is in
    /// flight anywhere.
    AwaitQuiescence,
}

pub type Script = BTreeMap<ProcessId, VecDeque<ScriptItem>>;

/// Per-object summary carried in the trace header so checkers can run on
/// a trace alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectMeta {
    pub id: ObjectId,
    pub kind: ObjectKindName,
    pub servers: Vec<ProcessId>,
    pub f: usize,
    #[serde(default)]
    pub writer: Option<ProcessId>,
    #[serde(default)]
    pub restricted: bool,
    #[serde(default)]
    pub admission_quorum: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMeta {
    pub name: String,
    pub seed: u64,
    pub policy: Policy,
    pub step_limit: u64,
    pub servers: Vec<ProcessId>,
    pub clients: Vec<ProcessId>,
    pub byzantine: BTreeMap<ProcessId, AdversaryKind>,
    pub objects: Vec<ObjectMeta>,
    pub properties: Vec<String>,
}

impl ScenarioMeta {
    pub fn is_correct(&self, p: ProcessId) -> bool {
        !self.byzantine.contains_key(&p)
    }

    pub fn correct_clients(&self) -> Vec<ProcessId> {
        self.clients.iter().copied().filter(|p| self.is_correct(*p)).collect()
    }

    pub fn correct_servers_of(&self, object: &ObjectMeta) -> Vec<ProcessId> {
        object.servers.iter().copied().filter(|p| self.is_correct(*p)).collect()
    }

    pub fn object(&self, id: &ObjectId) -> Option<&ObjectMeta> {
        self.objects.iter().find(|o| &o.id == id)
    }
}

impl ValidatedScenario {
    pub fn meta(&self, seed: u64) -> ScenarioMeta {
        let byzantine = self.adversaries.iter().map(|(p, a)| (*p, a.kind)).collect();
        let objects = self
            .objects
            .values()
            .map(|o| {
                let (kind, writer, restricted, admission_quorum) = match &o.kind {
                    ObjectKind::Gset { mode, .. } => {
                        let (restricted, q) = match mode {
                            AdmissionMode::Open => (false, None),
                            AdmissionMode::Restricted { quorum, .. } => (true, Some(*quorum)),
                        };
                        (ObjectKindName::Gset, None, restricted, q)
                    }
                    ObjectKind::Sbdso { .. } => (ObjectKindName::Sbdso, None, false, None),
                    ObjectKind::SwBdlo { writer, .. } => {
                        (ObjectKindName::Swbdlo, Some(*writer), false, None)
                    }
                    ObjectKind::LedgerStub { quorum, .. } => {
                        (ObjectKindName::LedgerStub, None, true, Some(*quorum))
                    }
                    ObjectKind::Brb => (ObjectKindName::Brb, None, false, None),
                };
                ObjectMeta {
                    id: o.id.clone(),
                    kind,
                    servers: o.servers.clone(),
                    f: o.f,
                    writer,
                    restricted,
                    admission_quorum,
                }
            })
            .collect();
        ScenarioMeta {
            name: self.config.name.clone(),
            seed,
            policy: self.config.policy,
            step_limit: self.config.step_limit,
            servers: self.servers.clone(),
            clients: self.clients.clone(),
            byzantine,
            objects,
            properties: self.properties.clone(),
        }
    }
}

/// Default checker list per workload.
fn default_properties(workload: &WorkloadConfig) -> Vec<String> {
    let names: &[&str] = match workload {
        WorkloadConfig::RandomGset { .. } => {
            &["bc", "bec-a", "bec-b", "convergence", "sourcing"]
        }
        WorkloadConfig::SequentialGset { .. } | WorkloadConfig::SequentialLedger { .. } => {
            &["bc", "sequential"]
        }
        WorkloadConfig::SwAppends { .. } => {
            &["bc", "bec-a", "strong-prefix", "index-uniqueness", "sw-quiescent"]
        }
        WorkloadConfig::AtomicAppends { .. } | WorkloadConfig::AtomicAdds { .. } => {
            &["bc", "atomic"]
        }
        WorkloadConfig::BrbBroadcasts { .. } => &[
            "brb-validity",
            "brb-integrity",
            "brb-termination-local",
            "brb-termination-global",
        ],
        WorkloadConfig::Script { .. } => &["bc"],
    };
    names.iter().map(|s| s.to_string()).collect()
}

pub fn validate(config: &ScenarioConfig) -> Result<ValidatedScenario, ConfigError> {
    if config.n == 0 {
        return Err(invalid("n must be at least 1".into()));
    }
    let cap = !config.strict_bounds;
    let specs = if config.objects.is_empty() {
        derive_objects(config)?
    } else {
        config.objects.clone()
    };
    if specs.is_empty() {
        return Err(invalid("scenario declares no objects".into()));
    }

    // server index partition
    let mut seen = BTreeSet::new();
    let mut max_index = 0u32;
    for spec in &specs {
        if spec.servers.is_empty() {
            return Err(invalid(format!("object {} has no servers", spec.id)));
        }
        for &s in &spec.servers {
            if !seen.insert(s) {
                return Err(invalid(format!("server S{s} assigned to two objects")));
            }
            max_index = max_index.max(s);
        }
    }
    if seen.len() != (max_index as usize + 1) {
        return Err(invalid("server indices must cover 0..total without gaps".into()));
    }

    // dispatcher targets: every other non-dispatcher replicated object
    let mut target_infos: BTreeMap<ObjectId, TargetInfo> = BTreeMap::new();
    for spec in &specs {
        let kind = match spec.kind {
            ObjectKindName::LedgerStub => TargetKind::Ledger,
            ObjectKindName::Gset => TargetKind::Gset,
            _ => continue,
        };
        target_infos.insert(
            spec.id.clone(),
            TargetInfo {
                object: spec.id.clone(),
                kind,
                servers: spec.servers.iter().map(|&i| ProcessId::server(i)).collect(),
                f: spec.f,
            },
        );
    }

    let sbdso_servers: Vec<ProcessId> = specs
        .iter()
        .filter(|s| s.kind == ObjectKindName::Sbdso)
        .flat_map(|s| s.servers.iter().map(|&i| ProcessId::server(i)))
        .collect();

    let mut objects = BTreeMap::new();
    for spec in &specs {
        let servers: Vec<ProcessId> = spec.servers.iter().map(|&i| ProcessId::server(i)).collect();
        let n = servers.len();
        let f = spec.f;
        let bound_err = |need: usize, rule: &str| {
            invalid(format!("object {}: n = {n} violates {rule} (needs at least {need})", spec.id))
        };
        let kind = match spec.kind {
            ObjectKindName::Gset => {
                if config.strict_bounds && n < 3 * f + 1 {
                    return Err(bound_err(3 * f + 1, "n >= 3f+1"));
                }
                let mode = if spec.restricted {
                    let clients: BTreeSet<ProcessId> = match &spec.admission_clients {
                        Some(list) => list.iter().copied().collect(),
                        None => sbdso_servers.iter().copied().collect(),
                    };
                    if clients.is_empty() {
                        return Err(invalid(format!(
                            "object {} is restricted but has no admission clients",
                            spec.id
                        )));
                    }
                    AdmissionMode::Restricted {
                        quorum: spec.admission_quorum.unwrap_or(f + 1),
                        clients,
                    }
                } else {
                    AdmissionMode::Open
                };
                ObjectKind::Gset { quorums: GsetQuorums::new(n, f, spec.insert_quorum, cap), mode }
            }
            ObjectKindName::Sbdso => {
                if config.strict_bounds && n < 3 * f + 1 {
                    return Err(bound_err(3 * f + 1, "n >= 3f+1"));
                }
                ObjectKind::Sbdso {
                    quorums: GsetQuorums::new(n, f, spec.insert_quorum, cap),
                    targets: target_infos.clone(),
                }
            }
            ObjectKindName::Swbdlo => {
                if config.strict_bounds && n < 4 * f + 1 {
                    return Err(bound_err(4 * f + 1, "n >= 4f+1"));
                }
                let writer = spec.writer.unwrap_or(ProcessId::client(0));
                if !writer.is_client() {
                    return Err(invalid(format!("object {}: writer must be a client", spec.id)));
                }
                ObjectKind::SwBdlo {
                    quorums: SwQuorums::new(n, f, spec.insert_quorum, cap),
                    writer,
                    prefix_rule: spec.prefix_rule.unwrap_or(PrefixRule::Closure),
                }
            }
            ObjectKindName::LedgerStub => {
                if config.strict_bounds && n < 2 * f + 1 {
                    return Err(bound_err(2 * f + 1, "n >= 2f+1"));
                }
                let allowed: BTreeSet<ProcessId> = match &spec.admission_clients {
                    Some(list) => list.iter().copied().collect(),
                    None => sbdso_servers.iter().copied().collect(),
                };
                if allowed.is_empty() {
                    return Err(invalid(format!(
                        "object {}: ledger stub needs admission clients",
                        spec.id
                    )));
                }
                ObjectKind::LedgerStub { allowed, quorum: spec.admission_quorum.unwrap_or(f + 1) }
            }
            ObjectKindName::Brb => {
                if config.strict_bounds && n < 3 * f + 1 {
                    return Err(bound_err(3 * f + 1, "n >= 3f+1"));
                }
                ObjectKind::Brb
            }
        };
        // a fan-out beyond the group can never be satisfied
        let widest = match &kind {
            ObjectKind::Gset { quorums, .. } | ObjectKind::Sbdso { quorums, .. } => {
                quorums.get_fanout.max(quorums.add_fanout)
            }
            ObjectKind::SwBdlo { quorums, .. } => quorums.get_fanout.max(quorums.append_fanout),
            _ => 0,
        };
        if widest > n {
            return Err(invalid(format!(
                "object {}: fan-out {widest} exceeds group size {n}",
                spec.id
            )));
        }
        objects.insert(spec.id.clone(), ObjectInfo { id: spec.id.clone(), servers, f, kind });
    }

    let servers: Vec<ProcessId> = (0..=max_index).map(ProcessId::server).collect();
    let clients: Vec<ProcessId> = (0..config.clients as u32).map(ProcessId::client).collect();

    // workload prerequisites and the primary object
    let primary = primary_object(config, &objects)?;
    match &config.workload {
        WorkloadConfig::RandomGset { .. } if config.clients == 0 => {
            return Err(invalid("random_gset workload needs at least one client".into()));
        }
        WorkloadConfig::SequentialGset { .. } | WorkloadConfig::SequentialLedger { .. }
            if config.clients == 0 =>
        {
            return Err(invalid("sequential workloads need a client".into()));
        }
        WorkloadConfig::SwAppends { .. } if config.clients == 0 => {
            return Err(invalid("sw_appends workload needs the writer client".into()));
        }
        WorkloadConfig::AtomicAppends { pairs } | WorkloadConfig::AtomicAdds { pairs }
            if config.clients < pairs * 2 =>
        {
            return Err(invalid(format!("{} pairs need {} clients", pairs, pairs * 2)));
        }
        WorkloadConfig::Script { entries } => {
            for entry in entries {
                let p = entry.process;
                let known =
                    (p.is_server() && servers.contains(&p)) || (p.is_client() && clients.contains(&p));
                if !known {
                    return Err(invalid(format!("script names unknown process {p}")));
                }
                if entry.op.is_none() && !entry.await_quiescence {
                    return Err(invalid(format!("empty script entry for {p}")));
                }
            }
        }
        _ => {}
    }

    // adversary assignment
    let mut adversaries = BTreeMap::new();
    for a in config.byzantine_servers.iter().chain(&config.byzantine_clients) {
        let p = a.process;
        let known = (p.is_server() && servers.contains(&p)) || (p.is_client() && clients.contains(&p));
        if !known {
            return Err(invalid(format!("byzantine assignment names unknown process {p}")));
        }
        check_kind_role(a.kind, p, &objects)?;
        if adversaries.insert(p, a.clone()).is_some() {
            return Err(invalid(format!("process {p} assigned two adversary kinds")));
        }
    }
    for info in objects.values() {
        let byz = info.servers.iter().filter(|s| adversaries.contains_key(s)).count();
        if byz > info.f {
            return Err(invalid(format!(
                "object {}: {byz} Byzantine servers exceed f = {}",
                info.id, info.f
            )));
        }
    }

    let properties = if config.properties.is_empty() {
        default_properties(&config.workload)
    } else {
        config.properties.clone()
    };

    Ok(ValidatedScenario {
        config: config.clone(),
        objects,
        primary,
        servers,
        clients,
        adversaries,
        properties,
    })
}

fn check_kind_role(
    kind: AdversaryKind,
    p: ProcessId,
    objects: &BTreeMap<ObjectId, ObjectInfo>,
) -> Result<(), ConfigError> {
    use AdversaryKind::*;
    let server_only = matches!(
        kind,
        StaleResponder | SpuriousSet | EquivocatingBrbOrigin | SpuriousPropagator
    );
    if server_only && !p.is_server() {
        return Err(invalid(format!("adversary {kind:?} requires a server, got {p}")));
    }
    match kind {
        IndexEquivocatingWriter => {
            let is_writer = objects.values().any(|o| {
                matches!(&o.kind, ObjectKind::SwBdlo { writer, .. } if *writer == p)
            });
            if !is_writer {
                return Err(invalid(format!(
                    "IndexEquivocatingWriter must be the designated writer, got {p}"
                )));
            }
        }
        SilentAtomicPartner if !p.is_client() => {
            return Err(invalid(format!("SilentAtomicPartner requires a client, got {p}")));
        }
        _ => {}
    }
    Ok(())
}

/// Layouts derived from `n`, `f`, and the workload when no explicit
/// registry is given.
fn derive_objects(config: &ScenarioConfig) -> Result<Vec<ObjectSpecConfig>, ConfigError> {
    let base = |id: &str, kind, servers: Vec<u32>| ObjectSpecConfig {
        id: ObjectId::new(id),
        kind,
        servers,
        f: config.f,
        writer: None,
        restricted: false,
        admission_clients: None,
        admission_quorum: None,
        insert_quorum: None,
        prefix_rule: None,
    };
    let n = config.n as u32;
    let range = |from: u32| (from..from + n).collect::<Vec<u32>>();
    Ok(match &config.workload {
        WorkloadConfig::RandomGset { .. } | WorkloadConfig::SequentialGset { .. } => {
            alloc::vec![base("GS", ObjectKindName::Gset, range(0))]
        }
        WorkloadConfig::SequentialLedger { .. } | WorkloadConfig::SwAppends { .. } => {
            alloc::vec![base("L", ObjectKindName::Swbdlo, range(0))]
        }
        WorkloadConfig::BrbBroadcasts { .. } => {
            alloc::vec![base("B", ObjectKindName::Brb, range(0))]
        }
        WorkloadConfig::AtomicAppends { pairs } => {
            let mut specs = alloc::vec![base("SB", ObjectKindName::Sbdso, range(0))];
            for j in 0..*pairs as u32 {
                for side in 0..2u32 {
                    let idx = j * 2 + side;
                    specs.push(base(
                        &format!("L{idx}"),
                        ObjectKindName::LedgerStub,
                        range(n + idx * n),
                    ));
                }
            }
            specs
        }
        WorkloadConfig::Script { .. } => {
            return Err(invalid("script workloads need an explicit objects list".into()));
        }
        WorkloadConfig::AtomicAdds { pairs } => {
            let mut specs = alloc::vec![base("SB", ObjectKindName::Sbdso, range(0))];
            for j in 0..*pairs as u32 {
                for side in 0..2u32 {
                    let idx = j * 2 + side;
                    let mut spec = base(
                        &format!("G{idx}"),
                        ObjectKindName::Gset,
                        range(n + idx * n),
                    );
                    spec.restricted = true;
                    specs.push(spec);
                }
            }
            specs
        }
    })
}

fn primary_object(
    config: &ScenarioConfig,
    objects: &BTreeMap<ObjectId, ObjectInfo>,
) -> Result<ObjectId, ConfigError> {
    let want = |pred: fn(&ObjectKind) -> bool, what: &str| {
        objects
            .values()
            .find(|o| pred(&o.kind))
            .map(|o| o.id.clone())
            .ok_or_else(|| invalid(format!("workload needs a {what} object")))
    };
    match &config.workload {
        WorkloadConfig::RandomGset { .. } | WorkloadConfig::SequentialGset { .. } => {
            want(|k| matches!(k, ObjectKind::Gset { .. }), "gset")
        }
        WorkloadConfig::SequentialLedger { .. } | WorkloadConfig::SwAppends { .. } => {
            want(|k| matches!(k, ObjectKind::SwBdlo { .. }), "swbdlo")
        }
        WorkloadConfig::AtomicAppends { .. } | WorkloadConfig::AtomicAdds { .. } => {
            want(|k| matches!(k, ObjectKind::Sbdso { .. }), "sbdso")
        }
        WorkloadConfig::BrbBroadcasts { .. } => {
            want(|k| matches!(k, ObjectKind::Brb), "brb")
        }
        WorkloadConfig::Script { entries } => {
            let first = entries
                .iter()
                .find_map(|e| e.op.as_ref())
                .ok_or_else(|| invalid("script has no operations".into()))?;
            objects
                .get(first.object())
                .map(|o| o.id.clone())
                .ok_or_else(|| invalid(format!("script names unknown object {}", first.object())))
        }
    }
}

fn seed_bytes(seed: u64) -> [u8; 32] {
    let mut bytes = [0u8; 32];
    bytes[0..8].copy_from_slice(&seed.to_le_bytes());
    bytes[8..16].copy_from_slice(&(seed ^ 0x9e37_79b9_7f4a_7c15).to_le_bytes());
    bytes[16..24].copy_from_slice(&seed.wrapping_mul(0xbf58_476d_1ce4_e5b9).to_le_bytes());
    bytes[24..32].copy_from_slice(&seed.rotate_left(17).wrapping_add(0x94d0_49bb_1331_11eb).to_le_bytes());
    bytes
}

/// Per-process deterministic randomness: one ChaCha stream per machine,
/// derived from the run seed.
pub fn machine_rng(seed: u64, ordinal: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::from_seed(seed_bytes(seed));
    rng.set_stream(ordinal);
    rng
}

const SCHEDULER_STREAM: u64 = 0;
const SCRIPT_STREAM: u64 = u64::MAX;

pub fn scheduler_rng(seed: u64) -> ChaCha12Rng {
    machine_rng(seed, SCHEDULER_STREAM)
}

/// The generated workload script: per-process queues released in order by
/// the driver.
pub fn build_script(vs: &ValidatedScenario, seed: u64) -> Script {
    let mut rng = machine_rng(seed, SCRIPT_STREAM);
    let correct_clients: Vec<ProcessId> =
        vs.clients.iter().copied().filter(|c| !vs.adversaries.contains_key(c)).collect();
    let mut script: Script = BTreeMap::new();
    let push = |script: &mut Script, p: ProcessId, item: ScriptItem| {
        script.entry(p).or_default().push_back(item);
    };
    match &vs.config.workload {
        WorkloadConfig::RandomGset { adds, gets } => {
            let object = vs.primary.clone();
            let pool = if correct_clients.is_empty() { &vs.clients } else { &correct_clients };
            let mut ops: Vec<(ProcessId, OpSpec)> = Vec::new();
            for i in 0..*adds {
                let client = pool[rng.random_range(0..pool.len())];
                let record = Record::new(client, format!("r{i}").into_bytes()).expect("payload ok");
                ops.push((client, OpSpec::GsetAdd { object: object.clone(), record }));
            }
            for _ in 0..*gets {
                let client = pool[rng.random_range(0..pool.len())];
                ops.push((client, OpSpec::GsetGet { object: object.clone() }));
            }
            for i in (1..ops.len()).rev() {
                ops.swap(i, rng.random_range(0..=i));
            }
            for (client, op) in ops {
                push(&mut script, client, ScriptItem::Op(op));
            }
            for &client in pool {
                push(&mut script, client, ScriptItem::AwaitQuiescence);
                push(&mut script, client, ScriptItem::Op(OpSpec::GsetGet { object: object.clone() }));
            }
        }
        WorkloadConfig::SequentialGset { ops } => {
            let object = vs.primary.clone();
            let client = vs.clients[0];
            for _ in 0..*ops {
                let op = if rng.random_range(0..3u32) == 0 {
                    OpSpec::GsetGet { object: object.clone() }
                } else {
                    let tag: u32 = rng.random_range(0..10);
                    let record =
                        Record::new(client, format!("p{tag}").into_bytes()).expect("payload ok");
                    OpSpec::GsetAdd { object: object.clone(), record }
                };
                push(&mut script, client, ScriptItem::Op(op));
            }
            push(&mut script, client, ScriptItem::Op(OpSpec::GsetGet { object }));
        }
        WorkloadConfig::SequentialLedger { ops } => {
            let object = vs.primary.clone();
            let client = vs.clients[0];
            let mut next = 0u32;
            for _ in 0..*ops {
                let op = if rng.random_range(0..3u32) == 0 {
                    OpSpec::SwGet { object: object.clone() }
                } else {
                    next += 1;
                    OpSpec::SwAppend {
                        object: object.clone(),
                        payload: format!("e{next}").into_bytes(),
                    }
                };
                push(&mut script, client, ScriptItem::Op(op));
            }
            push(&mut script, client, ScriptItem::Op(OpSpec::SwGet { object }));
        }
        WorkloadConfig::SwAppends { appends, gets } => {
            let object = vs.primary.clone();
            let ObjectKind::SwBdlo { writer, .. } = &vs.objects[&vs.primary].kind else {
                unreachable!("validated");
            };
            for i in 1..=*appends {
                push(
                    &mut script,
                    *writer,
                    ScriptItem::Op(OpSpec::SwAppend {
                        object: object.clone(),
                        payload: format!("rho{i}").into_bytes(),
                    }),
                );
            }
            let readers: Vec<ProcessId> =
                correct_clients.iter().copied().filter(|c| c != writer).collect();
            if !readers.is_empty() {
                for g in 0..*gets {
                    let reader = readers[g % readers.len()];
                    push(&mut script, reader, ScriptItem::Op(OpSpec::SwGet { object: object.clone() }));
                }
                for &reader in &readers {
                    push(&mut script, reader, ScriptItem::AwaitQuiescence);
                    push(&mut script, reader, ScriptItem::Op(OpSpec::SwGet { object: object.clone() }));
                }
            }
        }
        WorkloadConfig::AtomicAppends { pairs } | WorkloadConfig::AtomicAdds { pairs } => {
            let sbdso = vs.primary.clone();
            let adds = matches!(vs.config.workload, WorkloadConfig::AtomicAdds { .. });
            for j in 0..*pairs {
                let p = vs.clients[j * 2];
                let q = vs.clients[j * 2 + 1];
                let prefix = if adds { "G" } else { "L" };
                let target_p = ObjectId::new(&format!("{prefix}{}", j * 2));
                let target_q = ObjectId::new(&format!("{prefix}{}", j * 2 + 1));
                let r_p = Record::new(p, format!("pair{j}/p").into_bytes()).expect("payload ok");
                let r_q = Record::new(q, format!("pair{j}/q").into_bytes()).expect("payload ok");
                let mk = |partner, own: &Record, target: &ObjectId, counterpart: &Record| {
                    if adds {
                        OpSpec::AtomicAdds {
                            object: sbdso.clone(),
                            partner,
                            own: own.clone(),
                            target: target.clone(),
                            counterpart: counterpart.clone(),
                        }
                    } else {
                        OpSpec::AtomicAppends {
                            object: sbdso.clone(),
                            partner,
                            own: own.clone(),
                            target: target.clone(),
                            counterpart: counterpart.clone(),
                        }
                    }
                };
                push(&mut script, p, ScriptItem::Op(mk(q, &r_p, &target_p, &r_q)));
                push(&mut script, q, ScriptItem::Op(mk(p, &r_q, &target_q, &r_p)));
            }
        }
        WorkloadConfig::BrbBroadcasts { per_server } => {
            let object = vs.primary.clone();
            for &server in &vs.objects[&vs.primary].servers {
                for j in 0..*per_server {
                    push(
                        &mut script,
                        server,
                        ScriptItem::Op(OpSpec::BrbBroadcast {
                            object: object.clone(),
                            payload: format!("m-{server}-{j}").into_bytes(),
                        }),
                    );
                }
            }
        }
        WorkloadConfig::Script { entries } => {
            for entry in entries {
                if entry.await_quiescence {
                    push(&mut script, entry.process, ScriptItem::AwaitQuiescence);
                }
                if let Some(op) = &entry.op {
                    push(&mut script, entry.process, ScriptItem::Op(op.clone()));
                }
            }
        }
    }
    script
}

/// Build the correct machine a process would run in this scenario.
fn build_correct(vs: &ValidatedScenario, p: ProcessId) -> Option<Box<dyn ProcessMachine>> {
    if p.is_server() {
        let info = vs.objects.values().find(|o| o.servers.contains(&p))?;
        let machine: Box<dyn ProcessMachine> = match &info.kind {
            ObjectKind::Gset { quorums, mode } => Box::new(bdso::ServerMachine::new(
                p,
                info.id.clone(),
                info.servers.clone(),
                *quorums,
                mode.clone(),
            )),
            ObjectKind::Sbdso { quorums, targets } => Box::new(SbdsoServer::new(
                p,
                info.id.clone(),
                info.servers.clone(),
                *quorums,
                targets.clone(),
            )),
            ObjectKind::SwBdlo { quorums, writer, .. } => Box::new(swbdlo::ServerMachine::new(
                p,
                info.id.clone(),
                info.servers.clone(),
                *writer,
                *quorums,
            )),
            ObjectKind::LedgerStub { allowed, quorum } => Box::new(StubLedgerServer::new(
                p,
                info.id.clone(),
                allowed.clone(),
                *quorum,
            )),
            ObjectKind::Brb => Box::new(brb::NodeMachine::new(
                p,
                info.id.clone(),
                info.servers.clone(),
                info.f,
            )),
        };
        return Some(machine);
    }
    // clients act on the primary object
    let info = &vs.objects[&vs.primary];
    let selection = vs.config.target_selection;
    let machine: Box<dyn ProcessMachine> = match &info.kind {
        ObjectKind::Gset { quorums, .. } => Box::new(bdso::ClientMachine::new(
            p,
            info.id.clone(),
            info.servers.clone(),
            *quorums,
            selection,
        )),
        ObjectKind::Sbdso { quorums, .. } => Box::new(AtomicClient::new(
            p,
            info.id.clone(),
            info.servers.clone(),
            *quorums,
            selection,
        )),
        ObjectKind::SwBdlo { quorums, writer, prefix_rule } => {
            Box::new(swbdlo::ClientMachine::new(
                p,
                info.id.clone(),
                info.servers.clone(),
                *writer,
                *quorums,
                selection,
                *prefix_rule,
            ))
        }
        ObjectKind::LedgerStub { .. } | ObjectKind::Brb => return None,
    };
    Some(machine)
}

fn adversary_env(vs: &ValidatedScenario, p: ProcessId) -> AdversaryEnv {
    let info = if p.is_server() {
        vs.objects.values().find(|o| o.servers.contains(&p))
    } else {
        Some(&vs.objects[&vs.primary])
    };
    let info = info.unwrap_or_else(|| &vs.objects[&vs.primary]);
    let (writer, is_ledger) = match &info.kind {
        ObjectKind::SwBdlo { writer, .. } => (Some(*writer), true),
        _ => (None, false),
    };
    AdversaryEnv {
        object: info.id.clone(),
        group: info.servers.clone(),
        clients: vs.clients.clone(),
        writer,
        is_ledger,
    }
}

/// Instantiate every process machine for one run. Byzantine processes get
/// their assigned behaviour wrapped around (or replacing) the correct
/// machine.
pub fn build_machines(
    vs: &ValidatedScenario,
) -> Result<BTreeMap<ProcessId, Box<dyn ProcessMachine>>, ConfigError> {
    let mut machines: BTreeMap<ProcessId, Box<dyn ProcessMachine>> = BTreeMap::new();
    for &p in vs.servers.iter().chain(&vs.clients) {
        let correct = build_correct(vs, p);
        let machine = match vs.adversaries.get(&p) {
            None => match correct {
                Some(m) => m,
                None => continue, // e.g. clients in a broadcast-only scenario
            },
            Some(assignment) => adversary::make_adversary(
                assignment.kind,
                &assignment.params,
                p,
                correct,
                adversary_env(vs, p),
            )
            .map_err(|e| invalid(e.to_string()))?,
        };
        machines.insert(p, machine);
    }
    Ok(machines)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(n: usize, f: usize) -> ScenarioConfig {
        ScenarioConfig {
            name: "t".into(),
            n,
            f,
            clients: 3,
            objects: Vec::new(),
            byzantine_servers: Vec::new(),
            byzantine_clients: Vec::new(),
            workload: WorkloadConfig::RandomGset { adds: 4, gets: 4 },
            seed: 0,
            step_limit: default_step_limit(),
            policy: Policy::Fair,
            fairness_bound: 4,
            strict_bounds: true,
            target_selection: TargetSelection::SeededRandom,
            properties: Vec::new(),
        }
    }

    #[test]
    fn strict_bound_rejects_small_n() {
        let err = validate(&config(3, 1)).unwrap_err();
        let ConfigError::Invalid(msg) = err;
        assert!(msg.contains("3f+1"), "{msg}");
    }

    #[test]
    fn derived_gset_layout() {
        let vs = validate(&config(4, 1)).unwrap();
        assert_eq!(vs.servers.len(), 4);
        assert_eq!(vs.primary, ObjectId::new("GS"));
        assert_eq!(vs.properties, ["bc", "bec-a", "bec-b", "convergence", "sourcing"]);
    }

    #[test]
    fn derived_atomic_layout_has_dispatcher_and_targets() {
        let mut cfg = config(4, 1);
        cfg.clients = 2;
        cfg.workload = WorkloadConfig::AtomicAppends { pairs: 1 };
        let vs = validate(&cfg).unwrap();
        assert_eq!(vs.servers.len(), 12);
        assert!(vs.objects.contains_key(&ObjectId::new("SB")));
        assert!(vs.objects.contains_key(&ObjectId::new("L0")));
        assert!(vs.objects.contains_key(&ObjectId::new("L1")));
        match &vs.objects[&ObjectId::new("SB")].kind {
            ObjectKind::Sbdso { targets, .. } => {
                assert_eq!(targets.len(), 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn too_many_byzantine_servers_rejected() {
        let mut cfg = config(4, 1);
        cfg.byzantine_servers = alloc::vec![
            AdversaryAssignment {
                process: ProcessId::server(0),
                kind: AdversaryKind::CrashSilent,
                params: Params::new(),
            },
            AdversaryAssignment {
                process: ProcessId::server(1),
                kind: AdversaryKind::CrashSilent,
                params: Params::new(),
            },
        ];
        let ConfigError::Invalid(msg) = validate(&cfg).unwrap_err();
        assert!(msg.contains("exceed f"), "{msg}");
    }

    #[test]
    fn script_is_deterministic_per_seed() {
        let vs = validate(&config(4, 1)).unwrap();
        assert_eq!(build_script(&vs, 7), build_script(&vs, 7));
        assert_ne!(build_script(&vs, 7), build_script(&vs, 8));
    }

    #[test]
    fn writer_adversary_must_be_writer() {
        let mut cfg = config(5, 1);
        cfg.workload = WorkloadConfig::SwAppends { appends: 2, gets: 2 };
        cfg.byzantine_clients = alloc::vec![AdversaryAssignment {
            process: ProcessId::client(1),
            kind: AdversaryKind::IndexEquivocatingWriter,
            params: Params::new(),
        }];
        let ConfigError::Invalid(msg) = validate(&cfg).unwrap_err();
        assert!(msg.contains("designated writer"), "{msg}");
    }
}
