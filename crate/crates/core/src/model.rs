//! Static problem instance: topology, service chains, resource profiles, and
//! the commodity space.
//!
//! Everything here is immutable after [`build_instance`] and safe to share
//! read-only across workers. Node indices are assigned deterministically:
//! UEs first (sorted by name), then servers (sorted by name). Commodities are
//! ordered lexicographically by (destination, service, stage); that order is
//! the global tie-break key used by every scheduler in the crate.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{
    ChannelConfig, CoverageConfig, InstanceConfig, UePlacement, WorkloadSpec,
};

pub type NodeId = usize;
pub type ServiceId = usize;
pub type CommodityId = usize;
/// Index into `Instance::wireless_links`.
pub type LinkId = usize;
/// Index into `Instance::wired_edges`.
pub type EdgeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeKind {
    Ue,
    Server,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Node {
    pub name: String,
    pub kind: NodeKind,
    /// Initial position in meters; UEs move during a run, servers do not.
    pub pos: [f64; 2],
}

/// A function-chain service: `stages - 1` functions applied in sequence.
///
/// A stage-`m` packet (1-based) is the input of function `m`; stage `stages`
/// packets are finished results. `scaling[m-1]` is the output/input size
/// ratio of function `m` and `workload[m-1]` the compute resource consumed
/// per input packet, in cpu-slots.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ServiceSpec {
    pub name: String,
    pub stages: usize,
    pub scaling: Vec<f64>,
    pub workload: Vec<f64>,
}

impl ServiceSpec {
    pub fn functions(&self) -> usize {
        self.stages - 1
    }

    /// Cumulative stream scaling at the input of stage `m` (1-based):
    /// product of the scaling factors of functions 1..m-1.
    pub fn cumulative_scaling(&self, stage: usize) -> f64 {
        self.scaling[..stage - 1].iter().product()
    }
}

/// The unit of queueing and scheduling: packets destined to UE `dest`,
/// belonging to `service`, currently at `stage` (1-based, up to M).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Commodity {
    pub dest: NodeId,
    pub service: ServiceId,
    pub stage: usize,
}

/// Discrete resource levels for a node's processor. Level 0 always has zero
/// capacity and zero setup cost, so "allocate nothing" is a first-class
/// action. Capacities are in cpu-slots per slot, setup costs per slot.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComputeProfile {
    pub capacities: Vec<f64>,
    pub setup_costs: Vec<f64>,
    /// Cost per cpu-slot of executed work.
    pub unit_cost: f64,
}

impl ComputeProfile {
    pub fn levels(&self) -> usize {
        self.capacities.len()
    }
}

/// Same structure for a wired link; capacities in packets per slot, unit
/// cost per packet transmitted.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WiredLinkProfile {
    pub capacities: Vec<f64>,
    pub setup_costs: Vec<f64>,
    pub unit_cost: f64,
}

impl WiredLinkProfile {
    pub fn levels(&self) -> usize {
        self.capacities.len()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WiredEdge {
    pub src: NodeId,
    pub dst: NodeId,
    pub profile: WiredLinkProfile,
}

/// A directed wireless link: uplink (UE to covering server) or downlink
/// (server to covered UE).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WirelessLink {
    pub tx: NodeId,
    pub rx: NodeId,
}

/// Wireless-layer parameters. Power budgets and energy costs are per node;
/// bandwidth is per server (each link uses the band of its server endpoint).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WirelessParams {
    pub packet_bits: f64,
    pub carrier_ghz: f64,
    pub noise_psd_dbm_hz: f64,
    pub antenna_gain_db: f64,
    pub shadow_sigma_db: f64,
    pub slot_seconds: f64,
    pub power_budget: Vec<f64>,
    /// Cost per joule of transmit energy.
    pub energy_cost: Vec<f64>,
    pub bandwidth_hz: Vec<f64>,
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("duplicate node id `{0}`")]
    DuplicateNode(String),
    #[error("unknown node id `{0}`")]
    UnknownNode(String),
    #[error("wired edge {0}->{1} touches a UE; UEs do not relay")]
    UeInWiredEdge(String, String),
    #[error("wired edge {0}->{0} is a self-loop")]
    SelfLoop(String),
    #[error("duplicate wired edge {0}->{1}")]
    DuplicateEdge(String, String),
    #[error("node or edge `{0}`: {1}")]
    BadProfile(String, String),
    #[error("service `{0}`: {1}")]
    BadService(String, String),
    #[error("UE `{0}` has empty server coverage")]
    EmptyCoverage(String),
    #[error("node `{0}` position {1:?} outside [0, {2}]^2")]
    PositionOutOfBounds(String, [f64; 2], f64),
    #[error("config error: {0}")]
    BadConfig(String),
}

/// A validated, fully indexed problem instance.
#[derive(Debug, Clone)]
pub struct Instance {
    pub nodes: Vec<Node>,
    pub num_ues: usize,
    pub services: Vec<ServiceSpec>,
    pub commodities: Vec<Commodity>,
    pub compute: Vec<ComputeProfile>,
    pub wired_edges: Vec<WiredEdge>,
    pub wireless: WirelessParams,
    pub area_side: f64,
    /// Per UE: covering servers, sorted by node id.
    pub coverage: Vec<Vec<NodeId>>,
    /// Per node: UEs covered when the node is a server, else empty.
    pub covered_ues: Vec<Vec<NodeId>>,
    /// All directed wireless links, sorted by (tx, rx).
    pub wireless_links: Vec<WirelessLink>,
    /// Per node: outgoing wireless links, ascending rx.
    pub out_links: Vec<Vec<LinkId>>,
    pub in_links: Vec<Vec<LinkId>>,
    pub out_edges: Vec<Vec<EdgeId>>,
    pub in_edges: Vec<Vec<EdgeId>>,
    /// Per node: commodities it may hand to its processor (stage < M, and
    /// only its own commodities when the node is a UE).
    pub proc_candidates: Vec<Vec<CommodityId>>,
    /// Per wireless link: commodities it may carry. Uplinks carry the UE's
    /// own unfinished commodities; downlinks carry commodities destined to
    /// the receiving UE.
    pub link_candidates: Vec<Vec<CommodityId>>,
    /// Channel model resolved from config (kept here so an instance is
    /// self-contained; the stochastic module consumes it).
    pub channel: ChannelSetup,
    /// Mobility step standard deviation in meters per slot (0 = static).
    pub mobility_sigma_m: f64,
    svc_offset: Vec<usize>,
    stages_total: usize,
}

/// Channel model selected for the instance.
#[derive(Debug, Clone)]
pub enum ChannelSetup {
    /// Distance path loss plus fresh log-normal shadowing each slot.
    PathLoss,
    /// Finite per-transmitter CSI tables: state `s` of node `i` fixes the
    /// gains of all outgoing links of `i`; states are drawn i.i.d. per slot.
    Discrete(Vec<CsiTable>),
}

/// Finite CSI distribution of one transmitter.
#[derive(Debug, Clone, Default)]
pub struct CsiTable {
    pub probs: Vec<f64>,
    /// `gains[state][k]` = linear power gain of the k-th outgoing link
    /// (in `Instance::out_links` order).
    pub gains: Vec<Vec<f64>>,
}

impl Instance {
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_commodities(&self) -> usize {
        self.commodities.len()
    }

    pub fn is_ue(&self, n: NodeId) -> bool {
        n < self.num_ues
    }

    pub fn is_server(&self, n: NodeId) -> bool {
        n >= self.num_ues
    }

    pub fn service(&self, s: ServiceId) -> &ServiceSpec {
        &self.services[s]
    }

    pub fn commodity(&self, c: CommodityId) -> Commodity {
        self.commodities[c]
    }

    /// O(1) lookup of the commodity index for (dest, service, stage).
    pub fn commodity_id(&self, dest: NodeId, service: ServiceId, stage: usize) -> CommodityId {
        debug_assert!(self.is_ue(dest));
        dest * self.stages_total + self.svc_offset[service] + (stage - 1)
    }

    /// The next-stage commodity, or None at the final stage.
    pub fn next_stage(&self, c: CommodityId) -> Option<CommodityId> {
        let com = self.commodities[c];
        if com.stage < self.services[com.service].stages {
            Some(c + 1)
        } else {
            None
        }
    }

    /// Whether node `n` can ever hold packets of commodity `c`. UEs only
    /// hold their own traffic; servers hold anything.
    pub fn queue_valid(&self, n: NodeId, c: CommodityId) -> bool {
        self.is_server(n) || self.commodities[c].dest == n
    }

    /// A queue that is identically zero: finished packets at their
    /// destination leave the system immediately.
    pub fn is_delivery_queue(&self, n: NodeId, c: CommodityId) -> bool {
        let com = self.commodities[c];
        com.dest == n && com.stage == self.services[com.service].stages
    }

    pub fn find_node(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.name == name)
    }

    pub fn find_wireless_link(&self, tx: NodeId, rx: NodeId) -> Option<LinkId> {
        self.wireless_links
            .iter()
            .position(|l| l.tx == tx && l.rx == rx)
    }

    /// Bandwidth of a wireless link: the band of its server endpoint.
    pub fn link_bandwidth_hz(&self, l: LinkId) -> f64 {
        let link = self.wireless_links[l];
        let server = if self.is_server(link.tx) { link.tx } else { link.rx };
        self.wireless.bandwidth_hz[server]
    }

    /// Noise power at the receiver of link `l`, in watts.
    pub fn link_noise_w(&self, l: LinkId) -> f64 {
        let psd_w_per_hz = 10f64.powf((self.wireless.noise_psd_dbm_hz - 30.0) / 10.0);
        psd_w_per_hz * self.link_bandwidth_hz(l)
    }

    /// Packets per second per unit of log2(1+snr): bandwidth / packet size.
    pub fn link_rate_factor(&self, l: LinkId) -> f64 {
        self.link_bandwidth_hz(l) / self.wireless.packet_bits
    }

    pub fn workload(&self, c: CommodityId) -> f64 {
        let com = self.commodities[c];
        self.services[com.service].workload[com.stage - 1]
    }

    pub fn scaling(&self, c: CommodityId) -> f64 {
        let com = self.commodities[c];
        self.services[com.service].scaling[com.stage - 1]
    }
}

/// Enumerate the commodity space in the global (dest, service, stage) order.
pub fn commodity_space(services: &[ServiceSpec], num_ues: usize) -> Vec<Commodity> {
    let mut out = Vec::new();
    for dest in 0..num_ues {
        for (service, spec) in services.iter().enumerate() {
            for stage in 1..=spec.stages {
                out.push(Commodity {
                    dest,
                    service,
                    stage,
                });
            }
        }
    }
    out
}

fn validate_profile(
    name: &str,
    capacities: &[f64],
    setup_costs: &[f64],
) -> Result<(), ModelError> {
    let bad = |msg: &str| ModelError::BadProfile(name.to_string(), msg.to_string());
    if capacities.is_empty() || capacities.len() != setup_costs.len() {
        return Err(bad("capacity and setup-cost lists must be non-empty and equal length"));
    }
    if capacities[0] != 0.0 || setup_costs[0] != 0.0 {
        return Err(bad("level 0 must have zero capacity and zero setup cost"));
    }
    for w in capacities.windows(2) {
        if w[1] < w[0] {
            return Err(bad("capacities must be nondecreasing in level"));
        }
    }
    for w in setup_costs.windows(2) {
        if w[1] < w[0] {
            return Err(bad("setup costs must be nondecreasing in level"));
        }
    }
    Ok(())
}

/// Build and validate an instance from a parsed configuration.
///
/// Node placement, coverage, unit conversions to per-slot quantities, and all
/// derived index tables happen here; after this the instance is frozen for
/// the whole run (coverage in particular does not follow mobility).
pub fn build_instance(cfg: &InstanceConfig) -> Result<Instance, ModelError> {
    let tau = cfg.wireless.slot_ms * 1e-3;
    if !(tau > 0.0) {
        return Err(ModelError::BadConfig("slot_ms must be positive".into()));
    }
    let packet_bits = cfg.wireless.packet_bits;
    if !(packet_bits > 0.0) {
        return Err(ModelError::BadConfig("packet_bits must be positive".into()));
    }

    // Node set: UEs (possibly procedurally placed), then servers.
    let mut ues: Vec<(String, [f64; 2])> = match &cfg.topology.ues {
        UePlacement::Explicit(list) => list.iter().map(|n| (n.id.clone(), n.pos)).collect(),
        UePlacement::Random { count, seed } => {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(*seed);
            let side = cfg.topology.area_side_m;
            (0..*count)
                .map(|i| {
                    let x: f64 = rng.random::<f64>() * side;
                    let y: f64 = rng.random::<f64>() * side;
                    (format!("ue{i:03}"), [x, y])
                })
                .collect()
        }
    };
    ues.sort_by(|a, b| a.0.cmp(&b.0));
    let mut servers: Vec<(String, [f64; 2])> = cfg
        .topology
        .servers
        .iter()
        .map(|n| (n.id.clone(), n.pos))
        .collect();
    servers.sort_by(|a, b| a.0.cmp(&b.0));

    let num_ues = ues.len();
    let mut nodes = Vec::with_capacity(num_ues + servers.len());
    for (name, pos) in ues {
        nodes.push(Node {
            name,
            kind: NodeKind::Ue,
            pos,
        });
    }
    for (name, pos) in servers {
        nodes.push(Node {
            name,
            kind: NodeKind::Server,
            pos,
        });
    }
    if nodes.is_empty() {
        return Err(ModelError::BadConfig("topology has no nodes".into()));
    }

    // Unique names, in-bounds positions.
    let area = cfg.topology.area_side_m;
    for i in 0..nodes.len() {
        for j in i + 1..nodes.len() {
            if nodes[i].name == nodes[j].name {
                return Err(ModelError::DuplicateNode(nodes[i].name.clone()));
            }
        }
        let p = nodes[i].pos;
        if !(p[0] >= 0.0 && p[0] <= area && p[1] >= 0.0 && p[1] <= area) {
            return Err(ModelError::PositionOutOfBounds(
                nodes[i].name.clone(),
                p,
                area,
            ));
        }
    }
    let find = |name: &str| -> Result<NodeId, ModelError> {
        nodes
            .iter()
            .position(|n| n.name == name)
            .ok_or_else(|| ModelError::UnknownNode(name.to_string()))
    };

    // Services.
    let mut services = Vec::new();
    for sc in &cfg.services {
        let scaling = sc.scaling.clone();
        if scaling.is_empty() {
            return Err(ModelError::BadService(
                sc.id.clone(),
                "a service needs at least one function".into(),
            ));
        }
        let workload = match &sc.workload_spec()? {
            WorkloadSpec::SupportableMbpsPerCpu(v) => {
                if v.len() != scaling.len() {
                    return Err(ModelError::BadService(
                        sc.id.clone(),
                        "workload list length must match scaling list".into(),
                    ));
                }
                // x Mb/s per cpu -> packets per cpu-slot -> cpu-slots/packet.
                v.iter()
                    .map(|mbps| packet_bits / (mbps * 1e6 * tau))
                    .collect()
            }
            WorkloadSpec::CpuSlotsPerPacket(v) => {
                if v.len() != scaling.len() {
                    return Err(ModelError::BadService(
                        sc.id.clone(),
                        "workload list length must match scaling list".into(),
                    ));
                }
                v.clone()
            }
        };
        if scaling.iter().any(|x| !(*x > 0.0)) || workload.iter().any(|x| !(*x > 0.0)) {
            return Err(ModelError::BadService(
                sc.id.clone(),
                "scaling factors and workloads must be positive".into(),
            ));
        }
        services.push(ServiceSpec {
            name: sc.id.clone(),
            stages: scaling.len() + 1,
            scaling,
            workload,
        });
    }
    services.sort_by(|a, b| a.name.cmp(&b.name));
    if services.is_empty() {
        return Err(ModelError::BadConfig("no services defined".into()));
    }
    for i in 1..services.len() {
        if services[i].name == services[i - 1].name {
            return Err(ModelError::BadService(
                services[i].name.clone(),
                "duplicate service id".into(),
            ));
        }
    }

    // Compute profiles, converted to per-slot cost units.
    let mut compute = Vec::with_capacity(nodes.len());
    for node in &nodes {
        let pc = cfg
            .compute
            .overrides
            .get(&node.name)
            .unwrap_or(match node.kind {
                NodeKind::Ue => &cfg.compute.ue,
                NodeKind::Server => &cfg.compute.server,
            });
        validate_profile(&node.name, &pc.capacities_cpus, &pc.setup_costs_per_s)?;
        compute.push(ComputeProfile {
            capacities: pc.capacities_cpus.clone(),
            setup_costs: pc.setup_costs_per_s.iter().map(|s| s * tau).collect(),
            unit_cost: pc.unit_cost_per_cpu_s * tau,
        });
    }

    // Wired edges.
    let mut wired_edges = Vec::new();
    for [a, b] in &cfg.topology.wired_edges {
        let src = find(a)?;
        let dst = find(b)?;
        if src == dst {
            return Err(ModelError::SelfLoop(a.clone()));
        }
        if nodes[src].kind == NodeKind::Ue || nodes[dst].kind == NodeKind::Ue {
            return Err(ModelError::UeInWiredEdge(a.clone(), b.clone()));
        }
        let key = format!("{a}->{b}");
        let wc = cfg.wired.overrides.get(&key).unwrap_or(&cfg.wired.default);
        validate_profile(&key, &wc.capacities_gbps, &wc.setup_costs_per_s)?;
        wired_edges.push(WiredEdge {
            src,
            dst,
            profile: WiredLinkProfile {
                capacities: wc
                    .capacities_gbps
                    .iter()
                    .map(|g| g * 1e9 * tau / packet_bits)
                    .collect(),
                setup_costs: wc.setup_costs_per_s.iter().map(|s| s * tau).collect(),
                unit_cost: wc.unit_cost_per_gb * packet_bits / 1e9,
            },
        });
    }
    wired_edges.sort_by_key(|e| (e.src, e.dst));
    for w in wired_edges.windows(2) {
        if w[0].src == w[1].src && w[0].dst == w[1].dst {
            return Err(ModelError::DuplicateEdge(
                nodes[w[0].src].name.clone(),
                nodes[w[0].dst].name.clone(),
            ));
        }
    }

    // Coverage.
    let server_ids: Vec<NodeId> = (num_ues..nodes.len()).collect();
    if server_ids.is_empty() && cfg.topology.wired_edges.is_empty() {
        // Pure-local instances (no servers) are allowed.
    }
    let mut coverage: Vec<Vec<NodeId>> = vec![Vec::new(); num_ues];
    match &cfg.topology.coverage {
        CoverageConfig::Explicit(map) => {
            for (ue_name, srv_names) in map {
                let ue = find(ue_name)?;
                if ue >= num_ues {
                    return Err(ModelError::BadConfig(format!(
                        "coverage key `{ue_name}` is not a UE"
                    )));
                }
                for s in srv_names {
                    let sid = find(s)?;
                    if sid < num_ues {
                        return Err(ModelError::BadConfig(format!(
                            "coverage target `{s}` is not a server"
                        )));
                    }
                    coverage[ue].push(sid);
                }
            }
        }
        CoverageConfig::Nearest => {
            for ue in 0..num_ues {
                if let Some(&best) = server_ids.iter().min_by(|&&a, &&b| {
                    let da = dist(nodes[ue].pos, nodes[a].pos);
                    let db = dist(nodes[ue].pos, nodes[b].pos);
                    da.partial_cmp(&db).unwrap().then(a.cmp(&b))
                }) {
                    coverage[ue].push(best);
                }
            }
        }
        CoverageConfig::Radius { radius_m } => {
            for ue in 0..num_ues {
                for &s in &server_ids {
                    if dist(nodes[ue].pos, nodes[s].pos) <= *radius_m {
                        coverage[ue].push(s);
                    }
                }
            }
        }
    }
    for cov in coverage.iter_mut() {
        cov.sort_unstable();
        cov.dedup();
    }
    if !server_ids.is_empty() {
        for (ue, cov) in coverage.iter().enumerate() {
            if cov.is_empty() {
                return Err(ModelError::EmptyCoverage(nodes[ue].name.clone()));
            }
        }
    }

    // Wireless links: uplink and downlink for every covered pair.
    let mut wireless_links = Vec::new();
    for (ue, cov) in coverage.iter().enumerate() {
        for &s in cov {
            wireless_links.push(WirelessLink { tx: ue, rx: s });
            wireless_links.push(WirelessLink { tx: s, rx: ue });
        }
    }
    wireless_links.sort_by_key(|l| (l.tx, l.rx));

    let mut covered_ues: Vec<Vec<NodeId>> = vec![Vec::new(); nodes.len()];
    for (ue, cov) in coverage.iter().enumerate() {
        for &s in cov {
            covered_ues[s].push(ue);
        }
    }
    for list in covered_ues.iter_mut() {
        list.sort_unstable();
    }

    // Adjacency tables.
    let n = nodes.len();
    let mut out_links = vec![Vec::new(); n];
    let mut in_links = vec![Vec::new(); n];
    for (idx, l) in wireless_links.iter().enumerate() {
        out_links[l.tx].push(idx);
        in_links[l.rx].push(idx);
    }
    let mut out_edges = vec![Vec::new(); n];
    let mut in_edges = vec![Vec::new(); n];
    for (idx, e) in wired_edges.iter().enumerate() {
        out_edges[e.src].push(idx);
        in_edges[e.dst].push(idx);
    }

    // Wireless parameters per node.
    let wc = &cfg.wireless;
    let mut power_budget = Vec::with_capacity(n);
    let mut energy_cost = Vec::with_capacity(n);
    let mut bandwidth_hz = Vec::with_capacity(n);
    for node in &nodes {
        match node.kind {
            NodeKind::Ue => {
                power_budget.push(wc.ue_power_w);
                energy_cost.push(wc.ue_energy_cost_per_joule);
                bandwidth_hz.push(wc.bandwidth_mhz * 1e6);
            }
            NodeKind::Server => {
                power_budget.push(wc.server_power_w);
                energy_cost.push(wc.server_energy_cost_per_joule);
                bandwidth_hz.push(wc.bandwidth_mhz * 1e6);
            }
        }
    }
    let positive = |v: f64, what: &str| -> Result<(), ModelError> {
        if v > 0.0 {
            Ok(())
        } else {
            Err(ModelError::BadConfig(format!("{what} must be positive")))
        }
    };
    positive(wc.bandwidth_mhz, "bandwidth_mhz")?;
    positive(wc.carrier_ghz, "carrier_ghz")?;
    if !wireless_links.is_empty() {
        positive(wc.ue_power_w, "ue_power_w")?;
        positive(wc.server_power_w, "server_power_w")?;
    }
    if wc.shadow_sigma_db < 0.0 {
        return Err(ModelError::BadConfig("shadow_sigma_db must be >= 0".into()));
    }

    let wireless = WirelessParams {
        packet_bits,
        carrier_ghz: wc.carrier_ghz,
        noise_psd_dbm_hz: wc.noise_dbm_per_hz,
        antenna_gain_db: wc.antenna_gain_db,
        shadow_sigma_db: wc.shadow_sigma_db,
        slot_seconds: tau,
        power_budget,
        energy_cost,
        bandwidth_hz,
    };

    // Commodity space and candidate tables.
    let commodities = commodity_space(&services, num_ues);
    let svc_offset: Vec<usize> = services
        .iter()
        .scan(0usize, |acc, s| {
            let here = *acc;
            *acc += s.stages;
            Some(here)
        })
        .collect();
    let stages_total: usize = services.iter().map(|s| s.stages).sum();

    let mut proc_candidates: Vec<Vec<CommodityId>> = vec![Vec::new(); n];
    for (c, com) in commodities.iter().enumerate() {
        let m_max = services[com.service].stages;
        if com.stage >= m_max {
            continue;
        }
        for node in 0..n {
            let valid = node >= num_ues || com.dest == node;
            if valid {
                proc_candidates[node].push(c);
            }
        }
    }

    let mut link_candidates: Vec<Vec<CommodityId>> = vec![Vec::new(); wireless_links.len()];
    for (l, link) in wireless_links.iter().enumerate() {
        for (c, com) in commodities.iter().enumerate() {
            let final_stage = com.stage == services[com.service].stages;
            let cand = if link.tx < num_ues {
                // Uplink: the UE's own commodities; finished packets of its
                // own never leave (they are delivered on the spot).
                com.dest == link.tx && !final_stage
            } else {
                // Downlink: traffic destined to the receiving UE.
                com.dest == link.rx
            };
            if cand {
                link_candidates[l].push(c);
            }
        }
    }

    let channel = match &wc.channel {
        ChannelConfig::PathLoss => ChannelSetup::PathLoss,
        ChannelConfig::Discrete { per_node } => {
            let mut tables = vec![CsiTable::default(); n];
            for (name, t) in per_node {
                let id = find(name)?;
                let d = out_links[id].len();
                if t.probs.is_empty() || t.gains.len() != t.probs.len() {
                    return Err(ModelError::BadConfig(format!(
                        "discrete CSI for `{name}`: probs and gains must be equal-length and non-empty"
                    )));
                }
                let psum: f64 = t.probs.iter().sum();
                if (psum - 1.0).abs() > 1e-9 || t.probs.iter().any(|p| *p < 0.0) {
                    return Err(ModelError::BadConfig(format!(
                        "discrete CSI for `{name}`: probabilities must be nonnegative and sum to 1"
                    )));
                }
                for row in &t.gains {
                    if row.len() != d {
                        return Err(ModelError::BadConfig(format!(
                            "discrete CSI for `{name}`: each state needs {d} gains (one per outgoing link)"
                        )));
                    }
                    if row.iter().any(|g| !(*g > 0.0)) {
                        return Err(ModelError::BadConfig(format!(
                            "discrete CSI for `{name}`: gains must be positive"
                        )));
                    }
                }
                tables[id] = CsiTable {
                    probs: t.probs.clone(),
                    gains: t.gains.clone(),
                };
            }
            for node in 0..n {
                if !out_links[node].is_empty() && tables[node].probs.is_empty() {
                    return Err(ModelError::BadConfig(format!(
                        "discrete channel mode: node `{}` has wireless links but no CSI table",
                        nodes[node].name
                    )));
                }
            }
            ChannelSetup::Discrete(tables)
        }
    };

    let mobility_sigma_m = cfg.mobility.as_ref().map(|m| m.step_sigma_m).unwrap_or(0.0);
    if mobility_sigma_m < 0.0 {
        return Err(ModelError::BadConfig("step_sigma_m must be >= 0".into()));
    }

    Ok(Instance {
        nodes,
        num_ues,
        services,
        commodities,
        compute,
        wired_edges,
        wireless,
        area_side: area,
        coverage,
        covered_ues,
        wireless_links,
        out_links,
        in_links,
        out_edges,
        in_edges,
        proc_candidates,
        link_candidates,
        channel,
        mobility_sigma_m,
        svc_offset,
        stages_total,
    })
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}
