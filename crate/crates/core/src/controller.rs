//! The per-slot network controller: distributed max-weight decisions for
//! processing, wired transmission, and wireless transmission (server
//! association plus transmit power), driven by kappa-scaled queue
//! differentials and a cost-delay tradeoff knob `v`.
//!
//! Every decision is local to one node or link given a snapshot of the
//! scaled backlogs and the slot's channel gains, so a whole slot's decisions
//! could run in parallel; this implementation evaluates nodes and links in
//! index order, which fixes all tie-breaks and keeps runs reproducible.

use crate::metrics::KappaTable;
use crate::model::{CommodityId, Instance, LinkId, NodeId};
use crate::queues::{FlowPlan, LinkRef, PlanCapacities, QueueState};
use crate::stochastic::{link_rate_pkts_per_s, ChannelState};

const LN2: f64 = std::f64::consts::LN_2;

/// One slot's full control action.
#[derive(Debug, Clone, Default)]
pub struct Decision {
    /// Chosen server per UE (indexed by UE node id), if any.
    pub assoc: Vec<Option<NodeId>>,
    pub compute_level: Vec<usize>,
    pub wired_level: Vec<usize>,
    /// Transmit power per wireless link, watts.
    pub power: Vec<f64>,
    pub plan: FlowPlan,
}

impl Decision {
    pub fn idle(instance: &Instance) -> Self {
        Decision {
            assoc: vec![None; instance.num_ues],
            compute_level: vec![0; instance.num_nodes()],
            wired_level: vec![0; instance.wired_edges.len()],
            power: vec![0.0; instance.wireless_links.len()],
            plan: FlowPlan::default(),
        }
    }

    /// The capacity vector implied by the chosen levels and powers, used to
    /// validate the plan at execution time.
    pub fn capacities(&self, instance: &Instance, channel: &ChannelState) -> PlanCapacities {
        PlanCapacities {
            proc: self
                .compute_level
                .iter()
                .enumerate()
                .map(|(n, &k)| instance.compute[n].capacities[k])
                .collect(),
            wired: self
                .wired_level
                .iter()
                .enumerate()
                .map(|(e, &k)| instance.wired_edges[e].profile.capacities[k])
                .collect(),
            wireless: self
                .power
                .iter()
                .enumerate()
                .map(|(l, &p)| wireless_pkts_per_slot(instance, l, channel.gains[l], p))
                .collect(),
        }
    }
}

/// Packets a wireless link can carry this slot at power `p`.
pub fn wireless_pkts_per_slot(instance: &Instance, link: LinkId, gain: f64, p: f64) -> f64 {
    link_rate_pkts_per_s(
        gain,
        p,
        instance.link_noise_w(link),
        instance.link_rate_factor(link),
    ) * instance.wireless.slot_seconds
}

/// Max-weight tables: nonnegative scaled-backlog differentials per resource
/// and commodity. Entries for non-candidate commodities stay zero.
#[derive(Debug, Clone)]
pub struct WeightTable {
    /// `node * num_commodities + c`: processing differential toward the
    /// next stage.
    pub proc: Vec<f64>,
    /// Per wired edge, dense by commodity.
    pub wired: Vec<Vec<f64>>,
    /// Per wireless link, dense by commodity.
    pub wireless: Vec<Vec<f64>>,
}

/// Backlog differentials from kappa-scaled queues. The next-stage queue of
/// a finished commodity at its destination is identically zero, which
/// rewards finishing work at the destination.
pub fn compute_weights(instance: &Instance, scaled: &[f64]) -> WeightTable {
    let nc = instance.num_commodities();
    let q = |node: NodeId, c: CommodityId| scaled[node * nc + c];

    let mut proc = vec![0.0; instance.num_nodes() * nc];
    for node in 0..instance.num_nodes() {
        for &c in &instance.proc_candidates[node] {
            let next = instance.next_stage(c).expect("candidates end before M");
            let w = q(node, c) - instance.scaling(c) * q(node, next);
            proc[node * nc + c] = w.max(0.0);
        }
    }

    let wired = instance
        .wired_edges
        .iter()
        .map(|e| {
            (0..nc)
                .map(|c| (q(e.src, c) - q(e.dst, c)).max(0.0))
                .collect()
        })
        .collect();

    let wireless = instance
        .wireless_links
        .iter()
        .enumerate()
        .map(|(l, link)| {
            let mut row = vec![0.0; nc];
            for &c in &instance.link_candidates[l] {
                row[c] = (q(link.tx, c) - q(link.rx, c)).max(0.0);
            }
            row
        })
        .collect();

    WeightTable {
        proc,
        wired,
        wireless,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProcDecision {
    pub level: usize,
    /// Planned intake on the winning commodity, if any work is worth doing.
    pub flow: Option<(CommodityId, f64)>,
    pub best_weight: f64,
}

/// Processing decision at one node: per-cpu-slot net weights, the max-weight
/// commodity, the level maximizing weighted capacity minus setup, and a
/// full-capacity flow on the winner. Ties break toward the lower commodity
/// and the lower level.
pub fn decide_processing(
    instance: &Instance,
    node: NodeId,
    weights: &WeightTable,
    v: f64,
) -> ProcDecision {
    let nc = instance.num_commodities();
    let unit = instance.compute[node].unit_cost;
    let mut best: Option<(f64, CommodityId)> = None;
    for &c in &instance.proc_candidates[node] {
        let w = weights.proc[node * nc + c];
        let net = (w / instance.workload(c) - v * unit).max(0.0);
        if best.map_or(true, |(bw, _)| net > bw) {
            best = Some((net, c));
        }
    }
    let Some((best_w, best_c)) = best else {
        return ProcDecision {
            level: 0,
            flow: None,
            best_weight: 0.0,
        };
    };

    let profile = &instance.compute[node];
    let mut level = 0usize;
    let mut level_score = 0.0;
    for k in 0..profile.levels() {
        let score = best_w * profile.capacities[k] - v * profile.setup_costs[k];
        if score > level_score {
            level_score = score;
            level = k;
        }
    }
    let cap = profile.capacities[level];
    let flow = if best_w > 0.0 && cap > 0.0 {
        Some((best_c, cap / instance.workload(best_c)))
    } else {
        None
    };
    ProcDecision {
        level,
        flow,
        best_weight: best_w,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WiredDecision {
    pub level: usize,
    pub flow: Option<(CommodityId, f64)>,
    pub best_weight: f64,
}

/// Wired transmission decision on one edge, same structure as processing
/// with per-packet weights.
pub fn decide_wired(
    instance: &Instance,
    edge: usize,
    weights: &WeightTable,
    v: f64,
) -> WiredDecision {
    let profile = &instance.wired_edges[edge].profile;
    let unit = profile.unit_cost;
    let mut best_w = 0.0;
    let mut best_c = 0;
    let mut found = false;
    for (c, &w) in weights.wired[edge].iter().enumerate() {
        let net = (w - v * unit).max(0.0);
        if !found || net > best_w {
            best_w = net;
            best_c = c;
            found = true;
        }
    }
    let mut level = 0usize;
    let mut level_score = 0.0;
    for k in 0..profile.levels() {
        let score = best_w * profile.capacities[k] - v * profile.setup_costs[k];
        if score > level_score {
            level_score = score;
            level = k;
        }
    }
    let cap = profile.capacities[level];
    let flow = if found && best_w > 0.0 && cap > 0.0 {
        Some((best_c, cap))
    } else {
        None
    };
    WiredDecision {
        level,
        flow,
        best_weight: best_w,
    }
}

/// The commodity with the largest weight on a wireless link (lexicographic
/// tie-break), and that weight. Zero weight means nothing worth sending.
pub fn max_weight_commodity(
    instance: &Instance,
    link: LinkId,
    weights: &WeightTable,
) -> (Option<CommodityId>, f64) {
    let mut best: Option<CommodityId> = None;
    let mut best_w = 0.0;
    for &c in &instance.link_candidates[link] {
        let w = weights.wireless[link][c];
        if w > best_w {
            best_w = w;
            best = Some(c);
        } else if best.is_none() {
            best = Some(c);
        }
    }
    (best, best_w)
}

/// One link's inputs to the water-filling subproblem.
#[derive(Debug, Clone, Copy)]
pub struct WaterfillLink {
    /// Max-weight value of the link (scaled backlog differential).
    pub weight: f64,
    pub gain: f64,
    pub noise_w: f64,
    /// Bandwidth over packet size: packets per second per log2 unit.
    pub rate_factor: f64,
}

#[derive(Debug, Clone)]
pub struct WaterfillResult {
    pub powers: Vec<f64>,
    /// The budget multiplier at the solution (0 when the budget is slack).
    pub rho: f64,
}

fn waterfill_level(link: &WaterfillLink, denom: f64) -> f64 {
    if link.weight <= 0.0 {
        return 0.0;
    }
    if denom <= 0.0 {
        return f64::INFINITY;
    }
    (link.weight * link.rate_factor / (denom * LN2) - link.noise_w / link.gain).max(0.0)
}

/// Objective of the wireless subproblem at a given power vector, per second:
/// energy cost minus weighted packet rate, summed over the links.
pub fn wireless_objective(links: &[WaterfillLink], powers: &[f64], v_energy_cost: f64) -> f64 {
    links
        .iter()
        .zip(powers)
        .map(|(l, &p)| {
            v_energy_cost * p
                - l.weight * link_rate_pkts_per_s(l.gain, p, l.noise_w, l.rate_factor)
        })
        .sum()
}

/// Water-filling power allocation minimizing `sum_j (V c p_j - w_j R_j(p_j))`
/// subject to `sum_j p_j <= budget`, `p >= 0`.
///
/// Stationarity of the Lagrangian gives
/// `p_j = [w_j (B/F) / ((V c + rho) ln 2) - sigma_j^2 / g_j]+` with `rho = 0`
/// when the unconstrained allocation fits the budget, otherwise the unique
/// root making the total meet the budget (found by bisection). The `ln 2`
/// factor comes from differentiating the log2 rate; without it the closed
/// form is not stationary, which the grid-search tests would catch.
pub fn waterfill_power(
    links: &[WaterfillLink],
    v_energy_cost: f64,
    budget: f64,
) -> WaterfillResult {
    let n = links.len();
    if n == 0 || links.iter().all(|l| l.weight <= 0.0) || budget <= 0.0 {
        return WaterfillResult {
            powers: vec![0.0; n],
            rho: 0.0,
        };
    }
    let total_at = |rho: f64| -> f64 {
        links
            .iter()
            .map(|l| waterfill_level(l, v_energy_cost + rho))
            .sum()
    };

    if v_energy_cost > 0.0 && total_at(0.0) <= budget {
        let powers = links
            .iter()
            .map(|l| waterfill_level(l, v_energy_cost))
            .collect();
        return WaterfillResult { powers, rho: 0.0 };
    }

    // Budget binds. An upper bracket follows from dropping the noise terms:
    // sum_j w_j rf_j / ((vc + rho) ln2) <= budget.
    let weight_sum: f64 = links
        .iter()
        .filter(|l| l.weight > 0.0)
        .map(|l| l.weight * l.rate_factor)
        .sum();
    let mut hi = (weight_sum / (budget * LN2) - v_energy_cost).max(1e-300) * 1.000001;
    while total_at(hi) > budget {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    let tol = 1e-9 * budget.max(1.0);
    let mut rho = hi;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let total = total_at(mid);
        if total > budget {
            lo = mid;
        } else {
            hi = mid;
            rho = mid;
        }
        let gap = (total - budget).abs();
        if gap <= tol && rho * gap <= 1e-9 {
            rho = mid;
            break;
        }
    }
    let powers = links
        .iter()
        .map(|l| waterfill_level(l, v_energy_cost + rho))
        .collect();
    WaterfillResult { powers, rho }
}

/// Association and uplink power for one UE: try each covered server as the
/// single active link, solve the one-link subproblem, and keep the server
/// with the smallest objective (ties to the lowest server id). A
/// nonnegative best objective means idling is at least as good, so nothing
/// is transmitted.
pub fn decide_ue_association(
    instance: &Instance,
    ue: NodeId,
    weights: &WeightTable,
    channel: &ChannelState,
    v: f64,
) -> (Option<(NodeId, LinkId, f64)>, f64) {
    let vc = v * instance.wireless.energy_cost[ue];
    let budget = instance.wireless.power_budget[ue];
    let mut best: Option<(f64, NodeId, LinkId, f64)> = None;
    for &l in &instance.out_links[ue] {
        let (_, w) = max_weight_commodity(instance, l, weights);
        let link = WaterfillLink {
            weight: w,
            gain: channel.gains[l],
            noise_w: instance.link_noise_w(l),
            rate_factor: instance.link_rate_factor(l),
        };
        let result = waterfill_power(&[link], vc, budget);
        let objective = wireless_objective(&[link], &result.powers, vc);
        let server = instance.wireless_links[l].rx;
        if best.map_or(true, |(bo, _, _, _)| objective < bo) {
            best = Some((objective, server, l, result.powers[0]));
        }
    }
    match best {
        Some((obj, server, l, p)) if obj < 0.0 && p > 0.0 => (Some((server, l, p)), obj),
        Some((obj, _, _, _)) => (None, obj),
        None => (None, 0.0),
    }
}

/// Downlink powers of one server across all covered UEs (joint water-fill
/// under the server's budget).
pub fn decide_server_wireless(
    instance: &Instance,
    server: NodeId,
    weights: &WeightTable,
    channel: &ChannelState,
    v: f64,
) -> Vec<(LinkId, f64)> {
    let out = &instance.out_links[server];
    if out.is_empty() {
        return Vec::new();
    }
    let vc = v * instance.wireless.energy_cost[server];
    let links: Vec<WaterfillLink> = out
        .iter()
        .map(|&l| {
            let (_, w) = max_weight_commodity(instance, l, weights);
            WaterfillLink {
                weight: w,
                gain: channel.gains[l],
                noise_w: instance.link_noise_w(l),
                rate_factor: instance.link_rate_factor(l),
            }
        })
        .collect();
    let result = waterfill_power(&links, vc, instance.wireless.power_budget[server]);
    out.iter()
        .copied()
        .zip(result.powers)
        .filter(|(_, p)| *p > 0.0)
        .collect()
}

/// Which parts of the network a controller may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyScope {
    /// Full decision space.
    Full,
    /// Processing pinned to the UEs; wired and wireless stay idle.
    LocalOnly,
}

/// One full slot of control: compose the per-node and per-link max-weight
/// decisions into a single plan. Deterministic given its inputs.
pub fn mecnc_slot(
    instance: &Instance,
    queues: &QueueState,
    kappa: &KappaTable,
    channel: &ChannelState,
    v: f64,
    scope: PolicyScope,
) -> Decision {
    let scaled = queues.scaled(&kappa.kappa);
    let weights = compute_weights(instance, &scaled);
    let mut decision = Decision::idle(instance);

    for node in 0..instance.num_nodes() {
        if scope == PolicyScope::LocalOnly && instance.is_server(node) {
            continue;
        }
        let proc = decide_processing(instance, node, &weights, v);
        decision.compute_level[node] = proc.level;
        if let Some((c, amount)) = proc.flow {
            let next = instance.next_stage(c).expect("flow only below final stage");
            decision.plan.to_proc.push((node, c, amount));
            decision
                .plan
                .from_proc
                .push((node, next, instance.scaling(c) * amount));
        }
    }

    if scope == PolicyScope::Full {
        for edge in 0..instance.wired_edges.len() {
            let wd = decide_wired(instance, edge, &weights, v);
            decision.wired_level[edge] = wd.level;
            if let Some((c, amount)) = wd.flow {
                decision
                    .plan
                    .link_flows
                    .push((LinkRef::Wired(edge), c, amount));
            }
        }

        for ue in 0..instance.num_ues {
            let (choice, _obj) = decide_ue_association(instance, ue, &weights, channel, v);
            if let Some((server, link, p)) = choice {
                decision.assoc[ue] = Some(server);
                decision.power[link] = p;
            }
        }
        for server in instance.num_ues..instance.num_nodes() {
            for (link, p) in decide_server_wireless(instance, server, &weights, channel, v) {
                decision.power[link] = p;
            }
        }

        for (l, &p) in decision.power.iter().enumerate() {
            if p <= 0.0 {
                continue;
            }
            let (c, w) = max_weight_commodity(instance, l, &weights);
            if w > 0.0 {
                let pkts = wireless_pkts_per_slot(instance, l, channel.gains[l], p);
                if pkts > 0.0 {
                    decision
                        .plan
                        .link_flows
                        .push((LinkRef::Wireless(l), c.expect("positive weight"), pkts));
                }
            }
        }
    }

    decision
}
