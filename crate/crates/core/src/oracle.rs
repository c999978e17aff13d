//! Ground truth for small instances: a linear program deciding membership
//! in the throughput capacity region, maximizing throughput along an
//! arrival direction, or minimizing long-run cost, plus the stationary
//! randomized policy realizing a solution.
//!
//! The program works on a discretized instance: finite CSI states per
//! transmitter and a finite grid of transmit power vectors. A stationary
//! randomized policy is described by level frequencies `alpha` (processing
//! and wired links), CSI-conditional action frequencies `phi`, and
//! conditional commodity shares `ell` (with an "empty packet" slack, so the
//! shares may sum below one). Products like `alpha_k * ell_{c|k}` make the
//! raw description bilinear; substituting joint variables `beta = alpha *
//! ell` (and `gamma = phi * ell` on wireless links) gives an exact linear
//! reformulation: any feasible `(alpha, beta)` recovers `ell = beta/alpha`
//! on the support and vice versa.
//!
//! Everything here is for instances of a few nodes; programs above the size
//! guard are refused rather than approximated.

use std::collections::BTreeMap;

use rand::Rng;
use thiserror::Error;

use crate::config::{OracleSection, RateTable};
use crate::controller::Decision;
use crate::model::{ChannelSetup, CommodityId, CsiTable, Instance, LinkId, NodeId};
use crate::queues::LinkRef;
use crate::simplex::{self, Constraint, LinearProgram, LpOutcome, Rel};
use crate::stochastic::{link_rate_pkts_per_s, ChannelState};

const MAX_NODES: usize = 12;
const MAX_VARS: usize = 20_000;
const MAX_ROWS: usize = 20_000;
/// Frequencies below this are treated as unused when recovering shares.
const SUPPORT_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("instance too large for the oracle: {0}")]
    TooLarge(String),
    #[error("arrival rates infeasible: outside the capacity region")]
    Infeasible,
    #[error("linear program failed: {0}")]
    Lp(#[from] simplex::LpError),
    #[error("unexpected unbounded program (missing normalization rows?)")]
    Unbounded,
    #[error("{0}")]
    BadInput(String),
}

/// A finite-action view of an instance: CSI states and transmit power
/// vectors per node.
#[derive(Debug, Clone)]
pub struct DiscreteInstance {
    pub csi: Vec<CsiTable>,
    /// Per node: candidate power vectors over its outgoing links, always
    /// including the all-zero vector. UE vectors have at most one nonzero
    /// entry (a UE talks to one server at a time).
    pub actions: Vec<Vec<Vec<f64>>>,
}

impl DiscreteInstance {
    /// Rate of link `l` (packets per slot) under CSI state `g` and action
    /// `z` of the transmitter.
    pub fn pkts_per_slot(
        &self,
        instance: &Instance,
        link: LinkId,
        state: usize,
        action: usize,
    ) -> f64 {
        let tx = instance.wireless_links[link].tx;
        let pos = instance.out_links[tx]
            .iter()
            .position(|&x| x == link)
            .expect("link belongs to tx");
        let gain = self.csi[tx].gains[state][pos];
        let p = self.actions[tx][action][pos];
        link_rate_pkts_per_s(gain, p, instance.link_noise_w(link), instance.link_rate_factor(link))
            * instance.wireless.slot_seconds
    }
}

/// Build the finite CSI/action sets. Discrete-channel instances reuse their
/// configured CSI tables; geometric instances get per-link shadowing
/// quantiles at the initial positions (the oracle treats topology as
/// static). Power grids are uniform in [0, P] with `power_levels_per_link`
/// points.
pub fn discretize(instance: &Instance, opts: &OracleSection) -> Result<DiscreteInstance, OracleError> {
    if instance.num_nodes() > MAX_NODES {
        return Err(OracleError::TooLarge(format!(
            "{} nodes exceeds the {MAX_NODES}-node oracle limit",
            instance.num_nodes()
        )));
    }
    let csi = match &instance.channel {
        ChannelSetup::Discrete(tables) => tables.clone(),
        ChannelSetup::PathLoss => {
            let q = opts.gain_quantiles.max(1);
            let sigma = instance.wireless.shadow_sigma_db;
            let mut tables = vec![CsiTable::default(); instance.num_nodes()];
            for node in 0..instance.num_nodes() {
                let out = &instance.out_links[node];
                if out.is_empty() {
                    continue;
                }
                let states_per_link = q;
                let total = states_per_link.pow(out.len() as u32);
                if total > 64 {
                    return Err(OracleError::TooLarge(format!(
                        "node {node}: {total} joint CSI states"
                    )));
                }
                // Per link: median-of-bin shadowing offsets.
                let offsets: Vec<f64> = (0..q)
                    .map(|i| normal_quantile((2 * i + 1) as f64 / (2 * q) as f64) * sigma)
                    .collect();
                let med_gain_db: Vec<f64> = out
                    .iter()
                    .map(|&l| {
                        let link = instance.wireless_links[l];
                        let a = instance.nodes[link.tx].pos;
                        let b = instance.nodes[link.rx].pos;
                        let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
                        instance.wireless.antenna_gain_db
                            - crate::stochastic::path_loss_db(d, instance.wireless.carrier_ghz)
                    })
                    .collect();
                let mut probs = Vec::with_capacity(total);
                let mut gains = Vec::with_capacity(total);
                for idx in 0..total {
                    let mut rest = idx;
                    let mut row = Vec::with_capacity(out.len());
                    for gdb in &med_gain_db {
                        let pick = rest % q;
                        rest /= q;
                        row.push(10f64.powf((gdb - offsets[pick]) / 10.0));
                    }
                    probs.push(1.0 / total as f64);
                    gains.push(row);
                }
                tables[node] = CsiTable { probs, gains };
            }
            tables
        }
    };

    let levels = opts.power_levels_per_link.max(2);
    let mut actions = Vec::with_capacity(instance.num_nodes());
    for node in 0..instance.num_nodes() {
        let out = &instance.out_links[node];
        if out.is_empty() {
            actions.push(vec![]);
            continue;
        }
        let budget = instance.wireless.power_budget[node];
        let fracs: Vec<f64> = (1..levels)
            .map(|k| budget * k as f64 / (levels - 1) as f64)
            .collect();
        let mut set = vec![vec![0.0; out.len()]];
        if instance.is_ue(node) {
            // One nonzero element at a time.
            for (pos, _) in out.iter().enumerate() {
                for &p in &fracs {
                    let mut v = vec![0.0; out.len()];
                    v[pos] = p;
                    set.push(v);
                }
            }
        } else {
            // Product grid filtered by the budget.
            let per_link: Vec<f64> = std::iter::once(0.0).chain(fracs.iter().copied()).collect();
            let total = per_link.len().pow(out.len() as u32);
            if total > 4096 {
                return Err(OracleError::TooLarge(format!(
                    "node {node}: {total} raw power vectors"
                )));
            }
            for idx in 1..total {
                let mut rest = idx;
                let mut v = Vec::with_capacity(out.len());
                for _ in 0..out.len() {
                    v.push(per_link[rest % per_link.len()]);
                    rest /= per_link.len();
                }
                if v.iter().sum::<f64>() <= budget * (1.0 + 1e-12) {
                    set.push(v);
                }
            }
        }
        actions.push(set);
    }
    Ok(DiscreteInstance { csi, actions })
}

/// Abramowitz-Stegun style inverse normal CDF, good to ~1e-4 in the bulk;
/// only used to place shadowing quantile bins.
fn normal_quantile(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    if p == 0.5 {
        return 0.0;
    }
    if p > 0.5 {
        return -normal_quantile(1.0 - p);
    }
    let t = (-2.0 * p.ln()).sqrt();
    let num = 2.515517 + 0.802853 * t + 0.010328 * t * t;
    let den = 1.0 + 1.432788 * t + 0.189269 * t * t + 0.001308 * t * t * t;
    -(t - num / den)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleObjective {
    /// Decide whether the given rates are supportable.
    Feasibility,
    /// Maximize `theta` with arrivals `theta * rates`.
    MaxThroughput,
    /// Minimize the long-run expected cost at the given rates.
    MinCost,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Var {
    Theta,
    FProc(NodeId, CommodityId),
    FLink(LinkRef, CommodityId),
    AlphaProc(NodeId, usize),
    BetaProc(NodeId, usize, CommodityId),
    AlphaWired(usize, usize),
    BetaWired(usize, usize, CommodityId),
    Phi(NodeId, usize, usize),
    Gamma(LinkId, usize, usize, CommodityId),
}

/// The assembled program plus the variable layout needed to read solutions
/// back.
pub struct PolicyProgram {
    pub lp: LinearProgram,
    pub objective: OracleObjective,
    vars: BTreeMap<Var, usize>,
    dinst: DiscreteInstance,
}

impl PolicyProgram {
    pub fn num_vars(&self) -> usize {
        self.lp.num_vars
    }
    pub fn num_rows(&self) -> usize {
        self.lp.constraints.len()
    }
}

/// Valid (node, commodity) queue pairs excluding the delivery sinks; these
/// are the rows that need flow conservation.
fn conservation_pairs(instance: &Instance) -> Vec<(NodeId, CommodityId)> {
    let mut pairs = Vec::new();
    for node in 0..instance.num_nodes() {
        for c in 0..instance.num_commodities() {
            if instance.queue_valid(node, c) && !instance.is_delivery_queue(node, c) {
                pairs.push((node, c));
            }
        }
    }
    pairs
}

/// Build the policy program for an instance and arrival table. For
/// `MaxThroughput` the table is the direction scaled by the variable.
pub fn build_policy_program(
    instance: &Instance,
    dinst: &DiscreteInstance,
    rates: &RateTable,
    objective: OracleObjective,
) -> Result<PolicyProgram, OracleError> {
    let nc = instance.num_commodities();
    let mut vars: BTreeMap<Var, usize> = BTreeMap::new();
    let alloc = |v: Var, vars: &mut BTreeMap<Var, usize>| -> usize {
        let next = vars.len();
        *vars.entry(v).or_insert(next)
    };

    if objective == OracleObjective::MaxThroughput {
        alloc(Var::Theta, &mut vars);
    }
    for node in 0..instance.num_nodes() {
        for &c in &instance.proc_candidates[node] {
            alloc(Var::FProc(node, c), &mut vars);
        }
        let profile = &instance.compute[node];
        for k in 0..profile.levels() {
            alloc(Var::AlphaProc(node, k), &mut vars);
            if k > 0 {
                for &c in &instance.proc_candidates[node] {
                    alloc(Var::BetaProc(node, k, c), &mut vars);
                }
            }
        }
    }
    for (e, edge) in instance.wired_edges.iter().enumerate() {
        for c in 0..nc {
            alloc(Var::FLink(LinkRef::Wired(e), c), &mut vars);
        }
        for k in 0..edge.profile.levels() {
            alloc(Var::AlphaWired(e, k), &mut vars);
            if k > 0 {
                for c in 0..nc {
                    alloc(Var::BetaWired(e, k, c), &mut vars);
                }
            }
        }
    }
    for node in 0..instance.num_nodes() {
        let states = dinst.csi[node].probs.len();
        let acts = dinst.actions[node].len();
        for g in 0..states {
            for z in 0..acts {
                alloc(Var::Phi(node, g, z), &mut vars);
            }
        }
        for (pos, &l) in instance.out_links[node].iter().enumerate() {
            for &c in &instance.link_candidates[l] {
                alloc(Var::FLink(LinkRef::Wireless(l), c), &mut vars);
            }
            for g in 0..states {
                for (z, action) in dinst.actions[node].iter().enumerate() {
                    if action[pos] > 0.0 {
                        for &c in &instance.link_candidates[l] {
                            alloc(Var::Gamma(l, g, z, c), &mut vars);
                        }
                    }
                }
            }
        }
    }
    if vars.len() > MAX_VARS {
        return Err(OracleError::TooLarge(format!("{} variables", vars.len())));
    }
    let id = |v: Var, vars: &BTreeMap<Var, usize>| -> usize { *vars.get(&v).expect("allocated") };

    let mut rows: Vec<Constraint> = Vec::new();

    // Flow conservation (inflow <= outflow) at every live queue.
    for (node, c) in conservation_pairs(instance) {
        let com = instance.commodity(c);
        let mut coeffs: Vec<(usize, f64)> = Vec::new();
        // Processor inflow from the previous stage.
        if com.stage >= 2 {
            let prev = c - 1;
            if instance.proc_candidates[node].contains(&prev) {
                coeffs.push((id(Var::FProc(node, prev), &vars), instance.scaling(prev)));
            }
        }
        // Link inflow.
        for &e in &instance.in_edges[node] {
            coeffs.push((id(Var::FLink(LinkRef::Wired(e), c), &vars), 1.0));
        }
        for &l in &instance.in_links[node] {
            if instance.link_candidates[l].contains(&c) {
                coeffs.push((id(Var::FLink(LinkRef::Wireless(l), c), &vars), 1.0));
            }
        }
        // Exogenous arrivals at the stage-1 self queue.
        let mut rhs = 0.0;
        if com.stage == 1 && com.dest == node {
            let lambda = rates.rate(node, com.service);
            match objective {
                OracleObjective::MaxThroughput => {
                    if lambda > 0.0 {
                        coeffs.push((id(Var::Theta, &vars), lambda));
                    }
                }
                _ => rhs -= lambda,
            }
        }
        // Outflow (negated).
        if instance.proc_candidates[node].contains(&c) {
            coeffs.push((id(Var::FProc(node, c), &vars), -1.0));
        }
        for &e in &instance.out_edges[node] {
            coeffs.push((id(Var::FLink(LinkRef::Wired(e), c), &vars), -1.0));
        }
        for &l in &instance.out_links[node] {
            if instance.link_candidates[l].contains(&c) {
                coeffs.push((id(Var::FLink(LinkRef::Wireless(l), c), &vars), -1.0));
            }
        }
        rows.push(Constraint {
            coeffs,
            rel: Rel::Le,
            rhs,
        });
    }

    // Processing: flow bounded by allocated capacity shares; shares bounded
    // by level frequencies; frequencies normalized.
    for node in 0..instance.num_nodes() {
        let profile = instance.compute[node].clone();
        for &c in &instance.proc_candidates[node] {
            let mut coeffs = vec![(id(Var::FProc(node, c), &vars), 1.0)];
            let r = instance.workload(c);
            for k in 1..profile.levels() {
                coeffs.push((
                    id(Var::BetaProc(node, k, c), &vars),
                    -profile.capacities[k] / r,
                ));
            }
            rows.push(Constraint {
                coeffs,
                rel: Rel::Le,
                rhs: 0.0,
            });
        }
        for k in 1..profile.levels() {
            let mut coeffs: Vec<(usize, f64)> = instance.proc_candidates[node]
                .iter()
                .map(|&c| (id(Var::BetaProc(node, k, c), &vars), 1.0))
                .collect();
            coeffs.push((id(Var::AlphaProc(node, k), &vars), -1.0));
            rows.push(Constraint {
                coeffs,
                rel: Rel::Le,
                rhs: 0.0,
            });
        }
        let coeffs: Vec<(usize, f64)> = (0..profile.levels())
            .map(|k| (id(Var::AlphaProc(node, k), &vars), 1.0))
            .collect();
        rows.push(Constraint {
            coeffs,
            rel: Rel::Eq,
            rhs: 1.0,
        });
    }

    // Wired links, same shape.
    for (e, edge) in instance.wired_edges.iter().enumerate() {
        let profile = &edge.profile;
        for c in 0..nc {
            let mut coeffs = vec![(id(Var::FLink(LinkRef::Wired(e), c), &vars), 1.0)];
            for k in 1..profile.levels() {
                coeffs.push((id(Var::BetaWired(e, k, c), &vars), -profile.capacities[k]));
            }
            rows.push(Constraint {
                coeffs,
                rel: Rel::Le,
                rhs: 0.0,
            });
        }
        for k in 1..profile.levels() {
            let mut coeffs: Vec<(usize, f64)> = (0..nc)
                .map(|c| (id(Var::BetaWired(e, k, c), &vars), 1.0))
                .collect();
            coeffs.push((id(Var::AlphaWired(e, k), &vars), -1.0));
            rows.push(Constraint {
                coeffs,
                rel: Rel::Le,
                rhs: 0.0,
            });
        }
        let coeffs: Vec<(usize, f64)> = (0..profile.levels())
            .map(|k| (id(Var::AlphaWired(e, k), &vars), 1.0))
            .collect();
        rows.push(Constraint {
            coeffs,
            rel: Rel::Eq,
            rhs: 1.0,
        });
    }

    // Wireless links: flow bounded by expected rate under the conditional
    // action/commodity frequencies.
    let tau = instance.wireless.slot_seconds;
    for node in 0..instance.num_nodes() {
        let states = dinst.csi[node].probs.len();
        let acts = dinst.actions[node].len();
        for (pos, &l) in instance.out_links[node].iter().enumerate() {
            for &c in &instance.link_candidates[l] {
                let mut coeffs = vec![(id(Var::FLink(LinkRef::Wireless(l), c), &vars), 1.0)];
                for g in 0..states {
                    let pg = dinst.csi[node].probs[g];
                    for (z, action) in dinst.actions[node].iter().enumerate() {
                        if action[pos] > 0.0 {
                            let rate = dinst.pkts_per_slot(instance, l, g, z);
                            if rate > 0.0 {
                                coeffs.push((id(Var::Gamma(l, g, z, c), &vars), -pg * rate));
                            }
                        }
                    }
                }
                rows.push(Constraint {
                    coeffs,
                    rel: Rel::Le,
                    rhs: 0.0,
                });
            }
            for g in 0..states {
                for (z, action) in dinst.actions[node].iter().enumerate() {
                    if action[pos] > 0.0 {
                        let mut coeffs: Vec<(usize, f64)> = instance.link_candidates[l]
                            .iter()
                            .map(|&c| (id(Var::Gamma(l, g, z, c), &vars), 1.0))
                            .collect();
                        coeffs.push((id(Var::Phi(node, g, z), &vars), -1.0));
                        rows.push(Constraint {
                            coeffs,
                            rel: Rel::Le,
                            rhs: 0.0,
                        });
                    }
                }
            }
        }
        for g in 0..states {
            if acts == 0 {
                continue;
            }
            let coeffs: Vec<(usize, f64)> = (0..acts)
                .map(|z| (id(Var::Phi(node, g, z), &vars), 1.0))
                .collect();
            rows.push(Constraint {
                coeffs,
                rel: Rel::Eq,
                rhs: 1.0,
            });
        }
    }

    if rows.len() > MAX_ROWS {
        return Err(OracleError::TooLarge(format!("{} rows", rows.len())));
    }

    // Objective.
    let mut minimize = vec![0.0; vars.len()];
    match objective {
        OracleObjective::Feasibility => {}
        OracleObjective::MaxThroughput => minimize[id(Var::Theta, &vars)] = -1.0,
        OracleObjective::MinCost => {
            for (v, &col) in &vars {
                match *v {
                    Var::AlphaProc(node, k) => {
                        minimize[col] = instance.compute[node].setup_costs[k];
                    }
                    Var::BetaProc(node, k, _c) => {
                        minimize[col] =
                            instance.compute[node].unit_cost * instance.compute[node].capacities[k];
                    }
                    Var::AlphaWired(e, k) => {
                        minimize[col] = instance.wired_edges[e].profile.setup_costs[k];
                    }
                    Var::BetaWired(e, k, _c) => {
                        minimize[col] = instance.wired_edges[e].profile.unit_cost
                            * instance.wired_edges[e].profile.capacities[k];
                    }
                    Var::Phi(node, g, z) => {
                        let power: f64 = dinst.actions[node][z].iter().sum();
                        minimize[col] = instance.wireless.energy_cost[node]
                            * power
                            * tau
                            * dinst.csi[node].probs[g];
                    }
                    _ => {}
                }
            }
        }
    }

    Ok(PolicyProgram {
        lp: LinearProgram {
            num_vars: vars.len(),
            minimize,
            constraints: rows,
        },
        objective,
        vars,
        dinst: dinst.clone(),
    })
}

/// A probability mass over items, possibly summing below 1 (the remainder
/// is the idle/empty outcome).
type SubDist<T> = Vec<(T, f64)>;

/// An optimal policy extracted from a solved program: every distribution
/// the stationary randomized controller needs.
#[derive(Debug, Clone)]
pub struct OracleSolution {
    pub objective_value: f64,
    /// Max throughput multiplier, when that was the objective.
    pub theta: Option<f64>,
    pub flows_proc: BTreeMap<(NodeId, CommodityId), f64>,
    pub flows_link: BTreeMap<(LinkRef, CommodityId), f64>,
    pub alpha_proc: Vec<Vec<f64>>,
    /// node -> level -> commodity shares (may sum below 1).
    pub ell_proc: Vec<Vec<SubDist<CommodityId>>>,
    pub alpha_wired: Vec<Vec<f64>>,
    pub ell_wired: Vec<Vec<SubDist<CommodityId>>>,
    /// node -> csi state -> action frequencies.
    pub phi: Vec<Vec<Vec<f64>>>,
    /// (link, csi state, action) -> commodity shares.
    pub ell_wireless: BTreeMap<(LinkId, usize, usize), SubDist<CommodityId>>,
    pub dinst: DiscreteInstance,
}

pub fn solve(instance: &Instance, program: &PolicyProgram) -> Result<OracleSolution, OracleError> {
    let outcome = simplex::solve(&program.lp)?;
    let (x, value) = match outcome {
        LpOutcome::Optimal { x, value } => (x, value),
        LpOutcome::Infeasible => return Err(OracleError::Infeasible),
        LpOutcome::Unbounded => return Err(OracleError::Unbounded),
    };
    let get = |v: Var| -> f64 { program.vars.get(&v).map(|&i| x[i]).unwrap_or(0.0) };

    let mut flows_proc = BTreeMap::new();
    let mut flows_link = BTreeMap::new();
    let mut alpha_proc = Vec::new();
    let mut ell_proc = Vec::new();
    for node in 0..instance.num_nodes() {
        let levels = instance.compute[node].levels();
        let alphas: Vec<f64> = (0..levels).map(|k| get(Var::AlphaProc(node, k))).collect();
        let mut per_level = Vec::with_capacity(levels);
        for (k, &a) in alphas.iter().enumerate() {
            let mut dist = Vec::new();
            if k > 0 && a > SUPPORT_EPS {
                for &c in &instance.proc_candidates[node] {
                    let b = get(Var::BetaProc(node, k, c));
                    if b > SUPPORT_EPS {
                        dist.push((c, (b / a).min(1.0)));
                    }
                }
            }
            per_level.push(dist);
        }
        alpha_proc.push(alphas);
        ell_proc.push(per_level);
        for &c in &instance.proc_candidates[node] {
            let f = get(Var::FProc(node, c));
            if f > SUPPORT_EPS {
                flows_proc.insert((node, c), f);
            }
        }
    }

    let mut alpha_wired = Vec::new();
    let mut ell_wired = Vec::new();
    for (e, edge) in instance.wired_edges.iter().enumerate() {
        let levels = edge.profile.levels();
        let alphas: Vec<f64> = (0..levels).map(|k| get(Var::AlphaWired(e, k))).collect();
        let mut per_level = Vec::with_capacity(levels);
        for (k, &a) in alphas.iter().enumerate() {
            let mut dist = Vec::new();
            if k > 0 && a > SUPPORT_EPS {
                for c in 0..instance.num_commodities() {
                    let b = get(Var::BetaWired(e, k, c));
                    if b > SUPPORT_EPS {
                        dist.push((c, (b / a).min(1.0)));
                    }
                }
            }
            per_level.push(dist);
        }
        alpha_wired.push(alphas);
        ell_wired.push(per_level);
        for c in 0..instance.num_commodities() {
            let f = get(Var::FLink(LinkRef::Wired(e), c));
            if f > SUPPORT_EPS {
                flows_link.insert((LinkRef::Wired(e), c), f);
            }
        }
    }

    let mut phi = Vec::new();
    let mut ell_wireless = BTreeMap::new();
    for node in 0..instance.num_nodes() {
        let states = program.dinst.csi[node].probs.len();
        let acts = program.dinst.actions[node].len();
        let mut per_state = Vec::with_capacity(states);
        for g in 0..states {
            let row: Vec<f64> = (0..acts).map(|z| get(Var::Phi(node, g, z))).collect();
            per_state.push(row);
        }
        phi.push(per_state);
        for (pos, &l) in instance.out_links[node].iter().enumerate() {
            for &c in &instance.link_candidates[l] {
                let f = get(Var::FLink(LinkRef::Wireless(l), c));
                if f > SUPPORT_EPS {
                    flows_link.insert((LinkRef::Wireless(l), c), f);
                }
            }
            for g in 0..states {
                for (z, action) in program.dinst.actions[node].iter().enumerate() {
                    if action[pos] <= 0.0 {
                        continue;
                    }
                    let p = get(Var::Phi(node, g, z));
                    if p > SUPPORT_EPS {
                        let mut dist = Vec::new();
                        for &c in &instance.link_candidates[l] {
                            let gam = get(Var::Gamma(l, g, z, c));
                            if gam > SUPPORT_EPS {
                                dist.push((c, (gam / p).min(1.0)));
                            }
                        }
                        if !dist.is_empty() {
                            ell_wireless.insert((l, g, z), dist);
                        }
                    }
                }
            }
        }
    }

    let theta = if program.objective == OracleObjective::MaxThroughput {
        Some(get(Var::Theta))
    } else {
        None
    };
    Ok(OracleSolution {
        objective_value: if program.objective == OracleObjective::MaxThroughput {
            -value
        } else {
            value
        },
        theta,
        flows_proc,
        flows_link,
        alpha_proc,
        ell_proc,
        alpha_wired,
        ell_wired,
        phi,
        ell_wireless,
        dinst: program.dinst.clone(),
    })
}

impl OracleSolution {
    /// Replay the extracted certificate through the original (bilinear)
    /// region characterization and return the largest constraint violation.
    /// A valid solution stays within numerical noise.
    pub fn certificate_residual(&self, instance: &Instance, rates: &RateTable) -> f64 {
        let mut worst: f64 = 0.0;
        let f_proc = |n: NodeId, c: CommodityId| self.flows_proc.get(&(n, c)).copied().unwrap_or(0.0);
        let f_link =
            |l: LinkRef, c: CommodityId| self.flows_link.get(&(l, c)).copied().unwrap_or(0.0);

        // Conservation.
        for (node, c) in conservation_pairs(instance) {
            let com = instance.commodity(c);
            let mut inflow = 0.0;
            if com.stage >= 2 && instance.proc_candidates[node].contains(&(c - 1)) {
                inflow += instance.scaling(c - 1) * f_proc(node, c - 1);
            }
            for &e in &instance.in_edges[node] {
                inflow += f_link(LinkRef::Wired(e), c);
            }
            for &l in &instance.in_links[node] {
                inflow += f_link(LinkRef::Wireless(l), c);
            }
            if com.stage == 1 && com.dest == node {
                let base = rates.rate(node, com.service);
                inflow += self.theta.map_or(base, |t| t * base);
            }
            let mut outflow = 0.0;
            if instance.proc_candidates[node].contains(&c) {
                outflow += f_proc(node, c);
            }
            for &e in &instance.out_edges[node] {
                outflow += f_link(LinkRef::Wired(e), c);
            }
            for &l in &instance.out_links[node] {
                if instance.link_candidates[l].contains(&c) {
                    outflow += f_link(LinkRef::Wireless(l), c);
                }
            }
            worst = worst.max(inflow - outflow);
        }

        // Capacity couplings with the recovered conditional shares.
        for node in 0..instance.num_nodes() {
            let profile = &instance.compute[node];
            for &c in &instance.proc_candidates[node] {
                let mut cap = 0.0;
                for k in 1..profile.levels() {
                    let a = self.alpha_proc[node][k];
                    if a > SUPPORT_EPS {
                        let share = self.ell_proc[node][k]
                            .iter()
                            .find(|(cc, _)| *cc == c)
                            .map(|(_, s)| *s)
                            .unwrap_or(0.0);
                        cap += a * share * profile.capacities[k] / instance.workload(c);
                    }
                }
                worst = worst.max(f_proc(node, c) - cap);
            }
            // Share normalization.
            for dists in &self.ell_proc[node] {
                let total: f64 = dists.iter().map(|(_, s)| s).sum();
                worst = worst.max(total - 1.0);
            }
            let alpha_total: f64 = self.alpha_proc[node].iter().sum();
            worst = worst.max((alpha_total - 1.0).abs());
        }
        for (e, edge) in instance.wired_edges.iter().enumerate() {
            for c in 0..instance.num_commodities() {
                let mut cap = 0.0;
                for k in 1..edge.profile.levels() {
                    let a = self.alpha_wired[e][k];
                    if a > SUPPORT_EPS {
                        let share = self.ell_wired[e][k]
                            .iter()
                            .find(|(cc, _)| *cc == c)
                            .map(|(_, s)| *s)
                            .unwrap_or(0.0);
                        cap += a * share * edge.profile.capacities[k];
                    }
                }
                worst = worst.max(f_link(LinkRef::Wired(e), c) - cap);
            }
            let alpha_total: f64 = self.alpha_wired[e].iter().sum();
            worst = worst.max((alpha_total - 1.0).abs());
        }
        for node in 0..instance.num_nodes() {
            let states = self.dinst.csi[node].probs.len();
            for (pos, &l) in instance.out_links[node].iter().enumerate() {
                for &c in &instance.link_candidates[l] {
                    let mut cap = 0.0;
                    for g in 0..states {
                        let pg = self.dinst.csi[node].probs[g];
                        for (z, action) in self.dinst.actions[node].iter().enumerate() {
                            if action[pos] <= 0.0 {
                                continue;
                            }
                            let p = self.phi[node][g][z];
                            if p > SUPPORT_EPS {
                                if let Some(dist) = self.ell_wireless.get(&(l, g, z)) {
                                    let share = dist
                                        .iter()
                                        .find(|(cc, _)| *cc == c)
                                        .map(|(_, s)| *s)
                                        .unwrap_or(0.0);
                                    cap += pg
                                        * p
                                        * share
                                        * self.dinst.pkts_per_slot(instance, l, g, z);
                                }
                            }
                        }
                    }
                    worst = worst.max(f_link(LinkRef::Wireless(l), c) - cap);
                }
            }
            for g in 0..states {
                if self.phi[node].is_empty() {
                    continue;
                }
                let total: f64 = self.phi[node][g].iter().sum();
                if !self.phi[node][g].is_empty() {
                    worst = worst.max((total - 1.0).abs());
                }
            }
        }
        worst
    }

    /// Draw one slot's decision from the stationary randomized policy. The
    /// CSI state per node comes from the channel sample (discrete mode).
    pub fn sample_decision(
        &self,
        instance: &Instance,
        channel: &ChannelState,
        rng: &mut impl Rng,
    ) -> Result<Decision, OracleError> {
        if channel.csi_state.is_empty() && instance.wireless_links.iter().len() > 0 {
            return Err(OracleError::BadInput(
                "sampled policy needs the discrete channel mode".into(),
            ));
        }
        let mut decision = Decision::idle(instance);
        for node in 0..instance.num_nodes() {
            let k = draw_index(&self.alpha_proc[node], rng);
            decision.compute_level[node] = k;
            if k > 0 {
                if let Some((c, _)) = draw_sub(&self.ell_proc[node][k], rng) {
                    let amount =
                        instance.compute[node].capacities[k] / instance.workload(c);
                    if amount > 0.0 {
                        let next = instance.next_stage(c).expect("candidate below final");
                        decision.plan.to_proc.push((node, c, amount));
                        decision
                            .plan
                            .from_proc
                            .push((node, next, instance.scaling(c) * amount));
                    }
                }
            }
        }
        for (e, edge) in instance.wired_edges.iter().enumerate() {
            let k = draw_index(&self.alpha_wired[e], rng);
            decision.wired_level[e] = k;
            if k > 0 {
                if let Some((c, _)) = draw_sub(&self.ell_wired[e][k], rng) {
                    let amount = edge.profile.capacities[k];
                    if amount > 0.0 {
                        decision.plan.link_flows.push((LinkRef::Wired(e), c, amount));
                    }
                }
            }
        }
        for node in 0..instance.num_nodes() {
            if instance.out_links[node].is_empty() {
                continue;
            }
            let g = channel.csi_state[node];
            if self.phi[node].is_empty() {
                continue;
            }
            let z = draw_index(&self.phi[node][g], rng);
            let action = &self.dinst.actions[node][z];
            for (pos, &l) in instance.out_links[node].iter().enumerate() {
                let p = action[pos];
                if p <= 0.0 {
                    continue;
                }
                decision.power[l] = p;
                if instance.is_ue(node) {
                    decision.assoc[node] = Some(instance.wireless_links[l].rx);
                }
                if let Some(dist) = self.ell_wireless.get(&(l, g, z)) {
                    if let Some((c, _)) = draw_sub(dist, rng) {
                        let pkts = self.dinst.pkts_per_slot(instance, l, g, z);
                        if pkts > 0.0 {
                            decision
                                .plan
                                .link_flows
                                .push((LinkRef::Wireless(l), c, pkts));
                        }
                    }
                }
            }
        }
        Ok(decision)
    }
}

fn draw_index(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len().saturating_sub(1)
}

fn draw_sub(dist: &[(CommodityId, f64)], rng: &mut impl Rng) -> Option<(CommodityId, f64)> {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for &(c, p) in dist {
        acc += p;
        if u < acc {
            return Some((c, p));
        }
    }
    None
}

/// A JSON-friendly dump of a solution for audit: objective, flows, level
/// frequencies, and action frequencies, with human-readable names.
pub fn solution_report(
    instance: &Instance,
    solution: &OracleSolution,
    certificate_residual: f64,
) -> serde_json::Value {
    let node = |n: NodeId| instance.nodes[n].name.clone();
    let com = |c: CommodityId| {
        let x = instance.commodity(c);
        format!(
            "{}/{}#{}",
            instance.nodes[x.dest].name, instance.services[x.service].name, x.stage
        )
    };
    let flows_proc: Vec<_> = solution
        .flows_proc
        .iter()
        .map(|(&(n, c), &f)| {
            serde_json::json!({"node": node(n), "commodity": com(c), "pkts_per_slot": f})
        })
        .collect();
    let flows_link: Vec<_> = solution
        .flows_link
        .iter()
        .map(|(&(l, c), &f)| {
            let name = match l {
                LinkRef::Wired(e) => {
                    let edge = &instance.wired_edges[e];
                    format!("{}->{} (wired)", node(edge.src), node(edge.dst))
                }
                LinkRef::Wireless(w) => {
                    let link = instance.wireless_links[w];
                    format!("{}->{} (wireless)", node(link.tx), node(link.rx))
                }
            };
            serde_json::json!({"link": name, "commodity": com(c), "pkts_per_slot": f})
        })
        .collect();
    let alpha: Vec<_> = (0..instance.num_nodes())
        .map(|n| serde_json::json!({"node": node(n), "level_freqs": solution.alpha_proc[n]}))
        .collect();
    serde_json::json!({
        "feasible": true,
        "objective_value": solution.objective_value,
        "theta": solution.theta,
        "certificate_residual": certificate_residual,
        "processing_flows": flows_proc,
        "link_flows": flows_link,
        "compute_level_frequencies": alpha,
    })
}

/// Convenience wrapper: discretize, build, and solve in one call.
pub fn solve_instance(
    instance: &Instance,
    opts: &OracleSection,
    rates: &RateTable,
    objective: OracleObjective,
) -> Result<OracleSolution, OracleError> {
    let dinst = discretize(instance, opts)?;
    let program = build_policy_program(instance, &dinst, rates, objective)?;
    solve(instance, &program)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{presets, OracleSection, RateTable};
    use crate::model::build_instance;

    fn opts() -> OracleSection {
        OracleSection::default()
    }

    /// Expected max throughput of the tiny instance by a min-cut argument:
    /// local compute plus the tightest of uplink mean best-rate, server
    /// compute, and downlink mean best-rate (scaling is 1).
    fn tiny_theta_closed_form(inst: &Instance) -> f64 {
        let r = inst.services[0].workload[0];
        let local = inst.compute[0].capacities[1] / r;
        let server = inst.compute[1].capacities[1] / r;
        let mean_best = |node: NodeId| -> f64 {
            let ChannelSetup::Discrete(tables) = &inst.channel else {
                panic!("tiny instance is discrete")
            };
            let t = &tables[node];
            let l = inst.out_links[node][0];
            let p = inst.wireless.power_budget[node];
            t.probs
                .iter()
                .zip(&t.gains)
                .map(|(prob, g)| {
                    prob * link_rate_pkts_per_s(
                        g[0],
                        p,
                        inst.link_noise_w(l),
                        inst.link_rate_factor(l),
                    ) * inst.wireless.slot_seconds
                })
                .sum()
        };
        let up = mean_best(0);
        let down = mean_best(1);
        local + up.min(server).min(down)
    }

    #[test]
    fn single_node_region_is_workload_bound() {
        // One node, capacity C, workload r: the region is lambda r <= C.
        let inst = build_instance(&presets::single_queue()).unwrap();
        let boundary = inst.compute[0].capacities[1] / inst.services[0].workload[0];
        assert!((boundary - 50.0).abs() < 1e-9);

        let feasible = |lam: f64| {
            let rates = RateTable::uniform(&inst, lam);
            let dinst = discretize(&inst, &opts()).unwrap();
            let prog =
                build_policy_program(&inst, &dinst, &rates, OracleObjective::Feasibility).unwrap();
            match solve(&inst, &prog) {
                Ok(_) => true,
                Err(OracleError::Infeasible) => false,
                Err(e) => panic!("{e}"),
            }
        };
        assert!(feasible(0.0));
        assert!(feasible(boundary));
        assert!(!feasible(boundary * 1.01));

        let rates = RateTable::uniform(&inst, 1.0);
        let sol = solve_instance(&inst, &opts(), &rates, OracleObjective::MaxThroughput).unwrap();
        assert!((sol.theta.unwrap() - boundary).abs() < 1e-6);
    }

    #[test]
    fn tiny_program_size_hand_count() {
        // 1 UE + 1 server, 2 CSI states, 3 power levels per link.
        // Vars: theta 1, f_proc 2, f_link 3 (up s1, down s1, down s2),
        // alpha 2+2, beta 1+1, phi 2 nodes x 2 states x 3 actions = 12,
        // gamma: up 2x2x1 = 4, down 2x2x2 = 8. Total 36.
        // Rows: conservation 3, proc cap 2, beta<=alpha 2, alpha sum 2,
        // wireless flow 3, gamma<=phi 8, phi sum 4. Total 24.
        let mut cfg = presets::tiny();
        if let crate::config::ChannelConfig::Discrete { per_node } = &mut cfg.wireless.channel {
            for t in per_node.values_mut() {
                t.probs = vec![0.5, 0.5];
                t.gains.truncate(2);
            }
        }
        cfg.oracle = Some(OracleSection {
            power_levels_per_link: 3,
            gain_quantiles: 3,
        });
        let inst = build_instance(&cfg).unwrap();
        let dinst = discretize(&inst, cfg.oracle.as_ref().unwrap()).unwrap();
        assert_eq!(dinst.actions[0].len(), 3);
        assert_eq!(dinst.actions[1].len(), 3);
        let rates = RateTable::uniform(&inst, 1.0);
        let prog =
            build_policy_program(&inst, &dinst, &rates, OracleObjective::MaxThroughput).unwrap();
        assert_eq!(prog.num_vars(), 36);
        assert_eq!(prog.num_rows(), 24);
    }

    #[test]
    fn tiny_theta_matches_min_cut() {
        let inst = build_instance(&presets::tiny()).unwrap();
        let expect = tiny_theta_closed_form(&inst);
        // Uplink binds: 0.3*100*log2(1.5)+0.4*100+0.3*100*log2(3) ~ 105.1,
        // plus 2 locally.
        assert!((expect - 107.09775004326937).abs() < 1e-9);
        let rates = RateTable::uniform(&inst, 1.0);
        let sol = solve_instance(&inst, &opts(), &rates, OracleObjective::MaxThroughput).unwrap();
        let theta = sol.theta.unwrap();
        assert!(
            (theta - expect).abs() < 1e-6 * expect,
            "lp {theta} vs closed form {expect}"
        );
        // The certificate replays through the bilinear constraints.
        let residual = sol.certificate_residual(&inst, &rates);
        assert!(residual < 1e-8, "residual {residual}");
    }

    #[test]
    fn theta_monotone_in_resources() {
        let base = presets::tiny();
        let theta_of = |cfg: &crate::config::InstanceConfig| {
            let inst = build_instance(cfg).unwrap();
            let rates = RateTable::uniform(&inst, 1.0);
            solve_instance(&inst, &opts(), &rates, OracleObjective::MaxThroughput)
                .unwrap()
                .theta
                .unwrap()
        };
        let t0 = theta_of(&base);
        // More local compute adds straight to the cut.
        let mut more_cpu = base.clone();
        more_cpu.compute.ue.capacities_cpus = vec![0.0, 2.0];
        let t1 = theta_of(&more_cpu);
        assert!(t1 > t0 + 1.0);
        // More uplink power raises the binding wireless term.
        let mut more_power = base.clone();
        more_power.wireless.ue_power_w = 0.4;
        if let crate::config::ChannelConfig::Discrete { per_node } =
            &mut more_power.wireless.channel
        {
            // Keep the same gains; doubling the budget raises rates.
            let _ = per_node;
        }
        let t2 = theta_of(&more_power);
        assert!(t2 > t0);
    }

    #[test]
    fn min_cost_single_node_hand_value() {
        // lambda r <= C time sharing: setup alpha1 = lambda r / C, unit cost
        // on executed work only.
        let inst = build_instance(&presets::single_queue()).unwrap();
        let lam = 30.0;
        let rates = RateTable::uniform(&inst, lam);
        let sol = solve_instance(&inst, &opts(), &rates, OracleObjective::MinCost).unwrap();
        let r = inst.services[0].workload[0];
        let c1 = inst.compute[0].capacities[1];
        let s1 = inst.compute[0].setup_costs[1];
        let unit = inst.compute[0].unit_cost;
        let expect = (lam * r / c1) * s1 + unit * lam * r;
        assert!(
            (sol.objective_value - expect).abs() < 1e-9,
            "lp {} vs hand {expect}",
            sol.objective_value
        );
    }

    #[test]
    fn min_cost_monotone_convex_along_ray() {
        // Two levels with different marginal efficiency give a piecewise
        // linear convex optimum.
        let mut cfg = presets::single_queue();
        cfg.compute.ue.capacities_cpus = vec![0.0, 1.0, 4.0];
        cfg.compute.ue.setup_costs_per_s = vec![0.0, 5.0, 30.0];
        let inst = build_instance(&cfg).unwrap();
        let cost = |lam: f64| {
            let rates = RateTable::uniform(&inst, lam);
            solve_instance(&inst, &opts(), &rates, OracleObjective::MinCost)
                .unwrap()
                .objective_value
        };
        let (a, b, c) = (cost(40.0), cost(100.0), cost(160.0));
        assert!(a <= b + 1e-12 && b <= c + 1e-12);
        // Midpoint convexity.
        assert!(b <= 0.5 * (a + c) + 1e-9);
    }

    #[test]
    fn sampled_policy_frequencies_match_alpha() {
        use rand::SeedableRng;
        let inst = build_instance(&presets::tiny()).unwrap();
        let rates = RateTable::uniform(&inst, 80.0);
        let sol = solve_instance(&inst, &opts(), &rates, OracleObjective::MinCost).unwrap();
        let positions: Vec<[f64; 2]> = inst.nodes.iter().map(|n| n.pos).collect();
        let mut channel_rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        let mut policy_rng = rand_chacha::ChaCha8Rng::seed_from_u64(32);
        let n = 100_000;
        let mut level_freq = vec![vec![0usize; 2]; inst.num_nodes()];
        for _ in 0..n {
            let ch = crate::stochastic::sample_channel_gains(&inst, &positions, &mut channel_rng);
            let d = sol.sample_decision(&inst, &ch, &mut policy_rng).unwrap();
            for node in 0..inst.num_nodes() {
                level_freq[node][d.compute_level[node]] += 1;
            }
        }
        for node in 0..inst.num_nodes() {
            for k in 0..2 {
                let f = level_freq[node][k] as f64 / n as f64;
                let a = sol.alpha_proc[node][k];
                assert!(
                    (f - a).abs() < 0.02,
                    "node {node} level {k}: freq {f} vs alpha {a}"
                );
            }
        }
    }

    #[test]
    fn degenerate_alpha_always_same_level() {
        use rand::SeedableRng;
        // At rates near capacity the server must always be on.
        let mut cfg = presets::tiny();
        // Make compute the bottleneck so alpha is a point mass.
        cfg.compute.server.capacities_cpus = vec![0.0, 10.0];
        let inst = build_instance(&cfg).unwrap();
        let rates = RateTable::uniform(&inst, 21.9); // 2 local + 20 server
        let mut sol = solve_instance(&inst, &opts(), &rates, OracleObjective::Feasibility).unwrap();
        // 19.9 of 20 server packets/slot are needed, so alpha_1 >= 0.995.
        assert!(sol.alpha_proc[1][1] > 0.994);
        // Force the point mass to check the sampler itself.
        let share = sol.ell_proc[1][1].clone();
        sol.alpha_proc[1] = vec![0.0, 1.0];
        sol.ell_proc[1][1] = share;
        let positions: Vec<[f64; 2]> = inst.nodes.iter().map(|n| n.pos).collect();
        let mut channel_rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut policy_rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let ch = crate::stochastic::sample_channel_gains(&inst, &positions, &mut channel_rng);
            let d = sol.sample_decision(&inst, &ch, &mut policy_rng).unwrap();
            assert_eq!(d.compute_level[1], 1);
        }
    }

    #[test]
    fn oversized_instance_refused() {
        let cfg = presets::desk(30);
        let inst = build_instance(&cfg).unwrap();
        let err = discretize(&inst, &opts()).unwrap_err();
        assert!(matches!(err, OracleError::TooLarge(_)));
    }

    #[test]
    fn sampled_decisions_validate_and_respect_budgets() {
        use crate::queues::{PlanCapacities, QueueState};
        use rand::SeedableRng;
        let inst = build_instance(&presets::tiny()).unwrap();
        let rates = RateTable::uniform(&inst, 90.0);
        let sol = solve_instance(&inst, &opts(), &rates, OracleObjective::MinCost).unwrap();
        let positions: Vec<[f64; 2]> = inst.nodes.iter().map(|n| n.pos).collect();
        let mut channel_rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut policy_rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for _ in 0..500 {
            let ch = crate::stochastic::sample_channel_gains(&inst, &positions, &mut channel_rng);
            let d = sol.sample_decision(&inst, &ch, &mut policy_rng).unwrap();
            let caps: PlanCapacities = d.capacities(&inst, &ch);
            QueueState::validate_plan(&inst, &d.plan, &caps).unwrap();
            for node in 0..inst.num_nodes() {
                let total: f64 = inst.out_links[node].iter().map(|&l| d.power[l]).sum();
                assert!(total <= inst.wireless.power_budget[node] + 1e-12);
            }
        }
    }
}
