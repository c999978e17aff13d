//! Per-node per-commodity queues, slot execution, and packet-age tracking.
//!
//! Backlogs are real-valued (fluid): planned flows like `C_k / r` or `R tau`
//! are generally fractional and rounding them would bias capacity
//! measurements. Exogenous arrivals still enter as whole packets. Every
//! queue carries a FIFO ledger of `(origin slot, amount)` batches so that a
//! delivered packet knows the slot its ancestral input packet arrived in;
//! processing transfers ages FIFO-proportionally through the scaling factor.
//!
//! Planned flows may exceed what a queue holds. Execution drains each queue
//! by at most its backlog, serving plans in a fixed order (processor intake,
//! then wired links in edge order, then wireless links in link order), each
//! taking `min(remaining, planned)`. This keeps runs reproducible and makes
//! the realized backlog match the drift bound with planned flows exactly at
//! the drain side.

use std::collections::VecDeque;

use thiserror::Error;

use crate::model::{CommodityId, EdgeId, Instance, LinkId, NodeId};
use crate::stochastic::ArrivalBatch;

/// Amounts below this are dropped when pushed into a ledger.
const LEDGER_EPS: f64 = 1e-12;
/// A drain that leaves less than this snaps the queue to empty.
const DRAIN_SNAP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Batch {
    pub origin_slot: u64,
    pub amount: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum LinkRef {
    Wired(EdgeId),
    Wireless(LinkId),
}

/// How an oversubscribed queue is split among its consumers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DrainMode {
    /// Fixed priority: processor intake, then wired links in edge order,
    /// then wireless links in link order; each takes min(remaining, plan).
    #[default]
    Ordered,
    /// Every consumer's take is scaled by backlog/planned-total when the
    /// plans oversubscribe the queue, so high-capacity consumers cannot
    /// starve the rest.
    Proportional,
}

/// One slot's planned flows. `from_proc` entries are the planned processor
/// outputs (already scaled to the next stage) and must chain with `to_proc`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FlowPlan {
    pub to_proc: Vec<(NodeId, CommodityId, f64)>,
    pub from_proc: Vec<(NodeId, CommodityId, f64)>,
    pub link_flows: Vec<(LinkRef, CommodityId, f64)>,
}

/// Capacities the plan must respect, already specialized to the slot's
/// resource levels and channel rates.
#[derive(Debug, Clone, Default)]
pub struct PlanCapacities {
    /// Per node, cpu-slots available.
    pub proc: Vec<f64>,
    /// Per wired edge, packets.
    pub wired: Vec<f64>,
    /// Per wireless link, packets (rate times slot length).
    pub wireless: Vec<f64>,
}

/// Packets that reached their destination at final stage this slot.
#[derive(Debug, Clone, Default)]
pub struct DeliveryRecord {
    pub entries: Vec<(CommodityId, f64, u64)>,
}

impl DeliveryRecord {
    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.1).sum()
    }

    pub fn age_weighted_sum(&self) -> f64 {
        self.entries.iter().map(|e| e.1 * e.2 as f64).sum()
    }
}

/// What actually moved, as opposed to what was planned.
#[derive(Debug, Clone, Default)]
pub struct ExecutionResult {
    pub delivered: DeliveryRecord,
    pub actual_to_proc: Vec<(NodeId, CommodityId, f64)>,
    pub actual_links: Vec<(LinkRef, CommodityId, f64)>,
}

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("negative planned flow on {0}")]
    NegativeFlow(String),
    #[error("capacity exceeded on {what}: planned {planned} > cap {cap}")]
    CapacityExceeded {
        what: String,
        planned: f64,
        cap: f64,
    },
    #[error("service chaining violated at node {node}: expected {expect}, planned {got}")]
    ChainingViolated { node: NodeId, expect: f64, got: f64 },
    #[error("boundary condition violated: {0}")]
    BoundaryViolated(String),
    #[error("plan touches an invalid queue: node {node}, commodity {commodity}")]
    InvalidQueue { node: NodeId, commodity: CommodityId },
}

/// All backlogs plus their age ledgers. Indexed densely by
/// `node * num_commodities + commodity`.
#[derive(Debug, Clone)]
pub struct QueueState {
    backlog: Vec<f64>,
    ledger: Vec<VecDeque<Batch>>,
    num_commodities: usize,
}

impl QueueState {
    pub fn new(instance: &Instance) -> Self {
        let n = instance.num_nodes() * instance.num_commodities();
        QueueState {
            backlog: vec![0.0; n],
            ledger: vec![VecDeque::new(); n],
            num_commodities: instance.num_commodities(),
        }
    }

    #[inline]
    fn idx(&self, node: NodeId, c: CommodityId) -> usize {
        node * self.num_commodities + c
    }

    pub fn backlog(&self, node: NodeId, c: CommodityId) -> f64 {
        self.backlog[self.idx(node, c)]
    }

    pub fn backlogs(&self) -> &[f64] {
        &self.backlog
    }

    pub fn total(&self) -> f64 {
        self.backlog.iter().sum()
    }

    /// Elementwise kappa-scaled backlogs; `kappa` is per commodity.
    pub fn scaled(&self, kappa: &[f64]) -> Vec<f64> {
        self.backlog
            .chunks(self.num_commodities)
            .flat_map(|row| row.iter().zip(kappa).map(|(q, k)| q * k))
            .collect()
    }

    pub fn scaled_total(&self, kappa: &[f64]) -> f64 {
        self.backlog
            .chunks(self.num_commodities)
            .map(|row| row.iter().zip(kappa).map(|(q, k)| q * k).sum::<f64>())
            .sum()
    }

    /// Append a batch, merging with the tail when timestamps coincide.
    fn push(&mut self, node: NodeId, c: CommodityId, batch: Batch) {
        if batch.amount < LEDGER_EPS {
            return;
        }
        let i = self.idx(node, c);
        self.backlog[i] += batch.amount;
        match self.ledger[i].back_mut() {
            Some(tail) if tail.origin_slot == batch.origin_slot => tail.amount += batch.amount,
            _ => self.ledger[i].push_back(batch),
        }
    }

    /// Drain up to `want` packets FIFO; returns the taken slices. The sum of
    /// the slices is subtracted from the backlog exactly.
    fn drain(&mut self, node: NodeId, c: CommodityId, want: f64) -> Vec<Batch> {
        let i = self.idx(node, c);
        let mut remaining = want.min(self.backlog[i]);
        if self.backlog[i] - remaining < DRAIN_SNAP {
            remaining = self.backlog[i];
        }
        let mut taken = Vec::new();
        let mut drained = 0.0;
        while remaining > 0.0 {
            let Some(front) = self.ledger[i].front_mut() else {
                break;
            };
            if front.amount <= remaining + LEDGER_EPS {
                let b = self.ledger[i].pop_front().unwrap();
                drained += b.amount;
                remaining -= b.amount;
                taken.push(b);
                if remaining <= LEDGER_EPS {
                    break;
                }
            } else {
                front.amount -= remaining;
                drained += remaining;
                taken.push(Batch {
                    origin_slot: front.origin_slot,
                    amount: remaining,
                });
                break;
            }
        }
        self.backlog[i] -= drained;
        // Incremental updates and the ledger sum drift apart by ulps; a
        // full drain may land a hair below zero.
        if self.backlog[i] < 0.0 {
            debug_assert!(self.backlog[i] > -1e-9, "drain overshoot {}", self.backlog[i]);
            self.backlog[i] = 0.0;
        }
        if self.backlog[i] < DRAIN_SNAP && self.ledger[i].is_empty() {
            self.backlog[i] = 0.0;
        }
        taken
    }

    /// Check the backlog/ledger bookkeeping: every backlog equals its ledger
    /// sum, nothing is negative, delivery queues are empty.
    pub fn audit(&self, instance: &Instance) -> Result<(), String> {
        for node in 0..instance.num_nodes() {
            for c in 0..instance.num_commodities() {
                let i = self.idx(node, c);
                let q = self.backlog[i];
                if q < 0.0 {
                    return Err(format!("negative backlog at ({node},{c}): {q}"));
                }
                let sum: f64 = self.ledger[i].iter().map(|b| b.amount).sum();
                if (sum - q).abs() > 1e-9 * (1.0 + q) {
                    return Err(format!(
                        "ledger mismatch at ({node},{c}): backlog {q}, ledger {sum}"
                    ));
                }
                if instance.is_delivery_queue(node, c) && q != 0.0 {
                    return Err(format!("delivered commodity {c} queued at node {node}"));
                }
                if !instance.queue_valid(node, c) && q != 0.0 {
                    return Err(format!("invalid queue ({node},{c}) non-empty"));
                }
            }
        }
        Ok(())
    }

    /// Validate a plan against the slot's capacities and the structural
    /// flow constraints, without touching state.
    pub fn validate_plan(
        instance: &Instance,
        plan: &FlowPlan,
        caps: &PlanCapacities,
    ) -> Result<(), ExecError> {
        let cap_tol = |cap: f64| cap + 1e-9 * (1.0 + cap.abs());
        for &(node, c, amt) in plan.to_proc.iter().chain(&plan.from_proc) {
            if amt < 0.0 {
                return Err(ExecError::NegativeFlow(format!("proc ({node},{c})")));
            }
            if !instance.queue_valid(node, c) && !instance.is_delivery_queue(node, c) {
                return Err(ExecError::InvalidQueue { node, commodity: c });
            }
        }
        for &(l, c, amt) in &plan.link_flows {
            if amt < 0.0 {
                return Err(ExecError::NegativeFlow(format!("link {l:?} ({c})")));
            }
        }

        // Boundary conditions: no processing of final stages, no processor
        // output into stage 1, no wireless send of the transmitter's own
        // finished packets.
        for &(node, c, amt) in &plan.to_proc {
            if amt > 0.0 && instance.next_stage(c).is_none() {
                return Err(ExecError::BoundaryViolated(format!(
                    "final-stage commodity {c} sent to processor at node {node}"
                )));
            }
        }
        for &(node, c, amt) in &plan.from_proc {
            if amt > 0.0 && instance.commodity(c).stage == 1 {
                return Err(ExecError::BoundaryViolated(format!(
                    "processor output into stage-1 commodity {c} at node {node}"
                )));
            }
        }
        for &(l, c, amt) in &plan.link_flows {
            if let LinkRef::Wireless(link) = l {
                let link = instance.wireless_links[link];
                let com = instance.commodity(c);
                let final_stage = com.stage == instance.service(com.service).stages;
                if amt > 0.0 && final_stage && com.dest == link.tx {
                    return Err(ExecError::BoundaryViolated(format!(
                        "node {} wirelessly sends its own finished packets",
                        link.tx
                    )));
                }
            }
        }

        // Chaining: planned processor output must equal scaling times the
        // planned intake of the previous stage.
        let mut expected: Vec<(NodeId, CommodityId, f64)> = Vec::new();
        for &(node, c, amt) in &plan.to_proc {
            if let Some(next) = instance.next_stage(c) {
                expected.push((node, next, instance.scaling(c) * amt));
            }
        }
        let mut planned_out = plan.from_proc.clone();
        planned_out.sort_by_key(|e| (e.0, e.1));
        expected.sort_by_key(|e| (e.0, e.1));
        let nonzero =
            |v: &[(NodeId, CommodityId, f64)]| v.iter().filter(|e| e.2 > 0.0).count();
        if nonzero(&planned_out) != nonzero(&expected) {
            return Err(ExecError::ChainingViolated {
                node: 0,
                expect: nonzero(&expected) as f64,
                got: nonzero(&planned_out) as f64,
            });
        }
        for (exp, got) in expected
            .iter()
            .filter(|e| e.2 > 0.0)
            .zip(planned_out.iter().filter(|e| e.2 > 0.0))
        {
            if exp.0 != got.0 || exp.1 != got.1 || (exp.2 - got.2).abs() > 1e-9 * (1.0 + exp.2) {
                return Err(ExecError::ChainingViolated {
                    node: exp.0,
                    expect: exp.2,
                    got: got.2,
                });
            }
        }

        // Capacity constraints at the slot's resource levels.
        let mut proc_load = vec![0.0; instance.num_nodes()];
        for &(node, c, amt) in &plan.to_proc {
            proc_load[node] += instance.workload(c) * amt;
        }
        for (node, load) in proc_load.iter().enumerate() {
            if *load > cap_tol(caps.proc[node]) {
                return Err(ExecError::CapacityExceeded {
                    what: format!("processor at node {node}"),
                    planned: *load,
                    cap: caps.proc[node],
                });
            }
        }
        let mut wired_load = vec![0.0; instance.wired_edges.len()];
        let mut wireless_load = vec![0.0; instance.wireless_links.len()];
        for &(l, _c, amt) in &plan.link_flows {
            match l {
                LinkRef::Wired(e) => wired_load[e] += amt,
                LinkRef::Wireless(w) => wireless_load[w] += amt,
            }
        }
        for (e, load) in wired_load.iter().enumerate() {
            if *load > cap_tol(caps.wired[e]) {
                return Err(ExecError::CapacityExceeded {
                    what: format!("wired edge {e}"),
                    planned: *load,
                    cap: caps.wired[e],
                });
            }
        }
        for (l, load) in wireless_load.iter().enumerate() {
            if *load > cap_tol(caps.wireless[l]) {
                return Err(ExecError::CapacityExceeded {
                    what: format!("wireless link {l}"),
                    planned: *load,
                    cap: caps.wireless[l],
                });
            }
        }
        Ok(())
    }

    /// Execute one slot: outgoing phase (capped drains), then incoming
    /// phase (processor outputs, link receptions, arrivals). Finished
    /// packets reaching their destination are removed and logged.
    pub fn apply_decision(
        &mut self,
        instance: &Instance,
        plan: &FlowPlan,
        caps: &PlanCapacities,
        arrivals: &ArrivalBatch,
        slot: u64,
    ) -> Result<ExecutionResult, ExecError> {
        self.apply_decision_with(instance, plan, caps, arrivals, slot, DrainMode::Ordered)
    }

    pub fn apply_decision_with(
        &mut self,
        instance: &Instance,
        plan: &FlowPlan,
        caps: &PlanCapacities,
        arrivals: &ArrivalBatch,
        slot: u64,
        mode: DrainMode,
    ) -> Result<ExecutionResult, ExecError> {
        Self::validate_plan(instance, plan, caps)?;

        let mut result = ExecutionResult::default();
        // (destination node, commodity, slices) buffered until the incoming
        // phase so one slot's receptions cannot be re-forwarded in-slot.
        let mut inbound: Vec<(NodeId, CommodityId, Vec<Batch>)> = Vec::new();

        // Proportional mode pre-computes each queue's oversubscription
        // factor from the pre-drain backlogs.
        let mut shrink: std::collections::BTreeMap<(NodeId, CommodityId), f64> =
            std::collections::BTreeMap::new();
        if mode == DrainMode::Proportional {
            let mut planned: std::collections::BTreeMap<(NodeId, CommodityId), f64> =
                std::collections::BTreeMap::new();
            for &(node, c, amt) in &plan.to_proc {
                *planned.entry((node, c)).or_insert(0.0) += amt;
            }
            for &(l, c, amt) in &plan.link_flows {
                let tx = match l {
                    LinkRef::Wired(e) => instance.wired_edges[e].src,
                    LinkRef::Wireless(w) => instance.wireless_links[w].tx,
                };
                *planned.entry((tx, c)).or_insert(0.0) += amt;
            }
            for (&(node, c), &total) in &planned {
                let q = self.backlog(node, c);
                if total > q {
                    shrink.insert((node, c), if total > 0.0 { q / total } else { 0.0 });
                }
            }
        }
        let factor = |shrink: &std::collections::BTreeMap<(NodeId, CommodityId), f64>,
                      node: NodeId,
                      c: CommodityId| {
            shrink.get(&(node, c)).copied().unwrap_or(1.0)
        };

        // Outgoing: processor intakes first (under proportional scaling the
        // order only decides which FIFO slices go where).
        let mut ordered_proc = plan.to_proc.clone();
        ordered_proc.sort_by_key(|e| (e.0, e.1));
        for &(node, c, amt) in &ordered_proc {
            let amt = amt * factor(&shrink, node, c);
            if amt <= 0.0 {
                continue;
            }
            let slices = self.drain(node, c, amt);
            let took: f64 = slices.iter().map(|b| b.amount).sum();
            if took > 0.0 {
                result.actual_to_proc.push((node, c, took));
                let next = instance.next_stage(c).expect("validated");
                let scale = instance.scaling(c);
                let scaled: Vec<Batch> = ledger_age_transfer(&slices, scale);
                inbound.push((node, next, scaled));
            }
        }

        // Then links: wired in edge order, wireless in link order.
        let mut ordered_links = plan.link_flows.clone();
        ordered_links.sort_by_key(|e| (e.0, e.1));
        for &(l, c, amt) in &ordered_links {
            let (tx, rx) = match l {
                LinkRef::Wired(e) => (instance.wired_edges[e].src, instance.wired_edges[e].dst),
                LinkRef::Wireless(w) => {
                    let link = instance.wireless_links[w];
                    (link.tx, link.rx)
                }
            };
            let amt = amt * factor(&shrink, tx, c);
            if amt <= 0.0 {
                continue;
            }
            let slices = self.drain(tx, c, amt);
            let took: f64 = slices.iter().map(|b| b.amount).sum();
            if took > 0.0 {
                result.actual_links.push((l, c, took));
                inbound.push((rx, c, slices));
            }
        }

        // Incoming: buffered receptions and processor outputs.
        for (node, c, slices) in inbound {
            if instance.is_delivery_queue(node, c) {
                for b in slices {
                    if b.amount >= LEDGER_EPS {
                        result
                            .delivered
                            .entries
                            .push((c, b.amount, slot.saturating_sub(b.origin_slot)));
                    }
                }
            } else {
                for b in slices {
                    self.push(node, c, b);
                }
            }
        }

        // Exogenous arrivals enter stage-1 queues with this slot's stamp.
        for ue in 0..instance.num_ues {
            for svc in 0..arrivals.num_services {
                let n = arrivals.count(ue, svc);
                if n > 0 {
                    let c = instance.commodity_id(ue, svc, 1);
                    self.push(
                        ue,
                        c,
                        Batch {
                            origin_slot: slot,
                            amount: n as f64,
                        },
                    );
                }
            }
        }
        Ok(result)
    }
}

/// Scale FIFO slices through a processing step: amounts multiply by the
/// scaling factor, origin timestamps are inherited.
pub fn ledger_age_transfer(slices: &[Batch], scaling: f64) -> Vec<Batch> {
    slices
        .iter()
        .map(|b| Batch {
            origin_slot: b.origin_slot,
            amount: b.amount * scaling,
        })
        .collect()
}
