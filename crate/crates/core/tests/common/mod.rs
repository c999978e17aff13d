//! Shared helpers for the integration suites: a structurally valid random
//! plan generator and the drift/conservation checker built on it.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mecsim_core::model::Instance;
use mecsim_core::queues::{DrainMode, FlowPlan, LinkRef, PlanCapacities, QueueState};
use mecsim_core::stochastic::ArrivalBatch;

pub struct RandomSlot {
    pub plan: FlowPlan,
    pub caps: PlanCapacities,
    pub arrivals: ArrivalBatch,
}

/// A structurally valid random plan: random per-resource capacities, random
/// candidate commodities, flows within capacity, chained processor outputs.
/// Plans routinely exceed backlogs; that is the point of the drift bound.
pub fn random_slot(inst: &Instance, rng: &mut ChaCha8Rng) -> RandomSlot {
    let mut plan = FlowPlan::default();
    let mut caps = PlanCapacities {
        proc: vec![0.0; inst.num_nodes()],
        wired: vec![0.0; inst.wired_edges.len()],
        wireless: vec![0.0; inst.wireless_links.len()],
    };
    for node in 0..inst.num_nodes() {
        let profile = &inst.compute[node];
        let level = rng.random_range(0..profile.levels());
        caps.proc[node] = profile.capacities[level];
        let cands = &inst.proc_candidates[node];
        if caps.proc[node] > 0.0 && !cands.is_empty() && rng.random::<f64>() < 0.8 {
            let c = cands[rng.random_range(0..cands.len())];
            let max_flow = caps.proc[node] / inst.workload(c);
            let amount = rng.random::<f64>() * max_flow;
            if amount > 0.0 {
                let next = inst.next_stage(c).unwrap();
                plan.to_proc.push((node, c, amount));
                plan.from_proc.push((node, next, inst.scaling(c) * amount));
            }
        }
    }
    for (e, edge) in inst.wired_edges.iter().enumerate() {
        let level = rng.random_range(0..edge.profile.levels());
        caps.wired[e] = edge.profile.capacities[level];
        if caps.wired[e] > 0.0 && rng.random::<f64>() < 0.7 {
            let c = rng.random_range(0..inst.num_commodities());
            plan.link_flows
                .push((LinkRef::Wired(e), c, rng.random::<f64>() * caps.wired[e]));
        }
    }
    for l in 0..inst.wireless_links.len() {
        caps.wireless[l] = rng.random::<f64>() * 400.0;
        let cands = &inst.link_candidates[l];
        if !cands.is_empty() && rng.random::<f64>() < 0.7 {
            let c = cands[rng.random_range(0..cands.len())];
            plan.link_flows
                .push((LinkRef::Wireless(l), c, rng.random::<f64>() * caps.wireless[l]));
        }
    }
    let counts: Vec<u64> = (0..inst.num_ues * inst.services.len())
        .map(|_| rng.random_range(0..30))
        .collect();
    RandomSlot {
        plan,
        caps,
        arrivals: ArrivalBatch {
            counts,
            num_services: inst.services.len(),
        },
    }
}

/// Planned outflow/inflow of every queue, for the drift-bound right side.
pub fn planned_in_out(inst: &Instance, slot: &RandomSlot) -> (Vec<f64>, Vec<f64>) {
    let nc = inst.num_commodities();
    let mut out = vec![0.0; inst.num_nodes() * nc];
    let mut inflow = vec![0.0; inst.num_nodes() * nc];
    for &(node, c, amt) in &slot.plan.to_proc {
        out[node * nc + c] += amt;
    }
    for &(node, c, amt) in &slot.plan.from_proc {
        inflow[node * nc + c] += amt;
    }
    for &(l, c, amt) in &slot.plan.link_flows {
        let (tx, rx) = match l {
            LinkRef::Wired(e) => (inst.wired_edges[e].src, inst.wired_edges[e].dst),
            LinkRef::Wireless(w) => {
                let link = inst.wireless_links[w];
                (link.tx, link.rx)
            }
        };
        out[tx * nc + c] += amt;
        inflow[rx * nc + c] += amt;
    }
    for ue in 0..inst.num_ues {
        for svc in 0..inst.services.len() {
            let c = inst.commodity_id(ue, svc, 1);
            inflow[ue * nc + c] += slot.arrivals.count(ue, svc) as f64;
        }
    }
    (inflow, out)
}

pub fn drift_bound_holds_on(inst: &Instance, slots: usize, seed: u64) {
    for mode in [DrainMode::Ordered, DrainMode::Proportional] {
        drift_bound_holds_with(inst, slots / 2, seed, mode);
    }
}

pub fn drift_bound_holds_with(inst: &Instance, slots: usize, seed: u64, mode: DrainMode) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut queues = QueueState::new(inst);
    let nc = inst.num_commodities();
    for step in 0..slots {
        let slot = random_slot(inst, &mut rng);
        let before: Vec<f64> = queues.backlogs().to_vec();
        let (planned_in, planned_out) = planned_in_out(inst, &slot);
        let exec = queues
            .apply_decision_with(inst, &slot.plan, &slot.caps, &slot.arrivals, step as u64, mode)
            .expect("random plans are structurally valid");

        // Drift bound with planned flows, and exact conservation with
        // actual flows, for every queue.
        let mut actual_out = vec![0.0; inst.num_nodes() * nc];
        let mut actual_in = vec![0.0; inst.num_nodes() * nc];
        for &(node, c, amt) in &exec.actual_to_proc {
            actual_out[node * nc + c] += amt;
            let next = inst.next_stage(c).unwrap();
            actual_in[node * nc + next] += inst.scaling(c) * amt;
        }
        for &(l, c, amt) in &exec.actual_links {
            let (tx, rx) = match l {
                LinkRef::Wired(e) => (inst.wired_edges[e].src, inst.wired_edges[e].dst),
                LinkRef::Wireless(w) => {
                    let link = inst.wireless_links[w];
                    (link.tx, link.rx)
                }
            };
            actual_out[tx * nc + c] += amt;
            actual_in[rx * nc + c] += amt;
        }
        for ue in 0..inst.num_ues {
            for svc in 0..inst.services.len() {
                let c = inst.commodity_id(ue, svc, 1);
                actual_in[ue * nc + c] += slot.arrivals.count(ue, svc) as f64;
            }
        }
        for node in 0..inst.num_nodes() {
            for c in 0..nc {
                let i = node * nc + c;
                let after = queues.backlog(node, c);
                let bound = (before[i] - planned_out[i]).max(0.0) + planned_in[i];
                assert!(
                    after <= bound + 1e-9 * (1.0 + bound),
                    "slot {step}: drift bound violated at ({node},{c}): {after} > {bound}"
                );
                if !inst.is_delivery_queue(node, c) {
                    let expect = before[i] - actual_out[i] + actual_in[i];
                    assert!(
                        (after - expect).abs() <= 1e-9 * (1.0 + expect.abs()),
                        "slot {step}: conservation broken at ({node},{c}): {after} vs {expect}"
                    );
                }
            }
        }
        queues.audit(inst).expect("ledger audit");
    }
}

