//! Cost and delay accounting: per-slot operation cost, the two delay
//! estimators (scaled-queue averages via Little's theorem, and delivered
//! packet ages), and offloading ratios.

use serde::Serialize;
use thiserror::Error;

use crate::config::RateTable;
use crate::model::{Instance, ServiceId};
use crate::queues::{DeliveryRecord, ExecutionResult, LinkRef};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("total arrival rate is zero; the delay weights are undefined")]
    ZeroTotalRate,
}

/// Per-commodity weights turning queue sums into an input-stream-weighted
/// average delay: kappa = 1 / (cumulative scaling at the stage input *
/// total arrival rate). Independent of the node holding the queue.
#[derive(Debug, Clone)]
pub struct KappaTable {
    pub kappa: Vec<f64>,
}

pub fn kappa(instance: &Instance, rates: &RateTable) -> Result<KappaTable, MetricsError> {
    let total = rates.total();
    if !(total > 0.0) {
        return Err(MetricsError::ZeroTotalRate);
    }
    let kappa = instance
        .commodities
        .iter()
        .map(|c| {
            let svc = instance.service(c.service);
            1.0 / (svc.cumulative_scaling(c.stage) * total)
        })
        .collect();
    Ok(KappaTable { kappa })
}

/// One slot's operation cost, split by origin. Setup costs follow the
/// chosen resource levels; unit costs are charged on actually executed
/// flows; wireless energy follows the allocated powers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct SlotCost {
    pub proc_setup: f64,
    pub proc_unit: f64,
    pub wired_setup: f64,
    pub wired_unit: f64,
    pub wireless_energy: f64,
}

impl SlotCost {
    pub fn total(&self) -> f64 {
        self.proc_setup + self.proc_unit + self.wired_setup + self.wired_unit
            + self.wireless_energy
    }

    pub fn add(&mut self, other: &SlotCost) {
        self.proc_setup += other.proc_setup;
        self.proc_unit += other.proc_unit;
        self.wired_setup += other.wired_setup;
        self.wired_unit += other.wired_unit;
        self.wireless_energy += other.wireless_energy;
    }

    pub fn scale(&self, f: f64) -> SlotCost {
        SlotCost {
            proc_setup: self.proc_setup * f,
            proc_unit: self.proc_unit * f,
            wired_setup: self.wired_setup * f,
            wired_unit: self.wired_unit * f,
            wireless_energy: self.wireless_energy * f,
        }
    }
}

pub fn slot_cost(
    instance: &Instance,
    compute_level: &[usize],
    wired_level: &[usize],
    power: &[f64],
    exec: &ExecutionResult,
) -> SlotCost {
    let mut cost = SlotCost::default();
    for (node, &level) in compute_level.iter().enumerate() {
        cost.proc_setup += instance.compute[node].setup_costs[level];
    }
    for (edge, &level) in wired_level.iter().enumerate() {
        cost.wired_setup += instance.wired_edges[edge].profile.setup_costs[level];
    }
    for &(node, c, amt) in &exec.actual_to_proc {
        cost.proc_unit += instance.compute[node].unit_cost * instance.workload(c) * amt;
    }
    for &(l, _c, amt) in &exec.actual_links {
        if let LinkRef::Wired(e) = l {
            cost.wired_unit += instance.wired_edges[e].profile.unit_cost * amt;
        }
    }
    let tau = instance.wireless.slot_seconds;
    for (l, &p) in power.iter().enumerate() {
        if p > 0.0 {
            let tx = instance.wireless_links[l].tx;
            cost.wireless_energy += instance.wireless.energy_cost[tx] * p * tau;
        }
    }
    cost
}

#[derive(Debug, Clone, Serialize)]
pub struct OffloadRatio {
    pub service: String,
    pub function: usize,
    /// Fraction of processed packets handled at servers; None when the
    /// function never ran.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CostBreakdown {
    pub proc_setup: f64,
    pub proc_unit: f64,
    pub wired_setup: f64,
    pub wired_unit: f64,
    pub wireless_energy: f64,
    pub total: f64,
}

/// Averages over the measurement window (after warm-up) of one run.
#[derive(Debug, Clone, Serialize)]
pub struct RunMetrics {
    pub slots: u64,
    pub warmup_slots: u64,
    pub mean_cost: CostBreakdown,
    /// kappa^T mean(Q), in slots and in milliseconds.
    pub little_delay_slots: f64,
    pub little_delay_ms: f64,
    /// Mean delivered packet age, in slots and in milliseconds.
    pub age_delay_slots: Option<f64>,
    pub age_delay_ms: Option<f64>,
    pub offload_ratio: Vec<OffloadRatio>,
    pub arrived_packets: u64,
    pub delivered_packets: f64,
    pub mean_backlog_total: f64,
    pub final_backlog_total: f64,
    pub final_scaled_backlog_total: f64,
    pub stable: bool,
}

/// Running accumulator fed once per slot by the harness.
pub struct MetricsAccumulator {
    warmup_slots: u64,
    tau: f64,
    num_functions: Vec<usize>,
    service_names: Vec<String>,
    func_offset: Vec<usize>,
    cost_sum: SlotCost,
    cost_slots: u64,
    scaled_sum: f64,
    backlog_sum: f64,
    age_weight: f64,
    age_delivered: f64,
    delivered: f64,
    arrived: u64,
    offload_server: Vec<f64>,
    offload_all: Vec<f64>,
    /// Full scaled-backlog trajectory (including warm-up), one point per
    /// slot, sampled after the incoming phase.
    pub scaled_series: Vec<f64>,
    last_backlog: f64,
    last_scaled: f64,
}

impl MetricsAccumulator {
    pub fn new(instance: &Instance, horizon: u64, warmup_frac: f64) -> Self {
        let num_functions: Vec<usize> =
            instance.services.iter().map(|s| s.functions()).collect();
        let func_offset: Vec<usize> = num_functions
            .iter()
            .scan(0usize, |acc, f| {
                let here = *acc;
                *acc += f;
                Some(here)
            })
            .collect();
        let total_funcs: usize = num_functions.iter().sum();
        MetricsAccumulator {
            warmup_slots: (horizon as f64 * warmup_frac).floor() as u64,
            tau: instance.wireless.slot_seconds,
            service_names: instance.services.iter().map(|s| s.name.clone()).collect(),
            num_functions,
            func_offset,
            cost_sum: SlotCost::default(),
            cost_slots: 0,
            scaled_sum: 0.0,
            backlog_sum: 0.0,
            age_weight: 0.0,
            age_delivered: 0.0,
            delivered: 0.0,
            arrived: 0,
            offload_server: vec![0.0; total_funcs],
            offload_all: vec![0.0; total_funcs],
            scaled_series: Vec::new(),
            last_backlog: 0.0,
            last_scaled: 0.0,
        }
    }

    fn func_index(&self, service: ServiceId, stage: usize) -> usize {
        self.func_offset[service] + (stage - 1)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn observe_slot(
        &mut self,
        instance: &Instance,
        slot: u64,
        cost: &SlotCost,
        scaled_total: f64,
        backlog_total: f64,
        exec: &ExecutionResult,
        arrivals_total: u64,
    ) {
        self.scaled_series.push(scaled_total);
        self.arrived += arrivals_total;
        self.delivered += exec.delivered.total();
        self.last_backlog = backlog_total;
        self.last_scaled = scaled_total;
        if slot < self.warmup_slots {
            return;
        }
        self.cost_sum.add(cost);
        self.cost_slots += 1;
        self.scaled_sum += scaled_total;
        self.backlog_sum += backlog_total;
        self.age_weight += exec.delivered.age_weighted_sum();
        self.age_delivered += exec.delivered.total();
        for &(node, c, amt) in &exec.actual_to_proc {
            let com = instance.commodity(c);
            let fi = self.func_index(com.service, com.stage);
            self.offload_all[fi] += amt;
            if instance.is_server(node) {
                self.offload_server[fi] += amt;
            }
        }
    }

    /// Record deliveries that bypass the queue executor (not used by the
    /// standard slot loop, but handy in tests).
    pub fn observe_delivery(&mut self, record: &DeliveryRecord) {
        self.delivered += record.total();
    }

    pub fn finalize(&self, horizon: u64, stable: bool) -> RunMetrics {
        let n = self.cost_slots.max(1) as f64;
        let mean = self.cost_sum.scale(1.0 / n);
        let little = self.scaled_sum / n;
        let age = if self.age_delivered > 0.0 {
            Some(self.age_weight / self.age_delivered)
        } else {
            None
        };
        let mut offload = Vec::new();
        for (svc, &funcs) in self.num_functions.iter().enumerate() {
            for m in 1..=funcs {
                let fi = self.func_offset[svc] + (m - 1);
                let ratio = if self.offload_all[fi] > 0.0 {
                    Some(self.offload_server[fi] / self.offload_all[fi])
                } else {
                    None
                };
                offload.push(OffloadRatio {
                    service: self.service_names[svc].clone(),
                    function: m,
                    ratio,
                });
            }
        }
        RunMetrics {
            slots: horizon,
            warmup_slots: self.warmup_slots,
            mean_cost: CostBreakdown {
                proc_setup: mean.proc_setup,
                proc_unit: mean.proc_unit,
                wired_setup: mean.wired_setup,
                wired_unit: mean.wired_unit,
                wireless_energy: mean.wireless_energy,
                total: mean.total(),
            },
            little_delay_slots: little,
            little_delay_ms: little * self.tau * 1e3,
            age_delay_slots: age,
            age_delay_ms: age.map(|a| a * self.tau * 1e3),
            offload_ratio: offload,
            arrived_packets: self.arrived,
            delivered_packets: self.delivered,
            mean_backlog_total: self.backlog_sum / n,
            final_backlog_total: self.last_backlog,
            final_scaled_backlog_total: self.last_scaled,
            stable,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{presets, RateTable};
    use crate::model::build_instance;

    #[test]
    fn kappa_values() {
        // Single service, one function with scaling 1: kappa = 1/sum(rates)
        // at stage 1 (empty product).
        let inst = build_instance(&presets::tiny()).unwrap();
        let rates = RateTable {
            rates: vec![3.0],
            num_services: 1,
        };
        let k = kappa(&inst, &rates).unwrap();
        assert!((k.kappa[0] - 1.0 / 3.0).abs() < 1e-12);
        // Scaling 1 keeps kappa constant across stages.
        assert!((k.kappa[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn kappa_products() {
        // Two functions with scalings (2, 3), total rate 1:
        // stage-3 kappa = 1/6.
        let mut cfg = presets::tiny();
        cfg.services[0].scaling = vec![2.0, 3.0];
        cfg.services[0].workload.cpu_slots_per_packet = Some(vec![0.5, 0.5]);
        let inst = build_instance(&cfg).unwrap();
        let rates = RateTable {
            rates: vec![1.0],
            num_services: 1,
        };
        let k = kappa(&inst, &rates).unwrap();
        assert!((k.kappa[0] - 1.0).abs() < 1e-12);
        assert!((k.kappa[1] - 0.5).abs() < 1e-12);
        assert!((k.kappa[2] - 1.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn kappa_rejects_zero_rate() {
        let inst = build_instance(&presets::tiny()).unwrap();
        let rates = RateTable {
            rates: vec![0.0],
            num_services: 1,
        };
        assert!(kappa(&inst, &rates).is_err());
    }

    #[test]
    fn slot_cost_idle_is_zero() {
        let inst = build_instance(&presets::tiny()).unwrap();
        let cost = slot_cost(
            &inst,
            &vec![0; inst.num_nodes()],
            &[],
            &vec![0.0; inst.wireless_links.len()],
            &ExecutionResult::default(),
        );
        assert_eq!(cost.total(), 0.0);
    }

    #[test]
    fn slot_cost_processing_example() {
        // Per-slot units: one-second slots make per-second figures per-slot.
        // Level with setup 5, 10 packets of workload 2 at unit cost 1:
        // 5 + 1*2*10 = 25.
        let mut cfg = presets::tiny();
        cfg.wireless.slot_ms = 1000.0;
        cfg.compute.ue.capacities_cpus = vec![0.0, 100.0];
        cfg.compute.ue.setup_costs_per_s = vec![0.0, 5.0];
        cfg.compute.ue.unit_cost_per_cpu_s = 1.0;
        cfg.services[0].workload.cpu_slots_per_packet = Some(vec![2.0]);
        let inst = build_instance(&cfg).unwrap();
        let exec = ExecutionResult {
            actual_to_proc: vec![(0, 0, 10.0)],
            ..Default::default()
        };
        let mut levels = vec![0; inst.num_nodes()];
        levels[0] = 1;
        let cost = slot_cost(
            &inst,
            &levels,
            &[],
            &vec![0.0; inst.wireless_links.len()],
            &exec,
        );
        assert!((cost.proc_setup - 5.0).abs() < 1e-12);
        assert!((cost.proc_unit - 20.0).abs() < 1e-12);
        assert!((cost.total() - 25.0).abs() < 1e-12);
    }

    #[test]
    fn slot_cost_wireless_energy_example() {
        // 0.2 W for 1 ms at 1 /J -> 2e-4.
        let inst = build_instance(&presets::tiny()).unwrap();
        let up = inst.find_wireless_link(0, 1).unwrap();
        let mut power = vec![0.0; inst.wireless_links.len()];
        power[up] = 0.2;
        let cost = slot_cost(
            &inst,
            &vec![0; inst.num_nodes()],
            &[],
            &power,
            &ExecutionResult::default(),
        );
        assert!((cost.wireless_energy - 2e-4).abs() < 1e-18);
        assert!((cost.total() - cost.wireless_energy).abs() < 1e-18);
    }

    #[test]
    fn accumulator_constant_cost() {
        let inst = build_instance(&presets::tiny()).unwrap();
        let mut acc = MetricsAccumulator::new(&inst, 100, 0.1);
        let cost = SlotCost {
            proc_setup: 2.0,
            ..Default::default()
        };
        for slot in 0..100 {
            acc.observe_slot(&inst, slot, &cost, 0.0, 0.0, &ExecutionResult::default(), 0);
        }
        let m = acc.finalize(100, true);
        assert!((m.mean_cost.total - 2.0).abs() < 1e-12);
        assert_eq!(m.warmup_slots, 10);
        // Decomposition sums to the total.
        let parts = m.mean_cost.proc_setup
            + m.mean_cost.proc_unit
            + m.mean_cost.wired_setup
            + m.mean_cost.wired_unit
            + m.mean_cost.wireless_energy;
        assert!((parts - m.mean_cost.total).abs() < 1e-12);
    }

    #[test]
    fn offload_ratio_zero_when_local() {
        let inst = build_instance(&presets::tiny()).unwrap();
        let mut acc = MetricsAccumulator::new(&inst, 10, 0.0);
        let exec = ExecutionResult {
            actual_to_proc: vec![(0, 0, 5.0)],
            ..Default::default()
        };
        acc.observe_slot(&inst, 0, &SlotCost::default(), 0.0, 0.0, &exec, 0);
        let m = acc.finalize(10, true);
        assert_eq!(m.offload_ratio.len(), 1);
        assert_eq!(m.offload_ratio[0].ratio, Some(0.0));
    }

    #[test]
    fn little_delay_is_mean_scaled_backlog() {
        let inst = build_instance(&presets::tiny()).unwrap();
        let mut acc = MetricsAccumulator::new(&inst, 4, 0.0);
        for (slot, q) in [1.0, 2.0, 3.0, 4.0].into_iter().enumerate() {
            acc.observe_slot(
                &inst,
                slot as u64,
                &SlotCost::default(),
                q,
                q,
                &ExecutionResult::default(),
                0,
            );
        }
        let m = acc.finalize(4, true);
        assert!((m.little_delay_slots - 2.5).abs() < 1e-12);
        assert!((m.little_delay_ms - 2.5).abs() < 1e-12); // 1 ms slots
    }
}
