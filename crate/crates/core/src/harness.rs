//! The run driver: per-slot sensing -> decision -> execution -> accounting,
//! plus arrival-rate and tradeoff-knob sweeps with an automatic stability
//! classifier.
//!
//! Everything a run emits is a pure function of (config, seed); CSV and JSON
//! outputs are byte-stable across repeats.

use std::fmt::Write as _;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::config::{InstanceConfig, RateTable};
use crate::controller::{self, Decision, PolicyScope};
use crate::metrics::{self, KappaTable, MetricsAccumulator, RunMetrics, SlotCost};
use crate::model::{Instance, ModelError};
use crate::oracle::{self, OracleError, OracleObjective, OracleSolution};
use crate::queues::{DrainMode, ExecError, ExecutionResult, QueueState};
use crate::stochastic::{self, ChannelState, RngStreams};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("slot {slot}: {source}")]
    Exec {
        slot: u64,
        #[source]
        source: ExecError,
    },
    #[error("invalid run config: {0}")]
    BadRun(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerKind {
    Mecnc,
    Oracle,
    Local,
}

impl std::str::FromStr for ControllerKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mecnc" => Ok(ControllerKind::Mecnc),
            "oracle" => Ok(ControllerKind::Oracle),
            "local" => Ok(ControllerKind::Local),
            other => Err(format!(
                "unknown controller `{other}` (expected mecnc, oracle, or local)"
            )),
        }
    }
}

impl ControllerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ControllerKind::Mecnc => "mecnc",
            ControllerKind::Oracle => "oracle",
            ControllerKind::Local => "local",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    pub slots: u64,
    pub warmup_frac: f64,
    pub v: f64,
    pub controller: ControllerKind,
    pub rates: RateTable,
    pub a_max: Option<u64>,
    /// How oversubscribed queues split among consumers.
    pub drain: DrainMode,
    /// The oracle controller's policy program is solved at `rates *
    /// oracle_margin`: a policy for a slightly inflated rate vector keeps
    /// the actual arrivals strictly inside its supported region, which is
    /// what makes the sampled policy positively recurrent rather than
    /// borderline.
    pub oracle_margin: f64,
}

impl RunConfig {
    /// Assemble run parameters from the config document's optional `run` and
    /// `arrivals` sections, with library defaults.
    pub fn from_config(cfg: &InstanceConfig, instance: &Instance) -> Result<Self, HarnessError> {
        let run = cfg.run.clone().unwrap_or(crate::config::RunSection {
            slots: None,
            warmup_frac: None,
            seed: None,
            v: None,
            controller: None,
            drain: None,
        });
        let rates = match &cfg.arrivals {
            Some(a) => a.resolve(instance)?,
            None => RateTable::uniform(instance, 0.0),
        };
        let controller = match run.controller.as_deref() {
            Some(s) => s
                .parse::<ControllerKind>()
                .map_err(HarnessError::BadRun)?,
            None => ControllerKind::Mecnc,
        };
        let drain = match run.drain.as_deref() {
            None | Some("ordered") => DrainMode::Ordered,
            Some("proportional") => DrainMode::Proportional,
            Some(other) => {
                return Err(HarnessError::BadRun(format!(
                    "unknown drain mode `{other}` (ordered or proportional)"
                )))
            }
        };
        let rc = RunConfig {
            seed: run.seed.unwrap_or(1),
            slots: run.slots.unwrap_or(100_000),
            warmup_frac: run.warmup_frac.unwrap_or(0.1),
            v: run.v.unwrap_or(0.0),
            controller,
            rates,
            a_max: cfg.arrivals.as_ref().and_then(|a| a.a_max),
            drain,
            oracle_margin: 1.05,
        };
        rc.validate()?;
        Ok(rc)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.slots < 1000 {
            return Err(HarnessError::BadRun(format!(
                "horizon {} below the 1000-slot minimum",
                self.slots
            )));
        }
        if !(0.0..0.5).contains(&self.warmup_frac) {
            return Err(HarnessError::BadRun(
                "warmup_frac must lie in [0, 0.5)".into(),
            ));
        }
        if self.v < 0.0 {
            return Err(HarnessError::BadRun("v must be >= 0".into()));
        }
        if self.oracle_margin < 1.0 {
            return Err(HarnessError::BadRun("oracle_margin must be >= 1".into()));
        }
        Ok(())
    }

    pub fn with_uniform_rate(&self, instance: &Instance, per_ue_service: f64) -> RunConfig {
        let mut out = self.clone();
        out.rates = RateTable::uniform(instance, per_ue_service);
        out
    }

    /// Rescale arrival rates so the per-(UE, service) mean equals `target`.
    pub fn with_mean_rate(&self, instance: &Instance, target: f64) -> RunConfig {
        let n = (instance.num_ues * instance.services.len()) as f64;
        let mean = self.rates.total() / n;
        if mean > 0.0 {
            let mut out = self.clone();
            out.rates = self.rates.scaled(target / mean);
            out
        } else {
            self.with_uniform_rate(instance, target)
        }
    }
}

/// Everything observed in one simulated slot.
#[derive(Debug, Clone)]
pub struct SlotRecord {
    pub slot: u64,
    pub cost: SlotCost,
    pub backlog_total: f64,
    pub scaled_backlog_total: f64,
    pub arrived: u64,
    pub delivered: f64,
    pub delivered_age_sum: f64,
    pub decision: Decision,
    pub exec: ExecutionResult,
}

/// A running simulation. Use [`Simulation::step`] for fine-grained control
/// (tests, live demos) or [`run`] for whole runs.
pub struct Simulation {
    pub instance: Arc<Instance>,
    pub config: RunConfig,
    rng: RngStreams,
    positions: Vec<[f64; 2]>,
    queues: QueueState,
    pub kappa: KappaTable,
    acc: MetricsAccumulator,
    policy: Option<OracleSolution>,
    slot: u64,
}

impl Simulation {
    pub fn new(instance: Arc<Instance>, config: RunConfig) -> Result<Self, HarnessError> {
        config.validate()?;
        // Delay weights need a positive total rate; idle configs fall back
        // to unit weights (all queues stay empty anyway).
        let kappa = metrics::kappa(&instance, &config.rates).unwrap_or(KappaTable {
            kappa: vec![1.0; instance.num_commodities()],
        });
        let policy = match config.controller {
            ControllerKind::Oracle => {
                let opts = crate::config::OracleSection::default();
                let dinst = oracle::discretize(&instance, &opts)?;
                let policy_rates = config.rates.scaled(config.oracle_margin);
                let program = oracle::build_policy_program(
                    &instance,
                    &dinst,
                    &policy_rates,
                    OracleObjective::MinCost,
                )?;
                Some(oracle::solve(&instance, &program)?)
            }
            _ => None,
        };
        let acc = MetricsAccumulator::new(&instance, config.slots, config.warmup_frac);
        Ok(Simulation {
            rng: RngStreams::from_seed(config.seed),
            positions: instance.nodes.iter().map(|n| n.pos).collect(),
            queues: QueueState::new(&instance),
            kappa,
            acc,
            policy,
            slot: 0,
            instance,
            config,
        })
    }

    pub fn slot(&self) -> u64 {
        self.slot
    }

    pub fn queues(&self) -> &QueueState {
        &self.queues
    }

    pub fn positions(&self) -> &[[f64; 2]] {
        &self.positions
    }

    fn decide(&mut self, channel: &ChannelState) -> Result<Decision, HarnessError> {
        Ok(match self.config.controller {
            ControllerKind::Mecnc => controller::mecnc_slot(
                &self.instance,
                &self.queues,
                &self.kappa,
                channel,
                self.config.v,
                PolicyScope::Full,
            ),
            ControllerKind::Local => controller::mecnc_slot(
                &self.instance,
                &self.queues,
                &self.kappa,
                channel,
                self.config.v,
                PolicyScope::LocalOnly,
            ),
            ControllerKind::Oracle => {
                let policy = self.policy.as_ref().expect("constructed with policy");
                policy.sample_decision(&self.instance, channel, &mut self.rng.policy)?
            }
        })
    }

    /// Advance one slot: sample mobility/channel/arrivals, decide, execute,
    /// account.
    pub fn step(&mut self) -> Result<SlotRecord, HarnessError> {
        let slot = self.slot;
        stochastic::step_mobility(
            &mut self.positions,
            self.instance.num_ues,
            self.instance.mobility_sigma_m,
            self.instance.area_side,
            &mut self.rng.mobility,
        );
        let channel =
            stochastic::sample_channel_gains(&self.instance, &self.positions, &mut self.rng.channel);
        let arrivals =
            stochastic::sample_arrivals(&self.config.rates, self.config.a_max, &mut self.rng.arrivals);

        let decision = self.decide(&channel)?;
        let caps = decision.capacities(&self.instance, &channel);
        let exec = self
            .queues
            .apply_decision_with(
                &self.instance,
                &decision.plan,
                &caps,
                &arrivals,
                slot,
                self.config.drain,
            )
            .map_err(|source| HarnessError::Exec { slot, source })?;
        let cost = metrics::slot_cost(
            &self.instance,
            &decision.compute_level,
            &decision.wired_level,
            &decision.power,
            &exec,
        );
        let backlog_total = self.queues.total();
        let scaled_backlog_total = self.queues.scaled_total(&self.kappa.kappa);
        let arrived = arrivals.total();
        self.acc.observe_slot(
            &self.instance,
            slot,
            &cost,
            scaled_backlog_total,
            backlog_total,
            &exec,
            arrived,
        );
        self.slot += 1;
        Ok(SlotRecord {
            slot,
            cost,
            backlog_total,
            scaled_backlog_total,
            arrived,
            delivered: exec.delivered.total(),
            delivered_age_sum: exec.delivered.age_weighted_sum(),
            decision,
            exec,
        })
    }

    /// Consume the simulation, classify stability, and report.
    pub fn finish(self) -> (RunMetrics, Vec<f64>) {
        let stability = classify_stability(&self.acc.scaled_series);
        let metrics = self.acc.finalize(self.config.slots, stability.stable);
        (metrics, self.acc.scaled_series)
    }
}

/// Trailing-window drift rule: the run is stable when the mean scaled
/// backlog over the last quarter is at most 1.25x the mean over the middle
/// quarter (slots [3n/8, 5n/8)).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct StabilityReport {
    pub middle_mean: f64,
    pub trailing_mean: f64,
    pub stable: bool,
}

pub fn classify_stability(series: &[f64]) -> StabilityReport {
    let n = series.len();
    if n < 8 {
        return StabilityReport {
            middle_mean: 0.0,
            trailing_mean: 0.0,
            stable: true,
        };
    }
    let mean = |a: usize, b: usize| -> f64 {
        series[a..b].iter().sum::<f64>() / (b - a).max(1) as f64
    };
    let middle = mean(3 * n / 8, 5 * n / 8);
    let trailing = mean(3 * n / 4, n);
    StabilityReport {
        middle_mean: middle,
        trailing_mean: trailing,
        stable: trailing <= 1.25 * middle + 1e-9,
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Collect the per-slot timeseries CSV.
    pub timeseries: bool,
    /// Collect per-slot queue backlogs (verbose; small runs only).
    pub trace: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            timeseries: true,
            trace: false,
        }
    }
}

pub struct RunOutput {
    pub metrics: RunMetrics,
    pub stability: StabilityReport,
    pub scaled_series: Vec<f64>,
    pub timeseries_csv: Option<String>,
    /// Per-slot nonzero backlogs (trace mode).
    pub trace_csv: Option<String>,
    /// Per-slot scheduled resources (trace mode): chosen level or power and
    /// the planned flow on the winning commodity.
    pub decisions_csv: Option<String>,
}

pub const TIMESERIES_HEADER: &str = "slot,cost_total,cost_proc_setup,cost_proc_unit,\
cost_wired_setup,cost_wired_unit,cost_wireless_energy,backlog_total,scaled_backlog_total,\
arrived,delivered,delivered_age_mean_slots";

/// Execute a full run. Per-slot lines are sampled after the incoming phase.
pub fn run(
    instance: Arc<Instance>,
    config: RunConfig,
    options: &RunOptions,
) -> Result<RunOutput, HarnessError> {
    let mut sim = Simulation::new(instance.clone(), config)?;
    let mut timeseries = options.timeseries.then(|| {
        let mut s = String::with_capacity(64 * sim.config.slots as usize);
        s.push_str(TIMESERIES_HEADER);
        s.push('\n');
        s
    });
    let mut trace = options.trace.then(|| {
        let mut s = String::new();
        s.push_str("slot,node,commodity,backlog\n");
        s
    });
    let mut decisions = options.trace.then(|| {
        let mut s = String::new();
        s.push_str("slot,kind,entity,commodity,planned,level_or_power\n");
        s
    });
    for _ in 0..sim.config.slots {
        let rec = sim.step()?;
        if let Some(out) = timeseries.as_mut() {
            let age = if rec.delivered > 0.0 {
                format!("{}", rec.delivered_age_sum / rec.delivered)
            } else {
                String::new()
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                rec.slot,
                rec.cost.total(),
                rec.cost.proc_setup,
                rec.cost.proc_unit,
                rec.cost.wired_setup,
                rec.cost.wired_unit,
                rec.cost.wireless_energy,
                rec.backlog_total,
                rec.scaled_backlog_total,
                rec.arrived,
                rec.delivered,
                age
            );
        }
        if let Some(out) = decisions.as_mut() {
            let d = &rec.decision;
            for &(node, c, amt) in &d.plan.to_proc {
                let _ = writeln!(out, "{},proc,{},{},{},{}", rec.slot, node, c, amt,
                    d.compute_level[node]);
            }
            for &(l, c, amt) in &d.plan.link_flows {
                match l {
                    crate::queues::LinkRef::Wired(e) => {
                        let _ = writeln!(out, "{},wired,{},{},{},{}", rec.slot, e, c, amt,
                            d.wired_level[e]);
                    }
                    crate::queues::LinkRef::Wireless(w) => {
                        let _ = writeln!(out, "{},wireless,{},{},{},{}", rec.slot, w, c, amt,
                            d.power[w]);
                    }
                }
            }
        }
        if let Some(out) = trace.as_mut() {
            for node in 0..instance.num_nodes() {
                for c in 0..instance.num_commodities() {
                    let q = sim.queues.backlog(node, c);
                    if q > 0.0 {
                        let _ = writeln!(out, "{},{},{},{}", rec.slot, node, c, q);
                    }
                }
            }
        }
    }
    let stability = classify_stability(&sim.acc.scaled_series);
    let (metrics, scaled_series) = sim.finish();
    Ok(RunOutput {
        metrics,
        stability,
        scaled_series,
        timeseries_csv: timeseries,
        trace_csv: trace,
        decisions_csv: decisions,
    })
}

/// A sweep over one variable: strictly increasing grid, one run per
/// (value, seed).
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub grid: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.grid.is_empty() || self.seeds.is_empty() {
            return Err(HarnessError::BadRun("empty sweep grid or seed list".into()));
        }
        for w in self.grid.windows(2) {
            if w[1] <= w[0] {
                return Err(HarnessError::BadRun(
                    "sweep grid must be strictly increasing".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LambdaRow {
    pub lambda: f64,
    pub seed: u64,
    pub stable: bool,
    pub mean_cost: f64,
    pub little_delay_slots: f64,
    pub age_delay_slots: Option<f64>,
    pub mean_backlog_total: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct KneeEstimate {
    pub last_stable: f64,
    pub first_unstable: f64,
    pub estimate: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LambdaReport {
    pub rows: Vec<LambdaRow>,
    /// Per grid value: stable iff every replicate is stable.
    pub stability: Vec<(f64, bool)>,
    pub knee: Option<KneeEstimate>,
    /// Grid values classified stable above the first unstable one; noise
    /// under the monotone-region assumption.
    pub monotonicity_violations: Vec<f64>,
}

/// Arrival-rate sweep: per grid value, run every seed, classify stability,
/// and bracket the capacity knee.
pub fn sweep_lambda(
    instance: Arc<Instance>,
    base: &RunConfig,
    spec: &SweepSpec,
) -> Result<LambdaReport, HarnessError> {
    spec.validate()?;
    let mut rows = Vec::new();
    let mut stability = Vec::new();
    for &lambda in &spec.grid {
        let mut all_stable = true;
        for &seed in &spec.seeds {
            let mut cfg = base.with_mean_rate(&instance, lambda);
            cfg.seed = seed;
            let out = run(
                instance.clone(),
                cfg,
                &RunOptions {
                    timeseries: false,
                    trace: false,
                },
            )?;
            all_stable &= out.metrics.stable;
            rows.push(LambdaRow {
                lambda,
                seed,
                stable: out.metrics.stable,
                mean_cost: out.metrics.mean_cost.total,
                little_delay_slots: out.metrics.little_delay_slots,
                age_delay_slots: out.metrics.age_delay_slots,
                mean_backlog_total: out.metrics.mean_backlog_total,
            });
        }
        stability.push((lambda, all_stable));
    }

    let first_unstable_idx = stability.iter().position(|(_, s)| !*s);
    let knee = first_unstable_idx.and_then(|fu| {
        let last_stable_idx = (0..fu).rev().find(|&i| stability[i].1);
        last_stable_idx.map(|ls| KneeEstimate {
            last_stable: stability[ls].0,
            first_unstable: stability[fu].0,
            estimate: 0.5 * (stability[ls].0 + stability[fu].0),
        })
    });
    let monotonicity_violations = first_unstable_idx
        .map(|fu| {
            stability[fu..]
                .iter()
                .filter(|(_, s)| *s)
                .map(|(l, _)| *l)
                .collect()
        })
        .unwrap_or_default();
    Ok(LambdaReport {
        rows,
        stability,
        knee,
        monotonicity_violations,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct VRow {
    pub v: f64,
    pub seed: u64,
    pub stable: bool,
    pub mean_cost: f64,
    pub cost_proc_setup: f64,
    pub cost_proc_unit: f64,
    pub cost_wired_setup: f64,
    pub cost_wired_unit: f64,
    pub cost_wireless_energy: f64,
    pub little_delay_slots: f64,
    pub age_delay_slots: Option<f64>,
    /// Offload ratio per (service, function), flattened in service order.
    pub offload: Vec<Option<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct VReport {
    pub rows: Vec<VRow>,
    pub offload_labels: Vec<String>,
}

/// Tradeoff sweep at fixed arrivals: one row per (v, seed) with the cost
/// breakdown, both delay estimators, and per-function offload ratios.
pub fn sweep_v(
    instance: Arc<Instance>,
    base: &RunConfig,
    spec: &SweepSpec,
) -> Result<VReport, HarnessError> {
    if spec.grid.is_empty() || spec.seeds.is_empty() {
        return Err(HarnessError::BadRun("empty sweep grid or seed list".into()));
    }
    for w in spec.grid.windows(2) {
        if w[1] < w[0] {
            return Err(HarnessError::BadRun(
                "v grid must be nondecreasing".into(),
            ));
        }
    }
    let offload_labels: Vec<String> = instance
        .services
        .iter()
        .flat_map(|s| (1..s.stages).map(move |m| format!("{}_f{}", s.name, m)))
        .collect();
    let mut rows = Vec::new();
    for &v in &spec.grid {
        for &seed in &spec.seeds {
            let mut cfg = base.clone();
            cfg.v = v;
            cfg.seed = seed;
            let out = run(
                instance.clone(),
                cfg,
                &RunOptions {
                    timeseries: false,
                    trace: false,
                },
            )?;
            let m = out.metrics;
            rows.push(VRow {
                v,
                seed,
                stable: m.stable,
                mean_cost: m.mean_cost.total,
                cost_proc_setup: m.mean_cost.proc_setup,
                cost_proc_unit: m.mean_cost.proc_unit,
                cost_wired_setup: m.mean_cost.wired_setup,
                cost_wired_unit: m.mean_cost.wired_unit,
                cost_wireless_energy: m.mean_cost.wireless_energy,
                little_delay_slots: m.little_delay_slots,
                age_delay_slots: m.age_delay_slots,
                offload: m.offload_ratio.iter().map(|o| o.ratio).collect(),
            });
        }
    }
    Ok(VReport {
        rows,
        offload_labels,
    })
}

impl LambdaReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "lambda,seed,stable,stable_delay_slots,age_delay_slots,mean_cost,mean_backlog_total\n",
        );
        for r in &self.rows {
            let delay = if r.stable {
                format!("{}", r.little_delay_slots)
            } else {
                "inf".to_string()
            };
            let age = r
                .age_delay_slots
                .map(|a| format!("{a}"))
                .unwrap_or_default();
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.lambda, r.seed, r.stable, delay, age, r.mean_cost, r.mean_backlog_total
            );
        }
        s
    }
}

impl VReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "v,seed,stable,mean_cost,cost_proc_setup,cost_proc_unit,cost_wired_setup,\
cost_wired_unit,cost_wireless_energy,little_delay_slots,age_delay_slots",
        );
        for label in &self.offload_labels {
            let _ = write!(s, ",offload_{label}");
        }
        s.push('\n');
        for r in &self.rows {
            let age = r
                .age_delay_slots
                .map(|a| format!("{a}"))
                .unwrap_or_default();
            let _ = write!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.v,
                r.seed,
                r.stable,
                r.mean_cost,
                r.cost_proc_setup,
                r.cost_proc_unit,
                r.cost_wired_setup,
                r.cost_wired_unit,
                r.cost_wireless_energy,
                r.little_delay_slots,
                age
            );
            for o in &r.offload {
                match o {
                    Some(x) => {
                        let _ = write!(s, ",{x}");
                    }
                    None => s.push(','),
                }
            }
            s.push('\n');
        }
        s
    }
}
