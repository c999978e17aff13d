//! Configuration schema (JSON) and built-in example instances.
//!
//! One document describes a whole instance: `topology`, `services`,
//! `compute`, `wired`, `wireless`, plus optional `arrivals`, `mobility`,
//! `run` and `oracle` sections. Units follow the written schema in
//! `docs/config_schema.md`: geometry in meters, rates in configured
//! physical units, costs on a per-second basis (converted internally to
//! per-slot quantities at build time).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::{Instance, ModelError};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceConfig {
    pub topology: TopologyConfig,
    pub services: Vec<ServiceConfig>,
    pub compute: ComputeConfig,
    #[serde(default)]
    pub wired: WiredConfig,
    pub wireless: WirelessConfig,
    #[serde(default)]
    pub arrivals: Option<ArrivalsConfig>,
    #[serde(default)]
    pub mobility: Option<MobilityConfig>,
    #[serde(default)]
    pub run: Option<RunSection>,
    #[serde(default)]
    pub oracle: Option<OracleSection>,
}

impl InstanceConfig {
    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        serde_json::from_str(text).map_err(|e| ModelError::BadConfig(e.to_string()))
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodePos {
    pub id: String,
    pub pos: [f64; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum UePlacement {
    Explicit(Vec<NodePos>),
    /// Uniform placement of `count` UEs named `ue000..`, drawn from a
    /// dedicated generator so instance geometry is independent of run seeds.
    Random {
        count: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum CoverageConfig {
    /// UE id -> list of server ids.
    Explicit(BTreeMap<String, Vec<String>>),
    /// Each UE is covered by its nearest server only.
    Nearest,
    /// Each UE is covered by every server within `radius_m`.
    Radius { radius_m: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TopologyConfig {
    pub area_side_m: f64,
    pub ues: UePlacement,
    pub servers: Vec<NodePos>,
    #[serde(default)]
    pub wired_edges: Vec<[String; 2]>,
    pub coverage: CoverageConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WorkloadSpec {
    /// Input volume (Mb/s) one cpu sustains, per function; the way
    /// resource tables usually quote workloads.
    SupportableMbpsPerCpu(Vec<f64>),
    /// Direct per-packet workload in cpu-slots, per function.
    CpuSlotsPerPacket(Vec<f64>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ServiceConfig {
    pub id: String,
    /// Output/input size ratio of each function.
    pub scaling: Vec<f64>,
    pub workload: WorkloadMount,
}

/// Exactly one of the two workload encodings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorkloadMount {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supportable_mbps_per_cpu: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cpu_slots_per_packet: Option<Vec<f64>>,
}

impl ServiceConfig {
    pub(crate) fn workload_spec(&self) -> Result<WorkloadSpec, ModelError> {
        match (
            &self.workload.supportable_mbps_per_cpu,
            &self.workload.cpu_slots_per_packet,
        ) {
            (Some(v), None) => Ok(WorkloadSpec::SupportableMbpsPerCpu(v.clone())),
            (None, Some(v)) => Ok(WorkloadSpec::CpuSlotsPerPacket(v.clone())),
            _ => Err(ModelError::BadService(
                self.id.clone(),
                "exactly one of supportable_mbps_per_cpu / cpu_slots_per_packet".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComputeProfileConfig {
    /// Capacity per level, cpu units; index 0 must be 0.
    pub capacities_cpus: Vec<f64>,
    /// Setup cost per level, charged per second of allocation.
    pub setup_costs_per_s: Vec<f64>,
    /// Operational cost per cpu-second of executed work.
    pub unit_cost_per_cpu_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComputeConfig {
    pub ue: ComputeProfileConfig,
    pub server: ComputeProfileConfig,
    #[serde(default)]
    pub overrides: BTreeMap<String, ComputeProfileConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WiredProfileConfig {
    pub capacities_gbps: Vec<f64>,
    pub setup_costs_per_s: Vec<f64>,
    pub unit_cost_per_gb: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WiredConfig {
    pub default: WiredProfileConfig,
    /// Keyed by "src->dst".
    #[serde(default)]
    pub overrides: BTreeMap<String, WiredProfileConfig>,
}

impl Default for WiredConfig {
    fn default() -> Self {
        WiredConfig {
            default: WiredProfileConfig {
                capacities_gbps: vec![0.0],
                setup_costs_per_s: vec![0.0],
                unit_cost_per_gb: 0.0,
            },
            overrides: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiscreteCsiConfig {
    pub probs: Vec<f64>,
    /// `gains[state][k]`: linear gain of the k-th outgoing wireless link of
    /// the node, links ordered by receiver node index.
    pub gains: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ChannelConfig {
    /// Carrier path loss from current positions plus per-slot log-normal
    /// shadowing.
    #[default]
    PathLoss,
    /// Finite CSI tables per transmitting node.
    Discrete {
        per_node: BTreeMap<String, DiscreteCsiConfig>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WirelessConfig {
    pub bandwidth_mhz: f64,
    pub packet_bits: f64,
    pub carrier_ghz: f64,
    pub noise_dbm_per_hz: f64,
    pub antenna_gain_db: f64,
    pub shadow_sigma_db: f64,
    pub slot_ms: f64,
    pub ue_power_w: f64,
    pub ue_energy_cost_per_joule: f64,
    pub server_power_w: f64,
    pub server_energy_cost_per_joule: f64,
    #[serde(default)]
    pub channel: ChannelConfig,
}

/// How exogenous arrival rates are specified. Internally everything becomes
/// packets per slot per (UE, service).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateSpec {
    /// The same rate for every (UE, service) pair, packets/slot.
    PerUeServicePktsPerSlot(f64),
    /// The same rate for every (UE, service) pair, quoted in Mb/s.
    PerUeServiceMbps(f64),
    /// A per-UE aggregate in Mb/s, split equally across services.
    AggregatePerUeMbpsSplitEqually(f64),
    /// Explicit map keyed "ue_id/service_id", packets/slot.
    Explicit(BTreeMap<String, f64>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArrivalsConfig {
    pub rate: RateSpec,
    /// Hard per-draw truncation; default is 50x the mean, rounded up.
    #[serde(default)]
    pub a_max: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MobilityConfig {
    /// Per-slot displacement standard deviation (per axis), meters.
    pub step_sigma_m: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSection {
    #[serde(default)]
    pub slots: Option<u64>,
    #[serde(default)]
    pub warmup_frac: Option<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub v: Option<f64>,
    #[serde(default)]
    pub controller: Option<String>,
    /// "ordered" (default) or "proportional": how an oversubscribed queue
    /// is split among its consumers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drain: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleSection {
    /// Power levels per link used when discretizing the transmit action sets
    /// (level 0 is always included).
    #[serde(default = "default_power_levels")]
    pub power_levels_per_link: usize,
    /// Number of shadowing quantiles per link when the channel is
    /// geometric; ignored in discrete channel mode.
    #[serde(default = "default_gain_quantiles")]
    pub gain_quantiles: usize,
}

fn default_power_levels() -> usize {
    5
}
fn default_gain_quantiles() -> usize {
    3
}

impl Default for OracleSection {
    fn default() -> Self {
        OracleSection {
            power_levels_per_link: default_power_levels(),
            gain_quantiles: default_gain_quantiles(),
        }
    }
}

/// Arrival rates resolved against an instance: packets/slot per (UE,
/// service), indexed `ue * num_services + service`.
#[derive(Debug, Clone)]
pub struct RateTable {
    pub rates: Vec<f64>,
    pub num_services: usize,
}

impl RateTable {
    pub fn uniform(instance: &Instance, per_ue_service: f64) -> Self {
        RateTable {
            rates: vec![per_ue_service; instance.num_ues * instance.services.len()],
            num_services: instance.services.len(),
        }
    }

    pub fn rate(&self, ue: usize, service: usize) -> f64 {
        self.rates[ue * self.num_services + service]
    }

    pub fn total(&self) -> f64 {
        self.rates.iter().sum()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        RateTable {
            rates: self.rates.iter().map(|r| r * factor).collect(),
            num_services: self.num_services,
        }
    }
}

impl ArrivalsConfig {
    pub fn resolve(&self, instance: &Instance) -> Result<RateTable, ModelError> {
        let tau = instance.wireless.slot_seconds;
        let f_bits = instance.wireless.packet_bits;
        let mbps_to_pkts = |mbps: f64| mbps * 1e6 * tau / f_bits;
        let ns = instance.services.len();
        let table = match &self.rate {
            RateSpec::PerUeServicePktsPerSlot(r) => RateTable::uniform(instance, *r),
            RateSpec::PerUeServiceMbps(m) => RateTable::uniform(instance, mbps_to_pkts(*m)),
            RateSpec::AggregatePerUeMbpsSplitEqually(m) => {
                RateTable::uniform(instance, mbps_to_pkts(*m) / ns as f64)
            }
            RateSpec::Explicit(map) => {
                let mut rates = vec![0.0; instance.num_ues * ns];
                for (key, r) in map {
                    let (ue_name, svc_name) = key.split_once('/').ok_or_else(|| {
                        ModelError::BadConfig(format!(
                            "arrival key `{key}` must look like ue_id/service_id"
                        ))
                    })?;
                    let ue = instance
                        .find_node(ue_name)
                        .filter(|&n| instance.is_ue(n))
                        .ok_or_else(|| ModelError::UnknownNode(ue_name.to_string()))?;
                    let svc = instance
                        .services
                        .iter()
                        .position(|s| s.name == svc_name)
                        .ok_or_else(|| {
                            ModelError::BadConfig(format!("unknown service `{svc_name}`"))
                        })?;
                    rates[ue * ns + svc] = *r;
                }
                RateTable {
                    rates,
                    num_services: ns,
                }
            }
        };
        if table.rates.iter().any(|r| *r < 0.0) {
            return Err(ModelError::BadConfig("arrival rates must be >= 0".into()));
        }
        Ok(table)
    }
}

/// Built-in instances used by tests, the demo, and as documentation seeds.
pub mod presets {
    use super::*;

    fn wireless_defaults() -> WirelessConfig {
        WirelessConfig {
            bandwidth_mhz: 100.0,
            packet_bits: 1000.0,
            carrier_ghz: 30.0,
            noise_dbm_per_hz: -174.0,
            antenna_gain_db: 10.0,
            shadow_sigma_db: 8.2,
            slot_ms: 1.0,
            ue_power_w: 0.2,
            ue_energy_cost_per_joule: 1.0,
            server_power_w: 10.0,
            server_energy_cost_per_joule: 0.2,
            channel: ChannelConfig::PathLoss,
        }
    }

    fn ue_compute() -> ComputeProfileConfig {
        ComputeProfileConfig {
            capacities_cpus: vec![0.0, 1.0],
            setup_costs_per_s: vec![0.0, 5.0],
            unit_cost_per_cpu_s: 1.0,
        }
    }

    /// Noise power (linear watts) for the default 100 MHz band.
    pub fn default_noise_w() -> f64 {
        10f64.powf((-174.0 - 30.0) / 10.0) * 100e6
    }

    /// One UE, one server, one single-function service, finite CSI. Small
    /// enough for the LP oracle; the uplink is the binding resource.
    ///
    /// Uplink full-power SNRs {0.5, 1, 2} w.p. {0.3, 0.4, 0.3} give a mean
    /// best-rate of ~105.1 packets/slot; local compute adds 2 packets/slot.
    pub fn tiny() -> InstanceConfig {
        let noise = default_noise_w();
        let up_gain = |snr_full: f64| snr_full * noise / 0.2;
        let down_gain = |snr_full: f64| snr_full * noise / 10.0;
        let mut per_node = BTreeMap::new();
        per_node.insert(
            "ue0".to_string(),
            DiscreteCsiConfig {
                probs: vec![0.3, 0.4, 0.3],
                gains: vec![
                    vec![up_gain(0.5)],
                    vec![up_gain(1.0)],
                    vec![up_gain(2.0)],
                ],
            },
        );
        per_node.insert(
            "s0".to_string(),
            DiscreteCsiConfig {
                probs: vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
                gains: vec![
                    vec![down_gain(3.0)],
                    vec![down_gain(7.0)],
                    vec![down_gain(15.0)],
                ],
            },
        );
        InstanceConfig {
            topology: TopologyConfig {
                area_side_m: 20.0,
                ues: UePlacement::Explicit(vec![NodePos {
                    id: "ue0".into(),
                    pos: [5.0, 10.0],
                }]),
                servers: vec![NodePos {
                    id: "s0".into(),
                    pos: [15.0, 10.0],
                }],
                wired_edges: vec![],
                coverage: CoverageConfig::Nearest,
            },
            services: vec![ServiceConfig {
                id: "svc".into(),
                scaling: vec![1.0],
                workload: WorkloadMount {
                    supportable_mbps_per_cpu: None,
                    cpu_slots_per_packet: Some(vec![0.5]),
                },
            }],
            compute: ComputeConfig {
                ue: ue_compute(),
                server: ComputeProfileConfig {
                    capacities_cpus: vec![0.0, 100.0],
                    setup_costs_per_s: vec![0.0, 5.0],
                    unit_cost_per_cpu_s: 0.2,
                },
                overrides: BTreeMap::new(),
            },
            wired: WiredConfig::default(),
            wireless: WirelessConfig {
                channel: ChannelConfig::Discrete { per_node },
                ..wireless_defaults()
            },
            arrivals: Some(ArrivalsConfig {
                rate: RateSpec::PerUeServicePktsPerSlot(50.0),
                a_max: None,
            }),
            mobility: None,
            run: None,
            oracle: Some(OracleSection::default()),
        }
    }

    /// Desk-scale instance: `n_ues` UEs around two servers, the two
    /// two-function services, geometric channel with mobility.
    pub fn desk(n_ues: usize) -> InstanceConfig {
        let mut ues = Vec::new();
        let centers = [[15.0, 30.0], [45.0, 30.0]];
        for i in 0..n_ues {
            let c = centers[i % 2];
            let k = (i / 2) as f64;
            let angle = 2.0 * std::f64::consts::PI * k / ((n_ues as f64 / 2.0).ceil());
            let r = 8.0;
            ues.push(NodePos {
                id: format!("ue{i:03}"),
                pos: [c[0] + r * angle.cos(), c[1] + r * angle.sin()],
            });
        }
        InstanceConfig {
            topology: TopologyConfig {
                area_side_m: 60.0,
                ues: UePlacement::Explicit(ues),
                servers: vec![
                    NodePos {
                        id: "s0".into(),
                        pos: centers[0],
                    },
                    NodePos {
                        id: "s1".into(),
                        pos: centers[1],
                    },
                ],
                wired_edges: vec![["s0".into(), "s1".into()], ["s1".into(), "s0".into()]],
                coverage: CoverageConfig::Radius { radius_m: 25.0 },
            },
            services: two_reference_services(),
            compute: ComputeConfig {
                ue: ue_compute(),
                server: ComputeProfileConfig {
                    // Two servers stand in for four: a commodity displaced
                    // from one server has a single fallback, so each level
                    // carries twice the per-level step to keep contention
                    // at mid-range V comparable to the full-size layout.
                    capacities_cpus: (0..=10).map(|k| 2.0 * k as f64).collect(),
                    setup_costs_per_s: (0..=10).map(|k| 5.0 * k as f64).collect(),
                    unit_cost_per_cpu_s: 0.2,
                },
                overrides: BTreeMap::new(),
            },
            wired: WiredConfig {
                // Scaled with the rest of the desk instance: full-size
                // backhaul capacity dwarfs a 10-UE deployment's traffic and
                // turns load balancing into whole-queue ping-pong between
                // the two servers.
                default: WiredProfileConfig {
                    capacities_gbps: (0..=5).map(|k| 0.03 * k as f64).collect(),
                    setup_costs_per_s: (0..=5).map(|k| k as f64).collect(),
                    unit_cost_per_gb: 1.0,
                },
                overrides: BTreeMap::new(),
            },
            wireless: wireless_defaults(),
            arrivals: Some(ArrivalsConfig {
                rate: RateSpec::PerUeServicePktsPerSlot(100.0),
                a_max: None,
            }),
            mobility: Some(MobilityConfig { step_sigma_m: 0.1 }),
            run: None,
            oracle: Some(OracleSection::default()),
        }
    }

    /// The full-size recipe: 100 UEs, 4 servers wired in a cycle, full
    /// resource tables. Meant for long offline runs, not for tests.
    pub fn full() -> InstanceConfig {
        let side = 60.0;
        let q = side / 4.0;
        let servers: Vec<NodePos> = [
            ("s0", [q, q]),
            ("s1", [3.0 * q, q]),
            ("s2", [q, 3.0 * q]),
            ("s3", [3.0 * q, 3.0 * q]),
        ]
        .into_iter()
        .map(|(id, pos)| NodePos {
            id: id.into(),
            pos,
        })
        .collect();
        let wired_edges = vec![
            ["s0".into(), "s1".into()],
            ["s1".into(), "s0".into()],
            ["s1".into(), "s3".into()],
            ["s3".into(), "s1".into()],
            ["s3".into(), "s2".into()],
            ["s2".into(), "s3".into()],
            ["s2".into(), "s0".into()],
            ["s0".into(), "s2".into()],
        ];
        InstanceConfig {
            topology: TopologyConfig {
                area_side_m: side,
                ues: UePlacement::Random {
                    count: 100,
                    seed: 2024,
                },
                servers,
                wired_edges,
                coverage: CoverageConfig::Nearest,
            },
            services: two_reference_services(),
            compute: ComputeConfig {
                ue: ue_compute(),
                server: ComputeProfileConfig {
                    capacities_cpus: (0..=10).map(|k| 5.0 * k as f64).collect(),
                    setup_costs_per_s: (0..=10).map(|k| 5.0 * k as f64).collect(),
                    unit_cost_per_cpu_s: 0.2,
                },
                overrides: BTreeMap::new(),
            },
            wired: WiredConfig {
                default: WiredProfileConfig {
                    capacities_gbps: (0..=5).map(|k| 10.0 * k as f64).collect(),
                    setup_costs_per_s: (0..=5).map(|k| k as f64).collect(),
                    unit_cost_per_gb: 1.0,
                },
                overrides: BTreeMap::new(),
            },
            wireless: wireless_defaults(),
            arrivals: Some(ArrivalsConfig {
                rate: RateSpec::PerUeServicePktsPerSlot(100.0),
                a_max: None,
            }),
            mobility: Some(MobilityConfig { step_sigma_m: 0.1 }),
            // Full-size backhaul capacity exceeds any queue it serves, so
            // under the ordered drain the wired links absorb whole queues
            // before the radios get a turn and results ping-pong between
            // servers; the proportional split keeps every consumer served.
            run: Some(RunSection {
                slots: None,
                warmup_frac: None,
                seed: None,
                v: None,
                controller: None,
                drain: Some("proportional".into()),
            }),
            oracle: Some(OracleSection::default()),
        }
    }

    /// One UE, no servers, one single-function service: an M/D/1-style
    /// single queue used to cross-check the two delay estimators.
    pub fn single_queue() -> InstanceConfig {
        InstanceConfig {
            topology: TopologyConfig {
                area_side_m: 10.0,
                ues: UePlacement::Explicit(vec![NodePos {
                    id: "ue0".into(),
                    pos: [5.0, 5.0],
                }]),
                servers: vec![],
                wired_edges: vec![],
                coverage: CoverageConfig::Nearest,
            },
            services: vec![ServiceConfig {
                id: "svc".into(),
                scaling: vec![1.0],
                workload: WorkloadMount {
                    supportable_mbps_per_cpu: None,
                    cpu_slots_per_packet: Some(vec![0.02]),
                },
            }],
            compute: ComputeConfig {
                ue: ue_compute(),
                server: ComputeProfileConfig {
                    capacities_cpus: vec![0.0],
                    setup_costs_per_s: vec![0.0],
                    unit_cost_per_cpu_s: 0.0,
                },
                overrides: BTreeMap::new(),
            },
            wired: WiredConfig::default(),
            wireless: wireless_defaults(),
            arrivals: Some(ArrivalsConfig {
                rate: RateSpec::PerUeServicePktsPerSlot(45.0),
                a_max: None,
            }),
            mobility: None,
            run: None,
            oracle: Some(OracleSection::default()),
        }
    }

    fn two_reference_services() -> Vec<ServiceConfig> {
        vec![
            ServiceConfig {
                id: "svc1".into(),
                scaling: vec![1.0, 2.0],
                workload: WorkloadMount {
                    supportable_mbps_per_cpu: Some(vec![300.0, 400.0]),
                    cpu_slots_per_packet: None,
                },
            },
            ServiceConfig {
                id: "svc2".into(),
                scaling: vec![1.0 / 3.0, 0.5],
                workload: WorkloadMount {
                    supportable_mbps_per_cpu: Some(vec![200.0, 100.0]),
                    cpu_slots_per_packet: None,
                },
            },
        ]
    }
}
