//! All randomness: UE mobility, wireless channel gains, exogenous Poisson
//! arrivals, driven by seedable deterministic generators.
//!
//! Streams are split per purpose (mobility / channel / arrivals / policy) so
//! toggling one feature never shifts another's draw sequence. Two runs with
//! the same (seed, config) agree bit-exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::config::RateTable;
use crate::model::{ChannelSetup, Instance};

const STREAM_MOBILITY: u64 = 1;
const STREAM_CHANNEL: u64 = 2;
const STREAM_ARRIVALS: u64 = 3;
const STREAM_POLICY: u64 = 4;

/// Independent generators for each stochastic subsystem.
pub struct RngStreams {
    pub mobility: ChaCha8Rng,
    pub channel: ChaCha8Rng,
    pub arrivals: ChaCha8Rng,
    /// Used by randomized controllers (the sampled oracle policy).
    pub policy: ChaCha8Rng,
}

impl RngStreams {
    pub fn from_seed(seed: u64) -> Self {
        let stream = |id: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(id);
            rng
        };
        RngStreams {
            mobility: stream(STREAM_MOBILITY),
            channel: stream(STREAM_CHANNEL),
            arrivals: stream(STREAM_ARRIVALS),
            policy: stream(STREAM_POLICY),
        }
    }
}

/// Reflect a coordinate into [0, side] (mirror at both walls).
fn reflect(x: f64, side: f64) -> f64 {
    if side <= 0.0 {
        return 0.0;
    }
    let period = 2.0 * side;
    let y = x.rem_euclid(period);
    if y > side {
        period - y
    } else {
        y
    }
}

/// Advance UE positions by one random-walk step (servers never move).
pub fn step_mobility(
    positions: &mut [[f64; 2]],
    num_ues: usize,
    sigma_m: f64,
    area_side: f64,
    rng: &mut impl Rng,
) {
    if sigma_m <= 0.0 {
        return;
    }
    let normal = Normal::new(0.0, sigma_m).expect("valid sigma");
    for pos in positions.iter_mut().take(num_ues) {
        let dx: f64 = normal.sample(rng);
        let dy: f64 = normal.sample(rng);
        pos[0] = reflect(pos[0] + dx, area_side);
        pos[1] = reflect(pos[1] + dy, area_side);
    }
}

/// Urban-microcell path loss in dB: 32.4 + 20 log10(f_GHz) + 31.9 log10(d_m).
/// Distances below one meter are clamped to avoid the near-field divergence.
pub fn path_loss_db(distance_m: f64, carrier_ghz: f64) -> f64 {
    let d = distance_m.max(1.0);
    32.4 + 20.0 * carrier_ghz.log10() + 31.9 * d.log10()
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn dbm_per_hz_to_w_per_hz(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Channel gains for one slot, indexed like `Instance::wireless_links`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelState {
    pub gains: Vec<f64>,
    /// In discrete channel mode, the CSI state index drawn per node
    /// (transmitters only); empty in path-loss mode.
    pub csi_state: Vec<usize>,
}

/// Draw fresh channel gains. Path-loss mode composes distance path loss,
/// antenna gain and i.i.d. log-normal shadowing; discrete mode draws one CSI
/// state per transmitting node.
pub fn sample_channel_gains(
    instance: &Instance,
    positions: &[[f64; 2]],
    rng: &mut impl Rng,
) -> ChannelState {
    match &instance.channel {
        ChannelSetup::PathLoss => {
            let w = &instance.wireless;
            let sigma = w.shadow_sigma_db;
            let shadow = if sigma > 0.0 {
                Some(Normal::new(0.0, sigma).expect("valid sigma"))
            } else {
                None
            };
            let gains = instance
                .wireless_links
                .iter()
                .map(|l| {
                    let a = positions[l.tx];
                    let b = positions[l.rx];
                    let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
                    let mut gain_db =
                        w.antenna_gain_db - path_loss_db(d, w.carrier_ghz);
                    if let Some(n) = &shadow {
                        gain_db -= n.sample(rng);
                    }
                    db_to_linear(gain_db)
                })
                .collect();
            ChannelState {
                gains,
                csi_state: Vec::new(),
            }
        }
        ChannelSetup::Discrete(tables) => {
            let mut gains = vec![0.0; instance.wireless_links.len()];
            let mut csi_state = vec![0usize; instance.num_nodes()];
            for node in 0..instance.num_nodes() {
                let out = &instance.out_links[node];
                if out.is_empty() {
                    continue;
                }
                let table = &tables[node];
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut state = table.probs.len() - 1;
                for (s, p) in table.probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        state = s;
                        break;
                    }
                }
                csi_state[node] = state;
                for (k, &link) in out.iter().enumerate() {
                    gains[link] = table.gains[state][k];
                }
            }
            ChannelState { gains, csi_state }
        }
    }
}

/// Exogenous packet arrivals for one slot, indexed `ue * num_services + s`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArrivalBatch {
    pub counts: Vec<u64>,
    pub num_services: usize,
}

impl ArrivalBatch {
    pub fn count(&self, ue: usize, service: usize) -> u64 {
        self.counts[ue * self.num_services + service]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Truncation bound for one Poisson stream: 50x the mean, rounded up,
/// unless overridden.
pub fn arrival_truncation(rate: f64, a_max: Option<u64>) -> u64 {
    match a_max {
        Some(m) => m,
        None => (50.0 * rate).ceil() as u64,
    }
}

/// Independent truncated-Poisson draws per (UE, service).
pub fn sample_arrivals(
    rates: &RateTable,
    a_max: Option<u64>,
    rng: &mut impl Rng,
) -> ArrivalBatch {
    let counts = rates
        .rates
        .iter()
        .map(|&lambda| {
            if lambda <= 0.0 {
                return 0;
            }
            let draw = Poisson::new(lambda).expect("positive rate").sample(rng) as u64;
            draw.min(arrival_truncation(lambda, a_max))
        })
        .collect();
    ArrivalBatch {
        counts,
        num_services: rates.num_services,
    }
}

/// Shannon packet rate of a wireless link, packets per second:
/// (B/F) log2(1 + g p / sigma^2). Multiply by the slot length for packets
/// per slot.
pub fn link_rate_pkts_per_s(gain: f64, power_w: f64, noise_w: f64, rate_factor: f64) -> f64 {
    if power_w <= 0.0 {
        return 0.0;
    }
    rate_factor * (1.0 + gain * power_w / noise_w).log2()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::presets;
    use crate::model::build_instance;

    #[test]
    fn path_loss_hand_values() {
        // d = 1 m, f = 30 GHz: 32.4 + 20 log10(30) = 61.94 dB.
        let pl = path_loss_db(1.0, 30.0);
        assert!((pl - 61.9424250943932).abs() < 1e-10);
        // One decade of distance adds 31.9 dB.
        assert!((path_loss_db(10.0, 30.0) - pl - 31.9).abs() < 1e-10);
        // f = 1 GHz, d = 1 m: both log terms vanish.
        assert!((path_loss_db(1.0, 1.0) - 32.4).abs() < 1e-12);
        // Sub-meter distances clamp to 1 m.
        assert_eq!(path_loss_db(0.01, 30.0), pl);
    }

    #[test]
    fn reflection_keeps_in_bounds() {
        assert!((reflect(-0.04, 10.0) - 0.04).abs() < 1e-12);
        assert!((reflect(10.3, 10.0) - 9.7).abs() < 1e-12);
        assert!((reflect(20.5, 10.0) - 0.5).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut pos = vec![[0.01, 5.0]];
        for _ in 0..10_000 {
            step_mobility(&mut pos, 1, 0.5, 10.0, &mut rng);
            assert!(pos[0][0] >= 0.0 && pos[0][0] <= 10.0);
            assert!(pos[0][1] >= 0.0 && pos[0][1] <= 10.0);
        }
    }

    #[test]
    fn zero_variance_mobility_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut pos = vec![[3.0, 4.0]];
        step_mobility(&mut pos, 1, 0.0, 10.0, &mut rng);
        assert_eq!(pos, vec![[3.0, 4.0]]);
    }

    #[test]
    fn mobility_mean_step_is_rayleigh() {
        // sigma = 0.1 m per axis: E|step| = sigma * sqrt(pi/2) ~ 0.1253 m.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let side = 1e6; // effectively unbounded
        let mut pos = vec![[side / 2.0, side / 2.0]];
        let mut prev = pos[0];
        let mut acc = 0.0;
        let n = 200_000;
        for _ in 0..n {
            step_mobility(&mut pos, 1, 0.1, side, &mut rng);
            let d = ((pos[0][0] - prev[0]).powi(2) + (pos[0][1] - prev[1]).powi(2)).sqrt();
            acc += d;
            prev = pos[0];
        }
        let mean = acc / n as f64;
        let expect = 0.1 * (std::f64::consts::PI / 2.0).sqrt();
        assert!(
            (mean - expect).abs() < 0.001,
            "mean {mean} vs {expect}"
        );
    }

    #[test]
    fn zero_shadowing_gain_hand_value() {
        // 10 dB antenna gain minus 93.84 dB path loss (10 m at 30 GHz)
        // gives 10^(-8.384) linear.
        let mut cfg = presets::desk(4);
        cfg.wireless.shadow_sigma_db = 0.0;
        let inst = build_instance(&cfg).unwrap();
        let mut positions: Vec<[f64; 2]> = inst.nodes.iter().map(|n| n.pos).collect();
        let link = inst.wireless_links[0];
        positions[link.tx] = [10.0, 30.0];
        positions[link.rx] = [20.0, 30.0];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ch = sample_channel_gains(&inst, &positions, &mut rng);
        let expect_db = 10.0 - path_loss_db(10.0, 30.0);
        assert!((expect_db - -83.8424250943932).abs() < 1e-10);
        assert!((ch.gains[0] - 10f64.powf(expect_db / 10.0)).abs() < 1e-20);
    }

    #[test]
    fn shadowing_mean_near_zero_db() {
        let cfg = presets::desk(4);
        let inst = build_instance(&cfg).unwrap();
        let positions: Vec<[f64; 2]> = inst.nodes.iter().map(|n| n.pos).collect();
        // Median gain over many slots should match the no-shadowing gain of
        // the same link within ~0.1 dB (the shadowing draw has zero mean).
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let link = 0;
        let n = 100_000;
        let mut acc_db = 0.0;
        for _ in 0..n {
            let ch = sample_channel_gains(&inst, &positions, &mut rng);
            acc_db += 10.0 * ch.gains[link].log10();
        }
        let mean_db = acc_db / n as f64;
        let l = inst.wireless_links[link];
        let d = {
            let a = positions[l.tx];
            let b = positions[l.rx];
            ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
        };
        let expect_db = inst.wireless.antenna_gain_db - path_loss_db(d, inst.wireless.carrier_ghz);
        assert!(
            (mean_db - expect_db).abs() < 0.1,
            "mean {mean_db} dB vs {expect_db} dB"
        );
    }

    #[test]
    fn discrete_channel_deterministic_per_seed() {
        let cfg = presets::tiny();
        let inst = build_instance(&cfg).unwrap();
        let positions: Vec<[f64; 2]> = inst.nodes.iter().map(|n| n.pos).collect();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..100)
                .map(|_| sample_channel_gains(&inst, &positions, &mut rng))
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
        assert_ne!(draw(9), draw(10));
    }

    #[test]
    fn discrete_channel_state_frequencies() {
        let cfg = presets::tiny();
        let inst = build_instance(&cfg).unwrap();
        let positions: Vec<[f64; 2]> = inst.nodes.iter().map(|n| n.pos).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut freq = [0usize; 3];
        let n = 100_000;
        for _ in 0..n {
            let ch = sample_channel_gains(&inst, &positions, &mut rng);
            freq[ch.csi_state[0]] += 1;
        }
        let probs = [0.3, 0.4, 0.3];
        for (s, p) in probs.iter().enumerate() {
            let f = freq[s] as f64 / n as f64;
            assert!((f - p).abs() < 0.01, "state {s}: {f} vs {p}");
        }
    }

    #[test]
    fn arrivals_zero_rate() {
        let rates = RateTable {
            rates: vec![0.0, 0.0],
            num_services: 1,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batch = sample_arrivals(&rates, None, &mut rng);
        assert_eq!(batch.total(), 0);
    }

    #[test]
    fn arrivals_sample_mean() {
        let rates = RateTable {
            rates: vec![4.0],
            num_services: 1,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 100_000;
        let mut acc = 0u64;
        for _ in 0..n {
            acc += sample_arrivals(&rates, None, &mut rng).total();
        }
        let mean = acc as f64 / n as f64;
        assert!((3.94..=4.06).contains(&mean), "mean {mean}");
    }

    #[test]
    fn arrivals_truncate_at_bound() {
        let rates = RateTable {
            rates: vec![100.0],
            num_services: 1,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let b = sample_arrivals(&rates, Some(10), &mut rng);
            assert_eq!(b.counts[0], 10);
        }
    }

    #[test]
    fn link_rate_hand_values() {
        // g p / sigma^2 = 1, B = 1e8 Hz, F = 1e3 bits -> 1e5 pkts/s.
        let r = link_rate_pkts_per_s(1.0, 1.0, 1.0, 1e5);
        assert!((r - 1e5).abs() < 1e-9);
        assert_eq!(link_rate_pkts_per_s(1.0, 0.0, 1.0, 1e5), 0.0);
        // snr = 3 -> log2(4) = 2.
        let r = link_rate_pkts_per_s(3.0, 1.0, 1.0, 1e5);
        assert!((r - 2e5).abs() < 1e-9);
    }

    #[test]
    fn link_rate_concave_nondecreasing_in_power() {
        let grid: Vec<f64> = (0..200).map(|i| i as f64 * 0.05).collect();
        let rate =
            |p: f64| link_rate_pkts_per_s(2.0, p, 0.7, 1e5);
        for w in grid.windows(3) {
            let (a, b, c) = (rate(w[0]), rate(w[1]), rate(w[2]));
            assert!(b >= a - 1e-12);
            // Second difference nonpositive.
            assert!(c - 2.0 * b + a <= 1e-9);
        }
    }
}
