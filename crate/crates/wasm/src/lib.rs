//! Browser bindings for the interactive demo page (see `www/index.html`).
//!
//! Three operations are exposed: a water-filling power-allocation explorer,
//! a live simulation of a built-in instance, and a quick cost-delay
//! tradeoff sweep. All results cross the boundary as JSON strings to keep
//! the JS side plain.
//!
//! Build with `wasm-pack build crates/wasm --target web --out-dir www/pkg`
//! and serve `crates/wasm/www`. The crate also compiles natively so the
//! bindings stay under ordinary `cargo test`.

use std::sync::Arc;

use serde::Serialize;
use wasm_bindgen::prelude::*;

use mecsim_core::config::{presets, RateTable};
use mecsim_core::controller::{waterfill_power, wireless_objective, WaterfillLink};
use mecsim_core::harness::{ControllerKind, RunConfig, Simulation, SweepSpec};
use mecsim_core::model::{build_instance, Instance};
use mecsim_core::stochastic::link_rate_pkts_per_s;

fn into_js(e: String) -> JsValue {
    JsValue::from_str(&e)
}

fn preset(name: &str) -> Result<Instance, String> {
    let cfg = match name {
        "tiny" => presets::tiny(),
        "desk" => presets::desk(10),
        "single-queue" => presets::single_queue(),
        other => return Err(format!("unknown preset `{other}`")),
    };
    build_instance(&cfg).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct WaterfillView {
    powers_w: Vec<f64>,
    rates_pkts_per_slot: Vec<f64>,
    rho: f64,
    objective: f64,
    total_power_w: f64,
}

/// Water-filling across parallel links. `snr_full` is each link's SNR at
/// full budget (linear); weights are the scheduler's queue differentials.
/// Returns the allocation, the per-link packet rates for a 1 ms slot at
/// B/F = 1e5, and the budget multiplier.
#[wasm_bindgen]
pub fn waterfill_demo(
    weights: Vec<f64>,
    snr_full: Vec<f64>,
    v_energy_cost: f64,
    budget_w: f64,
) -> Result<String, JsValue> {
    waterfill_demo_impl(weights, snr_full, v_energy_cost, budget_w).map_err(into_js)
}

fn waterfill_demo_impl(
    weights: Vec<f64>,
    snr_full: Vec<f64>,
    v_energy_cost: f64,
    budget_w: f64,
) -> Result<String, String> {
    if weights.len() != snr_full.len() || weights.is_empty() {
        return Err("weights and snr_full must match and be non-empty".into());
    }
    if budget_w <= 0.0 {
        return Err("budget must be positive".into());
    }
    let noise = 1e-9;
    let rate_factor = 1e5;
    let links: Vec<WaterfillLink> = weights
        .iter()
        .zip(&snr_full)
        .map(|(&w, &snr)| WaterfillLink {
            weight: w.max(0.0),
            gain: snr.max(1e-9) * noise / budget_w,
            noise_w: noise,
            rate_factor,
        })
        .collect();
    let result = waterfill_power(&links, v_energy_cost.max(0.0), budget_w);
    let rates: Vec<f64> = links
        .iter()
        .zip(&result.powers)
        .map(|(l, &p)| link_rate_pkts_per_s(l.gain, p, l.noise_w, l.rate_factor) * 1e-3)
        .collect();
    let view = WaterfillView {
        objective: wireless_objective(&links, &result.powers, v_energy_cost.max(0.0)),
        total_power_w: result.powers.iter().sum(),
        powers_w: result.powers,
        rates_pkts_per_slot: rates,
        rho: result.rho,
    };
    Ok(serde_json::to_string(&view).unwrap())
}

#[derive(Serialize)]
struct RunView {
    slots: Vec<u64>,
    scaled_backlog: Vec<f64>,
    cost: Vec<f64>,
    delivered: Vec<f64>,
    summary: serde_json::Value,
}

fn downsample(n: usize, max_points: usize) -> usize {
    (n / max_points).max(1)
}

/// Simulate a built-in instance and return downsampled trajectories plus
/// the run summary.
#[wasm_bindgen]
pub fn run_demo(
    preset_name: &str,
    lambda: f64,
    v: f64,
    slots: u32,
    seed: u32,
    controller: &str,
) -> Result<String, JsValue> {
    run_demo_impl(preset_name, lambda, v, slots, seed, controller).map_err(into_js)
}

fn run_demo_impl(
    preset_name: &str,
    lambda: f64,
    v: f64,
    slots: u32,
    seed: u32,
    controller: &str,
) -> Result<String, String> {
    let instance = Arc::new(preset(preset_name)?);
    let controller = controller.parse::<ControllerKind>()?;
    let slots = slots.clamp(1000, 200_000) as u64;
    let cfg = RunConfig {
        seed: seed as u64,
        slots,
        warmup_frac: 0.1,
        v: v.max(0.0),
        controller,
        rates: RateTable::uniform(&instance, lambda.max(0.0)),
        a_max: None,
        drain: Default::default(),
        oracle_margin: 1.05,
    };
    let mut sim = Simulation::new(instance, cfg).map_err(|e| e.to_string())?;
    let stride = downsample(slots as usize, 600);
    let mut view = RunView {
        slots: Vec::new(),
        scaled_backlog: Vec::new(),
        cost: Vec::new(),
        delivered: Vec::new(),
        summary: serde_json::Value::Null,
    };
    let mut cost_acc = 0.0;
    let mut delivered_acc = 0.0;
    for s in 0..slots {
        let rec = sim.step().map_err(|e| e.to_string())?;
        cost_acc += rec.cost.total();
        delivered_acc += rec.delivered;
        if (s as usize + 1) % stride == 0 {
            view.slots.push(rec.slot);
            view.scaled_backlog.push(rec.scaled_backlog_total);
            view.cost.push(cost_acc / stride as f64);
            view.delivered.push(delivered_acc / stride as f64);
            cost_acc = 0.0;
            delivered_acc = 0.0;
        }
    }
    let (metrics, _series) = sim.finish();
    view.summary = serde_json::to_value(&metrics).unwrap();
    Ok(serde_json::to_string(&view).unwrap())
}

/// Sweep the tradeoff knob on a built-in instance; one row per grid value.
#[wasm_bindgen]
pub fn tradeoff_demo(
    preset_name: &str,
    lambda: f64,
    v_grid: Vec<f64>,
    slots: u32,
    seed: u32,
) -> Result<String, JsValue> {
    tradeoff_demo_impl(preset_name, lambda, v_grid, slots, seed).map_err(into_js)
}

fn tradeoff_demo_impl(
    preset_name: &str,
    lambda: f64,
    v_grid: Vec<f64>,
    slots: u32,
    seed: u32,
) -> Result<String, String> {
    let instance = Arc::new(preset(preset_name)?);
    let base = RunConfig {
        seed: seed as u64,
        slots: slots.clamp(1000, 100_000) as u64,
        warmup_frac: 0.1,
        v: 0.0,
        controller: ControllerKind::Mecnc,
        rates: RateTable::uniform(&instance, lambda.max(0.0)),
        a_max: None,
        drain: Default::default(),
        oracle_margin: 1.05,
    };
    let spec = SweepSpec {
        grid: v_grid,
        seeds: vec![seed as u64],
    };
    let report = mecsim_core::harness::sweep_v(instance, &base, &spec)
        .map_err(|e| e.to_string())?;
    Ok(serde_json::to_string(&report).unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn waterfill_demo_json_shape() {
        let out = waterfill_demo_impl(vec![1.0, 2.0, 0.0], vec![10.0, 100.0, 5.0], 0.0, 2.0).unwrap();
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        let powers = v["powers_w"].as_array().unwrap();
        assert_eq!(powers.len(), 3);
        // Zero weight gets zero power; V = 0 spends the whole budget.
        assert_eq!(powers[2].as_f64().unwrap(), 0.0);
        assert!((v["total_power_w"].as_f64().unwrap() - 2.0).abs() < 1e-6);
    }

    #[test]
    fn run_demo_tiny() {
        let out = run_demo_impl("tiny", 30.0, 0.0, 2000, 7, "mecnc").unwrap();
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert!(v["slots"].as_array().unwrap().len() > 100);
        assert!(v["summary"]["stable"].as_bool().unwrap());
    }

    #[test]
    fn tradeoff_demo_rows() {
        let out = tradeoff_demo_impl("tiny", 30.0, vec![0.0, 5.0, 50.0], 2000, 1).unwrap();
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["rows"].as_array().unwrap().len(), 3);
    }

    #[test]
    fn bad_inputs_are_errors() {
        assert!(waterfill_demo_impl(vec![1.0], vec![1.0, 2.0], 0.0, 1.0).is_err());
        assert!(run_demo_impl("nope", 1.0, 0.0, 2000, 1, "mecnc").is_err());
        assert!(run_demo_impl("tiny", 1.0, 0.0, 2000, 1, "weird").is_err());
    }
}
