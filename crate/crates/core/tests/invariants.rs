//! Randomized structural invariants of the queue executor: the one-slot
//! drift bound with planned flows, exact conservation, ledger/backlog
//! agreement, and the scaling audit across processing stages.

mod common;

use common::{drift_bound_holds_on, random_slot};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mecsim_core::config::presets;
use mecsim_core::model::build_instance;
use mecsim_core::queues::QueueState;

#[test]
fn drift_bound_and_conservation_over_random_plans() {
    // 10^4 random plans across two instance shapes.
    let tiny = build_instance(&presets::tiny()).unwrap();
    drift_bound_holds_on(&tiny, 6_000, 11);
    let desk = build_instance(&presets::desk(6)).unwrap();
    drift_bound_holds_on(&desk, 4_000, 12);
}

#[test]
fn scaling_audit_through_processing() {
    // Cumulative next-stage production equals the scaling factor times the
    // cumulative intake, exactly, across a random run.
    let mut cfg = presets::tiny();
    cfg.services[0].scaling = vec![2.0];
    let inst = build_instance(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut queues = QueueState::new(&inst);
    let mut intake = 0.0;
    let mut produced = 0.0;
    for step in 0..3_000u64 {
        let slot = random_slot(&inst, &mut rng);
        let exec = queues
            .apply_decision(&inst, &slot.plan, &slot.caps, &slot.arrivals, step)
            .unwrap();
        for &(_, c, amt) in &exec.actual_to_proc {
            intake += amt;
            produced += inst.scaling(c) * amt;
        }
    }
    assert!(intake > 0.0);
    assert!((produced - 2.0 * intake).abs() < 1e-9 * produced);
}

#[test]
fn no_negative_backlogs_no_stranded_delivery_queues() {
    let inst = build_instance(&presets::desk(6)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut queues = QueueState::new(&inst);
    for step in 0..3_000u64 {
        let slot = random_slot(&inst, &mut rng);
        queues
            .apply_decision(&inst, &slot.plan, &slot.caps, &slot.arrivals, step)
            .unwrap();
    }
    for node in 0..inst.num_nodes() {
        for c in 0..inst.num_commodities() {
            let q = queues.backlog(node, c);
            assert!(q >= 0.0);
            if inst.is_delivery_queue(node, c) {
                assert_eq!(q, 0.0);
            }
            if !inst.queue_valid(node, c) {
                assert_eq!(q, 0.0, "traffic parked at a foreign UE ({node},{c})");
            }
        }
    }
}
