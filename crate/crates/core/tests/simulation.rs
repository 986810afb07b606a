use proptest::prelude::*;

use contention_core::mac::TxOutcome;
use contention_core::scenario::{BssSpec, Point};
use contention_core::{simulate, simulate_deployment, Deployment, ExperimentKind, PolicyKind, PolicyParams, RunConfig, RunMetrics};

fn config(kind: ExperimentKind, n_bss: usize, policy: PolicyKind, seed: u64, horizon_s: f64) -> RunConfig {
    let mut c = RunConfig::default();
    c.experiment.kind = kind;
    c.experiment.n_bss = n_bss;
    c.experiment.n_sim = 1;
    c.experiment.horizon_s = horizon_s;
    c.experiment.interval_s = 0.5;
    c.policy.kind = policy;
    c.master_seed = seed;
    c
}

fn bss(id: u32, ap: (f64, f64), policy: PolicyKind, db_base: u32) -> BssSpec {
    BssSpec {
        bss_id: id,
        ap: Point::new(ap.0, ap.1),
        sta: Point::new(ap.0, ap.1 + 2.0),
        channel: 0,
        policy,
        params: PolicyParams { db_base, ..PolicyParams::default() },
    }
}

fn kind_strategy() -> impl Strategy<Value = (ExperimentKind, usize)> {
    prop_oneof![
        Just((ExperimentKind::ToyA, 2)),
        Just((ExperimentKind::ToyB, 2)),
        (1usize..=9).prop_map(|n| (ExperimentKind::Overlap, n)),
        (1usize..=9).prop_map(|n| (ExperimentKind::Grid, n)),
    ]
}

fn policy_strategy() -> impl Strategy<Value = PolicyKind> {
    prop_oneof![Just(PolicyKind::Beb), Just(PolicyKind::Db), Just(PolicyKind::Iyt)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn exported_records_conserve_attempts_and_bits(
        (kind, n) in kind_strategy(),
        policy in policy_strategy(),
        seed in 0u64..1_000,
    ) {
        let c = config(kind, n, policy, seed, 2.0);
        let out = simulate(&c, 0, false).unwrap();
        prop_assert_eq!(out.lbt_violations, 0);

        let m = RunMetrics::from_output(&out, &c);
        let attempts: u64 = m.records.iter().map(|r| r.rts_attempts).sum();
        let losses: u64 = m.records.iter().map(|r| r.rts_losses).sum();
        prop_assert_eq!(attempts, out.attempts.len() as u64);
        let rts = out.attempts.iter().filter(|a| a.outcome == TxOutcome::RtsLoss).count() as u64;
        prop_assert_eq!(losses, rts);

        let bits: u64 = out.attempts.iter().map(|a| a.delivered_bits).sum();
        let from_records: f64 = m.records.iter().map(|r| r.throughput_bps * c.experiment.interval_s).sum();
        prop_assert!((from_records - bits as f64).abs() <= 1e-6 * (bits as f64).max(1.0));

        for b in &m.summary.bss {
            if let Some(p) = b.loss_percentage {
                prop_assert!((0.0..=100.0).contains(&p));
            }
            prop_assert_eq!(b.attempts, b.successes + b.rts_losses + b.data_losses);
        }
        for a in &out.attempts {
            prop_assert!(a.rts_start < a.end);
            prop_assert!(a.contention_origin <= a.rts_start);
            prop_assert_eq!(a.delivered_bits > 0, a.outcome == TxOutcome::Success);
        }
    }

    #[test]
    fn same_seed_same_run(
        (kind, n) in kind_strategy(),
        policy in policy_strategy(),
        seed in any::<u64>(),
    ) {
        let c = config(kind, n, policy, seed, 1.0);
        let a = simulate(&c, 0, true).unwrap();
        let b = simulate(&c, 0, true).unwrap();
        prop_assert_eq!(a.attempts, b.attempts);
        prop_assert_eq!(a.trace, b.trace);
    }
}

#[test]
fn frozen_backoff_resumes_where_it_stopped() {
    // DB draws b + 0 on the first attempt, so both countdowns are known
    let c = config(ExperimentKind::Overlap, 2, PolicyKind::Db, 0, 0.05);
    let d = Deployment {
        bsss: vec![bss(1, (5.0, 5.0), PolicyKind::Db, 5), bss(2, (15.0, 5.0), PolicyKind::Db, 8)],
        area_m: (20.0, 10.0),
        seed: 3,
    };
    let out = simulate_deployment(&c, d, false).unwrap();
    let (difs, slot) = (c.mac.difs().as_nanos(), c.mac.slot().as_nanos());

    let first = |dev| out.attempts.iter().find(|a| a.device == dev).unwrap();
    let (a1, a2) = (first(0), first(1));
    assert_eq!(a1.outcome, TxOutcome::Success);
    assert_eq!(a1.rts_start.as_nanos(), difs + 5 * slot);
    let exchange = a1.end.as_nanos() - a1.rts_start.as_nanos();
    // 5 slots counted before the freeze, 3 after the second DIFS
    assert_eq!(a2.rts_start.as_nanos(), 2 * difs + 8 * slot + exchange);
    assert_eq!(a2.outcome, TxOutcome::Success);
}

#[test]
fn grid_channels_do_not_interact() {
    // the first row of the grid uses three different channels
    for seed in 0..5 {
        let c = config(ExperimentKind::Grid, 3, PolicyKind::Beb, seed, 5.0);
        let out = simulate(&c, 0, false).unwrap();
        let channels: Vec<u32> = out.deployment.bsss.iter().map(|b| b.channel).collect();
        assert_eq!(channels, vec![0, 1, 2]);
        assert!(out.attempts.iter().all(|a| a.outcome == TxOutcome::Success), "seed {seed}");
    }
}

#[test]
fn trace_has_four_columns_and_ordered_times() {
    let c = config(ExperimentKind::ToyB, 2, PolicyKind::Iyt, 7, 0.5);
    let trace = simulate(&c, 0, true).unwrap().trace.unwrap();
    let mut last = 0u64;
    for line in trace.lines() {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols.len(), 4, "{line}");
        let t: u64 = cols[0].parse().unwrap();
        assert!(t >= last, "{line}");
        last = t;
        cols[1].parse::<usize>().unwrap();
    }
    assert!(trace.contains(",rts_start,"));
    assert!(simulate(&c, 0, false).unwrap().trace.is_none());
}

#[test]
fn toy_b_collisions_lose_both_frames() {
    let c = config(ExperimentKind::ToyB, 2, PolicyKind::Beb, 1, 5.0);
    let out = simulate(&c, 0, false).unwrap();
    let starts: Vec<_> = out.attempts.iter().map(|a| a.rts_start).collect();
    let collided: Vec<_> = out
        .attempts
        .iter()
        .filter(|a| starts.iter().filter(|&&s| s == a.rts_start).count() > 1)
        .collect();
    assert!(!collided.is_empty());
    assert!(collided.iter().all(|a| a.outcome == TxOutcome::RtsLoss));
}
