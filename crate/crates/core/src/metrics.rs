//! Per-interval throughput and loss records, access-delay samples, summary
//! statistics and file export.
//!
//! Files written for a prefix `p`:
//!
//! * `p_intervals.csv`: `run_id,scenario,policy,bss_id,interval_index,throughput_bps,rts_attempts,rts_losses`
//! * `p_delays.csv`: `run_id,scenario,policy,bss_id,interval_index,rts_start_ns,access_delay_ns`
//! * `p_summary.json`: per-BSS and aggregate statistics, the config and the seed.
//!
//! Delay statistics in JSON are in milliseconds, throughput in Mb/s.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backoff::BssId;
use crate::config::RunConfig;
use crate::engine::SimTime;
use crate::mac::{access_delay, TxAttempt, TxOutcome};
use crate::scenario::Deployment;
use crate::sim::{DeviceStats, RunOutput};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("no samples")]
    NoSamples,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub run_id: usize,
    pub scenario: String,
    pub policy: String,
    pub bss_id: BssId,
    pub interval_index: u64,
    pub throughput_bps: f64,
    pub rts_attempts: u64,
    pub rts_losses: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelaySample {
    pub run_id: usize,
    pub scenario: String,
    pub policy: String,
    pub bss_id: BssId,
    pub interval_index: u64,
    pub rts_start_ns: u64,
    pub access_delay_ns: u64,
}

/// `100 · losses / attempts`; `None` without attempts.
pub fn loss_percentage(losses: u64, attempts: u64) -> Option<f64> {
    (attempts > 0).then(|| 100.0 * losses as f64 / attempts as f64)
}

/// Quartiles use linear interpolation between order statistics. The CDF
/// is the empirical distribution at the sample points, thinned to at most
/// [`CDF_POINTS`] points; the last point is always at probability 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub count: usize,
    pub mean: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub cdf: Vec<(f64, f64)>,
}

pub const CDF_POINTS: usize = 200;

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize(samples: &[f64]) -> Result<SummaryStats, MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::NoSamples);
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    let cdf = if n <= CDF_POINTS {
        s.iter().enumerate().map(|(i, &x)| (x, (i + 1) as f64 / n as f64)).collect()
    } else {
        (1..=CDF_POINTS)
            .map(|k| {
                let i = (k * n).div_ceil(CDF_POINTS) - 1;
                (s[i], (i + 1) as f64 / n as f64)
            })
            .collect()
    };
    Ok(SummaryStats {
        count: n,
        mean: s.iter().sum::<f64>() / n as f64,
        min: s[0],
        q1: quantile(&s, 0.25),
        median: quantile(&s, 0.5),
        q3: quantile(&s, 0.75),
        max: s[n - 1],
        cdf,
    })
}

/// Folds an attempt log into per-interval records. Bits, attempts and
/// losses are credited to the interval in which the attempt ended; an end
/// exactly at the horizon belongs to the last interval.
pub fn interval_records(
    out: &RunOutput,
    scenario: &str,
) -> Vec<MetricRecord> {
    let n_int = interval_count(out.horizon, out.interval);
    let dt = out.interval.as_secs_f64();
    let mut bits = vec![vec![0u64; n_int]; out.devices.len()];
    let mut att = vec![vec![0u64; n_int]; out.devices.len()];
    let mut loss = vec![vec![0u64; n_int]; out.devices.len()];
    for a in &out.attempts {
        let k = interval_of(a.end, out.interval, n_int);
        bits[a.device][k] += a.delivered_bits;
        att[a.device][k] += 1;
        if a.outcome == TxOutcome::RtsLoss {
            loss[a.device][k] += 1;
        }
    }
    let mut records = Vec::with_capacity(out.devices.len() * n_int);
    for (d, dev) in out.devices.iter().enumerate() {
        for k in 0..n_int {
            records.push(MetricRecord {
                run_id: out.run_index,
                scenario: scenario.to_string(),
                policy: dev.policy.clone(),
                bss_id: dev.bss_id,
                interval_index: k as u64,
                throughput_bps: bits[d][k] as f64 / dt,
                rts_attempts: att[d][k],
                rts_losses: loss[d][k],
            });
        }
    }
    records
}

pub fn interval_count(horizon: SimTime, interval: SimTime) -> usize {
    (horizon.as_nanos().div_ceil(interval.as_nanos()) as usize).max(1)
}

fn interval_of(t: SimTime, interval: SimTime, n_int: usize) -> usize {
    ((t.as_nanos() / interval.as_nanos()) as usize).min(n_int - 1)
}

pub fn delay_samples(out: &RunOutput, scenario: &str) -> Vec<DelaySample> {
    let n_int = interval_count(out.horizon, out.interval);
    out.attempts
        .iter()
        .filter_map(|a: &TxAttempt| {
            let delay = access_delay(a)?;
            let dev = &out.devices[a.device];
            Some(DelaySample {
                run_id: out.run_index,
                scenario: scenario.to_string(),
                policy: dev.policy.clone(),
                bss_id: a.bss_id,
                interval_index: interval_of(a.rts_start, out.interval, n_int) as u64,
                rts_start_ns: a.rts_start.as_nanos(),
                access_delay_ns: delay.as_nanos(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BssSummary {
    pub bss_id: BssId,
    pub policy: String,
    pub link_rate_bps: f64,
    pub mpdus_per_txop: u32,
    pub starved: bool,
    pub txop_limit_exceeded: bool,
    pub mean_throughput_bps: f64,
    /// Per-interval throughput in Mb/s.
    pub throughput_mbps: SummaryStats,
    pub attempts: u64,
    pub successes: u64,
    pub rts_losses: u64,
    pub data_losses: u64,
    pub loss_percentage: Option<f64>,
    pub access_delay_ms: Option<SummaryStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateStats {
    pub mean_throughput_bps: f64,
    pub total_throughput_bps: f64,
    pub attempts: u64,
    pub rts_losses: u64,
    pub data_losses: u64,
    pub loss_percentage: Option<f64>,
    pub access_delay_ms: Option<SummaryStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: usize,
    pub scenario: String,
    pub seed: u64,
    pub horizon_s: f64,
    pub interval_s: f64,
    pub lbt_violations: u64,
    pub bss: Vec<BssSummary>,
    pub aggregate: AggregateStats,
    pub deployment: Deployment,
    pub config: RunConfig,
}

/// Everything exported for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub records: Vec<MetricRecord>,
    pub delays: Vec<DelaySample>,
    pub summary: RunSummary,
}

fn ms(ns: u64) -> f64 {
    ns as f64 * 1e-6
}

fn bss_summary(dev: &DeviceStats, d: usize, out: &RunOutput, records: &[MetricRecord], delays: &[DelaySample]) -> BssSummary {
    let mine = out.attempts.iter().filter(|a| a.device == d);
    let (mut attempts, mut successes, mut rts_losses, mut data_losses, mut bits) = (0, 0, 0, 0, 0u64);
    for a in mine {
        attempts += 1;
        bits += a.delivered_bits;
        match a.outcome {
            TxOutcome::Success => successes += 1,
            TxOutcome::RtsLoss => rts_losses += 1,
            TxOutcome::DataLoss => data_losses += 1,
        }
    }
    let tput: Vec<f64> = records
        .iter()
        .filter(|r| r.bss_id == dev.bss_id)
        .map(|r| r.throughput_bps * 1e-6)
        .collect();
    let dl: Vec<f64> = delays
        .iter()
        .filter(|s| s.bss_id == dev.bss_id)
        .map(|s| ms(s.access_delay_ns))
        .collect();
    BssSummary {
        bss_id: dev.bss_id,
        policy: dev.policy.clone(),
        link_rate_bps: dev.link_rate_bps,
        mpdus_per_txop: dev.mpdus_per_txop,
        starved: dev.starved,
        txop_limit_exceeded: dev.txop_limit_exceeded,
        mean_throughput_bps: bits as f64 / out.horizon.as_secs_f64(),
        throughput_mbps: summarize(&tput).expect("at least one interval"),
        attempts,
        successes,
        rts_losses,
        data_losses,
        loss_percentage: loss_percentage(rts_losses, attempts),
        access_delay_ms: summarize(&dl).ok(),
    }
}

impl RunMetrics {
    pub fn from_output(out: &RunOutput, config: &RunConfig) -> Self {
        let scenario = config.experiment.kind.as_str();
        let records = interval_records(out, scenario);
        let delays = delay_samples(out, scenario);
        let bss: Vec<BssSummary> = out
            .devices
            .iter()
            .enumerate()
            .map(|(d, dev)| bss_summary(dev, d, out, &records, &delays))
            .collect();
        let total: f64 = bss.iter().map(|b| b.mean_throughput_bps).sum();
        let attempts = bss.iter().map(|b| b.attempts).sum();
        let rts_losses = bss.iter().map(|b| b.rts_losses).sum();
        let all_delays: Vec<f64> = delays.iter().map(|s| ms(s.access_delay_ns)).collect();
        let aggregate = AggregateStats {
            mean_throughput_bps: total / bss.len().max(1) as f64,
            total_throughput_bps: total,
            attempts,
            rts_losses,
            data_losses: bss.iter().map(|b| b.data_losses).sum(),
            loss_percentage: loss_percentage(rts_losses, attempts),
            access_delay_ms: summarize(&all_delays).ok(),
        };
        let summary = RunSummary {
            run_id: out.run_index,
            scenario: scenario.to_string(),
            seed: out.seed,
            horizon_s: out.horizon.as_secs_f64(),
            interval_s: out.interval.as_secs_f64(),
            lbt_violations: out.lbt_violations,
            bss,
            aggregate,
            deployment: out.deployment.clone(),
            config: config.clone(),
        };
        Self {
            records,
            delays,
            summary,
        }
    }

    /// Writes the three files for `prefix` and returns their paths.
    pub fn export(&self, prefix: &Path) -> io::Result<Vec<PathBuf>> {
        let intervals = with_suffix(prefix, "_intervals.csv");
        write_csv(&intervals, &self.records)?;
        let delays = with_suffix(prefix, "_delays.csv");
        write_delays_csv(&delays, &self.delays)?;
        let summary = with_suffix(prefix, "_summary.json");
        write_json(&summary, &self.summary)?;
        Ok(vec![intervals, delays, summary])
    }
}

pub fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn csv_err(e: csv::Error) -> io::Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => e,
        other => io::Error::new(io::ErrorKind::Other, format!("{other:?}")),
    }
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> io::Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()
}

fn write_delays_csv(path: &Path, rows: &[DelaySample]) -> io::Result<()> {
    if rows.is_empty() {
        // serde-driven headers need a first row
        let mut f = BufWriter::new(File::create(path)?);
        f.write_all(b"run_id,scenario,policy,bss_id,interval_index,rts_start_ns,access_delay_ns\n")?;
        return f.flush();
    }
    write_csv(path, rows)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    f.flush()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub run_id: usize,
    pub seed: u64,
    pub mean_throughput_bps: f64,
    pub loss_percentage: Option<f64>,
    pub median_access_delay_ms: Option<f64>,
    pub max_access_delay_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyAggregate {
    pub n_bss: usize,
    /// Mean over all BSSs of this policy in all runs.
    pub mean_throughput_bps: f64,
    pub loss_percentage: Option<f64>,
    pub access_delay_ms: Option<SummaryStats>,
}

/// Merge of all runs of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub scenario: String,
    pub policy: String,
    pub n_runs: usize,
    pub seeds: Vec<u64>,
    pub runs: Vec<RunRow>,
    /// Mean throughput of each BSS in each run, Mb/s.
    pub bss_throughput_mbps: SummaryStats,
    /// Loss percentage of each run.
    pub loss_percentage: Option<SummaryStats>,
    /// Pooled access delays of all runs.
    pub access_delay_ms: Option<SummaryStats>,
    pub by_policy: BTreeMap<String, PolicyAggregate>,
    pub config: RunConfig,
}

pub fn aggregate(runs: &[RunMetrics], config: &RunConfig) -> Result<ExperimentSummary, MetricsError> {
    if runs.is_empty() {
        return Err(MetricsError::NoSamples);
    }
    let rows: Vec<RunRow> = runs
        .iter()
        .map(|r| {
            let a = &r.summary.aggregate;
            RunRow {
                run_id: r.summary.run_id,
                seed: r.summary.seed,
                mean_throughput_bps: a.mean_throughput_bps,
                loss_percentage: a.loss_percentage,
                median_access_delay_ms: a.access_delay_ms.as_ref().map(|s| s.median),
                max_access_delay_ms: a.access_delay_ms.as_ref().map(|s| s.max),
            }
        })
        .collect();
    let bss_tput: Vec<f64> = runs
        .iter()
        .flat_map(|r| r.summary.bss.iter().map(|b| b.mean_throughput_bps * 1e-6))
        .collect();
    let losses: Vec<f64> = rows.iter().filter_map(|r| r.loss_percentage).collect();
    let delays: Vec<f64> = runs
        .iter()
        .flat_map(|r| r.delays.iter().map(|s| ms(s.access_delay_ns)))
        .collect();

    let mut by_policy = BTreeMap::new();
    let mut policies: Vec<&str> = runs
        .iter()
        .flat_map(|r| r.summary.bss.iter().map(|b| b.policy.as_str()))
        .collect();
    policies.sort();
    policies.dedup();
    for p in policies {
        let bss: Vec<&BssSummary> = runs
            .iter()
            .flat_map(|r| r.summary.bss.iter().filter(|b| b.policy == p))
            .collect();
        let attempts = bss.iter().map(|b| b.attempts).sum();
        let lost = bss.iter().map(|b| b.rts_losses).sum();
        let d: Vec<f64> = runs
            .iter()
            .flat_map(|r| r.delays.iter().filter(|s| s.policy == p).map(|s| ms(s.access_delay_ns)))
            .collect();
        by_policy.insert(
            p.to_string(),
            PolicyAggregate {
                n_bss: bss.len(),
                mean_throughput_bps: bss.iter().map(|b| b.mean_throughput_bps).sum::<f64>() / bss.len() as f64,
                loss_percentage: loss_percentage(lost, attempts),
                access_delay_ms: summarize(&d).ok(),
            },
        );
    }

    Ok(ExperimentSummary {
        scenario: config.experiment.kind.as_str().to_string(),
        policy: config.policy_label(),
        n_runs: runs.len(),
        seeds: rows.iter().map(|r| r.seed).collect(),
        runs: rows,
        bss_throughput_mbps: summarize(&bss_tput)?,
        loss_percentage: summarize(&losses).ok(),
        access_delay_ms: summarize(&delays).ok(),
        by_policy,
        config: config.clone(),
    })
}

/// One line of a sweep table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: String,
    pub value: String,
    pub scenario: String,
    pub policy: String,
    pub n_runs: usize,
    pub mean_bss_throughput_mbps: f64,
    pub median_loss_percentage: Option<f64>,
    pub median_access_delay_ms: Option<f64>,
    pub max_access_delay_ms: Option<f64>,
}

impl SweepRow {
    pub fn new(param: &str, value: &str, s: &ExperimentSummary) -> Self {
        Self {
            param: param.to_string(),
            value: value.to_string(),
            scenario: s.scenario.clone(),
            policy: s.policy.clone(),
            n_runs: s.n_runs,
            mean_bss_throughput_mbps: s.bss_throughput_mbps.mean,
            median_loss_percentage: s.loss_percentage.as_ref().map(|l| l.median),
            median_access_delay_ms: s.access_delay_ms.as_ref().map(|d| d.median),
            max_access_delay_ms: s.access_delay_ms.as_ref().map(|d| d.max),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn loss_percentage_examples() {
        assert_eq!(loss_percentage(0, 1000), Some(0.0));
        assert_eq!(loss_percentage(16, 256), Some(6.25));
        assert_eq!(loss_percentage(7, 7), Some(100.0));
        assert_eq!(loss_percentage(0, 0), None);
    }

    #[test]
    fn single_sample_stats() {
        let s = summarize(&[5.0]).unwrap();
        for v in [s.mean, s.min, s.q1, s.median, s.q3, s.max] {
            assert_eq!(v, 5.0);
        }
        assert_eq!(s.cdf, vec![(5.0, 1.0)]);
    }

    #[test]
    fn interpolated_median() {
        let s = summarize(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!(s.median, 2.5);
        assert_eq!(s.q1, 1.75);
        assert_eq!(s.q3, 3.25);
    }

    #[test]
    fn empty_is_an_error() {
        assert_eq!(summarize(&[]), Err(MetricsError::NoSamples));
        assert_eq!(MetricsError::NoSamples.to_string(), "no samples");
    }

    #[test]
    fn uniform_median() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let xs: Vec<f64> = (0..10_000).map(|_| rng.gen()).collect();
        let s = summarize(&xs).unwrap();
        assert_abs_diff_eq!(s.median, 0.5, epsilon = 0.02);
        assert_eq!(s.cdf.len(), CDF_POINTS);
        assert_eq!(s.cdf.last().unwrap().1, 1.0);
    }

    #[test]
    fn intervals_clamp_at_horizon() {
        let h = SimTime::from_secs(10);
        let dt = SimTime::from_secs(1);
        assert_eq!(interval_count(h, dt), 10);
        assert_eq!(interval_of(h, dt, 10), 9);
        assert_eq!(interval_of(SimTime::from_millis(999), dt, 10), 0);
        assert_eq!(interval_count(SimTime::from_millis(2500), dt), 3);
    }

    proptest! {
        #[test]
        fn loss_percentage_is_bounded(att in 1u64..10_000, frac in 0.0f64..=1.0) {
            let lost = (att as f64 * frac) as u64;
            let p = loss_percentage(lost, att).unwrap();
            prop_assert!((0.0..=100.0).contains(&p));
        }

        #[test]
        fn summarize_is_permutation_invariant(mut xs in prop::collection::vec(-1e6f64..1e6, 1..400), seed in any::<u64>()) {
            let a = summarize(&xs).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for i in (1..xs.len()).rev() {
                xs.swap(i, rng.gen_range(0..=i));
            }
            let b = summarize(&xs).unwrap();
            prop_assert_eq!(a.cdf, b.cdf);
            prop_assert_eq!((a.min, a.q1, a.median, a.q3, a.max), (b.min, b.q1, b.median, b.q3, b.max));
            prop_assert!((a.mean - b.mean).abs() <= 1e-9 * a.mean.abs().max(1.0));
        }

        #[test]
        fn quartiles_are_ordered_and_cdf_monotone(xs in prop::collection::vec(-1e3f64..1e3, 1..600)) {
            let s = summarize(&xs).unwrap();
            prop_assert!(s.min <= s.q1 && s.q1 <= s.median && s.median <= s.q3 && s.q3 <= s.max);
            for w in s.cdf.windows(2) {
                prop_assert!(w[0].0 <= w[1].0 && w[0].1 < w[1].1);
            }
            prop_assert_eq!(s.cdf.last().unwrap().1, 1.0);
        }
    }
}
