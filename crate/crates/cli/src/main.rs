//! `sim`: run one experiment or sweep one parameter.
//!
//! stdout carries only the paths of produced files; progress and errors go
//! to stderr. Exit codes: 0 success, 2 bad config or arguments, 3 I/O.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use contention_core::metrics::{self, with_suffix, SweepRow};
use contention_core::{aggregate, simulate, ConfigError, PolicyKind, RunConfig, RunMetrics, SimError};

#[derive(Parser)]
#[command(name = "sim", version, about = "Wi-Fi DCF contention simulator (BEB, DB, IYT)")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run `n_sim` deployments of one experiment.
    Run(RunArgs),
    /// Run the experiment once per value of one parameter.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Replaces `master_seed` (and any explicit seed list).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Parallel runs; defaults to the number of CPUs.
    #[arg(long, env = "SIM_JOBS")]
    jobs: Option<usize>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Also write each deployment as JSON.
    #[arg(long)]
    dump_deployment: bool,
    /// Also write each run's event trace.
    #[arg(long)]
    trace: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// `name=a..b` or `name=v1,v2,...` (braces optional).
    #[arg(long)]
    param: String,
}

#[derive(Debug)]
enum CliError {
    Config(String),
    Io(String),
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        CliError::Config(e.to_string())
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
    };
    match result {
        Ok(paths) => {
            let mut stdout = std::io::stdout().lock();
            for p in paths {
                // a closed pipe downstream is not a failure of the run
                if writeln!(stdout, "{}", p.display()).is_err() {
                    break;
                }
            }
            ExitCode::SUCCESS
        }
        Err(CliError::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Io(m)) => {
            eprintln!("I/O error: {m}");
            ExitCode::from(3)
        }
    }
}

/// Loads the config, applies `--seed` and resolves the output prefix.
fn resolve(common: &Common) -> Result<(RunConfig, PathBuf), CliError> {
    let mut config = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        config.master_seed = seed;
        config.experiment.seeds = None;
    }
    let stem = common
        .config
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "sim".into());
    let name = config.output_prefix.clone().unwrap_or(stem);
    config.output_prefix = Some(name.clone());
    fs::create_dir_all(&common.out).map_err(io_err(&common.out))?;
    Ok((config, common.out.join(name)))
}

fn pool(jobs: Option<usize>) -> rayon::ThreadPool {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        b = b.num_threads(j.max(1));
    }
    b.build().expect("thread pool")
}

fn run_prefix(prefix: &Path, i: usize) -> PathBuf {
    with_suffix(prefix, &format!("_run{i}"))
}

fn cmd_run(args: RunArgs) -> Result<Vec<PathBuf>, CliError> {
    let (config, prefix) = resolve(&args.common)?;
    let n = config.experiment.n_sim;
    eprintln!(
        "running {n} deployment(s) of {} / {}",
        config.experiment.kind.as_str(),
        config.policy_label()
    );
    let results: Vec<Result<(Vec<PathBuf>, RunMetrics), CliError>> = pool(args.common.jobs).install(|| {
        (0..n)
            .into_par_iter()
            .map(|i| {
                let out = simulate(&config, i, args.trace)?;
                let m = RunMetrics::from_output(&out, &config);
                let p = run_prefix(&prefix, i);
                let mut files = m.export(&p).map_err(io_err(&p))?;
                if args.dump_deployment {
                    let f = with_suffix(&p, "_deployment.json");
                    metrics::write_json(&f, &out.deployment).map_err(io_err(&f))?;
                    files.push(f);
                }
                if let Some(trace) = &out.trace {
                    let f = with_suffix(&p, "_trace.csv");
                    let body = format!("time_ns,device,event,detail\n{trace}");
                    fs::write(&f, body).map_err(io_err(&f))?;
                    files.push(f);
                }
                eprintln!("run {i} (seed {}) done", out.seed);
                Ok((files, m))
            })
            .collect()
    });
    let mut files = Vec::new();
    let mut runs = Vec::with_capacity(n);
    for r in results {
        let (f, m) = r?;
        files.extend(f);
        runs.push(m);
    }
    let summary = aggregate(&runs, &config).expect("n_sim >= 1");
    let f = with_suffix(&prefix, "_aggregate.json");
    metrics::write_json(&f, &summary).map_err(io_err(&f))?;
    files.push(f);
    Ok(files)
}

#[derive(Debug, PartialEq)]
enum SweepParam {
    NBss,
    Policy,
    Cw0,
    NMax,
    DbBase,
}

const SWEEPABLE: &str = "n_bss, policy, cw0, n_max, db_base";

fn parse_param(spec: &str) -> Result<(SweepParam, Vec<String>), CliError> {
    let bad = |m: String| CliError::Config(m);
    let (name, values) = spec
        .split_once('=')
        .ok_or_else(|| bad(format!("--param must look like name=values, got `{spec}`")))?;
    let param = match name.trim() {
        "n_bss" => SweepParam::NBss,
        "policy" => SweepParam::Policy,
        "cw0" => SweepParam::Cw0,
        "n_max" => SweepParam::NMax,
        "db_base" => SweepParam::DbBase,
        other => return Err(bad(format!("unknown sweep parameter `{other}` (sweepable: {SWEEPABLE})"))),
    };
    let values = values.trim().trim_start_matches('{').trim_end_matches('}');
    let list: Vec<String> = if let Some((a, b)) = values.split_once("..") {
        let parse = |s: &str| {
            s.trim()
                .parse::<u64>()
                .map_err(|_| bad(format!("bad range bound `{s}` in `{spec}`")))
        };
        let (a, b) = (parse(a)?, parse(b.trim_start_matches('='))?);
        if a > b {
            return Err(bad(format!("empty range in `{spec}`")));
        }
        (a..=b).map(|v| v.to_string()).collect()
    } else {
        values.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect()
    };
    if list.is_empty() {
        return Err(bad(format!("no values in `{spec}`")));
    }
    Ok((param, list))
}

fn apply(config: &mut RunConfig, param: &SweepParam, value: &str) -> Result<(), CliError> {
    let num = || {
        value
            .parse::<u32>()
            .map_err(|_| CliError::Config(format!("`{value}` is not a valid integer")))
    };
    match param {
        SweepParam::NBss => config.experiment.n_bss = num()? as usize,
        SweepParam::Policy => config.policy.kind = value.parse::<PolicyKind>().map_err(CliError::Config)?,
        SweepParam::Cw0 => config.policy.cw0 = num()?,
        SweepParam::NMax => config.policy.n_max = num()?,
        SweepParam::DbBase => config.policy.db_base = num()?,
    }
    contention_core::scenario::validate(config).map_err(|errs| {
        let lines: Vec<String> = errs.iter().map(|e| format!("  {e}")).collect();
        CliError::Config(format!("config invalid for sweep value `{value}`:\n{}", lines.join("\n")))
    })
}

fn cmd_sweep(args: SweepArgs) -> Result<Vec<PathBuf>, CliError> {
    let (base, prefix) = resolve(&args.common)?;
    let (param, values) = parse_param(&args.param)?;
    let name = args.param.split_once('=').map(|(n, _)| n.trim()).unwrap_or_default().to_string();
    let configs: Vec<(String, RunConfig)> = values
        .iter()
        .map(|v| {
            let mut c = base.clone();
            apply(&mut c, &param, v)?;
            Ok((v.clone(), c))
        })
        .collect::<Result<_, CliError>>()?;

    let pool = pool(args.common.jobs);
    let mut files = Vec::new();
    let mut rows = Vec::new();
    for (value, config) in &configs {
        let n = config.experiment.n_sim;
        eprintln!("{name}={value}: {n} run(s)");
        let runs: Vec<Result<RunMetrics, CliError>> = pool.install(|| {
            (0..n)
                .into_par_iter()
                .map(|i| Ok(RunMetrics::from_output(&simulate(config, i, false)?, config)))
                .collect()
        });
        let runs = runs.into_iter().collect::<Result<Vec<_>, _>>()?;
        let summary = aggregate(&runs, config).expect("n_sim >= 1");
        let f = with_suffix(&prefix, &format!("_{name}-{value}_aggregate.json"));
        metrics::write_json(&f, &summary).map_err(io_err(&f))?;
        files.push(f);
        rows.push(SweepRow::new(&name, value, &summary));
    }
    let f = with_suffix(&prefix, "_sweep.csv");
    metrics::write_csv(&f, &rows).map_err(io_err(&f))?;
    files.push(f);
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_and_lists() {
        let (p, v) = parse_param("n_bss=1..9").unwrap();
        assert_eq!(p, SweepParam::NBss);
        assert_eq!(v.len(), 9);
        let (_, v) = parse_param("n_bss=1..1").unwrap();
        assert_eq!(v, vec!["1"]);
        let (p, v) = parse_param("policy={beb,db,iyt}").unwrap();
        assert_eq!(p, SweepParam::Policy);
        assert_eq!(v, vec!["beb", "db", "iyt"]);
        assert_eq!(parse_param("policy=beb, iyt").unwrap().1, vec!["beb", "iyt"]);
    }

    #[test]
    fn unknown_parameter_is_rejected() {
        assert!(matches!(parse_param("slot_us=9"), Err(CliError::Config(m)) if m.contains("unknown sweep parameter")));
        assert!(parse_param("n_bss").is_err());
        assert!(parse_param("n_bss=5..2").is_err());
    }

    #[test]
    fn sweep_values_are_validated() {
        assert!(apply(&mut RunConfig::default(), &SweepParam::NBss, "10").is_err());
        assert!(apply(&mut RunConfig::default(), &SweepParam::Policy, "aloha").is_err());
        let mut c = RunConfig::default();
        apply(&mut c, &SweepParam::Policy, "iyt").unwrap();
        assert_eq!(c.policy.kind, PolicyKind::Iyt);
    }
}
