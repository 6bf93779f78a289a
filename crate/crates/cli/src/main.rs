use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use critload::harness::experiment::{
    coupling_experiment, emit_csv, emit_csv_file, load_config, stationarity_test, tail_estimate, Experiment,
};
use critload::harness::suites::{node_suite, reflected_limit_suite, scale_suite, shift_suite, skorokhod_suite};
use critload::rates::{variational_rate, VariationalProblem};
use critload::Error;

#[derive(Parser)]
#[command(name = "critload", version, about = "Pathwise simulation and heavy-traffic diagnostics for feedforward priority networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Re-check every reflected limit against the Skorokhod conditions.
    #[arg(long)]
    verify: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run every replication of the sweep and write per-replication metrics as CSV.
    Simulate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output file, overriding `experiment.output`; stdout if neither is set.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Median coupling, collapse, snapshot and high-priority workload per k.
    Couple {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Empirical tail slopes of the configured events against their rates.
    Tail {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Variational rate for node workload reaching a level, with the optimal path.
    Rate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// 1-based node index.
        #[arg(long)]
        node: usize,
        #[arg(long)]
        level: f64,
        /// Time cells of the path discretization.
        #[arg(long)]
        cells: Option<usize>,
    },
    /// Pathwise identity checks over random instances.
    Check {
        #[arg(long, default_value_t = 1000)]
        instances: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Two-sample KS test of workloads at the first two probe times.
    Stationarity {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// 1-based node index.
        #[arg(long, default_value_t = 1)]
        node: usize,
    },
}

/// Failure with its exit status: 1 for invalid input, 2 for runtime errors.
struct Failure(u8, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Schema { .. } | Error::Config(_) | Error::UnsupportedMatrix(_) => 1,
            _ => 2,
        };
        Failure(code, e.to_string())
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure(2, e.to_string())
    }
}

fn prepare(args: &ConfigArgs) -> Result<Experiment, Failure> {
    let cfg = load_config(&args.config).map_err(|e| Failure(1, e.to_string()))?;
    let mut exp = cfg.prepare().map_err(|e| Failure(1, e.to_string()))?;
    exp.verify_inline = args.verify;
    Ok(exp)
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut out = io::stdout().lock();
    match cli.command {
        Command::Simulate { cfg, output } => {
            let exp = prepare(&cfg)?;
            let results = exp.sweep()?;
            match output.or_else(|| exp.cfg.experiment.output.clone()) {
                Some(path) => emit_csv_file(&results, &path)?,
                None => emit_csv(&results, &mut out)?,
            }
        }
        Command::Couple { cfg } => {
            let exp = prepare(&cfg)?;
            let (rows, _) = coupling_experiment(&exp)?;
            writeln!(out, "k,replications,node,coupling,collapse,snapshot,v_sup")?;
            for r in &rows {
                for i in 0..r.coupling.len() {
                    writeln!(out, "{},{},{},{},{},{},{}", r.k, r.replications, i + 1, r.coupling[i], r.collapse[i], r.snapshot[i], r.v_sup[i])?;
                }
            }
        }
        Command::Tail { cfg } => {
            let exp = prepare(&cfg)?;
            let rep = tail_estimate(&exp)?;
            let events = &exp.cfg.experiment.events;
            writeln!(out, "k,b_k,node,level,replications,hits,p_hat,std_err,slope,slope_low,slope_high,one_sided,rate")?;
            for (n, r) in rep.rows.iter().enumerate() {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                    r.k,
                    r.b_k,
                    r.node,
                    r.level,
                    r.replications,
                    r.hits,
                    r.p_hat,
                    r.std_err,
                    r.slope,
                    r.slope_low,
                    r.slope_high,
                    r.one_sided,
                    rep.rates[n % events.len()]
                )?;
            }
            for w in &rep.warnings {
                eprintln!("warning: {w}");
            }
        }
        Command::Rate { cfg, node, level, cells } => {
            let exp = prepare(&cfg)?;
            if node == 0 || node > exp.cd.n() {
                return Err(Failure(1, format!("node {node} out of range 1..={}", exp.cd.n())));
            }
            if !(level >= 0.0) {
                return Err(Failure(1, "level must be nonnegative".into()));
            }
            let cov = exp.covariance()?;
            let mut vp = VariationalProblem::for_network(&exp.cd, &cov, node - 1, level);
            if let Some(c) = cells {
                vp.cells = c;
            }
            let res = variational_rate(&vp)?;
            writeln!(out, "# rate={} terminal={} cells={}", res.rate, res.terminal, res.cells)?;
            let n = res.z.len();
            let header: Vec<String> = (1..=n).map(|i| format!("z{i}")).chain((1..=n).map(|i| format!("w{i}"))).collect();
            writeln!(out, "t,{}", header.join(","))?;
            for j in 0..=res.cells {
                let t = vp.horizon * j as f64 / res.cells as f64;
                let mut row = Vec::with_capacity(2 * n);
                for p in res.z.iter().chain(&res.w) {
                    row.push(p.eval(t)?);
                }
                writeln!(out, "{t},{}", join(&row))?;
            }
        }
        Command::Check { instances, seed } => {
            let nodes = node_suite(seed, instances)?;
            let r = &nodes.residuals;
            let scale = scale_suite(seed, instances, &[0.5, 2.0, 10.0])?;
            let shift = shift_suite(seed, instances, 5, 10.0)?;
            let sk = skorokhod_suite(seed, instances, 4, 1e-10)?;
            let limit = reflected_limit_suite(seed, instances, 3)?;
            let checks = [
                ("complementarity", r.complementarity.iter().cloned().fold(0.0, f64::max), 1e-9),
                ("negative workload", -r.min_v.min(r.min_w), 1e-12),
                ("hidden idle", r.hidden_idle, 1e-12),
                ("hidden workload", r.hidden_workload, 1e-12),
                ("inverse", r.inverse, 1e-12),
                ("scale", scale, 1e-10),
                ("shift", shift.iter().cloned().fold(0.0, f64::max), 1e-12),
                ("skorokhod fixed point", sk.fixed_point, 1e-10),
                ("skorokhod unverified", (sk.instances - sk.verified) as f64, 0.0),
                ("skorokhod one-d", sk.one_d, 0.0),
                ("skorokhod homogeneity", sk.homogeneity, 1e-12),
                ("limit reflection", limit, 1e-12),
            ];
            writeln!(out, "check,worst,tolerance,passed")?;
            let mut failed = 0;
            for (name, worst, tol) in checks {
                let ok = worst <= tol;
                failed += !ok as usize;
                writeln!(out, "{name},{worst:e},{tol:e},{ok}")?;
            }
            if failed > 0 {
                return Err(Failure(1, format!("{failed} checks exceeded their tolerance")));
            }
        }
        Command::Stationarity { cfg, node } => {
            let exp = prepare(&cfg)?;
            let r = stationarity_test(&exp, node)?;
            writeln!(out, "k,node,t1,t2,samples,statistic,p_value,start_dependent,inconclusive,passed")?;
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.k, r.node, r.times[0], r.times[1], r.samples, r.statistic, r.p_value, r.start_dependent, r.inconclusive, r.passed
            )?;
        }
    }
    Ok(())
}

fn init_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("CRITLOAD_THREADS") else { return Ok(()) };
    let n: usize = v.trim().parse().map_err(|_| Failure(1, format!("CRITLOAD_THREADS must be a positive integer, got {v:?}")))?;
    if n == 0 {
        return Err(Failure(1, "CRITLOAD_THREADS must be positive".into()));
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Failure(2, e.to_string()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match init_threads().and_then(|_| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
