//! `drcal` command line.

use std::ffi::OsString;
use std::net::TcpListener;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use drcal_core::protocol::{run_agent_session, run_operator, Agent, AgentConfig, OperatorOptions, Session};
use drcal_core::{
    calibrate_with, gen_synthetic_dataset, CalibrationConfig, DatasetRole, LayerConfig, SolverOptions,
    SyntheticSpec,
};
use serde_json::json;

use crate::error::{Error, EXIT_OK};
use crate::exec::{pool, Parallel};
use crate::io::{dataset_csv, format_theta, load_case, parse_list, parse_theta, read_dataset, role_name};
use crate::net::{accept_agents, connect};
use crate::run::{epsilon_svg, loss_svg, rounds_csv, trajectory_csv, verify_manifest, RunDir};
use crate::sweep::{run_sweep, sigma_trends, summary_csv, SeedPolicy, SweepSpec};

#[derive(Debug, Parser)]
#[command(name = "drcal", version, about = "Cost-oriented calibration of wind forecasts and ambiguity radii")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset: x ~ U[lo, hi], y = clip(Θ0ᵀx + N(0, σ²)).
    GenData(GenDataArgs),
    /// Run the calibration loop and write a run directory.
    Calibrate(CalibrateArgs),
    /// Run a grid of calibrations over σ_c and/or η.
    Sweep(SweepArgs),
    /// Serve a distributed calibration to forecasting agents.
    Operator(OperatorArgs),
    /// Join a distributed calibration as a forecasting agent.
    Agent(AgentArgs),
    /// Re-hash the inputs and outputs recorded in a run manifest.
    Verify {
        /// Run directory containing manifest.json.
        dir: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RoleArg {
    Uq,
    #[value(alias = "cal")]
    Calibration,
}

impl From<RoleArg> for DatasetRole {
    fn from(r: RoleArg) -> Self {
        match r {
            RoleArg::Uq => DatasetRole::Uq,
            RoleArg::Calibration => DatasetRole::Calibration,
        }
    }
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Θ0: features per farm comma-separated, farms separated by `;`.
    #[arg(long, default_value = "1,2")]
    pub theta0: String,
    #[arg(long)]
    pub n: usize,
    /// Standard deviation of the forecast error, MW.
    #[arg(long)]
    pub sigma: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, value_enum)]
    pub role: RoleArg,
    /// Farm capacities, MW; one value applies to every farm.
    #[arg(long, default_value = "200")]
    pub capacity: String,
    /// Feature range `lo,hi`.
    #[arg(long, default_value = "20,50")]
    pub feature_range: String,
    /// Output directory; receives dataset.csv and manifest.json.
    #[arg(long)]
    pub out: PathBuf,
}

/// Hyperparameters shared by the calibrating commands (η is separate
/// because the sweep takes a list).
#[derive(Debug, Args, Clone)]
pub struct HyperArgs {
    #[arg(long, default_value_t = 1e-4)]
    pub lr_theta: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub lr_eps: f64,
    /// Stop when |ΔL| falls below this; default 1e-5 × the first loss.
    #[arg(long)]
    pub stop_delta: Option<f64>,
    #[arg(long, default_value_t = 200)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 0.0)]
    pub eps_floor: f64,
    /// Error support half-width, MW.
    #[arg(long, default_value_t = 50.0)]
    pub support: f64,
    /// Chance-constraint level γ.
    #[arg(long, default_value_t = 0.05)]
    pub risk_level: f64,
    /// Allow load shedding / wind spill at this price instead of failing.
    #[arg(long)]
    pub load_shed_cost: Option<f64>,
    /// Quadratic regularization of the differentiated schedule.
    #[arg(long, default_value_t = 1e-6)]
    pub rho: f64,
    /// Interior-point tolerance.
    #[arg(long, default_value_t = 1e-9)]
    pub solver_tol: f64,
}

impl HyperArgs {
    fn config(&self, eta: f64, seed: u64) -> CalibrationConfig {
        let d = LayerConfig::default();
        CalibrationConfig {
            eta,
            lr_theta: self.lr_theta,
            lr_eps: self.lr_eps,
            stop_delta: self.stop_delta,
            max_iters: self.max_iters,
            eps_floor: self.eps_floor,
            support_mw: self.support,
            risk_level: self.risk_level,
            load_shed_cost: self.load_shed_cost,
            layer: LayerConfig {
                regularization_rho: self.rho,
                solver: SolverOptions { tol: self.solver_tol, ..d.solver },
                ..d
            },
            seed,
        }
    }
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Case JSON file or a built-in name (case5, case5_2w).
    #[arg(long, default_value = "case5")]
    pub case: String,
    #[arg(long)]
    pub uq_data: PathBuf,
    #[arg(long)]
    pub cal_data: PathBuf,
    #[arg(long, default_value = "1,2")]
    pub theta0: String,
    /// Initial radius per farm; one value applies to every farm.
    #[arg(long, default_value = "1")]
    pub eps0: String,
    #[arg(long, default_value_t = 1.0)]
    pub eta: f64,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Worker threads for per-sample solves; 0 = all cores.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    /// Also write loss.svg and epsilon.svg.
    #[arg(long)]
    pub plot: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, default_value = "case5")]
    pub case: String,
    #[arg(long, default_value = "1,2")]
    pub theta0: String,
    #[arg(long, default_value = "1")]
    pub eps0: String,
    /// Calibration noise levels, comma-separated.
    #[arg(long, default_value = "20")]
    pub sigma_c: String,
    /// MSE weights, comma-separated.
    #[arg(long, default_value = "1")]
    pub eta: String,
    #[arg(long, default_value_t = 10.0)]
    pub sigma_uq: f64,
    #[arg(long, default_value_t = 20)]
    pub n_uq: usize,
    #[arg(long, default_value_t = 20)]
    pub n_cal: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = SeedPolicy::Shared)]
    pub seed_policy: SeedPolicy,
    #[command(flatten)]
    pub hyper: HyperArgs,
    /// Concurrent grid points and sample solves; 0 = all cores.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    #[arg(long)]
    pub plot: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct OperatorArgs {
    #[arg(long, default_value = "case5")]
    pub case: String,
    #[arg(long)]
    pub cal_data: PathBuf,
    /// Address to listen on, host:port.
    #[arg(long)]
    pub listen: String,
    /// Number of agents to wait for.
    #[arg(long)]
    pub agents: usize,
    #[arg(long, default_value = "1")]
    pub eps0: String,
    #[arg(long, default_value_t = 1.0)]
    pub eta: f64,
    #[command(flatten)]
    pub hyper: HyperArgs,
    /// Deadline for each expected agent message, ms.
    #[arg(long, default_value_t = 30_000)]
    pub timeout_ms: u64,
    /// How long to wait for all agents to connect, ms.
    #[arg(long, default_value_t = 60_000)]
    pub accept_timeout_ms: u64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    #[arg(long)]
    pub plot: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AgentArgs {
    /// UQ dataset; extra farm columns are dropped using --farms.
    #[arg(long)]
    pub uq_data: PathBuf,
    /// Initial parameters of the owned farms.
    #[arg(long, default_value = "1,2")]
    pub theta0: String,
    /// 0-based case indices of the owned farms; default 0..k.
    #[arg(long)]
    pub farms: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub agent_id: u32,
    /// Operator address, host:port.
    #[arg(long)]
    pub connect: String,
    #[arg(long, default_value_t = 1e-4)]
    pub lr_theta: f64,
    #[arg(long, default_value_t = 1.0)]
    pub eta: f64,
    /// Deadline for each operator message, ms. A round includes the
    /// operator's market solves.
    #[arg(long, default_value_t = 600_000)]
    pub timeout_ms: u64,
    #[arg(long, default_value_t = 10_000)]
    pub connect_timeout_ms: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses and runs; returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<String> = args.into_iter().map(|a| a.into().to_string_lossy().into_owned()).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli, argv) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli, argv: Vec<String>) -> Result<(), Error> {
    match cli.command {
        Command::GenData(a) => gen_data(a, argv),
        Command::Calibrate(a) => cmd_calibrate(a, argv),
        Command::Sweep(a) => cmd_sweep(a, argv),
        Command::Operator(a) => cmd_operator(a, argv),
        Command::Agent(a) => cmd_agent(a, argv),
        Command::Verify { dir } => {
            let bad = verify_manifest(&dir)?;
            if bad.is_empty() {
                println!("ok");
                Ok(())
            } else {
                for b in &bad {
                    println!("mismatch: {b}");
                }
                Err(Error::Mismatch(bad))
            }
        }
    }
}

fn usage(flag: &str, e: impl std::fmt::Display) -> Error {
    Error::Usage(format!("{flag}: {e}"))
}

/// A list with one value broadcast to `n`, or exactly `n` values.
fn per_farm(flag: &str, s: &str, n: usize) -> Result<Vec<f64>, Error> {
    let v = parse_list(s).map_err(|e| usage(flag, e))?;
    match v.len() {
        1 => Ok(vec![v[0]; n]),
        k if k == n => Ok(v),
        k => Err(usage(flag, format!("{k} values for {n} farms"))),
    }
}

fn gen_data(a: GenDataArgs, argv: Vec<String>) -> Result<(), Error> {
    let theta0 = parse_theta(&a.theta0)?;
    let capacity = per_farm("--capacity", &a.capacity, theta0.cols())?;
    let range = parse_list(&a.feature_range).map_err(|e| usage("--feature-range", e))?;
    if range.len() != 2 {
        return Err(usage("--feature-range", "expected lo,hi"));
    }
    let spec = SyntheticSpec {
        feature_low: range[0],
        feature_high: range[1],
        ..SyntheticSpec::new(theta0.clone(), a.n, a.sigma, a.seed, a.role.into(), capacity.clone())
    };
    let data = gen_synthetic_dataset(&spec).map_err(|e| Error::Usage(e.to_string()))?;
    let mut run = RunDir::create(&a.out)?;
    run.write("dataset.csv", &dataset_csv(&data))?;
    let config = json!({
        "theta0": format_theta(&theta0),
        "n": a.n,
        "sigma": a.sigma,
        "role": role_name(a.role.into()),
        "capacity": capacity,
        "feature_range": range,
    });
    run.finish(argv, config, a.seed)?;
    println!("{}", a.out.join("dataset.csv").display());
    Ok(())
}

fn cmd_calibrate(a: CalibrateArgs, argv: Vec<String>) -> Result<(), Error> {
    let case = load_case(&a.case)?;
    let theta0 = parse_theta(&a.theta0)?;
    let eps0 = per_farm("--eps0", &a.eps0, case.n_wind)?;
    let uq = read_dataset(&a.uq_data, DatasetRole::Uq)?;
    let cal = read_dataset(&a.cal_data, DatasetRole::Calibration)?;
    let config = a.hyper.config(a.eta, a.seed);
    config.validate()?;

    let mut run = RunDir::create(&a.out)?;
    run.input_case(&a.case, &case)?;
    run.input_file(&a.uq_data)?;
    run.input_file(&a.cal_data)?;
    let state = pool(a.jobs).install(|| {
        calibrate_with(&case, &uq, &cal, &theta0, &eps0, &config, &Parallel, |r| {
            log::info!("iter {}: total {:.6} eps {:?}", r.iter, r.loss.total, r.epsilon);
        })
    })?;
    let (nf, nw) = theta0.shape();
    run.write("config.json", &pretty(&json!({"calibration": config, "case": a.case, "theta0": format_theta(&theta0), "eps0": eps0})))?;
    run.write("trajectory.csv", &trajectory_csv(&state.trajectory, nf, nw))?;
    run.write(
        "final.json",
        &pretty(&json!({
            "theta": state.theta,
            "epsilon": state.epsilon,
            "converged": state.converged,
            "iters": state.iter,
            "loss": state.loss_history.last(),
        })),
    )?;
    if a.plot {
        let iters: Vec<usize> = state.trajectory.iter().map(|r| r.iter).collect();
        run.write("loss.svg", loss_svg(&iters, &state.loss_history, a.eta).as_bytes())?;
        let eps: Vec<Vec<f64>> = state.trajectory.iter().map(|r| r.epsilon.clone()).collect();
        run.write("epsilon.svg", epsilon_svg(&iters, &eps).as_bytes())?;
    }
    run.finish(argv, serde_json::to_value(config).expect("config serializes"), a.seed)?;
    println!(
        "iters {} converged {} epsilon {:?} theta {}",
        state.iter,
        state.converged,
        state.epsilon,
        format_theta(&state.theta)
    );
    Ok(())
}

fn cmd_sweep(a: SweepArgs, argv: Vec<String>) -> Result<(), Error> {
    let case = load_case(&a.case)?;
    let theta0 = parse_theta(&a.theta0)?;
    let eps0 = per_farm("--eps0", &a.eps0, case.n_wind)?;
    let sigma_c = parse_list(&a.sigma_c).map_err(|e| usage("--sigma-c", e))?;
    let eta = parse_list(&a.eta).map_err(|e| usage("--eta", e))?;
    let config = a.hyper.config(eta[0], a.seed);
    config.validate()?;
    if eta.iter().any(|e| *e < 0.0) || sigma_c.iter().any(|s| *s < 0.0) {
        return Err(Error::Usage("--eta and --sigma-c must be >= 0".into()));
    }
    let spec = SweepSpec {
        theta0: theta0.clone(),
        eps0,
        sigma_c,
        eta,
        n_uq: a.n_uq,
        n_cal: a.n_cal,
        sigma_uq: a.sigma_uq,
        seed: a.seed,
        seed_policy: a.seed_policy,
        config,
    };
    let mut run = RunDir::create(&a.out)?;
    run.input_case(&a.case, &case)?;
    let points = run_sweep(&spec, &case, &pool(a.jobs), |p| {
        log::info!("point {} (sigma_c {}, eta {}): {}", p.index, p.sigma_c, p.eta, p.status.name());
    })
    .map_err(Error::Usage)?;
    let (nf, nw) = theta0.shape();
    for p in &points {
        let dir = p.dir_name();
        match &p.state {
            Some(s) => {
                run.write(&format!("{dir}/trajectory.csv"), &trajectory_csv(&s.trajectory, nf, nw))?;
                run.write(
                    &format!("{dir}/final.json"),
                    &pretty(&json!({"sigma_c": p.sigma_c, "eta": p.eta, "theta": s.theta, "epsilon": s.epsilon,
                        "converged": s.converged, "iters": s.iter, "loss": s.loss_history.last()})),
                )?;
                if a.plot {
                    let iters: Vec<usize> = s.trajectory.iter().map(|r| r.iter).collect();
                    run.write(&format!("{dir}/loss.svg"), loss_svg(&iters, &s.loss_history, p.eta).as_bytes())?;
                    let eps: Vec<Vec<f64>> = s.trajectory.iter().map(|r| r.epsilon.clone()).collect();
                    run.write(&format!("{dir}/epsilon.svg"), epsilon_svg(&iters, &eps).as_bytes())?;
                }
            }
            None => run.write(
                &format!("{dir}/error.json"),
                &pretty(&json!({"sigma_c": p.sigma_c, "eta": p.eta, "status": p.status, "detail": p.detail})),
            )?,
        }
    }
    run.write("summary.csv", &summary_csv(&points, &theta0))?;
    let trends = sigma_trends(&points, &theta0);
    run.write("trend.json", &pretty(&serde_json::to_value(&trends).expect("trends serialize")))?;
    run.finish(argv, serde_json::to_value(&spec).expect("spec serializes"), a.seed)?;
    for t in &trends {
        if t.pairs > 0 {
            println!(
                "eta {}: spearman(sigma_c, eps*) {:.3}, eps* increasing in {}/{} pairs",
                t.eta, t.spearman_sigma_eps, t.eps_increasing_pairs, t.pairs
            );
        }
    }
    let failed = points.iter().filter(|p| p.state.is_none()).count();
    println!("{} points, {} failed", points.len(), failed);
    if failed == points.len() {
        return Err(Error::Usage("every grid point failed".into()));
    }
    Ok(())
}

fn cmd_operator(a: OperatorArgs, argv: Vec<String>) -> Result<(), Error> {
    let case = load_case(&a.case)?;
    let eps0 = per_farm("--eps0", &a.eps0, case.n_wind)?;
    let cal = read_dataset(&a.cal_data, DatasetRole::Calibration)?;
    let config = a.hyper.config(a.eta, a.seed);
    config.validate()?;
    if a.agents == 0 {
        return Err(usage("--agents", "must be >= 1"));
    }
    let mut run = RunDir::create(&a.out)?;
    run.input_case(&a.case, &case)?;
    run.input_file(&a.cal_data)?;
    let listener = TcpListener::bind(&a.listen).map_err(|e| usage("--listen", e))?;
    log::info!("listening on {}", listener.local_addr().map(|a| a.to_string()).unwrap_or_default());
    let links = accept_agents(&listener, a.agents, a.accept_timeout_ms)?;
    let mut sessions: Vec<Session<_>> = links.into_iter().map(Session::new).collect();
    let options = OperatorOptions { timeout_ms: a.timeout_ms };
    let result =
        pool(a.jobs).install(|| run_operator(&case, &cal, &eps0, &config, &mut sessions, &options, &Parallel));
    let (outcome, failure) = match result {
        Ok(o) => (o, None),
        Err(e) => (e.completed, Some(e.failure)),
    };
    run.write("rounds.csv", &rounds_csv(&outcome.trajectory, case.n_wind))?;
    run.write(
        "final.json",
        &pretty(&json!({
            "epsilon": outcome.epsilon,
            "converged": outcome.converged,
            "iters": outcome.iter,
            "loss": outcome.loss_history.last(),
            "failure": failure.as_ref().map(|f| format!("{f:?}")),
        })),
    )?;
    if a.plot {
        let iters: Vec<usize> = outcome.trajectory.iter().map(|r| r.iter).collect();
        run.write("loss.svg", loss_svg(&iters, &outcome.loss_history, a.eta).as_bytes())?;
        let eps: Vec<Vec<f64>> = outcome.trajectory.iter().map(|r| r.epsilon.clone()).collect();
        run.write("epsilon.svg", epsilon_svg(&iters, &eps).as_bytes())?;
    }
    run.finish(argv, serde_json::to_value(config).expect("config serializes"), a.seed)?;
    match failure {
        None => {
            println!("iters {} converged {} epsilon {:?}", outcome.iter, outcome.converged, outcome.epsilon);
            Ok(())
        }
        Some(f) => Err(Error::Operator(f)),
    }
}

fn cmd_agent(a: AgentArgs, argv: Vec<String>) -> Result<(), Error> {
    let theta0 = parse_theta(&a.theta0)?;
    let farms: Vec<usize> = match &a.farms {
        Some(s) => s
            .split(',')
            .map(|t| t.trim().parse::<usize>().map_err(|_| usage("--farms", format!("`{t}` is not an index"))))
            .collect::<Result<_, _>>()?,
        None => (0..theta0.cols()).collect(),
    };
    if farms.len() != theta0.cols() {
        return Err(usage("--farms", "need one farm per --theta0 column"));
    }
    let mut uq = read_dataset(&a.uq_data, DatasetRole::Uq)?;
    if uq.n_wind() != farms.len() {
        if farms.iter().any(|&f| f >= uq.n_wind()) {
            return Err(usage("--farms", "index beyond the UQ data columns"));
        }
        uq = uq.select_farms(&farms);
    }
    let config = AgentConfig { agent_id: a.agent_id, farms: farms.clone(), lr_theta: a.lr_theta, eta: a.eta };
    let mut agent = Agent::new(config.clone(), theta0.clone()).map_err(|e| Error::Usage(e.detail))?;
    let mut run = RunDir::create(&a.out)?;
    run.input_file(&a.uq_data)?;
    let link = connect(&a.connect, a.connect_timeout_ms)?;
    let mut session = Session::new(link);
    let result = run_agent_session(&mut agent, &uq, &mut session, a.timeout_ms);
    let rounds = agent.theta_history().len();
    run.write(
        "theta.json",
        &pretty(&json!({"farms": farms, "theta": agent.theta(), "rounds": rounds})),
    )?;
    run.finish(argv, serde_json::to_value(&config).expect("config serializes"), 0)?;
    match result {
        Ok(theta) => {
            println!("rounds {rounds} theta {}", format_theta(&theta));
            Ok(())
        }
        Err(e) => Err(Error::Session(e)),
    }
}

fn pretty(v: &serde_json::Value) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("json serializes");
    s.push('\n');
    s.into_bytes()
}
