//! `sparselq` command-line front end.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use nalgebra::DVector;

use sparselq::analysis::{certify, feasibility, simulate_impulse, Status};
use sparselq::batch::{accept_capped, solve, sweep_gammas, Execution, SolveSettings};
use sparselq::io::{self, IoError, ProblemFile, SolutionFile};
use sparselq::l0::solve_l0;
use sparselq::model::{lift_plant, validate_plant, LiftedProblem};
use sparselq::outer::Relaxation;
use sparselq::penalties::PenaltyKind;
use sparselq::SolverError;

const EXIT_INPUT: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;
const EXIT_CERT_FAILED: u8 = 4;

/// Cone violations accepted by `verify`: `max(1e−4, 100·ε_pri)`. Subproblems
/// are solved to a tolerance tied to the outer residual, so the final iterate
/// is only as feasible as the stopping threshold allows.
const VERIFY_FEAS_FLOOR: f64 = 1e-4;
const VERIFY_FEAS_FACTOR: f64 = 100.0;

#[derive(Parser, Debug)]
#[command(
    name = "sparselq",
    version,
    about = "Sparse static state-feedback synthesis for LQ problems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve one problem and write solution.json and trace.csv.
    Solve(SolveArgs),
    /// Solve for several values of gamma and write sweep.csv.
    Sweep(SweepArgs),
    /// Impulse response of a solved closed loop, written to trajectory.csv.
    Simulate(SimulateArgs),
    /// Re-certify a solution file; exit 0 iff every check passes.
    Verify(VerifyArgs),
}

#[derive(Args, Debug, Clone)]
struct SolverFlags {
    #[arg(long)]
    problem: PathBuf,
    /// Overrides the file's relaxation.
    #[arg(long, value_parser = parse_relaxation)]
    relaxation: Option<Relaxation>,
    #[arg(long = "tol-eps1")]
    tol_eps1: Option<f64>,
    #[arg(long = "tol-eps2")]
    tol_eps2: Option<f64>,
    #[arg(long = "max-outer")]
    max_outer: Option<usize>,
    /// Proximal anchor weight of the l0 passes.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    sigma0: Option<f64>,
    #[arg(long = "sigma-decay")]
    sigma_decay: Option<f64>,
    /// Recorded in the output; the solvers themselves are deterministic.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Run sequentially even when built with the parallel feature.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args, Debug)]
struct SolveArgs {
    #[command(flatten)]
    flags: SolverFlags,
    #[arg(long)]
    gamma: Option<f64>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    flags: SolverFlags,
    #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
    gammas: Vec<f64>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// A solution.json written by `solve`.
    solution: PathBuf,
    #[arg(long, default_value_t = 10.0)]
    horizon: f64,
    #[arg(long, default_value_t = 1e-2)]
    dt: f64,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    solution: PathBuf,
}

fn parse_relaxation(s: &str) -> std::result::Result<Relaxation, String> {
    s.parse().map_err(|_| format!("expected l1, pq or l0, got {s:?}"))
}

/// Failures mapped to exit codes.
#[derive(Debug)]
enum Failure {
    Input(anyhow::Error),
    Other(anyhow::Error),
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        match e {
            IoError::Io { .. } => Failure::Other(e.into()),
            _ => Failure::Input(e.into()),
        }
    }
}

impl From<SolverError> for Failure {
    fn from(e: SolverError) -> Self {
        match e {
            SolverError::DimensionMismatch(_)
            | SolverError::AssumptionViolated(_)
            | SolverError::ForcedZeroOutOfRange { .. }
            | SolverError::InvalidPqParams
            | SolverError::NonPositiveSigma(_)
            | SolverError::NonPositiveWeights
            | SolverError::NonPositiveRho(_)
            | SolverError::TooLarge(_)
            | SolverError::InvalidInput(_) => Failure::Input(e.into()),
            _ => Failure::Other(e.into()),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

fn exit_for(status: Status) -> u8 {
    match status {
        Status::Converged => 0,
        Status::NotConverged => EXIT_NOT_CONVERGED,
        Status::CertificationFailed => EXIT_CERT_FAILED,
    }
}

struct Prepared {
    file: ProblemFile,
    lifted: LiftedProblem,
    relaxation: Relaxation,
    settings: SolveSettings,
    exec: Execution,
}

fn prepare(flags: &SolverFlags, gamma: Option<f64>) -> std::result::Result<Prepared, Failure> {
    let mut file = io::parse_problem(&flags.problem)?;
    if let Some(r) = flags.relaxation {
        file.relaxation = r.to_string();
    }
    if let Some(g) = gamma {
        file.gamma = g;
    }
    if flags.seed.is_some() {
        file.seed = flags.seed;
    }
    let solver = file.solver.get_or_insert_with(Default::default);
    let overrides = [
        (&mut solver.eps1, flags.tol_eps1),
        (&mut solver.eps2, flags.tol_eps2),
        (&mut solver.lambda, flags.lambda),
        (&mut solver.sigma0, flags.sigma0),
        (&mut solver.sigma_decay, flags.sigma_decay),
    ];
    for (slot, v) in overrides {
        if v.is_some() {
            *slot = v;
        }
    }
    if flags.max_outer.is_some() {
        solver.max_outer = flags.max_outer;
    }
    file.validate()?;
    let relaxation = file.relaxation()?;
    let settings = SolveSettings {
        outer: file.outer_options(),
        l0: file.l0_options(),
    };
    if relaxation == Relaxation::L0 {
        settings.l0.validate()?;
    }
    let lifted = lift_plant(validate_plant(file.plant()?)?, &file.forced_zeros())?;
    let exec = if flags.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    };
    Ok(Prepared {
        file,
        lifted,
        relaxation,
        settings,
        exec,
    })
}

fn penalty_kind(r: Relaxation) -> PenaltyKind {
    match r {
        Relaxation::Pq => PenaltyKind::PiecewiseQuadratic,
        _ => PenaltyKind::WeightedL1,
    }
}

fn out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn run_solve(args: &SolveArgs) -> std::result::Result<u8, Failure> {
    let prep = prepare(&args.flags, args.gamma)?;
    let penalty = prep.file.penalty(penalty_kind(prep.relaxation), prep.file.gamma)?;
    let dir = &args.flags.out;
    out_dir(dir)?;
    let (sol, stages) = if prep.relaxation == Relaxation::L0 {
        match solve_l0(&prep.lifted, penalty.gamma, &prep.settings.l0) {
            Ok(o) => (o.solution, Some(o.stages)),
            Err(SolverError::NotConverged(s)) => (*s, None),
            Err(e) => return Err(e.into()),
        }
    } else {
        (
            accept_capped(solve(&prep.lifted, prep.relaxation, &penalty, &prep.settings))?,
            None,
        )
    };
    let record = SolutionFile::new(prep.file.clone(), prep.relaxation, &sol);
    io::write_atomic(&dir.join("solution.json"), record.to_json().as_bytes())?;
    io::write_atomic(&dir.join("trace.csv"), &io::trace_csv(&sol.trace)?)?;
    if let Some(st) = stages {
        io::write_atomic(&dir.join("stages.csv"), &io::stage_csv(&st)?)?;
    }
    info!(
        "status {} after {} iterations, J_upper {:.6}, {} zeros",
        sol.status.as_str(),
        sol.iterations,
        sol.j_upper,
        sol.n_zeros
    );
    println!("{}", sol.status.as_str());
    Ok(exit_for(sol.status))
}

fn run_sweep(args: &SweepArgs) -> std::result::Result<u8, Failure> {
    let prep = prepare(&args.flags, None)?;
    for &g in &args.gammas {
        if !(g >= 0.0 && g.is_finite()) {
            return Err(Failure::Input(anyhow::anyhow!(
                "gamma must be finite and >= 0, got {g}"
            )));
        }
    }
    let base = prep.file.penalty(penalty_kind(prep.relaxation), prep.file.gamma)?;
    let dir = &args.flags.out;
    out_dir(dir)?;
    let rows = sweep_gammas(
        &prep.lifted,
        prep.relaxation,
        &base,
        &args.gammas,
        &prep.settings,
        prep.exec,
    )
    .into_iter()
    .collect::<std::result::Result<Vec<_>, _>>()?;
    io::write_atomic(&dir.join("sweep.csv"), &io::sweep_csv(&rows)?)?;
    let mut code = 0;
    for r in &rows {
        let c = exit_for(r.solution.status);
        if c != 0 {
            warn!("gamma {}: {}", r.gamma, r.solution.status.as_str());
        }
        code = code.max(c);
    }
    Ok(code)
}

fn run_simulate(args: &SimulateArgs) -> std::result::Result<u8, Failure> {
    if !(args.dt > 0.0 && args.horizon > 0.0) {
        return Err(Failure::Input(anyhow::anyhow!("dt and horizon must be positive")));
    }
    let sf = io::read_solution(&args.solution)?;
    let plant = sf.problem.plant()?;
    let k = sf.gain()?;
    let traj = simulate_impulse(&plant, &k, args.horizon, args.dt)?;
    out_dir(&args.out)?;
    io::write_atomic(&args.out.join("trajectory.csv"), &io::trajectory_csv(&traj)?)?;
    Ok(0)
}

fn check(name: &str, ok: bool, detail: String) -> bool {
    println!("{} {name}: {detail}", if ok { "ok  " } else { "FAIL" });
    ok
}

fn run_verify(args: &VerifyArgs) -> std::result::Result<u8, Failure> {
    let sf = io::read_solution(&args.solution)?;
    let plant = sf.problem.plant()?;
    let lifted = lift_plant(validate_plant(plant.clone())?, &sf.problem.forced_zeros())?;
    let k = sf.gain()?;
    let w = sf.w_matrix()?;
    let p = sf.p_matrix()?;
    let mut ok = true;

    ok &= check("status", sf.status()? == Status::Converged, sf.status.clone());

    let j_upper = lifted.cost(&w);
    ok &= check(
        "objective",
        (j_upper - sf.j_upper).abs() <= 1e-9 * j_upper.abs().max(1.0),
        format!("<R,W> = {j_upper:.6} (recorded {:.6})", sf.j_upper),
    );

    let cert = certify(&plant, &k, j_upper)?;
    let worst = cert.margins.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    ok &= check("stability", cert.stable(), format!("max spectral abscissa {worst:.4e}"));
    ok &= check(
        "gramian bound",
        cert.bound_holds(),
        format!("max J_vertex {:.6} vs <R,W> {j_upper:.6}", cert.j_vertex_max()),
    );

    let feas = feasibility(&lifted, &w, &lifted.gain_block(&w))?;
    let cone = feas.min_eig_psi.iter().copied().fold(feas.min_eig_w, f64::min);
    let tol = VERIFY_FEAS_FLOOR.max(VERIFY_FEAS_FACTOR * sf.eps_pri);
    ok &= check(
        "feasibility",
        cone >= -tol && feas.offdiag_w1 <= tol,
        format!(
            "min eigenvalue {cone:.3e}, off-diagonal W1 {:.3e} (tolerance {tol:.1e})",
            feas.offdiag_w1
        ),
    );

    // Coupling residual of the stored pair, against the recorded threshold.
    let vec_w = DVector::from_column_slice(w.as_slice());
    let vec_p = DVector::from_column_slice(p.as_slice());
    let r = (lifted.op.apply_a(&vec_w) + lifted.op.apply_b(&vec_p)).norm();
    ok &= check(
        "primal residual",
        r <= sf.eps_pri * (1.0 + 1e-9),
        format!("{r:.3e} (threshold {:.3e})", sf.eps_pri),
    );
    // Multipliers are not stored, so the dual side is checked as recorded.
    ok &= check(
        "kkt residuals",
        sf.primal_res <= sf.eps_pri * (1.0 + 1e-9) && sf.dual_res <= sf.eps_dua * (1.0 + 1e-9),
        format!(
            "primal {:.3e} <= {:.3e}, dual {:.3e} <= {:.3e}",
            sf.primal_res, sf.eps_pri, sf.dual_res, sf.eps_dua
        ),
    );

    // Zeros of P must be zeros of K, and forced zeros must hold exactly.
    let mut zeros_ok = true;
    for i in 0..p.nrows() {
        for j in 0..p.ncols() {
            if p[(i, j)] == 0.0 && k[(i, j)] != 0.0 {
                zeros_ok = false;
            }
        }
    }
    for &(i, j) in &lifted.forced_zeros {
        zeros_ok &= k[(i, j)] == 0.0;
    }
    ok &= check("zero pattern", zeros_ok, format!("{} zeros", sf.n_zeros));
    Ok(if ok { 0 } else { EXIT_CERT_FAILED })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SPARSELQ_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_INPUT } else { 0 });
        }
    };
    let res = match &cli.command {
        Command::Solve(a) => run_solve(a),
        Command::Sweep(a) => run_sweep(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Verify(a) => run_verify(a),
    };
    match res {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_INPUT)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
