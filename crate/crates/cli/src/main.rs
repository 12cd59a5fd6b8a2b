//! `himcf`: run the flow solver and its geometric checks from JSON configs.

mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use himcf::exact::KoranyiSolution;
use himcf::flow::{
    divergence_check, exact_field, heintze_karcher_check, himcf_solve_problem, minkowski_check, perimeter_growth,
    rescaled_flow, BubbleSet, IdentityCheck, DEFAULT_SCHEDULE,
};
use himcf::geom::hull_probe;
use himcf::grid::{BandSpec, GridField};
use himcf::heis::{koranyi_dist, HPoint};
use himcf::io::write_vtk;
use himcf::plap::{
    max_principle_check, sandwich_check, solve_from, InnerBoundary, InnerConfig, OuterBc, PLapConfig, PLapProblem,
    SolveOptions,
};
use serde::Serialize;
use serde_json::json;

use config::{check_ball, BallConfig, ConfigError, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "himcf", version, about = "Horizontal inverse mean curvature flow in the first Heisenberg group")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for reports and field dumps.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on this value.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed for randomized checks.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Verify the explicit Korányi solution u = (3/4) ln ρ of the flow
    /// equation div0(∇0u/‖∇0u‖) = ‖∇0u‖ at random off-axis points.
    ExactVerify,
    /// Solve the horizontal p-Laplace Dirichlet problem on box \ E0 and
    /// check the gauge barriers and the maximum principle.
    PlapSolve,
    /// Compute the weak flow from a Korányi ball by p-continuation and fit
    /// the exponential H-perimeter growth P_H(E_t) = e^t P_H(E0).
    Himcf,
    /// Check the Minkowski formula 3P_H = ∫H0⟨y′,ν⟩dH², the divergence
    /// identity, the Heintze–Karcher inequality and the bubble-set relations.
    Identities,
    /// Follow the rescaled flow δ_{e^{-t/3}}(E_t) and its conserved
    /// H-perimeter.
    Rescale,
    /// Probe whether a union of Korányi balls is a horizontal minimizing hull.
    HullProbe,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Self::ExactVerify => "exact-verify",
            Self::PlapSolve => "plap-solve",
            Self::Himcf => "himcf",
            Self::Identities => "identities",
            Self::Rescale => "rescale",
            Self::HullProbe => "hull-probe",
        }
    }
}

enum Failure {
    Config(ConfigError),
    Run(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Self::Config(e)
    }
}

impl From<himcf::plap::PLapError> for Failure {
    fn from(e: himcf::plap::PLapError) -> Self {
        Self::Config(e.into())
    }
}

fn run_err(e: impl std::fmt::Display) -> Failure {
    Failure::Run(e.to_string())
}

struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
    base: PathBuf,
    seed: u64,
}

impl Ctx {
    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), Failure> {
        let mut text = serde_json::to_string_pretty(value).map_err(run_err)?;
        text.push('\n');
        fs::write(self.out.join(name), text).map_err(run_err)
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>, Failure> {
        Ok(BufWriter::new(File::create(self.out.join(name)).map_err(run_err)?))
    }

    fn write_vtk(&self, name: &str, field: &GridField, label: &str) -> Result<(), Failure> {
        let mut w = self.create(name)?;
        write_vtk(field, label, &mut w).map_err(run_err)?;
        w.flush().map_err(run_err)
    }
}

const UNIT_LO: [f64; 3] = [-1.6, -1.6, -0.64];
const UNIT_HI: [f64; 3] = [1.6, 1.6, 0.64];
const SPHERE_LO: [f64; 3] = [-1.8, -1.8, -0.75];
const SPHERE_HI: [f64; 3] = [1.8, 1.8, 0.75];

fn exact_verify(ctx: &Ctx) -> Result<bool, Failure> {
    let samples = ctx.cfg.samples.unwrap_or(10_000);
    if samples == 0 {
        return Err(ConfigError::new("samples", "must be positive").into());
    }
    let rep = KoranyiSolution.residual_selftest(samples, ctx.seed);
    ctx.write_json("exact_verify.json", &rep)?;
    Ok(rep.pass)
}

fn plap_solve(ctx: &Ctx) -> Result<bool, Failure> {
    let (prob, opts) = match &ctx.cfg.plap {
        Some(p) => (p.problem(&ctx.base)?, p.options()?),
        None => {
            let spec = ctx.cfg.grid_or(UNIT_LO, UNIT_HI, 32)?;
            let cfg = PLapConfig {
                p: 1.5,
                eps: None,
                tol: ctx.cfg.tol_or(SolveOptions::default().tol)?,
                max_iters: SolveOptions::default().max_iters,
                grid: spec,
                inner: InnerConfig::KoranyiBall { center: HPoint::IDENTITY, radius: 1.0 },
                outer: OuterBc::BarrierMatched { y0: HPoint::IDENTITY, s: 1.0, clamp_beyond: None },
            };
            (cfg.problem(&ctx.base)?, cfg.options()?)
        }
    };
    let sol = solve_from(&prob, None, opts).map_err(run_err)?;
    let mp = max_principle_check(&sol, 1e-9);
    let sandwich = match (&prob.inner, prob.outer) {
        (InnerBoundary::KoranyiBall { center, radius }, OuterBc::BarrierMatched { y0, s, .. }) => {
            sandwich_check(&sol, (*center, *radius), (y0, s)).ok()
        }
        _ => None,
    };
    ctx.write_vtk("u_p.vtk", &sol.u_p, "u_p")?;
    ctx.write_vtk("w.vtk", &sol.w, "w")?;
    let pass = sol.converged && mp.holds;
    ctx.write_json(
        "plap_solve.json",
        &json!({ "solution": sol.meta(), "max_principle": mp, "sandwich": sandwich, "pass": pass }),
    )?;
    Ok(pass)
}

fn himcf_run(ctx: &Ctx) -> Result<bool, Failure> {
    let ball = ctx.cfg.initial.unwrap_or(BallConfig { center: HPoint::IDENTITY, radius: 1.0 });
    check_ball(&ball, "initial")?;
    let spec = ctx.cfg.grid_or(UNIT_LO, UNIT_HI, 64)?;
    let schedule = ctx.cfg.schedule.clone().unwrap_or_else(|| DEFAULT_SCHEDULE.to_vec());
    let tol = ctx.cfg.tol_or(SolveOptions::default().tol)?;
    let t_grid = ctx.cfg.t_grid_or_default()?;
    let prob = PLapProblem::koranyi_ball(spec, ball.center, ball.radius, schedule.first().copied().unwrap_or(2.0));
    prob.validate().map_err(ConfigError::from)?;
    let sol = match himcf_solve_problem(&prob, &schedule, SolveOptions { tol, ..SolveOptions::default() }) {
        Ok(s) => s,
        Err(himcf::flow::FlowError::Schedule(m)) => return Err(ConfigError::new("schedule", m).into()),
        Err(e) => return Err(run_err(e)),
    };
    ctx.write_vtk("u.vtk", &sol.u, "u")?;
    let growth = perimeter_growth(&sol.u, &t_grid).map_err(run_err)?;
    growth.report.write_csv(ctx.create("flow.csv")?).map_err(run_err)?;
    let pass = sol.converged && (growth.slope - 1.0).abs() <= 0.08 && !growth.truncated;
    ctx.write_json(
        "himcf.json",
        &json!({
            "slope": growth.slope,
            "intercept": growth.intercept,
            "r2": growth.r2,
            "truncated": growth.truncated,
            "converged": sol.converged,
            "p_schedule": sol.p_schedule,
            "per_p_residuals": sol.per_p_residuals,
            "stages": sol.metadata(),
            "pass": pass,
        }),
    )?;
    Ok(pass)
}

fn identities(ctx: &Ctx) -> Result<bool, Failure> {
    let spec = ctx.cfg.grid_or(SPHERE_LO, SPHERE_HI, 64)?;
    let t = ctx.cfg.level()?;
    let u = exact_field(spec);
    let band = BandSpec::auto(&u, t).map_err(run_err)?;
    let mk = minkowski_check(&u, t, &band).map_err(run_err)?;
    let mut checks = vec![IdentityCheck { pass: mk.rel_err <= 0.02 && mk.reliable, ..IdentityCheck::new("minkowski", mk.lhs, mk.rhs, 0.02) }];
    checks.push(divergence_check(&u, t, &band).map_err(run_err)?);
    let hk = heintze_karcher_check(&u, t, &band).map_err(run_err)?;
    let mut hk_check = IdentityCheck::new("heintze_karcher", hk.lhs, hk.rhs, f64::INFINITY);
    hk_check.pass = hk.margin >= -0.01 * hk.rhs;
    checks.push(hk_check);
    checks.extend(BubbleSet { radius: (t / 3.0).exp() }.identities());
    ctx.write_json("identities.json", &checks)?;
    Ok(checks.iter().all(|c| c.pass))
}

fn rescale(ctx: &Ctx) -> Result<bool, Failure> {
    let spec = ctx.cfg.grid_or(UNIT_LO, UNIT_HI, 64)?;
    let t_grid = ctx.cfg.t_grid_or_default()?;
    let u = exact_field(spec);
    let rep = rescaled_flow(&u, &t_grid).map_err(run_err)?;
    rep.flow_report().write_csv(ctx.create("rescaled.csv")?).map_err(run_err)?;
    let pass = rep.max_drift <= 0.02;
    ctx.write_json("rescale.json", &json!({ "report": rep, "pass": pass }))?;
    Ok(pass)
}

fn hull(ctx: &Ctx) -> Result<bool, Failure> {
    let spec = ctx.cfg.grid_or([-2.4, -1.6, -0.8], [2.4, 1.6, 0.8], 64)?;
    let balls = ctx.cfg.balls.clone().unwrap_or_else(|| {
        vec![
            BallConfig { center: HPoint::new(-0.8, 0.0, 0.0), radius: 0.6 },
            BallConfig { center: HPoint::new(0.8, 0.0, 0.0), radius: 0.6 },
        ]
    });
    if balls.is_empty() {
        return Err(ConfigError::new("balls", "must not be empty").into());
    }
    for (k, b) in balls.iter().enumerate() {
        check_ball(b, &format!("balls[{k}]"))?;
    }
    let probes = ctx.cfg.probes.unwrap_or(16);
    if probes == 0 {
        return Err(ConfigError::new("probes", "must be positive").into());
    }
    let t = ctx.cfg.level()?;
    let e = GridField::from_fn(spec, |x| {
        t + balls.iter().map(|b| koranyi_dist(x, b.center) - b.radius).fold(f64::INFINITY, f64::min)
    })
    .map_err(run_err)?;
    let rep = hull_probe(&e, t, probes, ctx.seed).map_err(run_err)?;
    ctx.write_json("hull_probe.json", &rep)?;
    Ok(true)
}

fn execute(cli: &Cli) -> Result<bool, Failure> {
    let (cfg, base) = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| ConfigError::new("config", format!("{}: {e}", path.display())))?;
            let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
            (RunConfig::from_json(&text)?, base)
        }
        None => (RunConfig::default(), PathBuf::new()),
    };
    if let Some(c) = &cfg.command {
        if c != cli.command.name() {
            return Err(ConfigError::new("command", format!("config is for `{c}`, not `{}`", cli.command.name())).into());
        }
    }
    let threads = cli.threads.or(cfg.threads);
    if let Some(n) = threads {
        if n == 0 {
            return Err(ConfigError::new("threads", "must be positive").into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(run_err)?;
    }
    let out = cli.out.clone().or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&out).map_err(run_err)?;
    let seed = cli.seed.or(cfg.seed).unwrap_or(0);
    let ctx = Ctx { cfg, out, base, seed };
    match cli.command {
        Command::ExactVerify => exact_verify(&ctx),
        Command::PlapSolve => plap_solve(&ctx),
        Command::Himcf => himcf_run(&ctx),
        Command::Identities => identities(&ctx),
        Command::Rescale => rescale(&ctx),
        Command::HullProbe => hull(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("{}: checks failed; see the JSON report", cli.command.name());
            ExitCode::from(1)
        }
        Err(Failure::Config(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
