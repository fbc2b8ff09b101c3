use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use kernel_lmi::cdds::{simulate, InitialCondition, WindowVerdict};
use kernel_lmi::config::RunConfig;
use kernel_lmi::gram::{gram_matrix, moment, orthonormalizer};
use kernel_lmi::inequality::suite::{run_suite, SuiteKind};
use kernel_lmi::inequality::{
    corollary2_bound, free_matrix_bound, gram_bound, lhs_energy, optimal_completion, w_matrix, FreeMatrixCert,
    InequalityReport, DEFAULT_TOL,
};
use kernel_lmi::matalg::{Matrix, Vector};
use kernel_lmi::stability::{
    build_condition, build_structure, delay_gram, solve_with, BarrierBackend, Condition, Status, TransformChoice,
};
use kernel_lmi::sweep::{fmt12, parse_grid, run_sweep, SweepSpec};
use kernel_lmi::{Error, Result};

#[derive(Parser)]
#[command(name = "kernel-lmi", version, about = "Gram-matrix integral inequalities and delay-margin LMI tests")]
struct Cli {
    /// TOML system configuration; the bundled example is used if omitted.
    #[arg(long, global = true)]
    system: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum BoundArg {
    Gram,
    Free,
    Corollary2,
}

#[derive(Clone, Copy, ValueEnum)]
enum InitialArg {
    Zero,
    Constant,
    Random,
}

#[derive(Subcommand)]
enum Command {
    /// Print the weighted Gram matrix, its inverse and the orthonormalizer.
    Gram {
        /// Use the delay window [-r, 0] instead of the configured domain.
        #[arg(long)]
        r: Option<f64>,
    },
    /// Compare the energy of the configured signal with a lower bound.
    Bound {
        #[arg(long, value_enum, default_value = "gram")]
        kind: BoundArg,
        #[arg(long, default_value_t = 1)]
        rho: usize,
    },
    /// Run randomized inequality suites.
    Verify {
        /// Suite name or "all".
        #[arg(long, default_value = "all")]
        suite: String,
        #[arg(long, default_value_t = 1000)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        rho: usize,
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
        /// Write every record as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve one stability condition at one delay.
    Stability {
        #[arg(long)]
        r: Option<f64>,
        #[arg(long, default_value = "a")]
        condition: Condition,
        /// "identity" or a file of whitespace-separated rows.
        #[arg(long = "G")]
        g: Option<String>,
        /// Write the assembled problem as JSON.
        #[arg(long)]
        dump_problem: Option<PathBuf>,
    },
    /// Sweep the delay over a grid and report feasible intervals.
    Sweep {
        #[arg(long)]
        condition: Option<Condition>,
        #[arg(long = "G")]
        g: Option<String>,
        /// start:step:stop
        #[arg(long)]
        grid: Option<String>,
        #[arg(long)]
        jobs: Option<usize>,
        /// CSV path; a JSON summary is written next to it.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Bisect interval endpoints to 1e-4 beyond the grid.
        #[arg(long)]
        refine: bool,
    },
    /// Simulate the system from an initial condition.
    Simulate {
        #[arg(long)]
        r: Option<f64>,
        /// Defaults to 40 r.
        #[arg(long)]
        t_end: Option<f64>,
        #[arg(long)]
        steps_per_delay: Option<usize>,
        #[arg(long, value_enum, default_value = "random")]
        initial: InitialArg,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(system: Option<&Path>) -> Result<RunConfig> {
    match system {
        Some(p) => RunConfig::load(p).map_err(|e| Error::Config(format!("{}: {e}", p.display()))),
        None => Ok(RunConfig::paper51()),
    }
}

fn print_matrix(name: &str, m: &Matrix) {
    println!("{name} =");
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:>19.11e}")).collect();
        println!("  {}", cells.join(" "));
    }
}

fn read_transform(arg: Option<&str>, cfg: &RunConfig) -> Result<TransformChoice> {
    match arg {
        None => cfg.transform(),
        Some("identity") => Ok(TransformChoice::identity(cfg.transform()?.d())),
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            let rows: Vec<Vec<f64>> = text
                .lines()
                .map(|l| l.split('#').next().unwrap_or(""))
                .filter(|l| !l.trim().is_empty())
                .map(|l| {
                    l.split(|c: char| c.is_whitespace() || c == ',')
                        .filter(|t| !t.is_empty())
                        .map(|t| t.parse::<f64>().map_err(|_| Error::Config(format!("{path}: bad number {t:?}"))))
                        .collect()
                })
                .collect::<Result<_>>()?;
            let d = rows.len();
            if d == 0 || rows.iter().any(|r| r.len() != d) {
                return Err(Error::Config(format!("{path}: G must be a square matrix")));
            }
            TransformChoice::new(Matrix::from_fn(d, d, |i, j| rows[i][j]))
        }
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    let cfg = load(cli.system.as_deref())?;
    let quad = cfg.quadrature;
    match cli.command {
        Command::Gram { r } => {
            let domain = match r {
                Some(r) => kernel_lmi::basis::Interval::delay_window(r)?,
                None => cfg.domain()?,
            };
            let basis = cfg.basis_on(domain)?;
            let g = gram_matrix(&basis, &cfg.weight(), &domain, &quad)?;
            println!("domain = [{}, {}]", fmt12(domain.a), fmt12(domain.b));
            print_matrix("gram", g.gram.as_matrix());
            print_matrix("gram_inv", g.gram_inv.as_matrix());
            println!("cond = {}", fmt12(g.cond));
            print_matrix("orthonormalizer", &orthonormalizer(&g)?);
            Ok(true)
        }
        Command::Bound { kind, rho } => {
            let (x, u) = cfg
                .signal()?
                .ok_or_else(|| Error::Config("bound needs a [signal] section".into()))?;
            let domain = cfg.domain()?;
            let basis = cfg.basis_on(domain)?;
            let w = cfg.weight();
            let g = gram_matrix(&basis, &w, &domain, &quad)?;
            let n = x.n;
            let theta = moment(&basis, &w, &domain, n, |t| x.eval(t), &quad)?;
            let lhs = lhs_energy(&x, &u, &w, &domain, &quad)?;
            let bound = match kind {
                BoundArg::Gram => gram_bound(&theta, &g, &u)?,
                BoundArg::Free | BoundArg::Corollary2 => {
                    if rho == 0 {
                        return Err(Error::InvalidArgument("rho must be positive".into()));
                    }
                    // optimal completion for the rank-one Υ = ϑzᵀ/‖z‖², z = 1
                    let z = Vector::from_element(rho * n, 1.0);
                    let ups = &theta.theta * z.transpose() / z.dot(&z);
                    let comp = optimal_completion(&g, &u, &ups)?;
                    if matches!(kind, BoundArg::Free) {
                        let cert = FreeMatrixCert::new(rho, g.d(), comp.x, comp.y, z, Some(ups))?;
                        let wm = w_matrix(&cert.y, &basis, &w, &domain, rho, n, &quad)?;
                        free_matrix_bound(&theta, &cert, &wm, &u)?
                    } else {
                        corollary2_bound(&theta, &ups, &z, &comp.x_hat, &g, &u)?
                    }
                }
            };
            let rep = InequalityReport::new(lhs, bound, DEFAULT_TOL);
            println!("lhs   = {}", fmt12(rep.lhs));
            println!("bound = {}", fmt12(rep.bound));
            println!("gap   = {}", fmt12(rep.gap));
            println!("{}", if rep.pass { "pass" } else { "FAIL" });
            Ok(rep.pass)
        }
        Command::Verify { suite, count, seed, rho, tol, out } => {
            let kinds: Vec<SuiteKind> = if suite == "all" {
                SuiteKind::ALL.to_vec()
            } else {
                vec![SuiteKind::parse(&suite).ok_or_else(|| {
                    let names: Vec<&str> = SuiteKind::ALL.iter().map(|k| k.name()).collect();
                    Error::InvalidArgument(format!("unknown suite {suite:?}; one of {}", names.join(", ")))
                })?]
            };
            let mut all = Vec::new();
            let mut ok = true;
            for k in kinds {
                let recs = run_suite(k, count, seed, rho, tol, &quad)?;
                let fails: Vec<u64> = recs.iter().filter(|r| !r.pass).map(|r| r.seed).collect();
                let worst = recs.iter().map(|r| r.gap).fold(f64::INFINITY, f64::min);
                println!(
                    "{:<14} {} instances, {} violations, min gap {}",
                    k.name(),
                    recs.len(),
                    fails.len(),
                    fmt12(worst)
                );
                if !fails.is_empty() {
                    println!("  failing seeds: {fails:?}");
                    ok = false;
                }
                all.extend(recs);
            }
            if let Some(p) = out {
                write(&p, &serde_json::to_string_pretty(&all)?)?;
            }
            Ok(ok)
        }
        Command::Stability { r, condition, g, dump_problem } => {
            let r = r.unwrap_or(cfg.system.r);
            let m = cfg.model(r)?;
            if let Some(v) = kernel_lmi::cdds::validate_model(&m).first() {
                return Err(Error::InvalidArgument(format!("model invalid at r = {r}: {v}")));
            }
            let tr = read_transform(g.as_deref(), &cfg)?;
            let gram = delay_gram(&m, &quad)?;
            let st = build_structure(&m, &tr, &gram)?;
            let p = build_condition(&st, condition)?.with_eps_rel(cfg.solver.eps_rel);
            if let Some(path) = dump_problem {
                write(&path, &p.to_json()?)?;
            }
            let res = solve_with(&BarrierBackend::default(), &p)?;
            println!("r = {}", fmt12(r));
            println!("condition = {condition}");
            println!("variables = {}", p.variable_count());
            for (c, mg) in p.constraints.iter().zip(&res.margins) {
                println!("margin[{}] = {}", c.name, fmt12(*mg));
            }
            if !res.note.is_empty() {
                println!("note = {}", res.note);
            }
            println!("{}", res.status);
            Ok(res.status == Status::Feasible)
        }
        Command::Sweep { condition, g, grid, jobs, out, refine } => {
            let sw = cfg.sweep.clone();
            let grid = grid
                .or_else(|| sw.as_ref().and_then(|s| s.grid.clone()))
                .unwrap_or_else(|| "0.001:0.001:2.5".into());
            let spec = SweepSpec {
                r_values: parse_grid(&grid)?,
                condition: condition.or(sw.as_ref().and_then(|s| s.condition)).unwrap_or(Condition::A),
                g: read_transform(g.as_deref(), &cfg)?,
                jobs: jobs
                    .or(sw.as_ref().and_then(|s| s.jobs))
                    .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())),
                eps_rel: cfg.solver.eps_rel,
                refine,
            };
            let template = cfg.model(cfg.system.r)?;
            let rep = run_sweep(&template, &spec, &quad, &BarrierBackend::default())?;
            let fmt_iv = |iv: &[[f64; 2]]| {
                iv.iter()
                    .map(|[a, b]| format!("[{}, {}]", fmt12(*a), fmt12(*b)))
                    .collect::<Vec<_>>()
                    .join(", ")
            };
            println!("condition = {}", rep.condition);
            println!("variables = {}", rep.variable_count);
            println!(
                "feasible = {}, infeasible = {}, inconclusive = {}",
                rep.count(Status::Feasible),
                rep.count(Status::Infeasible),
                rep.count(Status::Inconclusive)
            );
            println!("intervals = {}", fmt_iv(&rep.intervals));
            if let Some(refined) = &rep.refined_intervals {
                println!("refined = {}", fmt_iv(refined));
            }
            if !rep.inconclusive.is_empty() {
                let rs: Vec<String> = rep.inconclusive.iter().map(|r| fmt12(*r)).collect();
                println!("inconclusive at r = {}", rs.join(", "));
            }
            println!("wall_time = {:.3} s", rep.wall_time);
            if let Some(p) = out {
                write(&p.with_extension("csv"), &rep.to_csv())?;
                write(&p.with_extension("json"), &rep.summary_json()?)?;
            }
            Ok(true)
        }
        Command::Simulate { r, t_end, steps_per_delay, initial, seed, out } => {
            let sim = cfg.simulate.clone();
            let r = r.unwrap_or(cfg.system.r);
            let m = cfg.model(r)?;
            let k = steps_per_delay
                .or(sim.as_ref().and_then(|s| s.steps_per_delay))
                .unwrap_or(64);
            let t_end = t_end.or(sim.as_ref().and_then(|s| s.t_end)).unwrap_or(40.0 * r);
            let seed = seed.or(sim.as_ref().and_then(|s| s.seed)).unwrap_or(1);
            let ic = match initial {
                InitialArg::Zero => InitialCondition::zero(m.n, m.nu),
                InitialArg::Constant => {
                    InitialCondition::constant(Vector::from_element(m.n, 1.0), Vector::from_element(m.nu, 1.0))
                }
                InitialArg::Random => InitialCondition::random(seed, m.n, m.nu, r),
            };
            let tr = simulate(&m, &ic, t_end, r / k as f64)?;
            if let Some(p) = out {
                write(&p, &tr.to_csv())?;
            }
            println!("r = {}", fmt12(r));
            println!("t_end = {}", fmt12(*tr.times.last().expect("trace is never empty")));
            println!("decay_ratio = {}", fmt12(tr.decay_ratio()));
            println!(
                "{}",
                match tr.verdict(1e-3) {
                    WindowVerdict::DecayedInWindow => "decayed in window",
                    WindowVerdict::DivergedInWindow => "diverged in window",
                    WindowVerdict::Undetermined => "undetermined in window",
                }
            );
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
