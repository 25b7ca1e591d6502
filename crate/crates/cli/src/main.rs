use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use spatial_ak::config::{run_detrended, run_extinction, run_tailbound, RunConfig};
use spatial_ak::economy::check_assumptions;
use spatial_ak::report::format_number;
use spatial_ak::simulate::simulate_closed_loop;
use spatial_ak::spectral::EigenSystem;
use spatial_ak::verify::run_suite;
use spatial_ak::{Error, VerificationReport};

const EXIT_CHECK_FAILED: u8 = 1;
const EXIT_PARSE: u8 = 2;
const EXIT_ASSUMPTION: u8 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "spatial-ak",
    version,
    about = "Spatial stochastic AK model: solve, simulate, verify"
)]
struct Cli {
    /// Run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides simulate.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for CSV outputs.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads for path simulation (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Override a config entry, e.g. `--set model.rho=0.2`. Repeatable.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check the standing assumptions.
    Validate,
    /// Eigenvalues and eigenfields of the spatial operator.
    Eig,
    /// Closed-form policy constants and value at the initial state.
    Gamma,
    /// Simulate the optimal closed loop and write per-mode statistics.
    Simulate,
    /// Run the verification suite.
    Verify,
    /// Long-run behaviour checks.
    Asymptotics {
        #[arg(long, value_enum, default_value_t = AsymptoticMode::Detrended)]
        mode: AsymptoticMode,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum AsymptoticMode {
    Detrended,
    Extinction,
    Tailbound,
}

enum Failure {
    Error(Error),
    Io(String),
    Checks,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

type Outcome = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(EXIT_PARSE);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Checks) => ExitCode::from(EXIT_CHECK_FAILED),
        Err(Failure::Io(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CHECK_FAILED)
        }
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config { .. } => EXIT_PARSE,
                Error::Assumption(_) => EXIT_ASSUMPTION,
                _ => EXIT_CHECK_FAILED,
            })
        }
    }
}

fn load_config(cli: &Cli) -> std::result::Result<RunConfig, Failure> {
    let text = match &cli.config {
        Some(path) => fs::read_to_string(path).map_err(|e| {
            Failure::Error(Error::Config {
                line: 0,
                message: format!("cannot read {}: {e}", path.display()),
            })
        })?,
        None => String::new(),
    };
    let cfg = RunConfig::parse_with_overrides(&text, &cli.overrides)?;
    Ok(match cli.seed {
        Some(seed) => cfg.with_seed(seed),
        None => cfg,
    })
}

fn write_output(dir: &Path, name: &str, contents: &str) -> Outcome {
    fs::create_dir_all(dir)
        .map_err(|e| Failure::Io(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, contents)
        .map_err(|e| Failure::Io(format!("cannot write {}: {e}", path.display())))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn finish_report(report: &VerificationReport, dir: &Path, name: &str) -> Outcome {
    print!("{}", report.to_table());
    write_output(dir, name, &report.to_csv())?;
    if report.all_passed() {
        Ok(())
    } else {
        let failed: Vec<&str> = report.failures().map(|c| c.name.as_str()).collect();
        eprintln!("failed checks: {}", failed.join(", "));
        Err(Failure::Checks)
    }
}

fn run(cli: &Cli) -> Outcome {
    let cfg = load_config(cli)?;
    let out = cli.out.as_path();
    match cli.command {
        Command::Validate => validate(&cfg, out),
        Command::Eig => eig(&cfg, out),
        Command::Gamma => gamma(&cfg, out),
        Command::Simulate => simulate(&cfg, out),
        Command::Verify => {
            let problem = cfg.problem()?;
            let report = run_suite(&problem, &cfg.verify)?;
            finish_report(&report, out, "report.csv")
        }
        Command::Asymptotics { mode } => asymptotics(&cfg, mode, out),
    }
}

fn validate(cfg: &RunConfig, out: &Path) -> Outcome {
    let fields = cfg.model_fields()?;
    let es = EigenSystem::from_potential(&fields.tech, cfg.simulate.n_modes)?;
    let report = check_assumptions(&cfg.model, &fields, &es);
    print!("{}", report.to_table());
    write_output(out, "assumptions.csv", &report.to_csv())?;
    if let Some(first) = report.failures().next() {
        return Err(Failure::Error(Error::Assumption(format!(
            "{} violated",
            first.name
        ))));
    }
    Ok(())
}

fn eig(cfg: &RunConfig, out: &Path) -> Outcome {
    let fields = cfg.model_fields()?;
    let es = EigenSystem::from_potential(&fields.tech, cfg.simulate.n_modes)?;
    let mut values = String::from("n,lambda\n");
    for (n, l) in es.lambdas().iter().enumerate() {
        let _ = writeln!(values, "{n},{}", format_number(*l));
        println!("lambda_{n} = {l:.10}");
    }
    let mut modes = String::from("x");
    for n in 0..es.n_modes() {
        let _ = write!(modes, ",e{n}");
    }
    modes.push('\n');
    for (i, x) in es.grid().abscissae().iter().enumerate() {
        modes.push_str(&format_number(*x));
        for e in es.modes() {
            modes.push(',');
            modes.push_str(&format_number(e.values()[i]));
        }
        modes.push('\n');
    }
    write_output(out, "eigenvalues.csv", &values)?;
    write_output(out, "eigenfields.csv", &modes)
}

fn gamma(cfg: &RunConfig, out: &Path) -> Outcome {
    let problem = cfg.problem()?;
    let pc = &problem.pc;
    let w0 = problem.w0()?.to_f64();
    let rows = [
        ("gamma", pc.gamma),
        ("g", pc.g),
        ("g_tilde", pc.g_tilde),
        ("utility_decay", pc.utility_decay),
        ("lambda0", pc.lambda0),
        ("x0", problem.x0()),
        ("w_k0", w0),
    ];
    let mut summary = String::from("quantity,value\n");
    for (name, v) in rows {
        println!("{name:<14} = {v:.10}");
        let _ = writeln!(summary, "{name},{}", format_number(v));
    }
    let mut forcing = String::from("n,lambda,c_n\n");
    for (n, c) in pc.forcing.iter().enumerate() {
        let _ = writeln!(
            forcing,
            "{n},{},{}",
            format_number(problem.es.lambda(n)),
            format_number(*c)
        );
    }
    let grid = problem.es.grid();
    let mut theta = String::from("x,theta\n");
    for (x, v) in grid.abscissae().iter().zip(pc.theta.values()) {
        let _ = writeln!(theta, "{},{}", format_number(*x), format_number(*v));
    }
    write_output(out, "gamma.csv", &summary)?;
    write_output(out, "forcing.csv", &forcing)?;
    write_output(out, "theta.csv", &theta)
}

fn simulate(cfg: &RunConfig, out: &Path) -> Outcome {
    let problem = cfg.problem()?;
    let sim = &cfg.simulate;
    let ens = simulate_closed_loop(
        &problem.k0_modes[..sim.n_modes],
        &problem.es,
        &problem.pc,
        &problem.params,
        sim,
    )?;
    let admissible = ens.count_admissible();
    println!(
        "{} paths, {} admissible, {} stamps, scheme {}",
        ens.paths.len(),
        admissible,
        ens.n_stamps(),
        sim.scheme
    );
    if admissible == 0 {
        return Err(Error::EmptySample.into());
    }
    let mut stats = String::from("t,mode,mean,std\n");
    for (t, row) in ens.times.iter().zip(ens.mode_statistics()) {
        for (m, (mean, std)) in row.into_iter().enumerate() {
            let _ = writeln!(
                stats,
                "{},{m},{},{}",
                format_number(*t),
                format_number(mean),
                format_number(std)
            );
        }
    }
    write_output(out, "ensemble_stats.csv", &stats)
}

fn asymptotics(cfg: &RunConfig, mode: AsymptoticMode, out: &Path) -> Outcome {
    match mode {
        AsymptoticMode::Detrended => {
            let problem = cfg.problem()?;
            let (report, rows) = run_detrended(cfg, &problem)?;
            let mut ks = String::from("mode,statistic,critical,pass\n");
            for r in &rows {
                let _ = writeln!(
                    ks,
                    "{},{},{},{}",
                    r.mode,
                    format_number(r.statistic),
                    format_number(r.critical),
                    r.pass
                );
            }
            write_output(out, "ks.csv", &ks)?;
            finish_report(&report, out, "asymptotics_report.csv")
        }
        AsymptoticMode::Extinction => {
            let problem = cfg.problem()?;
            let (report, rows) = run_extinction(cfg, &problem)?;
            let mut curve = String::from("t,p_hat,se,proxy\n");
            for r in &rows {
                let _ = writeln!(
                    curve,
                    "{},{},{},{}",
                    format_number(r.t),
                    format_number(r.p_hat),
                    format_number(r.std_error),
                    format_number(r.proxy)
                );
            }
            write_output(out, "extinction.csv", &curve)?;
            finish_report(&report, out, "asymptotics_report.csv")
        }
        AsymptoticMode::Tailbound => {
            let (report, rows) = run_tailbound(cfg)?;
            let mut table = String::from("x,empirical,bound,se,pass\n");
            for r in &rows {
                let _ = writeln!(
                    table,
                    "{},{},{},{},{}",
                    format_number(r.x),
                    format_number(r.empirical),
                    format_number(r.bound),
                    format_number(r.std_error),
                    r.pass
                );
            }
            write_output(out, "tailbound.csv", &table)?;
            finish_report(&report, out, "asymptotics_report.csv")
        }
    }
}
