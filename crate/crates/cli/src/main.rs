//! `todsim`: run scenarios, check certificates, audit traces, serve the
//! live gateway.
//!
//! Failures end with a nonzero exit status (2 for usage errors, 1 otherwise)
//! and one stderr line of the form `error kind=<kind> message="<text>"`.

mod lmi_report;

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use todsim_core::network::Arbitration;
use todsim_core::sim::compare::{arbitration_name, comparison_kv};
use todsim_core::sim::{audit_trace, compare_schedulers, compute_metrics, run_scenario, Scenario, Trace};
use todsim_core::stability::StabilityProblem;

const DEFAULT_SERVE_SCENARIO: &str = include_str!("../../../scenarios/free_motion_a.toml");

#[derive(Parser)]
#[command(name = "todsim", version, about = "Teleoperation over a TOD-scheduled network")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario; writes trace.csv, metrics.txt and scenario.toml.
    Simulate {
        scenario: PathBuf,
        /// Output directory [default: out/<scenario name>]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the stability LMIs of a problem (or scenario) file.
    VerifyLmi {
        problem: PathBuf,
        /// Also bisect the largest certified transmission interval h*.
        #[arg(long)]
        bisect: bool,
        #[arg(long, default_value_t = 1.0)]
        h_max: f64,
        #[arg(long, default_value_t = 1e-3)]
        h_step: f64,
    },
    /// Run one scenario under several arbiters side by side.
    Compare {
        scenario: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "tod,rr")]
        schedulers: Vec<String>,
        /// Also write each run's trace and metrics under DIR/<arbiter>/.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Post-hoc TOD, trigger, Zeno and Lyapunov audits of a trace.
    Audit {
        trace: PathBuf,
        /// Scenario that produced the trace [default: scenario.toml next to it]
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Skip the Lyapunov audit.
        #[arg(long)]
        no_lyapunov: bool,
    },
    /// Stream a live simulation over WebSocket (`/ws`, `/healthz`).
    Serve {
        /// Scenario to run [default: the free-motion scheme-A fixture]
        scenario: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        /// Simulated seconds per wall-clock second.
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        #[arg(long, default_value_t = 60.0)]
        publish_hz: f64,
        /// Stiffness of the set_target spring.
        #[arg(long, default_value_t = todsim_gateway::session::DEFAULT_SPRING)]
        spring: f64,
    },
}

#[derive(Debug)]
struct Failure {
    kind: &'static str,
    message: String,
}

impl Failure {
    fn new(kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }
}

impl From<todsim_core::Error> for Failure {
    fn from(e: todsim_core::Error) -> Self {
        use todsim_core::Error as E;
        let kind = match &e {
            E::Parse(_) => "parse",
            E::InvalidScenario(_) | E::TooFewSlaves(_) | E::UnknownForceKind(_) => "invalid_input",
            E::NonFinite { .. } | E::NonMonotoneArrival { .. } => "simulation",
            E::Trace(_) => "trace",
            E::Io(_) => "io",
            _ => "analysis",
        };
        Self::new(kind, e.to_string())
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure::new("io", format!("{}: {e}", path.display()))
}

fn write(path: &Path, contents: &str) -> CliResult {
    fs::write(path, contents).map_err(io_err(path))
}

fn create_dir(path: &Path) -> CliResult {
    fs::create_dir_all(path).map_err(io_err(path))
}

fn load_scenario(path: &Path) -> CliResult<Scenario> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let sc = Scenario::from_toml_str(&text)?;
    sc.validate()?;
    Ok(sc)
}

/// A problem file, or a scenario file whose certificate data is used.
fn load_problem(path: &Path) -> CliResult<StabilityProblem> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    match toml::from_str::<StabilityProblem>(&text) {
        Ok(p) => {
            p.validate()?;
            Ok(p)
        }
        Err(problem_err) => match Scenario::from_toml_str(&text) {
            Ok(sc) => {
                sc.validate()?;
                Ok(sc.stability_problem())
            }
            Err(_) => Err(Failure::new("parse", format!("{}: {problem_err}", path.display()))),
        },
    }
}

fn simulate(scenario: &Path, out: Option<PathBuf>) -> CliResult {
    let sc = load_scenario(scenario)?;
    let out = out.unwrap_or_else(|| Path::new("out").join(&sc.name));
    create_dir(&out)?;
    let trace = run_scenario(&sc)?;
    let metrics = compute_metrics(&sc, &trace);
    trace.save(&out.join("trace.csv"))?;
    write(&out.join("metrics.txt"), &metrics.to_kv())?;
    write(&out.join("scenario.toml"), &sc.to_toml_string())?;
    print!("{}", metrics.to_kv());
    println!("out={}", out.display());
    Ok(())
}

fn parse_arbiter(name: &str) -> CliResult<Arbitration> {
    match name.trim().to_ascii_lowercase().as_str() {
        "tod" => Ok(Arbitration::Tod),
        "rr" => Ok(Arbitration::Rr),
        other => Err(Failure::new("usage", format!("unknown scheduler `{other}` (expected tod or rr)"))),
    }
}

fn compare(scenario: &Path, schedulers: &[String], out: Option<PathBuf>) -> CliResult {
    let sc = load_scenario(scenario)?;
    let modes = schedulers.iter().map(|s| parse_arbiter(s)).collect::<CliResult<Vec<_>>>()?;
    let entries = compare_schedulers(&sc, &modes)?;
    let report = comparison_kv(&entries);
    if let Some(dir) = out {
        for e in &entries {
            let sub = dir.join(arbitration_name(e.arbitration));
            create_dir(&sub)?;
            e.trace.save(&sub.join("trace.csv"))?;
            write(&sub.join("metrics.txt"), &e.metrics.to_kv())?;
        }
        write(&dir.join("comparison.txt"), &report)?;
    }
    print!("{report}");
    Ok(())
}

fn audit(trace_path: &Path, scenario: Option<PathBuf>, no_lyapunov: bool) -> CliResult {
    let scenario_path = scenario.unwrap_or_else(|| {
        trace_path
            .parent()
            .unwrap_or(Path::new("."))
            .join("scenario.toml")
    });
    let sc = load_scenario(&scenario_path)?;
    let trace = Trace::load(trace_path)?;
    if trace.slave_count() != 0 && trace.slave_count() != sc.slave_count() {
        return Err(Failure::new(
            "invalid_input",
            format!(
                "trace has {} slaves but the scenario has {}",
                trace.slave_count(),
                sc.slave_count()
            ),
        ));
    }
    let report = audit_trace(&sc, &trace, !no_lyapunov)?;
    print!("{}", report.to_kv());
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::new("audit_failed", "one or more audits failed; see the key=value report"))
    }
}

fn serve(scenario: Option<PathBuf>, bind: SocketAddr, speed: f64, publish_hz: f64, spring: f64) -> CliResult {
    let sc = match scenario {
        Some(p) => load_scenario(&p)?,
        None => Scenario::from_toml_str(DEFAULT_SERVE_SCENARIO)?,
    };
    if !(spring >= 0.0 && spring.is_finite()) {
        return Err(Failure::new("usage", format!("spring must be non-negative, got {spring}")));
    }
    let config = todsim_gateway::RunnerConfig {
        speed,
        publish_hz,
        ..Default::default()
    };
    config.validate().map_err(|m| Failure::new("usage", m))?;
    let session = todsim_gateway::Session::new(sc)?.with_spring(spring);
    let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::new("io", e.to_string()))?;
    rt.block_on(async {
        let listener = todsim_gateway::bind(bind)
            .await
            .map_err(|e| Failure::new("bind", format!("{bind}: {e}")))?;
        let addr = listener.local_addr().map_err(|e| Failure::new("bind", e.to_string()))?;
        let runner = todsim_gateway::spawn(session, config).map_err(|m| Failure::new("io", m))?;
        println!("listening=http://{addr}");
        println!("ws=ws://{addr}/ws");
        use std::io::Write as _;
        let _ = std::io::stdout().flush();
        todsim_gateway::serve(listener, runner)
            .await
            .map_err(|e| Failure::new("io", e.to_string()))
    })
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Cmd::Simulate { scenario, out } => simulate(&scenario, out),
        Cmd::VerifyLmi {
            problem,
            bisect,
            h_max,
            h_step,
        } => {
            let p = load_problem(&problem)?;
            let bisect = bisect.then_some((h_max, h_step));
            print!("{}", lmi_report::verify(&p, bisect)?);
            Ok(())
        }
        Cmd::Compare {
            scenario,
            schedulers,
            out,
        } => compare(&scenario, &schedulers, out),
        Cmd::Audit {
            trace,
            scenario,
            no_lyapunov,
        } => audit(&trace, scenario, no_lyapunov),
        Cmd::Serve {
            scenario,
            bind,
            speed,
            publish_hz,
            spring,
        } => serve(scenario, bind, speed, publish_hz, spring),
    }
}

fn error_line(kind: &str, message: &str) -> String {
    let flat = message.trim().replace('\\', "\\\\").replace('"', "\\\"").replace('\n', " ");
    format!("error kind={kind} message=\"{flat}\"")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("{}", error_line("usage", first));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", error_line(f.kind, &f.message));
            if f.kind == "usage" {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
