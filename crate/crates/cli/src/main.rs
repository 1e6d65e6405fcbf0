//! Command-line entry point: batch runs, offline certification, schedule
//! figures and the live service.

use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pitchfork_assist::certificates::POrder;
use pitchfork_assist::harness::{
    builtin, certify_log, emit_outputs, plot_schedule, read_log_file, run_scenario, write_violations, CertificateFile,
    CertifyOrder, ScenarioScript, BUILTIN_NAMES,
};
use pitchfork_assist::schedule;
use pitchfork_live::ServiceConfig;

/// Exit status when the run faulted or a certificate bound was violated.
const EXIT_FAILED_CHECK: u8 = 1;
/// Exit status for configuration and I/O errors.
const EXIT_ERROR: u8 = 2;

#[derive(Parser)]
#[command(
    name = "pitchfork",
    version,
    about = "E-bike assist controller simulator and certifier"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario file or built-in and write the log, reports and figures.
    Run {
        /// Path to a scenario TOML file, or the name of a built-in.
        scenario: String,
        /// Output directory; defaults to out/<scenario name>.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a tick log against the certificate bounds of a scenario.
    Certify {
        log: PathBuf,
        /// Scenario TOML file or built-in providing parameters and the reference.
        config: String,
        /// Order p of the bounds; overrides the scenario's certify section.
        #[arg(long, value_parser = ["1", "2"])]
        p: Option<String>,
        /// Also write certificate.json and violations.csv here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw the assist schedule at a fixed reference.
    SchedulePlot {
        #[arg(long)]
        m_star: f64,
        /// Scenario whose schedule parameters to use; defaults apply otherwise.
        #[arg(long)]
        config: Option<String>,
        #[arg(long, default_value_t = 400.0)]
        p_max: f64,
        #[arg(long, default_value = "schedule.svg")]
        out: PathBuf,
    },
    /// Print the names of the built-in scenarios.
    ListBuiltins,
    /// Start the live service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        /// Scenario used for sessions that do not name one.
        #[arg(long)]
        config: Option<String>,
        #[arg(long, default_value_t = 8)]
        max_sessions: usize,
        /// Simulated seconds per wall-clock second.
        #[arg(long, default_value_t = 1.0)]
        time_scale: f64,
    },
}

type CliResult = Result<ExitCode, String>;

fn load(scenario: &str) -> Result<ScenarioScript, String> {
    let path = Path::new(scenario);
    if path.exists() {
        return ScenarioScript::load(path).map_err(|e| e.to_string());
    }
    builtin(scenario).ok_or_else(|| {
        format!(
            "'{scenario}' is neither a file nor a built-in scenario ({})",
            BUILTIN_NAMES.join(", ")
        )
    })
}

fn status(failed: bool) -> ExitCode {
    if failed {
        ExitCode::from(EXIT_FAILED_CHECK)
    } else {
        ExitCode::SUCCESS
    }
}

fn run(scenario: &str, out: Option<PathBuf>) -> CliResult {
    let script = load(scenario)?;
    let out = out.unwrap_or_else(|| Path::new("out").join(&script.name));
    let result = run_scenario(&script).map_err(|e| e.to_string())?;
    let written = emit_outputs(&result, &out).map_err(|e| e.to_string())?;
    let s = &result.summary;
    println!(
        "{}: {} ticks, cooperative max |m - m*| {:.4}, mean {:.4}",
        s.name, s.ticks, s.cooperative_max_abs_error, s.cooperative_mean_abs_error
    );
    if let Some(f) = &result.fault {
        println!("fault at t = {} s: {}", f.t, f.reason);
    }
    if let Some(report) = &result.report {
        println!("certificate: {} violations", report.violations.len());
    }
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(status(!result.is_clean()))
}

fn certify(log: &Path, config: &str, p: Option<String>, out: Option<PathBuf>) -> CliResult {
    let mut script = load(config)?;
    let order = match p.as_deref() {
        Some(text) => text.parse::<POrder>().map_err(|e| e.to_string())?,
        None => script.certify.order.p_order().unwrap_or(POrder::P2),
    };
    script.certify.order = match order {
        POrder::P1 => CertifyOrder::P1,
        POrder::P2 => CertifyOrder::P2,
    };
    let records = read_log_file(log).map_err(|e| e.to_string())?;
    let (constants, report) = certify_log(&script, &records)
        .map_err(|e| e.to_string())?
        .expect("certify order was set above");
    let file = CertificateFile::new(&constants, &report);
    println!("{}", serde_json::to_string_pretty(&file).map_err(|e| e.to_string())?);
    if let Some(dir) = out {
        std::fs::create_dir_all(&dir).map_err(|e| format!("{}: {e}", dir.display()))?;
        let json = serde_json::to_vec_pretty(&file).map_err(|e| e.to_string())?;
        std::fs::write(dir.join("certificate.json"), json).map_err(|e| e.to_string())?;
        let f = std::fs::File::create(dir.join("violations.csv")).map_err(|e| e.to_string())?;
        write_violations(&report.violations, f).map_err(|e| e.to_string())?;
    }
    for v in report.violations.iter().take(10) {
        eprintln!(
            "violation t = {} s {}: {} > {} (margin {})",
            v.t,
            v.bound_name.as_str(),
            v.lhs,
            v.rhs,
            v.margin
        );
    }
    Ok(status(!report.violations.is_empty()))
}

fn schedule_plot(m_star: f64, config: Option<String>, p_max: f64, out: &Path) -> CliResult {
    let params = match config {
        Some(c) => load(&c)?.controller.schedule,
        None => Default::default(),
    };
    plot_schedule(m_star, &params, p_max, out).map_err(|e| e.to_string())?;
    let pt = schedule::threshold(m_star, &params).map_err(|e| e.to_string())?;
    println!("threshold P_T({m_star}) = {pt:.2} W");
    println!("wrote {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn serve(port: u16, host: IpAddr, config: Option<String>, max_sessions: usize, time_scale: f64) -> CliResult {
    let mut cfg = ServiceConfig {
        max_sessions,
        time_scale,
        ..ServiceConfig::default()
    };
    if let Some(c) = config {
        cfg.base = load(&c)?;
    }
    pitchfork_live::serve_blocking(SocketAddr::new(host, port), cfg).map_err(|e| e.to_string())?;
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::Run { scenario, out } => run(&scenario, out),
        Cmd::Certify { log, config, p, out } => certify(&log, &config, p, out),
        Cmd::SchedulePlot {
            m_star,
            config,
            p_max,
            out,
        } => schedule_plot(m_star, config, p_max, &out),
        Cmd::ListBuiltins => {
            for name in BUILTIN_NAMES {
                println!("{name}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Serve {
            port,
            host,
            config,
            max_sessions,
            time_scale,
        } => serve(port, host, config, max_sessions, time_scale),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ExitCode::from(EXIT_ERROR)
    })
}
