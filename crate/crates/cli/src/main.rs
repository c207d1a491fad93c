use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hocon::registry::{self, MODELS};
use hocon::scenario::{self, Format, Output, Scenario};
use hocon::verify::{self, VerifyOptions, SUITES};
use hocon::Error;

/// Integrate constrained Lagrangian systems and run the verification suites.
#[derive(Parser)]
#[command(name = "hocon", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate a scenario file (TOML, or JSON by extension).
    Run {
        scenario: PathBuf,
        /// Override the time step.
        #[arg(long)]
        dt: Option<f64>,
        /// Override the final time.
        #[arg(long)]
        t_end: Option<f64>,
        /// Write the trajectory here instead of the scenario's outputs
        /// (`.json` for JSON, anything else CSV).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a verification suite, or `all`.
    Verify {
        suite: String,
        /// Full sample sizes and horizons.
        #[arg(long)]
        strict: bool,
    },
    /// List the built-in models with their parameters and coordinates.
    ListModels,
    /// List the verification suites.
    ListSuites,
}

/// 2: configuration, 3: inconsistent initial state or model domain,
/// 4: failure during integration.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Io(_) | Error::Dimension(_) => 2,
        Error::Step { .. } => 4,
        _ => 3,
    }
}

/// Row indices in an inconsistency report, with the model's row names.
fn describe_rows(sc: &Scenario, e: &Error) -> Vec<String> {
    let rows = match e {
        Error::InconsistentState { rows } => rows,
        Error::Step { source, .. } => match source.as_ref() {
            Error::InconsistentState { rows } => rows,
            _ => return Vec::new(),
        },
        _ => return Vec::new(),
    };
    let names = sc.build().map(|m| m.system.row_names()).unwrap_or_default();
    rows.iter()
        .map(|&(i, r)| {
            let name = names.get(i).map(String::as_str).unwrap_or("?");
            format!("  row {i} ({name}): residual {r:.3e}")
        })
        .collect()
}

fn run(path: &Path, dt: Option<f64>, t_end: Option<f64>, out: Option<PathBuf>) -> Result<(), (u8, String)> {
    let fail = |e: Error| (exit_code(&e), e.to_string());
    let mut sc = Scenario::from_path(path).map_err(fail)?;
    sc.override_with(dt, t_end);
    if let Some(p) = out {
        let format = if p.extension().is_some_and(|e| e == "json") { Format::Json } else { Format::Csv };
        sc.outputs = vec![Output { format, path: p }];
    }
    let report = scenario::run(&sc).map_err(|e| {
        let rows = describe_rows(&sc, &e);
        let msg = match (&e, rows.is_empty()) {
            (_, true) => e.to_string(),
            (Error::Step { time, .. }, false) => format!("step failed at t = {time}: constraint drift\n{}", rows.join("\n")),
            (_, false) => format!("initial state violates velocity-level constraints\n{}", rows.join("\n")),
        };
        (exit_code(&e), msg)
    })?;
    let params: Vec<String> = report.params.iter().map(|(k, v)| format!("{k}={v}")).collect();
    println!("model       {} ({})", report.model_id, params.join(", "));
    println!("steps       {} (dt {}, t_end {})", report.steps, sc.options.dt, sc.t_end);
    println!("final |R_K| {:.3e} (max {:.3e})", report.final_kin_residual, report.max_kin_residual);
    println!("energy      drift {:.3e}, dissipated {:.6e}", report.energy_drift, report.dissipated);
    for p in &report.written {
        println!("wrote       {}", p.display());
    }
    Ok(())
}

fn verify_cmd(suite: &str, strict: bool) -> Result<(), (u8, String)> {
    let opts = VerifyOptions { strict, ..Default::default() };
    let ids: Vec<&str> = if suite == "all" { SUITES.iter().map(|s| s.0).collect() } else { vec![suite] };
    let mut failed = Vec::new();
    for id in ids {
        let r = verify::run_suite(id, &opts).map_err(|e| (exit_code(&e), e.to_string()))?;
        println!("{r}");
        if !r.passed() {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err((1, format!("failed: {}", failed.join(", "))))
    }
}

fn list_models() {
    for m in MODELS {
        println!("{:<18} {}", m.id, m.summary);
        let params: Vec<String> = m.params.iter().map(|(k, v)| format!("{k}={v}")).collect();
        println!("{:<18} params: {}", "", params.join(", "));
        if let Ok(b) = registry::build(m.id, &Default::default()) {
            let s = &b.system;
            let alg = s.algebraic_velocities();
            let vel: Vec<String> = s
                .velocity_names()
                .into_iter()
                .enumerate()
                .map(|(i, n)| if alg.contains(&i) { format!("[{n}]") } else { n })
                .collect();
            println!("{:<18} positions: {}", "", s.position_names().join(", "));
            println!("{:<18} velocities: {}", "", vel.join(", "));
        }
    }
    println!("\n[name]: algebraic velocity, solved at every state; optional in scenarios");
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { scenario, dt, t_end, out } => run(&scenario, dt, t_end, out),
        Command::Verify { suite, strict } => verify_cmd(&suite, strict),
        Command::ListModels => {
            list_models();
            Ok(())
        }
        Command::ListSuites => {
            for (id, about, _) in SUITES {
                println!("{id:<24} {about}");
            }
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
