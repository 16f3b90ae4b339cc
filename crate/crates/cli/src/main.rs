#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use lieflow::algebra::ALGEBRA_PRESETS;
use lieflow::dynamics::{preset_info, FIELD_PRESETS, MODEL_PRESETS};

mod config;
mod error;
mod run;
mod scenarios;
mod verify;

use config::ScenarioConfig;
use error::CliError;

pub const OUTPUT_ROOT_ENV: &str = "LIEFLOW_OUTPUT_ROOT";

#[derive(Parser)]
#[command(name = "lieflow", version, about = "Dynamical invariants and chaos diagnostics for Lie Hamiltonian systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file, or a built-in scenario by name.
    Run {
        config: String,
        /// Directory receiving one subdirectory per scenario.
        #[arg(long, env = OUTPUT_ROOT_ENV, default_value = "lieflow-output")]
        output_root: PathBuf,
    },
    /// Run the property suite and print a summary table.
    Verify {
        /// Print the summary as JSON.
        #[arg(long)]
        json: bool,
        /// Flip the sign of gamma^k_ij in quadratic6, given as i,j,k.
        #[arg(long, value_parser = parse_triple)]
        tamper_gamma: Option<(usize, usize, usize)>,
        /// Multiply every integration step by this factor.
        #[arg(long, default_value_t = 1.0)]
        step_scale: f64,
    },
    /// List built-in scenarios and model, field and algebra presets.
    ListPresets,
    /// Show a built-in scenario or preset.
    Describe { preset: String },
}

fn parse_triple(s: &str) -> Result<(usize, usize, usize), String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [i, j, k] => Ok((i, j, k)),
        _ => Err("expected three indices i,j,k".into()),
    }
}

fn load(source: &str) -> Result<ScenarioConfig, CliError> {
    let path = std::path::Path::new(source);
    if path.exists() {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(format!("reading {source}"), e))?;
        return ScenarioConfig::from_toml(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{source}: {msg}")),
            other => other,
        });
    }
    match scenarios::builtin(source) {
        Some(text) => ScenarioConfig::from_toml(text),
        None => Err(CliError::Usage(format!(
            "`{source}` is neither a file nor a built-in scenario (try `lieflow list-presets`)"
        ))),
    }
}

fn execute(cli: Cli) -> Result<bool, CliError> {
    match cli.command {
        Command::Run { config, output_root } => {
            let cfg = load(&config)?;
            let manifest = run::run(&cfg, &output_root)?;
            let dir = output_root.join(manifest.config.output_dir());
            for t in &manifest.tasks {
                let status = if t.ok { "ok" } else { "FAILED" };
                let msg = t.message.as_deref().map(|m| format!(" ({m})")).unwrap_or_default();
                println!("task  {status:<6} {:<32} {:>8.2}s{msg}", t.name, t.seconds);
            }
            for c in &manifest.checks {
                let status = if c.passed { "PASS" } else { "FAIL" };
                let m = c.measured.map_or("-".into(), |v| format!("{v:.4e}"));
                println!("check {status:<6} {:<32} {m} {} {:e}  {}", c.name, c.bound, c.threshold, c.detail);
            }
            println!("{} files written to {}", manifest.files.len() + 1, dir.display());
            Ok(manifest.passed)
        }
        Command::Verify { json, tamper_gamma, step_scale } => {
            let results = verify::run_suite(verify::VerifyOptions {
                tamper: tamper_gamma,
                step_scale,
            })?;
            if json {
                println!("{}", serde_json::to_string_pretty(&results).expect("results serialize"));
            } else {
                print!("{}", verify::table(&results));
            }
            let failed: Vec<String> = results.iter().filter(|r| !r.passed).map(|r| format!("{}/{}", r.module, r.name)).collect();
            if !failed.is_empty() {
                eprintln!("failing: {}", failed.join(", "));
            }
            Ok(failed.is_empty())
        }
        Command::ListPresets => {
            println!("scenarios:");
            for (name, text) in scenarios::BUILTIN {
                let cfg = ScenarioConfig::from_toml(text)?;
                println!("  {name:<16} {}", cfg.description);
            }
            println!("models:");
            for name in MODEL_PRESETS {
                let info = preset_info(name)?;
                println!("  {name:<22} H = {}, {}", info.hamiltonian, info.drive);
            }
            println!("fields (two-level): {}", FIELD_PRESETS.join(", "));
            println!("algebras: {}", ALGEBRA_PRESETS.join(", "));
            Ok(true)
        }
        Command::Describe { preset } => {
            if let Some(text) = scenarios::builtin(&preset) {
                print!("{text}");
                return Ok(true);
            }
            if MODEL_PRESETS.contains(&preset.as_str()) {
                let info = preset_info(&preset)?;
                println!("model    {}", info.name);
                println!("algebra  {}", info.algebra);
                println!("H        {}", info.hamiltonian);
                println!("drive    {}", info.drive);
                match info.strobe_omega {
                    Some(w) => println!("strobe   omega = {w}"),
                    None => println!("strobe   none (aperiodic drive)"),
                }
                return Ok(true);
            }
            if FIELD_PRESETS.contains(&preset.as_str()) {
                println!("field {}: {}", preset, lieflow::dynamics::field_preset(&preset)?.label());
                return Ok(true);
            }
            if ALGEBRA_PRESETS.contains(&preset.as_str()) {
                let alg = lieflow::algebra::algebra_preset(&preset)?;
                let basis: Vec<&str> = alg.basis().iter().map(|o| o.label()).collect();
                println!("algebra {} (dimension {}): {}", alg.name(), alg.dim(), basis.join(", "));
                return Ok(true);
            }
            Err(CliError::Usage(format!("unknown preset `{preset}` (try `lieflow list-presets`)")))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
