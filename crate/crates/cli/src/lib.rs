//! Command-line front end: config parsing, subcommand dispatch and artifact
//! emission for `rare-core` experiments.

pub mod args;
pub mod artifacts;
pub mod commands;
pub mod error;
pub mod experiment;

use std::fmt::Write as _;

use rare_core::config::ConfigError;
use serde_json::{json, Value};

use crate::args::{Cli, Command};
use crate::artifacts::OutputDir;
use crate::commands::{run_analyze, run_fixed_points, run_montecarlo, run_support, Context};
use crate::error::{CliError, CliResult};
use crate::experiment::ExperimentConfig;

pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.json";

fn load_config(cli: &Cli) -> CliResult<ExperimentConfig> {
    let mut config = match (&cli.config, &cli.command) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Command::Demo) => ExperimentConfig::bundled_sys1d(),
        (None, _) => return Err(CliError::Usage("--config is required for this subcommand".into())),
    };
    cli.apply_overrides(&mut config);
    let violations = config.check();
    if !violations.is_empty() {
        return Err(ConfigError::Schema(violations).into());
    }
    config.resolve();
    Ok(config)
}

fn pretty(v: &impl serde::Serialize) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s
}

/// Runs one invocation and returns what goes to stdout.
pub fn run(cli: &Cli) -> CliResult<String> {
    let config = load_config(cli)?;
    let mut out = match &cli.out {
        Some(dir) => Some(OutputDir::prepare(dir, cli.force)?),
        None => None,
    };
    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = cli.threads {
            b = b.num_threads(n);
        }
        b.build().map_err(|e| CliError::Usage(format!("cannot start thread pool: {e}")))?
    };
    let mut ctx = Context::new(config)?;
    let (stdout, results) = pool.install(|| dispatch(&cli.command, &mut ctx, out.as_mut()))?;
    if let Some(mut out) = out {
        out.write(RESOLVED_CONFIG_FILE, ctx.config.to_json_pretty().as_bytes())?;
        out.finish(cli.command.name(), results)?;
    }
    Ok(stdout)
}

fn dispatch(command: &Command, ctx: &mut Context, mut out: Option<&mut OutputDir>) -> CliResult<(String, Value)> {
    let write_json = |name: &str, v: &Value, out: &mut Option<&mut OutputDir>| -> CliResult<()> {
        if let Some(o) = out.as_deref_mut() {
            o.write_json(name, v)?;
        }
        Ok(())
    };
    match command {
        Command::Analyze => {
            let report = serde_json::to_value(run_analyze(ctx)?).expect("serializable");
            write_json("analysis.json", &report, &mut out)?;
            let results = json!({ "weakly_detectable": report["weakly_detectable"] });
            Ok((pretty(&report), results))
        }
        Command::FixedPoints(_) => {
            let report = serde_json::to_value(run_fixed_points(ctx)?).expect("serializable");
            write_json("fixed_points.json", &report, &mut out)?;
            Ok((pretty(&report), json!({ "atoms": report["atoms"].as_array().map_or(0, Vec::len) })))
        }
        Command::Support(_) => {
            let s = run_support(ctx)?;
            if let Some(o) = out.as_deref_mut() {
                o.write("support_points.csv", &s.csv)?;
            }
            write_json("support.json", &s.summary, &mut out)?;
            let results = json!({ "points": s.set.len(), "truncated": s.set.truncated() });
            Ok((pretty(&s.summary), results))
        }
        Command::Montecarlo(_) => {
            let m = run_montecarlo(ctx)?;
            let report = serde_json::to_value(&m.report).expect("serializable");
            if let Some(o) = out.as_deref_mut() {
                o.write("samples.csv", &m.samples_csv)?;
                if let Some(t) = &m.trajectories_csv {
                    o.write("trajectories.csv", t)?;
                }
            }
            write_json("montecarlo.json", &report, &mut out)?;
            Ok((pretty(&report), json!({ "ks": report["ks"] })))
        }
        Command::Demo => demo(ctx, out),
    }
}

fn demo(ctx: &mut Context, mut out: Option<&mut OutputDir>) -> CliResult<(String, Value)> {
    let mut text = String::new();
    let analysis = run_analyze(ctx)?;
    let j: Vec<String> = analysis.detectable_set.iter().map(|s| s.to_string()).collect();
    writeln!(
        text,
        "analyze: weakly detectable {}, detectable atoms [{}]",
        analysis.weakly_detectable,
        j.join(", ")
    )
    .unwrap();
    for w in &analysis.warnings {
        writeln!(text, "  warning: {w}").unwrap();
    }

    let fps = run_fixed_points(ctx)?;
    for a in &fps.atoms {
        match &a.fixed_point {
            Some(fp) => writeln!(
                text,
                "fixed point {}: trace {:.6}, residual {:.1e}, {} iterations",
                a.subset,
                fp.value.trace(),
                fp.residual,
                fp.iterations
            )
            .unwrap(),
            None => writeln!(text, "fixed point {}: not detectable, skipped", a.subset).unwrap(),
        }
    }

    let support = run_support(ctx)?;
    writeln!(
        text,
        "support: {} points to depth {} from {} (counts per depth {:?}, truncated {})",
        support.set.len(),
        support.set.depth,
        support.set.anchor,
        support.set.counts_per_depth,
        support.set.truncated()
    )
    .unwrap();

    let mc = run_montecarlo(ctx)?;
    let r = &mc.report;
    writeln!(text, "montecarlo: {} paths x {} steps, {}", r.paths, r.horizon, r.functional).unwrap();
    for e in &r.ensembles {
        let verdict = e
            .tail_table
            .as_ref()
            .map_or("n/a".to_string(), |t| format!("{:?}", t.verdict));
        writeln!(
            text,
            "  from {}*I: median at t*={} is {:.4}, stochastic boundedness {}",
            e.initial_scale, r.t_star, e.at_t_star.q50, verdict
        )
        .unwrap();
    }
    for k in &r.ks {
        writeln!(
            text,
            "  KS between ensembles {:?}: {:.4} at t*, {:.4} at 2t*",
            k.ensembles, k.t_star, k.two_t_star
        )
        .unwrap();
    }

    let analysis = serde_json::to_value(&analysis).expect("serializable");
    let fps = serde_json::to_value(&fps).expect("serializable");
    let mc_report = serde_json::to_value(&mc.report).expect("serializable");
    if let Some(o) = out.as_deref_mut() {
        o.write_json("analysis.json", &analysis)?;
        o.write_json("fixed_points.json", &fps)?;
        o.write("support_points.csv", &support.csv)?;
        o.write_json("support.json", &support.summary)?;
        o.write("samples.csv", &mc.samples_csv)?;
        if let Some(t) = &mc.trajectories_csv {
            o.write("trajectories.csv", t)?;
        }
        o.write_json("montecarlo.json", &mc_report)?;
    }
    let results = json!({
        "weakly_detectable": analysis["weakly_detectable"],
        "support_points": support.set.len(),
        "ks": mc_report["ks"],
    });
    Ok((text, results))
}
