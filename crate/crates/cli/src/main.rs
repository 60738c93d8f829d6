//! `graphcond`: condense a graph, deploy the condensed graph for inductive
//! inference, and run calibration, coreset baselines and sweeps.
//!
//! Exit status: 0 on success, 2 for usage, configuration or input errors,
//! 3 when the optimization diverges or otherwise fails numerically.

mod commands;
mod settings;

use std::process::ExitCode;

use clap::Command;
use settings::{keys_for, with_flags, Settings};

const COMMANDS: [(&str, &str); 6] = [
    ("generate", "write a seeded stochastic block model graph bundle"),
    ("condense", "condense a graph bundle into a deployable bundle"),
    ("infer", "classify inductive nodes through a condensed bundle"),
    ("calibrate", "compare vanilla, label-propagated and error-propagated predictions"),
    ("baseline", "select a coreset and score it like a condensed graph"),
    ("bench", "sweep the mapping threshold or the reduction ratio"),
];

fn cli() -> Command {
    let mut cmd = Command::new("graphcond")
        .about("Graph condensation with a learned mapping for inductive inference")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true);
    for (name, about) in COMMANDS {
        cmd = cmd.subcommand(with_flags(Command::new(name).about(about), &keys_for(name)));
    }
    cmd
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let numeric = err.chain().any(|e| e.downcast_ref::<graphcond::Error>().is_some_and(graphcond::Error::is_numeric));
    if numeric {
        3
    } else {
        2
    }
}

/// The error chain joined with `: `, skipping causes already quoted by
/// the message before them.
fn describe(err: &anyhow::Error) -> String {
    let mut msg = err.to_string();
    for cause in err.chain().skip(1) {
        let c = cause.to_string();
        if !msg.contains(&c) {
            msg.push_str(": ");
            msg.push_str(&c);
        }
    }
    msg
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let matches = cli().get_matches();
    let (name, sub) = matches.subcommand().expect("a subcommand is required");
    let result = Settings::resolve(name, &keys_for(name), sub).and_then(|s| match name {
        "generate" => commands::generate(&s),
        "condense" => commands::condense_cmd(&s),
        "infer" => commands::infer_cmd(&s),
        "calibrate" => commands::calibrate_cmd(&s),
        "baseline" => commands::baseline_cmd(&s),
        "bench" => commands::bench_cmd(&s),
        other => unreachable!("unknown subcommand {other}"),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", describe(&err));
            ExitCode::from(exit_code(&err))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_definition_is_consistent() {
        cli().debug_assert();
    }

    #[test]
    fn numeric_failures_map_to_three() {
        let div = anyhow::Error::from(graphcond::Error::Divergence { epoch: 0, step: 1, phase: "S", value: f64::NAN });
        assert_eq!(exit_code(&div), 3);
        let bad = anyhow::Error::from(graphcond::Error::InvalidArgument("x".into())).context("while condensing");
        assert_eq!(exit_code(&bad), 2);
        assert_eq!(exit_code(&anyhow::anyhow!("plain")), 2);
    }
}
