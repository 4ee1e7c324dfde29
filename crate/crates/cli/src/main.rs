use std::process::ExitCode;

use churn_cli::{run, Cli};
use clap::{CommandFactory, Parser};

/// Parse errors without a usage line (bad values, for instance) get the
/// usage of the subcommand that was invoked.
fn parse_args() -> Cli {
    match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let mut text = e.render().to_string();
            if !text.contains("Usage:") {
                let mut cmd = Cli::command();
                let sub = std::env::args().nth(1).unwrap_or_default();
                let usage = match cmd.find_subcommand_mut(&sub) {
                    Some(s) => s.render_usage().to_string().replace("Usage: ", "Usage: churn "),
                    None => cmd.render_usage().to_string(),
                };
                text = format!("{}\n{usage}\n", text.trim_end());
            }
            eprint!("{text}");
            std::process::exit(e.exit_code());
        }
        Err(e) => e.exit(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = parse_args();
    let stdout = std::io::stdout();
    match run(cli, &mut stdout.lock()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
