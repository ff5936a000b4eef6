use std::io::Write;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use ctb_cli::{run, Cli, CliError};

fn fail(e: &CliError) -> ExitCode {
    eprintln!("{}", e.to_json());
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            let message = e.render().to_string();
            let first = message.lines().next().unwrap_or_default().trim_start_matches("error: ");
            eprintln!("{}", CliError::new("Usage", first).to_json());
            return ExitCode::from(2);
        }
    };
    let format = cli.output;
    let output = match run(cli) {
        Ok(o) => o,
        Err(e) => return fail(&e),
    };
    let mut stdout = std::io::stdout().lock();
    let _ = stdout.write_all(output.render(format).as_bytes());
    let _ = stdout.flush();
    drop(stdout);
    if let Some(e) = &output.failure {
        return fail(e);
    }
    if let Some(then) = output.then {
        if let Err(e) = then() {
            return fail(&e);
        }
    }
    ExitCode::SUCCESS
}
