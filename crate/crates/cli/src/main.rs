use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = match dp::Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Help and version requests land on stdout and exit clean;
            // real parse errors are usage errors, not clap's default 2.
            let code = if err.use_stderr() { dp::EXIT_USAGE } else { dp::EXIT_OK };
            let _ = err.print();
            return ExitCode::from(code as u8);
        }
    };

    match dp::execute(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err}");
            let mut source = std::error::Error::source(&err);
            while let Some(cause) = source {
                eprintln!("  caused by: {cause}");
                source = cause.source();
            }
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
