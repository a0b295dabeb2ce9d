use std::process::ExitCode;

use clap::Parser;

use spinekin_cli::error::{EXIT_OK, EXIT_USAGE};
use spinekin_cli::{run, Cli};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { EXIT_OK } as u8);
        }
    };
    let config = match cli.resolve_config() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("spinekin: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    env_logger::Builder::new().parse_filters(&config.log_level).init();
    match run(&cli, &config) {
        Ok(written) => {
            for f in &written.files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("spinekin: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
