use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("BPCR_LOG", "warn")).init();
    let cli = bpcr::Cli::parse();
    let result = cli
        .flags
        .resolve()
        .and_then(|cfg| bpcr::run(cli.command, &cfg));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
