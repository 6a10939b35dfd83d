mod args;
mod commands;
mod error;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter("LASER_LOG")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            let _ = e.print();
            std::process::exit(1);
        }
    };
    let result = match &cli.command {
        Command::VaqProfile(a) => commands::vaq_profile(a),
        Command::Localize(a) => commands::localize(a),
        Command::Decode(a) => commands::decode(a),
        Command::Bench(a) => commands::bench(a),
        Command::Run(a) => commands::run(a),
        Command::ToyTrace(a) => commands::toy_trace(a),
    };
    if let Err(e) = result {
        eprintln!("error: {}", e.message());
        std::process::exit(e.exit_code());
    }
}
