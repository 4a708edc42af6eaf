use clap::Parser;
use genb_cli::{logging, run, Cli, EXIT_ERROR};

fn main() {
    let cli = Cli::parse();
    logging::init(cli.verbose);
    let code = match run(cli) {
        Ok(code) => code,
        Err(e) => {
            log::error!("{e:#}");
            EXIT_ERROR
        }
    };
    std::process::exit(code);
}
