use clap::Parser;

use himo::cli::{configure_threads, run, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(e) = configure_threads().and_then(|_| run(&cli)) {
        eprintln!("error: {e}");
        std::process::exit(e.code);
    }
}
