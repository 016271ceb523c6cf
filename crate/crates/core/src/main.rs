use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Err(e) = volseg::cli::run(volseg::cli::Cli::parse()) {
        eprintln!("{}", volseg::cli::error_line(&e));
        std::process::exit(1);
    }
}
