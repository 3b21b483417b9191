use clap::Parser;

fn main() {
    let cli = poselift_cli::Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Err(e) = poselift_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(poselift_cli::exit_code(&e));
    }
}
