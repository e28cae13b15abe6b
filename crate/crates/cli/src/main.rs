use clap::Parser;

fn main() {
    let cli = arpo_cli::Cli::parse();
    if let Err(e) = arpo_cli::run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
