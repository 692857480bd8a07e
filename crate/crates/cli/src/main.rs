use clap::Parser;

fn main() {
    let cli = capsim_cli::Cli::parse();
    if let Err(e) = capsim_cli::run(cli) {
        eprintln!("error: {}", e.message);
        std::process::exit(e.exit_code);
    }
}
