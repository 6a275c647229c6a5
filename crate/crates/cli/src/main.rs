use clap::Parser;

fn main() {
    let cli = vlaforge_cli::Cli::parse();
    if let Err(e) = vlaforge_cli::run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
