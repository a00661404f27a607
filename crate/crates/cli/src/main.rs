use clap::Parser;

fn main() {
    let cli = plum_cli::Cli::parse();
    if let Err(e) = plum_cli::run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
