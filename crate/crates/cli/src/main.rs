use clap::Parser;

fn main() {
    let cli = metareg_cli::Cli::parse();
    if let Err(e) = metareg_cli::run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
