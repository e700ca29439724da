use clap::Parser;

fn main() {
    let cli = segrel::cli::Cli::parse();
    if let Err(e) = segrel::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
