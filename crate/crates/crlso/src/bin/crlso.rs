use clap::Parser;

fn main() {
    let cli = crlso::cli::Cli::parse();
    if let Err(err) = crlso::cli::run(cli) {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}
