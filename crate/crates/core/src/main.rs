use clap::Parser;

fn main() {
    std::process::exit(parisi::cli::run(parisi::cli::Cli::parse()));
}
