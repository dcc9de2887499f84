use clap::Parser;

fn main() {
    std::process::exit(dtilde::cli::main_with(dtilde::cli::Cli::parse()));
}
