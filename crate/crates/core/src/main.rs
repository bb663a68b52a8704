use clap::Parser;
use groupgoods::cli::{run, Cli};

fn main() {
    std::process::exit(run(Cli::parse()));
}
