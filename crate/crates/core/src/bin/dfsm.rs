use clap::Parser;

fn main() {
    std::process::exit(dfsm::cli::run(dfsm::cli::Cli::parse()));
}
