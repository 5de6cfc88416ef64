use clap::Parser;

fn main() {
    std::process::exit(kfl::run(kfl::Cli::parse()));
}
