use clap::Parser;

fn main() -> std::process::ExitCode {
    squeezesim::cli::run(squeezesim::cli::Cli::parse())
}
