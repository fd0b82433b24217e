use clap::Parser;
use pollkappa::cli::{run_experiment, ExperimentSpec};

fn main() {
    let spec = ExperimentSpec::parse();
    if let Err(e) = run_experiment(&spec) {
        eprintln!("{e}");
        std::process::exit(e.exit_code());
    }
}
