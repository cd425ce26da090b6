use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(uavtrack_cli::run(std::env::args_os()))
}
