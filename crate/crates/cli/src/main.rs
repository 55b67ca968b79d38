use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(srdet_cli::run(std::env::args_os()))
}
