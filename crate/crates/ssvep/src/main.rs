use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(ssvep::cli::main_with(std::env::args_os()))
}
