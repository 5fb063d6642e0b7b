use std::process::ExitCode;

fn main() -> ExitCode {
    oplim::cli::main_with_args(std::env::args_os())
}
