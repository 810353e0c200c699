use std::process::ExitCode;

fn main() -> ExitCode {
    ccmtune_cli::main_with(std::env::args_os())
}
