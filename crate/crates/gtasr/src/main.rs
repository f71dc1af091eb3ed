use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(gtasr::cli::run())
}
