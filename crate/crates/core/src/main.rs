use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(entrobound::cli::run())
}
