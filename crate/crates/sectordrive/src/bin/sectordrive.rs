use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(sectordrive::cli::run(std::env::args()) as u8)
}
