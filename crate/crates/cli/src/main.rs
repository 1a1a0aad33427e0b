use std::process::ExitCode;

fn main() -> ExitCode {
    gfsim_cli::entry()
}
