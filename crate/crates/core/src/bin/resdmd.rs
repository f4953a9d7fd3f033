use std::io::Write;
use std::process::ExitCode;

fn main() -> ExitCode {
    let mut stdout = std::io::stdout().lock();
    let mut stderr = std::io::stderr().lock();
    if let Err(e) = resdmd::cli::configure_threads() {
        let _ = writeln!(stderr, "error[{}]: {e}", e.kind());
        return ExitCode::from(resdmd::cli::EXIT_VALIDATION as u8);
    }
    let code = resdmd::cli::main_with(std::env::args_os(), &mut stdout, &mut stderr);
    let _ = stdout.flush();
    ExitCode::from(code as u8)
}
