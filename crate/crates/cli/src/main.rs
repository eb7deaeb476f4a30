use std::process::ExitCode;

fn main() -> ExitCode {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let code = avar_cli::dispatch(std::env::args_os(), &mut out, &mut std::io::stderr());
    ExitCode::from(code)
}
