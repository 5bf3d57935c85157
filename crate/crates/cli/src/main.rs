use std::io::{self, Write};
use std::process::ExitCode;

fn main() -> ExitCode {
    let env: Vec<(String, String)> = std::env::vars()
        .filter(|(k, _)| k.starts_with(mmfilter_cli::config::ENV_PREFIX))
        .collect();
    let stdin = io::stdin();
    let stdout = io::stdout();
    let stderr = io::stderr();
    let mut out = io::BufWriter::new(stdout.lock());
    let code = mmfilter_cli::run(
        std::env::args_os(),
        &env,
        &mut stdin.lock(),
        &mut out,
        &mut stderr.lock(),
    );
    let _ = out.flush();
    ExitCode::from(code as u8)
}
