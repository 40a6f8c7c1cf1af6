use std::process::ExitCode;

fn main() -> ExitCode {
    if let Ok(v) = std::env::var("PGOT_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global()
                {
                    eprintln!("error: cannot size the thread pool: {e}");
                    return ExitCode::from(1);
                }
            }
            _ => {
                eprintln!("error: PGOT_THREADS must be a positive integer, got {v:?}");
                return ExitCode::from(1);
            }
        }
    }
    let code = pgot::cli::run_cli(
        std::env::args_os(),
        &mut std::io::stdout().lock(),
        &mut std::io::stderr().lock(),
    );
    ExitCode::from(code as u8)
}
