use std::process::ExitCode;
use subquantum::{execute, parse_cli, requested_threads, write_outputs, CliError, RunResult, THREADS_ENV};

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Help(text)) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run() -> Result<(), CliError> {
    let config = parse_cli(std::env::args_os())?;
    let threads = requested_threads(std::env::var(THREADS_ENV).ok().as_deref())?;
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot start {n} worker threads: {e}")))?;
    }
    let result = execute(&config)?;
    write_outputs(&config, &result)?;
    report(&result);
    println!("results written to {}", config.out.display());
    Ok(())
}

fn report(result: &RunResult) {
    match result {
        RunResult::Relax(run) => {
            for s in &run.series.samples {
                println!("t = {:<10.6} H = {:.6e} (± {:.1e})", s.t, s.h, s.error);
            }
            if let Some(ratio) = run.series.decay_ratio() {
                println!("H(last)/H(first) = {ratio:.4}");
            }
        }
        RunResult::Signal(run) => {
            println!("truncation K = {}, norm loss {:.2e}", run.truncation, run.norm_loss);
            for e in &run.ensembles {
                let worst = e
                    .stats
                    .iter()
                    .filter(|s| s.after_op)
                    .map(|s| s.tv / s.threshold)
                    .fold(0.0, f64::max);
                println!("{:<15} {:<10} max TV/threshold = {worst:.3}", e.kind.name(), e.verdict.name());
            }
        }
        RunResult::Freeze(run) => {
            for r in &run.rows {
                println!("{:<10} residual H(T)/H(0) = {:.4}", r.value, r.residual_ratio);
            }
            println!("monotone: {}", run.monotone);
        }
    }
}
