use std::process::ExitCode;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    ExitCode::from(crashfl_cli::run(
        std::env::args_os(),
        &crashfl_cli::process_env,
    ))
}
