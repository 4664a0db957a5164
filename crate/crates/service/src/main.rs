use std::process::ExitCode;

use clap::Parser;
use omnitext_service::cli::{self, Cli, Command};
use omnitext_service::{http, JobManager, ServiceError, ServiceResult};
use tracing_subscriber::EnvFilter;

fn serve(config: omnitext_service::ServiceConfig, bind: Option<String>) -> ServiceResult<()> {
    let bind = bind.unwrap_or_else(|| config.bind.clone());
    let manager = JobManager::open(config)?;
    manager.start();
    let runtime = tokio::runtime::Runtime::new()?;
    let served = runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(&bind).await?;
        tracing::info!("listening on {bind}");
        axum::serve(listener, http::router(manager.clone()))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
    });
    manager.shutdown();
    served.map_err(ServiceError::from)
}

fn dispatch(cli: Cli) -> ServiceResult<()> {
    let config = cli::load_config(&cli)?;
    if let Some(task) = cli.command.task() {
        let args = match &cli.command {
            Command::Remove(a)
            | Command::Edit(a)
            | Command::Insert(a)
            | Command::Reposition(a)
            | Command::Rescale(a)
            | Command::StyleInsert(a)
            | Command::StyleEdit(a) => a,
            _ => unreachable!("task commands carry run arguments"),
        };
        cli::print_paths(&cli::run_task(task, args, &config)?);
        return Ok(());
    }
    match cli.command {
        Command::Eval(args) => cli::print_paths(&cli::run_eval(&args)?),
        Command::Shrink(args) => cli::print_paths(&cli::run_shrink(&args)?),
        Command::Serve(args) => serve(config, args.bind)?,
        _ => {}
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
