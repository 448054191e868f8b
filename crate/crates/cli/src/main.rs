mod cli;
mod commands;
mod exit;
mod remote;
mod settings;

use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::Parser;
use gatecheck_service::{serve, AppState, ServiceConfig, Session, SessionError};
use tracing_subscriber::EnvFilter;

use crate::cli::{Cli, Command};
use crate::commands::{BenchArgs, MetricsArgs};
use crate::exit::{Failure, OrFail, Outcome};
use crate::settings::{resolve, Resolved};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let default_level = if matches!(cli.command, Command::Serve { .. }) { "info" } else { "warn" };
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default_level)))
        .with_writer(std::io::stderr)
        .init();

    let runtime = match tokio::runtime::Runtime::new() {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: cannot start runtime: {e}");
            return ExitCode::from(3);
        }
    };
    match runtime.block_on(run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            f.exit()
        }
    }
}

async fn run(cli: Cli) -> Outcome {
    let resolved = resolve(&cli.global)?;
    let concurrency = |flag: Option<u64>| flag.map_or(resolved.run.concurrency, |c| c as usize);
    match cli.command {
        Command::Validate { dataset, strict } => commands::validate(&resolved, &dataset, strict),
        Command::Evaluate { dataset, mode, out, concurrency: c, server, drop_unflagged } => {
            let n = concurrency(c);
            match server {
                Some(url) => remote::evaluate(&resolved, &url, &dataset, mode.into(), &out, n).await,
                None => {
                    let mut resolved = resolved;
                    resolved.run.drop_unflagged_findings |= drop_unflagged;
                    commands::evaluate(&resolved, &dataset, mode.into(), &out, n).await
                }
            }
        }
        Command::Metrics { dataset, outcomes, level, journal, format, json_out } => commands::metrics(
            &resolved,
            MetricsArgs {
                dataset: &dataset,
                outcomes: &outcomes,
                level: level.into(),
                journal: journal.as_deref(),
                format,
                json_out: json_out.as_deref(),
            },
        ),
        Command::Bench { dataset, mode, repetitions, warmup, concurrency: c, json_out } => {
            commands::bench(
                &resolved,
                BenchArgs {
                    dataset: &dataset,
                    mode,
                    warmup: warmup as usize,
                    repetitions: repetitions as usize,
                    concurrency: concurrency(c),
                    json_out: json_out.as_deref(),
                },
            )
            .await
        }
        Command::ExportSft { dataset, out } => commands::export(&resolved, &dataset, &out),
        Command::Split { dataset, ratios, names, out_dir } => {
            commands::split(&resolved, &dataset, &ratios, &names, &out_dir)
        }
        Command::Demo { out_dir, examples, clean } => {
            commands::demo(&resolved, cli.global.seed, &out_dir, examples, clean)
        }
        Command::Serve { port, host, session, journal, ui, max_in_flight } => {
            run_server(resolved, &host, port, session.as_deref(), journal, ui, max_in_flight).await
        }
        Command::Remote { server, action } => remote::action(&resolved, &server, action).await,
    }
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
    tracing::info!("shutting down");
}

async fn run_server(
    resolved: Resolved,
    host: &str,
    port: u16,
    session: Option<&str>,
    journal: Option<std::path::PathBuf>,
    ui: Option<std::path::PathBuf>,
    max_in_flight: usize,
) -> Outcome {
    if max_in_flight == 0 {
        return Err(Failure::Usage(anyhow!("--max-in-flight must be at least 1")));
    }
    let evaluator = resolved.evaluator()?;
    let session = match session.map(|s| s.split_once(',')) {
        None => None,
        Some(Some((dataset, outcomes))) => {
            let (dataset, outcomes) = (std::path::Path::new(dataset), std::path::Path::new(outcomes));
            let journal = journal.unwrap_or_else(|| outcomes.with_extension("annotations.jsonl"));
            let s = Session::load(dataset, outcomes, &journal, (*resolved.taxonomy).clone()).map_err(|e| {
                let io = matches!(
                    &e,
                    SessionError::Dataset(gatecheck_core::datamodel::DatasetError::Io { .. })
                        | SessionError::Outcomes(gatecheck_core::pipeline::OutcomeFileError::Io(_))
                        | SessionError::Journal(gatecheck_core::annotation::JournalError::Io(_))
                );
                let err = anyhow::Error::new(e).context("cannot load review session");
                if io {
                    Failure::Io(err)
                } else {
                    Failure::Invalid(err)
                }
            })?;
            tracing::info!(session = %s.id, journal = %journal.display(), "review session loaded");
            Some(s)
        }
        _ => return Err(Failure::Usage(anyhow!("--session takes dataset,outcomes"))),
    };
    let listener =
        tokio::net::TcpListener::bind((host, port)).await.with_context(|| format!("cannot bind {host}:{port}")).io()?;
    let config = ServiceConfig { max_in_flight, ui_dir: ui };
    let state = AppState::new(evaluator, session, config);
    eprintln!("listening on http://{}", listener.local_addr().io()?);
    serve(listener, state, shutdown_signal()).await.io()
}
