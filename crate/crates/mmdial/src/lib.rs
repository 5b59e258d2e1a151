//! The `mmdial` command line and annotation service.

pub mod cli;
pub mod commands;
pub mod server;

use std::sync::Arc;

use anyhow::{Context, Result};
use cli::{Cli, Command, ServeArgs};
use commands::{read_instances, Outcome};

/// Runs one parsed command line, printing its summary.
pub fn run(cli: Cli) -> Result<()> {
    let outcome = match &cli.command {
        Command::Build(a) => commands::build(a)?,
        Command::Sample(a) => commands::sample(a)?,
        Command::Calibrate(a) => commands::calibrate_cmd(a)?,
        Command::Filter(a) => commands::filter(a)?,
        Command::Stats(a) => commands::stats(a)?,
        Command::Eval(a) => commands::eval(a)?,
        Command::Serve(a) => return serve(a),
    };
    print(&outcome, cli.json)
}

fn print(outcome: &Outcome, json: bool) -> Result<()> {
    if json {
        println!("{}", serde_json::to_string(&outcome.summary)?);
    } else {
        print!("{}", outcome.text);
    }
    Ok(())
}

fn serve(args: &ServeArgs) -> Result<()> {
    let items = read_instances(&args.sample)?;
    let svc = Arc::new(server::AnnotationService::open(items, &args.log)?);
    let app = server::router(Arc::clone(&svc), args.ui_dir.as_deref());
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let addr = format!("{}:{}", args.host, args.port);
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        eprintln!(
            "serving {} instances on http://{} (log {})",
            svc.total(),
            listener.local_addr()?,
            svc.log_path().display()
        );
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}
