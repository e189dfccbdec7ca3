use clap::Parser;
use coordsr_study::{serve, ServeOptions};
use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;

/// Serves a blinded reader study: pair images, session API and summary.
#[derive(Parser)]
#[command(name = "coordsr-study", version)]
struct Args {
    /// Port to listen on; 0 picks a free one (printed at startup).
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: IpAddr,
    /// Directory with study.json and pairs/.
    #[arg(long)]
    study_dir: PathBuf,
    /// Sealed key; without it the summary endpoint is unavailable.
    #[arg(long)]
    key_file: Option<PathBuf>,
    /// Where events.jsonl and responses.jsonl live [default: <study-dir>/log].
    #[arg(long)]
    log_dir: Option<PathBuf>,
    /// Built reader UI served at /.
    #[arg(long)]
    ui_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let opts = ServeOptions {
        addr: SocketAddr::new(args.host, args.port),
        study_dir: args.study_dir,
        key_file: args.key_file,
        log_dir: args.log_dir,
        ui_dir: args.ui_dir,
    };
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match runtime.block_on(serve(opts)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
