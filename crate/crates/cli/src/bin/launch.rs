//! Starts one worker process per rank and supervises them.

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use craftkit::transport::hub::{launch, LaunchConfig};
use craftkit::ClusterSpec;

#[derive(Parser)]
#[command(name = "craftkit-launch", version, about = "Run a program as a group of worker processes")]
struct Cli {
    #[arg(long)]
    nodes: u32,
    #[arg(long, default_value_t = 1)]
    ranks_per_node: u32,
    /// Spare nodes available to replacement processes.
    #[arg(long, default_value_t = 0)]
    reserve: u32,
    /// Directory for the hub socket.
    #[arg(long)]
    socket_dir: Option<PathBuf>,
    /// Print endpoint, node and pid of every started worker to stderr.
    #[arg(long)]
    announce: bool,
    program: PathBuf,
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    args: Vec<OsString>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let cfg = LaunchConfig {
        spec: ClusterSpec::new(cli.nodes, cli.ranks_per_node).with_reserve(cli.reserve),
        program: cli.program,
        args: cli.args,
        socket_dir: cli.socket_dir,
        announce: cli.announce,
    };
    match launch(cfg) {
        Ok(report) => {
            for w in report.workers.iter().filter(|w| w.failed) {
                eprintln!("craftkit-launch: endpoint {} on node {} failed", w.member.endpoint, w.member.node);
            }
            if report.success() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("craftkit-launch: {e}");
            ExitCode::FAILURE
        }
    }
}
