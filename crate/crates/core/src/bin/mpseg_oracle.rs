//! Stand-alone slice oracle speaking the plugin protocol.
//!
//! `mpseg-oracle --reference <labels.toml> [corruption flags] --input <manifest> --output <dir>`
//!
//! Answers every manifest entry with the one-hot nearest label of the
//! (optionally corrupted) reference at the slice's grid points. The manifest
//! must carry its grid.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use mpseg::cli::{exit_code, CorruptionArgs};
use mpseg::segmenter::{corrupt_labels, OracleSegmenter};
use mpseg::volume::read_labels;

#[derive(Debug, Parser)]
#[command(name = "mpseg-oracle", version, about = "Reference-label slice oracle")]
struct Args {
    #[arg(long)]
    reference: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    corruption: CorruptionArgs,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

fn serve(args: &Args) -> mpseg::Result<()> {
    let reference = read_labels(&args.reference)?;
    let corruption = args.corruption.to_corruption(args.seed)?;
    let labels = corrupt_labels(&reference, &corruption)?;
    log::debug!("serving {} with {} classes", args.input.display(), labels.num_classes);
    let oracle = OracleSegmenter {
        reference: std::sync::Arc::new(labels),
    };
    oracle.serve(&args.input, &args.output)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match serve(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
