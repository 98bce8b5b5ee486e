use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod run;

use commands::{analyze, augment, bench, eval, generate, synth, train};
use run::Run;

#[derive(Parser, Debug)]
#[command(name = "repgan", version, about = "Structure-aware conditional generation of periodic binary patterns")]
struct Cli {
    /// Print human-readable progress lines to standard error.
    #[arg(long, global = true)]
    progress: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a labeled synthetic dataset of tiled unit cells.
    Synth(synth::Args),
    /// Train the conditional generator on a dataset manifest.
    Train(train::Args),
    /// Sample images from a trained checkpoint.
    Generate(generate::Args),
    /// Estimate the unit count of one image and reconstruct it.
    Analyze(analyze::Args),
    /// Score generated images against real ones with a surrogate classifier.
    Eval(eval::Args),
    /// Balance a dataset with confidence-filtered generated samples.
    Augment(augment::Args),
    /// Run the ablation matrix and the augmentation comparison.
    Bench(bench::Args),
}

impl Command {
    /// Directory receiving resolved-config.json and run.log.
    fn out_dir(&self) -> PathBuf {
        match self {
            Command::Synth(a) => a.out.clone(),
            Command::Train(a) => a.out.clone(),
            Command::Generate(a) => a.out.clone(),
            Command::Analyze(a) => a.out.clone(),
            Command::Eval(a) => a.out.parent().map(PathBuf::from).unwrap_or_default(),
            Command::Augment(a) => a.out.clone(),
            Command::Bench(a) => a.out.clone(),
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use repgan_core::Error;
    match err.downcast_ref::<Error>() {
        Some(Error::Divergence { .. }) => 3,
        Some(
            Error::Config { .. }
            | Error::Contract(_)
            | Error::Label { .. }
            | Error::Spec(_)
            | Error::Format { .. }
            | Error::Json(_),
        ) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    repgan_core::alloc::retain_freed_memory();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let mut run = Run::new(cli.command.out_dir(), cli.progress);
    run.note(&format!("repgan {} {}", env!("CARGO_PKG_VERSION"), std::env::args().skip(1).collect::<Vec<_>>().join(" ")));
    let result = match &cli.command {
        Command::Synth(a) => synth::run(a, &mut run),
        Command::Train(a) => train::run(a, &mut run),
        Command::Generate(a) => generate::run(a, &mut run),
        Command::Analyze(a) => analyze::run(a, &mut run),
        Command::Eval(a) => eval::run(a, &mut run),
        Command::Augment(a) => augment::run(a, &mut run),
        Command::Bench(a) => bench::run(a, &mut run),
    };
    let code = match &result {
        Ok(()) => 0,
        Err(e) => {
            let msg = format!("error: {e:#}");
            eprintln!("{msg}");
            run.note(&msg);
            exit_code(e)
        }
    };
    if let Err(e) = run.write_log() {
        eprintln!("error: could not write run log: {e}");
    }
    ExitCode::from(code)
}
