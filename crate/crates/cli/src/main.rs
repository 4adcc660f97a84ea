use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use clvpb::config::schema_listing;
use clvpb::run::{dispatch, load, parse_overrides, CliError, Outputs};

#[derive(Parser, Debug)]
#[command(name = "clvpb", version, about = "Kinetic simulator with Cercignani-Lampis walls", after_help = "Run `clvpb keys` to list every config key.")]
struct Args {
    /// verify, forward, picard, backtrace, sample-kernel, duhamel, or keys
    mode: Option<String>,
    /// Flat key=value config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a key; repeatable, applied last
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory, or a .csv path for the main output file
    #[arg(long)]
    out: Option<PathBuf>,
    /// Shorthand for verify.suite
    #[arg(long)]
    suite: Option<String>,
    /// Shorthand for sample_kernel.n
    #[arg(long)]
    n: Option<String>,
    /// Shorthand for backtrace.t
    #[arg(long)]
    t: Option<String>,
    /// Shorthand for backtrace.x (comma separated)
    #[arg(long, allow_hyphen_values = true)]
    x: Option<String>,
    /// Shorthand for backtrace.v (comma separated)
    #[arg(long, allow_hyphen_values = true)]
    v: Option<String>,
}

fn run(args: Args) -> Result<(), CliError> {
    if args.mode.as_deref() == Some("keys") {
        print!("{}", schema_listing());
        return Ok(());
    }
    let mut overrides = Vec::new();
    for (key, value) in [
        ("verify.suite", &args.suite),
        ("sample_kernel.n", &args.n),
        ("backtrace.t", &args.t),
        ("backtrace.x", &args.x),
        ("backtrace.v", &args.v),
    ] {
        if let Some(v) = value {
            overrides.push((key.to_string(), v.clone()));
        }
    }
    overrides.extend(parse_overrides(&args.set)?);
    let env_seed = std::env::var("CLVPB_SEED").ok();
    let cfg = load(args.mode.as_deref(), args.config.as_deref(), env_seed.as_deref(), &overrides)?;
    let out = Outputs::from_arg(&cfg, args.out.as_deref());
    dispatch(&cfg, &out)?;
    Ok(())
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("clvpb: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
