use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::Parser;

use carleman_toolkit::config::{parse_override, Command};
use carleman_toolkit::{parse_config, run};

/// Pseudoconvexity certificates, Carleman sweeps and three-sphere experiments.
///
/// Exit codes: 0 when every check passes, 2 when a certificate, inequality or
/// convergence check fails, 1 on errors.
#[derive(Parser, Debug)]
#[command(name = "carleman", version)]
struct Cli {
    /// validate, certify, mu-search, rellich, carleman-sweep, solve,
    /// three-sphere or suite. Defaults to `command` from the config.
    command: Option<String>,

    #[arg(long)]
    config: Option<PathBuf>,

    #[arg(long, default_value = "out")]
    out: PathBuf,

    #[arg(long)]
    seed: Option<u64>,

    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,

    #[arg(long = "grid-n")]
    grid_n: Option<usize>,

    /// Override any config key, e.g. `--set mu=4 --set metric=diag:1,2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn real_main() -> Result<u8> {
    let cli = Cli::parse();
    if let Some(k) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(k).build_global()?;
    }
    let mut overrides = cli.set.iter().map(|s| parse_override(s)).collect::<Result<Vec<_>>>()?;
    if let Some(seed) = cli.seed {
        overrides.push(("seed".into(), toml::Value::Integer(seed as i64)));
    }
    if let Some(n) = cli.grid_n {
        overrides.push(("grid_n".into(), toml::Value::Integer(n as i64)));
    }
    let cfg = parse_config(cli.config.as_deref(), &overrides)?;
    let cmd = match (&cli.command, cfg.command) {
        (Some(name), _) => Command::parse(name)?,
        (None, Some(c)) => c,
        (None, None) => anyhow::bail!("no command given on the command line or in the config"),
    };
    let bundle = run(cmd, &cfg, &cli.out)?;
    println!(
        "{}: {:?} (payload {}) -> {}",
        bundle.command,
        bundle.status,
        &bundle.payload_hash[..16],
        cli.out.join("report.json").display()
    );
    Ok(bundle.status.exit_code() as u8)
}
