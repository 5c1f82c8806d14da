//! Command-line front end for the deadoil toolkit.
//!
//! `deadoil <simulate|optimize|verify|audit|mms> --out DIR [--config FILE]
//! [--jobs N] [--seed S] [--levels K] [--case ID]`
//!
//! Exit codes: 0 success, 1 domain failure (hypotheses, nonconvergence, a
//! failed check), 2 usage or configuration error. A manifest is written to
//! the run directory whenever the directory could be created.

pub mod commands;
pub mod manifest;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use deadoil::config::{parse_config_str, RunConfig};
use deadoil::model::build_problem;

use crate::manifest::{Inputs, RunDir, RunManifest};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] deadoil::Error),
    /// A check the run was asked to perform did not pass.
    #[error("{0}")]
    Check(String),
    #[error("{0}")]
    Usage(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_usage() => 2,
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "deadoil",
    version,
    about = "Simulate, optimize and audit the dead oil isotherm system"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
struct Common {
    /// INI configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory (created if missing)
    #[arg(long)]
    out: PathBuf,
    /// Worker threads (default: all cores)
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Forward solve with the configured source
    Simulate(Common),
    /// Minimize the tracking functional over the control
    Optimize(Common),
    /// Check the coefficient hypotheses and the adjoint gradient
    Verify(Common),
    /// Estimate and regularity audits over a refinement family
    Audit {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 3)]
        levels: usize,
    },
    /// Manufactured-solution convergence study
    Mms {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "M1")]
        case: String,
        #[arg(long, default_value_t = 3)]
        levels: usize,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Optimize(_) => "optimize",
            Command::Verify(_) => "verify",
            Command::Audit { .. } => "audit",
            Command::Mms { .. } => "mms",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Simulate(c) | Command::Optimize(c) | Command::Verify(c) => c,
            Command::Audit { common, .. } | Command::Mms { common, .. } => common,
        }
    }

    fn levels(&self) -> Option<usize> {
        match self {
            Command::Audit { levels, .. } | Command::Mms { levels, .. } => Some(*levels),
            _ => None,
        }
    }

    fn case(&self) -> Option<String> {
        match self {
            Command::Mms { case, .. } => Some(case.clone()),
            _ => None,
        }
    }
}

fn read_config(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| {
        deadoil::Error::Config(format!("cannot read config `{}`: {e}", path.display())).into()
    })
}

fn dispatch(cmd: &Command, cfg: Option<&RunConfig>, dir: &mut RunDir) -> CliResult<String> {
    if let Command::Mms { case, levels, .. } = cmd {
        return commands::mms(case, *levels, dir);
    }
    let Some(cfg) = cfg else {
        return Err(CliError::Usage(format!("{} requires --config", cmd.name())));
    };
    let problem = build_problem(cfg)?;
    let seed = cmd.common().seed;
    match cmd {
        Command::Simulate(_) => commands::simulate(cfg, &problem, dir),
        Command::Optimize(_) => commands::optimize(cfg, &problem, seed, dir),
        Command::Verify(_) => commands::verify(cfg, &problem, seed, dir),
        Command::Audit { levels, .. } => commands::audit(cfg, &problem, *levels, seed, dir),
        Command::Mms { .. } => unreachable!("handled above"),
    }
}

/// Parse `argv` (program name first), run the subcommand and return the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let started = Instant::now();
    let cmd = &cli.command;
    let common = cmd.common().clone();
    let mut dir = match RunDir::create(&common.out) {
        Ok(d) => d,
        Err(e) => {
            eprintln!(
                "error: cannot create run directory `{}`: {e}",
                common.out.display()
            );
            return 2;
        }
    };

    let config_text = common.config.as_deref().map(read_config).transpose();
    let mut config = None;
    let outcome = config_text.and_then(|text| {
        if let Some(t) = &text {
            config = Some(parse_config_str(t)?);
        }
        let pool = match common.jobs {
            Some(0) => return Err(CliError::Usage("--jobs must be at least 1".into())),
            Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build(),
            None => rayon::ThreadPoolBuilder::new().build(),
        }
        .map_err(|e| CliError::Usage(format!("cannot start worker pool: {e}")))?;
        let result = pool.install(|| dispatch(cmd, config.as_ref(), &mut dir));
        Ok((text, result))
    });
    let (text, result) = match outcome {
        Ok((text, result)) => (text, result),
        Err(e) => (None, Err(e)),
    };
    let code = match &result {
        Ok(line) => {
            println!("{line}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };

    let inputs = Inputs {
        subcommand: cmd.name().to_string(),
        config_text: text,
        seed: common.seed,
        levels: cmd.levels(),
        case: cmd.case(),
    };
    let outputs = match dir.records() {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: cannot hash outputs: {e}");
            return 1;
        }
    };
    let manifest = RunManifest {
        tool: "deadoil".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        subcommand: inputs.subcommand.clone(),
        config_path: common.config.as_ref().map(|p| p.display().to_string()),
        config,
        seed: common.seed,
        levels: inputs.levels,
        case: inputs.case.clone(),
        jobs: common.jobs,
        input_hash: inputs.hash(),
        status: if code == 0 { "ok" } else { "error" }.into(),
        error: result.err().map(|e| e.to_string()),
        exit_code: code,
        wall_time_s: started.elapsed().as_secs_f64(),
        outputs,
    };
    if let Err(e) = manifest.write_atomic(dir.root()) {
        eprintln!("error: cannot write manifest: {e}");
        return if code == 0 { 1 } else { code };
    }
    code
}
