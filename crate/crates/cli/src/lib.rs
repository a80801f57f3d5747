//! Command-line front end: argument handling, configuration files, run
//! manifests and the subcommand implementations.

pub mod args;
mod commands;
pub mod output;
pub mod plot;

use anyhow::{bail, Context, Result};
use args::{Cli, Command};
use clap::{CommandFactory, FromArgMatches};
use output::{default_manifest_path, Outputs, RunManifest};
use std::ffi::OsString;
use std::path::{Path, PathBuf};

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code: 0 when every output was written, 2 for usage errors,
/// 1 for failures. Failed runs leave no outputs behind.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let argv = match merge_config(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return 2;
        }
    };
    let cmd = Cli::command()
        .args_override_self(true)
        .mut_subcommands(|s| s.args_override_self(true));
    let cli = match cmd.try_get_matches_from(argv).and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

/// Splices flags from `--config <file>` in front of the command-line flags
/// so that the latter take precedence. A run manifest is accepted and its
/// `params` used.
fn merge_config(mut argv: Vec<OsString>) -> Result<Vec<OsString>> {
    if argv.len() < 2 || argv[1].to_string_lossy().starts_with('-') {
        return Ok(argv);
    }
    let mut path: Option<PathBuf> = None;
    let mut i = 2;
    while i < argv.len() {
        let a = argv[i].to_string_lossy();
        if a == "--config" {
            path = argv.get(i + 1).map(PathBuf::from);
            i += 1;
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(PathBuf::from(p));
        }
        i += 1;
    }
    let Some(path) = path else { return Ok(argv) };
    let text = std::fs::read_to_string(&path).with_context(|| format!("cannot read config {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("config {} is not valid JSON", path.display()))?;
    let object = match value.get("params").filter(|p| p.is_object()).unwrap_or(&value) {
        serde_json::Value::Object(m) => m.clone(),
        _ => bail!("config {} must hold a JSON object", path.display()),
    };
    let mut tokens: Vec<OsString> = Vec::new();
    for (key, v) in object {
        if key == "config" {
            continue;
        }
        let flag = format!("--{}", key.replace('_', "-"));
        let mut push = |v: &serde_json::Value| -> Result<()> {
            match v {
                serde_json::Value::Null | serde_json::Value::Bool(false) => {}
                serde_json::Value::Bool(true) => tokens.push(flag.clone().into()),
                serde_json::Value::Number(n) => tokens.push(format!("{flag}={n}").into()),
                serde_json::Value::String(s) => tokens.push(format!("{flag}={s}").into()),
                _ => bail!("config key '{key}': unsupported value {v}"),
            }
            Ok(())
        };
        match &v {
            serde_json::Value::Array(items) => items.iter().try_for_each(&mut push)?,
            other => push(other)?,
        }
    }
    argv.splice(2..2, tokens);
    Ok(argv)
}

fn draw_seed() -> u64 {
    rand::random()
}

fn execute(command: &Command) -> Result<()> {
    let common = command.common();
    let seed = match (common.seed, command.stochastic()) {
        (Some(s), _) => Some(s),
        (None, true) => Some(draw_seed()),
        (None, false) => None,
    };
    let mut outputs = Outputs::default();
    let report = match common.threads {
        Some(0) => bail!("--threads must be at least 1"),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()?
            .install(|| commands::dispatch(command, seed.unwrap_or(0), &mut outputs))?,
        None => commands::dispatch(command, seed.unwrap_or(0), &mut outputs)?,
    };

    let mut params = command.params();
    if let (Some(s), Some(obj)) = (seed, params.as_object_mut()) {
        obj.insert("seed".into(), s.into());
    }
    let manifest = RunManifest {
        subcommand: command.name().to_string(),
        params,
        seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        inputs: report.inputs,
        outputs: outputs.paths(),
        timestamp: chrono::Utc::now().to_rfc3339(),
        results: report.results,
    };
    let path = common.manifest.clone().unwrap_or_else(|| default_manifest_path(report.primary.as_path()));
    outputs.write(&path, |w| {
        serde_json::to_writer_pretty(&mut *w, &manifest)?;
        writeln!(w)?;
        Ok(())
    })?;
    outputs.commit()
}

/// What a subcommand hands back for the manifest.
pub(crate) struct Report {
    pub primary: PathBuf,
    pub inputs: Vec<output::InputDigest>,
    pub results: serde_json::Value,
}

pub(crate) fn with_suffix(path: &Path, i: usize) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}_{i}.{}", ext.to_string_lossy()),
        None => format!("{stem}_{i}"),
    };
    path.with_file_name(name)
}
