//! `speechvqa`: generate data, train, evaluate and query the model.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or
//! checkpoint error, 3 numerical failure during training.

mod args;
mod commands;
mod error;
mod manifest;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use error::{Failure, EXIT_DATA, EXIT_OK, EXIT_USAGE};
use manifest::{hash_path, now, RunManifest};

fn main() -> ExitCode {
    let code = run_with(std::env::args_os().collect(), None);
    ExitCode::from(code as u8)
}

/// Parses and runs one invocation. `manifest_override` redirects where the
/// run manifest goes (used by `replay`).
fn run_with(argv: Vec<OsString>, manifest_override: Option<PathBuf>) -> i32 {
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let mut recorded: Vec<String> = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    let name = cli.command.name();

    let (result, manifest_path, mut m) = match &cli.command {
        Command::GenData(a) => {
            let mut m = RunManifest::new(name, recorded);
            let r = commands::gen_data(a, &mut m);
            (r, Some(commands::gen_data_manifest_path(a)), m)
        }
        Command::Train(a) => {
            let mut m = RunManifest::new(name, recorded);
            let r = commands::train_cmd(a, &mut m);
            (r, Some(commands::train_manifest_path(a)), m)
        }
        Command::Eval(a) => {
            let ts = match &a.timestamp {
                Some(t) => t.clone(),
                None => {
                    let t = now();
                    recorded.push("--timestamp".into());
                    recorded.push(t.clone());
                    t
                }
            };
            let mut m = RunManifest::new(name, recorded);
            let r = commands::eval_cmd(a, &ts, &mut m);
            let path = match (&a.manifest, &r) {
                (Some(p), _) => p.clone(),
                (None, Ok(p)) => p.clone(),
                (None, Err(_)) => a.out_dir.join("eval.run.json"),
            };
            (r.map(|_| ()), Some(path), m)
        }
        Command::Predict(a) => {
            let mut m = RunManifest::new(name, recorded);
            let r = commands::predict(a, &mut m);
            (r, a.manifest.clone(), m)
        }
        Command::Replay(a) => return report(replay(&a.manifest)),
    };

    let code = report(result.as_ref().map(|_| ()).map_err(|e| Failure {
        code: e.code,
        message: e.message.clone(),
    }));
    if let Some(path) = manifest_override.or(manifest_path) {
        m.exit_status = code;
        m.error = result.err().map(|e| e.message);
        if let Err(e) = m.save(&path) {
            eprintln!("error: cannot write run manifest {}: {e}", path.display());
            return if code == EXIT_OK { EXIT_DATA } else { code };
        }
    }
    code
}

fn report(r: Result<(), Failure>) -> i32 {
    match r {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {f}");
            f.code
        }
    }
}

fn replay_path(manifest: &Path) -> PathBuf {
    let mut s = manifest.as_os_str().to_owned();
    s.push(".replay.json");
    PathBuf::from(s)
}

/// Checks the inputs are unchanged, re-runs the recorded command and
/// compares every artifact hash.
fn replay(path: &Path) -> Result<(), Failure> {
    let m = RunManifest::load(path).map_err(|e| Failure::data(format!("cannot read manifest {}: {e}", path.display())))?;
    if m.command == "replay" {
        return Err(Failure::usage("cannot replay a replay"));
    }
    for (input, expected) in &m.inputs {
        let found = hash_path(input).map_err(|e| Failure::data(format!("input {}: {e}", input.display())))?;
        if &found != expected {
            return Err(Failure::data(format!(
                "input {} changed since the recorded run (sha256 {expected}, now {found})",
                input.display()
            )));
        }
    }
    let mut argv: Vec<OsString> = vec!["speechvqa".into()];
    argv.extend(m.argv.iter().map(OsString::from));
    if m.command == "gen-data" && !m.argv.iter().any(|a| a == "--force") {
        argv.push("--force".into());
    }
    let out = replay_path(path);
    let code = run_with(argv, Some(out.clone()));
    if code != m.exit_status {
        return Err(Failure::data(format!(
            "replay exited with {code}, the recorded run with {}",
            m.exit_status
        )));
    }
    let mut mismatches = Vec::new();
    for (artifact, expected) in &m.artifacts {
        match hash_path(artifact) {
            Ok(found) if &found == expected => println!("match    {}", artifact.display()),
            Ok(found) => {
                println!("MISMATCH {} (recorded {expected}, replayed {found})", artifact.display());
                mismatches.push(artifact.display().to_string());
            }
            Err(e) => {
                println!("MISSING  {} ({e})", artifact.display());
                mismatches.push(artifact.display().to_string());
            }
        }
    }
    if !mismatches.is_empty() {
        return Err(Failure::data(format!(
            "{} artifact(s) differ from the recorded run: {}",
            mismatches.len(),
            mismatches.join(", ")
        )));
    }
    println!("replay reproduced {} artifact(s); manifest {}", m.artifacts.len(), out.display());
    Ok(())
}
