//! Scenario runner for `ssbm-core`: configuration, datasets, manifests and
//! acceptance checks.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checks;
pub mod config;
pub mod output;
pub mod scenarios;

use std::ffi::OsString;

use clap::Parser;

pub use config::{Cli, ConfigError, RunConfig, Scenario};
pub use output::Manifest;

use checks::CheckOutcome;
use output::Artifacts;

/// Exit status for usage errors.
pub const EXIT_USAGE: i32 = 2;
/// Exit status for failed checks or a failed scenario.
pub const EXIT_FAILURE: i32 = 1;

#[derive(Debug)]
pub struct Report {
    pub manifest: Manifest,
    pub checks: Vec<CheckOutcome>,
}

impl Report {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Runs a resolved configuration and writes its artifacts.
pub fn run(cfg: &RunConfig) -> anyhow::Result<Report> {
    let mut ctx = scenarios::Ctx {
        cfg,
        out: Artifacts::create(&cfg.output_dir)?,
        checks: Vec::new(),
    };
    output::log(
        cfg.scenario.name(),
        &format!(
            "profile {}, config {}",
            cfg.profile_label(),
            &cfg.config_hash()[..12]
        ),
    );
    ctx.out.note(format!("scenario {}", cfg.scenario));
    ctx.out.note(format!("profile {}", cfg.profile_label()));
    if let Some(s) = cfg.seed {
        ctx.out.note(format!("seed {s}"));
    }
    ctx.out.write("config.toml", &cfg.canonical_toml())?;
    scenarios::run(&mut ctx)?;
    let checks = std::mem::take(&mut ctx.checks);
    let failed = checks.iter().filter(|c| !c.passed).count();
    ctx.out.note(format!(
        "checks: {} passed, {failed} failed",
        checks.len() - failed
    ));
    let manifest = ctx.out.finish(
        cfg.scenario.name(),
        &cfg.profile_label(),
        &cfg.config_hash(),
        cfg.seed,
    )?;
    output::log(
        cfg.scenario.name(),
        &format!(
            "wrote {} files to {}",
            manifest.files.len() + 1,
            cfg.output_dir.display()
        ),
    );
    Ok(Report { manifest, checks })
}

/// Parses arguments, runs, and maps the result to an exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let cfg = match RunConfig::from_cli(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    match run(&cfg) {
        Ok(report) => {
            let enforce = cfg.check || cfg.scenario == Scenario::CheckAll;
            if enforce && !report.all_passed() {
                EXIT_FAILURE
            } else {
                0
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_FAILURE
        }
    }
}
