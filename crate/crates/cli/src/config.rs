//! Run configuration: command line, profile resolution and overrides.

use std::fmt;
use std::path::{Path, PathBuf};

use clap::Parser;
use sha2::{Digest, Sha256};
use ssbm_core::profile::Profile;
use ssbm_core::ssbm::ArmModel;

/// Usage problems map to exit status 2.
#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("unknown scenario `{0}`; expected one of: {}", Scenario::NAMES.join(", "))]
    UnknownScenario(String),
    #[error("profile `{0}` is neither a built-in name nor a readable file: {1}")]
    Profile(String, String),
    #[error("override `{0}`: {1}")]
    Override(String, String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("scenario `{0}` is stochastic and needs --seed")]
    MissingSeed(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    CalibrateMap,
    ShapingCompare,
    ThetaSweep,
    IfLimits,
    OmegaSweep,
    AmConvert,
    Compression,
    Plan,
    Fdm,
    CheckAll,
}

impl Scenario {
    pub const NAMES: [&'static str; 13] = [
        "calibrate-map",
        "shaping-compare",
        "theta-sweep",
        "fig2",
        "if-limits",
        "omega-sweep",
        "fig3",
        "am-convert",
        "compression",
        "figS5",
        "plan",
        "fdm",
        "check-all",
    ];

    pub fn parse(name: &str) -> Result<Self, ConfigError> {
        Ok(match name {
            "calibrate-map" => Self::CalibrateMap,
            "shaping-compare" => Self::ShapingCompare,
            "theta-sweep" | "fig2" => Self::ThetaSweep,
            "if-limits" => Self::IfLimits,
            "omega-sweep" | "fig3" => Self::OmegaSweep,
            "am-convert" => Self::AmConvert,
            "compression" | "figS5" => Self::Compression,
            "plan" => Self::Plan,
            "fdm" => Self::Fdm,
            "check-all" => Self::CheckAll,
            other => return Err(ConfigError::UnknownScenario(other.to_string())),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::CalibrateMap => "calibrate-map",
            Self::ShapingCompare => "shaping-compare",
            Self::ThetaSweep => "theta-sweep",
            Self::IfLimits => "if-limits",
            Self::OmegaSweep => "omega-sweep",
            Self::AmConvert => "am-convert",
            Self::Compression => "compression",
            Self::Plan => "plan",
            Self::Fdm => "fdm",
            Self::CheckAll => "check-all",
        }
    }

    pub fn stochastic(self) -> bool {
        matches!(self, Self::Fdm)
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// `ssbm-sim <scenario> [--profile P] [--seed S] [--out DIR] [--check] [--set K=V ...]`
#[derive(Debug, Clone, Parser)]
#[command(
    name = "ssbm-sim",
    version,
    about = "Single-sideband modulator scenarios"
)]
pub struct Cli {
    /// Scenario to run.
    pub scenario: String,
    /// `ideal`, `realistic`, or a path to a TOML profile.
    #[arg(long, default_value = "realistic")]
    pub profile: String,
    /// Seed for stochastic scenarios.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (default `out/<scenario>`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Exit with status 1 when a scenario check fails.
    #[arg(long)]
    pub check: bool,
    /// `section.key=value` override, repeatable.
    #[arg(long = "set", value_name = "K=V")]
    pub set: Vec<String>,
    /// Shorthand for `planner.channels`.
    #[arg(long)]
    pub channels: Option<usize>,
    /// Shorthand for `planner.kappa_hz`, in MHz.
    #[arg(long = "kappa-mhz")]
    pub kappa_mhz: Option<f64>,
    /// Shorthand for `drive.if_hz`.
    #[arg(long = "if-freq-hz")]
    pub if_freq_hz: Option<f64>,
    /// Shorthand for `awg.sample_rate_hz`.
    #[arg(long = "awg-rate")]
    pub awg_rate: Option<f64>,
    /// Shorthand for `awg.bandwidth_hz`.
    #[arg(long = "awg-bw")]
    pub awg_bw: Option<f64>,
    /// Unshaped sinusoidal drive.
    #[arg(long = "no-shaping")]
    pub no_shaping: bool,
}

/// Where the profile comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum ProfileSource {
    Builtin(String),
    File(PathBuf),
}

/// A fully resolved run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub source: ProfileSource,
    pub profile: Profile,
    pub seed: Option<u64>,
    pub output_dir: PathBuf,
    pub check: bool,
    /// Overrides in application order, convenience flags last.
    pub overrides: Vec<(String, String)>,
}

impl RunConfig {
    pub fn from_cli(cli: &Cli) -> Result<Self, ConfigError> {
        let scenario = Scenario::parse(&cli.scenario)?;
        let mut overrides = cli
            .set
            .iter()
            .map(|kv| split_override(kv))
            .collect::<Result<Vec<_>, _>>()?;
        let mut flag = |k: &str, v: String| overrides.push((k.to_string(), v));
        if let Some(n) = cli.channels {
            flag("planner.channels", n.to_string());
        }
        if let Some(k) = cli.kappa_mhz {
            flag("planner.kappa_hz", float(k * 1e6));
        }
        if let Some(f) = cli.if_freq_hz {
            flag("drive.if_hz", float(f));
        }
        if let Some(r) = cli.awg_rate {
            flag("awg.sample_rate_hz", float(r));
        }
        if let Some(b) = cli.awg_bw {
            flag("awg.bandwidth_hz", float(b));
        }
        if cli.no_shaping {
            flag("drive.shaping", "false".into());
        }
        if scenario.stochastic() && cli.seed.is_none() {
            return Err(ConfigError::MissingSeed(scenario.name()));
        }
        let source = if Profile::by_name(&cli.profile).is_some() {
            ProfileSource::Builtin(cli.profile.clone())
        } else {
            ProfileSource::File(PathBuf::from(&cli.profile))
        };
        let profile = resolve(&source, &overrides)?;
        Ok(Self {
            scenario,
            source,
            profile,
            seed: cli.seed,
            output_dir: cli
                .out
                .clone()
                .unwrap_or_else(|| Path::new("out").join(scenario.name())),
            check: cli.check,
            overrides,
        })
    }

    pub fn profile_label(&self) -> String {
        if self.scenario == Scenario::CheckAll {
            return "built-in ideal and realistic".into();
        }
        match &self.source {
            ProfileSource::Builtin(n) => n.clone(),
            ProfileSource::File(p) => p.display().to_string(),
        }
    }

    /// Canonical TOML of everything that determines the outputs.
    pub fn canonical_toml(&self) -> String {
        let mut run = toml::Table::new();
        run.insert("scenario".into(), self.scenario.name().into());
        if let Some(s) = self.seed {
            run.insert("seed".into(), toml::Value::String(s.to_string()));
        }
        let mut doc = toml::Table::new();
        doc.insert("run".into(), toml::Value::Table(run));
        let mut text = toml::to_string(&doc).expect("run table serializes");
        text.push('\n');
        text.push_str(&profile_toml(&self.profile));
        text
    }

    pub fn config_hash(&self) -> String {
        hex(&Sha256::digest(self.canonical_toml().as_bytes()))
    }
}

/// Shortest round-trip float text, always with a decimal point or exponent.
fn float(x: f64) -> String {
    toml::Value::Float(x).to_string()
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn split_override(kv: &str) -> Result<(String, String), ConfigError> {
    let (k, v) = kv
        .split_once('=')
        .ok_or_else(|| ConfigError::Override(kv.into(), "expected section.key=value".into()))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

pub fn profile_toml(p: &Profile) -> String {
    toml::to_string(p).expect("profiles serialize to TOML")
}

/// Whether the profile uses lossless analytic bridges.
pub fn is_ideal(p: &Profile) -> bool {
    p.device.arm_model == ArmModel::IdealReal
}

fn parse_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Applies `section.key=value` pairs to a profile.
pub fn apply_overrides(
    p: &Profile,
    overrides: &[(String, String)],
) -> Result<Profile, ConfigError> {
    let mut table = toml::Table::try_from(p).map_err(|e| ConfigError::Invalid(e.to_string()))?;
    for (k, v) in overrides {
        let (section, key) = k
            .split_once('.')
            .ok_or_else(|| ConfigError::Override(k.clone(), "expected section.key".into()))?;
        let sec = table
            .get_mut(section)
            .and_then(|s| s.as_table_mut())
            .ok_or_else(|| ConfigError::Override(k.clone(), format!("no section `{section}`")))?;
        let mut value = parse_value(v);
        if let (Some(old), toml::Value::Integer(i)) = (sec.get(key), &value) {
            if old.is_float() {
                value = toml::Value::Float(*i as f64);
            }
        }
        sec.insert(key.to_string(), value);
    }
    toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| ConfigError::Invalid(e.message().to_string()))
}

/// Reads a TOML profile. A top-level `base = "ideal" | "realistic"` picks
/// the defaults that the file's sections then override key by key. A `[run]`
/// table, as written to `config.toml`, is skipped.
pub fn load_profile_file(path: &Path) -> Result<Profile, ConfigError> {
    let label = path.display().to_string();
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::Profile(label.clone(), e.to_string()))?;
    let doc: toml::Table = text.parse().map_err(|e: toml::de::Error| {
        ConfigError::Profile(label.clone(), e.message().to_string())
    })?;
    let base_name = match doc.get("base") {
        None => "realistic",
        Some(toml::Value::String(s)) => s.as_str(),
        Some(_) => {
            return Err(ConfigError::Profile(
                label,
                "`base` must be a string".into(),
            ))
        }
    };
    let base = Profile::by_name(base_name).ok_or_else(|| {
        ConfigError::Profile(label.clone(), format!("unknown base `{base_name}`"))
    })?;
    let mut pairs = Vec::new();
    for (section, body) in &doc {
        if section == "base" || section == "run" {
            continue;
        }
        let t = body.as_table().ok_or_else(|| {
            ConfigError::Profile(label.clone(), format!("`{section}` must be a table"))
        })?;
        for (key, value) in t {
            pairs.push((format!("{section}.{key}"), value.to_string()));
        }
    }
    apply_overrides(&base, &pairs)
}

pub fn resolve(
    source: &ProfileSource,
    overrides: &[(String, String)],
) -> Result<Profile, ConfigError> {
    let base = match source {
        ProfileSource::Builtin(name) => Profile::by_name(name)
            .ok_or_else(|| ConfigError::Profile(name.clone(), "no such built-in".into()))?,
        ProfileSource::File(path) => load_profile_file(path)?,
    };
    apply_overrides(&base, overrides)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cli(args: &[&str]) -> Cli {
        Cli::parse_from(std::iter::once("ssbm-sim").chain(args.iter().copied()))
    }

    #[test]
    fn aliases_and_unknown_scenarios() {
        assert_eq!(Scenario::parse("fig2").unwrap(), Scenario::ThetaSweep);
        assert_eq!(Scenario::parse("figS5").unwrap(), Scenario::Compression);
        assert!(matches!(
            Scenario::parse("fig9"),
            Err(ConfigError::UnknownScenario(_))
        ));
    }

    #[test]
    fn overrides_and_flags_reach_the_profile() {
        let c = RunConfig::from_cli(&cli(&[
            "plan",
            "--set",
            "drive.theta_rad=-1.5",
            "--set",
            "readout.windows=250",
            "--channels",
            "6",
            "--kappa-mhz",
            "2",
            "--no-shaping",
        ]))
        .unwrap();
        assert_eq!(c.profile.drive.theta_rad, -1.5);
        assert_eq!(c.profile.readout.windows, 250);
        assert_eq!(c.profile.planner.channels, 6);
        assert_eq!(c.profile.planner.kappa_hz, 2e6);
        assert!(!c.profile.drive.shaping);
    }

    #[test]
    fn integer_text_for_float_fields_and_optional_fields() {
        let p = apply_overrides(
            &Profile::ideal(),
            &[
                ("drive.if_hz".into(), "20000000".into()),
                ("drive.input_power_dbm".into(), "-100".into()),
            ],
        )
        .unwrap();
        assert_eq!(p.drive.if_hz, 20e6);
        assert_eq!(p.drive.input_power_dbm, Some(-100.0));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = apply_overrides(&Profile::ideal(), &[("drive.iff_hz".into(), "1".into())]);
        assert!(matches!(bad, Err(ConfigError::Invalid(_))));
        let bad = apply_overrides(&Profile::ideal(), &[("nope.x".into(), "1".into())]);
        assert!(matches!(bad, Err(ConfigError::Override(..))));
    }

    #[test]
    fn stochastic_scenarios_need_a_seed() {
        assert!(matches!(
            RunConfig::from_cli(&cli(&["fdm"])),
            Err(ConfigError::MissingSeed(_))
        ));
    }

    #[test]
    fn profile_toml_round_trips() {
        for p in [Profile::ideal(), Profile::realistic()] {
            let text = profile_toml(&p);
            let back: Profile = toml::from_str(&text).unwrap();
            assert_eq!(back, p);
        }
    }

    #[test]
    fn profile_files_layer_over_a_base() {
        let dir = std::env::temp_dir().join(format!("ssbm-sim-cfg-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("p.toml");
        std::fs::write(&path, "base = \"ideal\"\n[drive]\nif_hz = 5e6\n").unwrap();
        let p = load_profile_file(&path).unwrap();
        assert_eq!(p.drive.if_hz, 5e6);
        assert!(is_ideal(&p));
        std::fs::write(&path, "[drive]\nbogus = 1\n").unwrap();
        assert!(load_profile_file(&path).is_err());
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn hash_tracks_config() {
        let a = RunConfig::from_cli(&cli(&["plan"])).unwrap();
        let b = RunConfig::from_cli(&cli(&["plan", "--channels", "9"])).unwrap();
        assert_eq!(a.config_hash().len(), 64);
        assert_ne!(a.config_hash(), b.config_hash());
        assert_eq!(
            a.config_hash(),
            RunConfig::from_cli(&cli(&["plan"])).unwrap().config_hash()
        );
    }
}
