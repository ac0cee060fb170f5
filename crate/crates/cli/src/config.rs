//! Config loading with command-line overrides.

use clap::Args;
use tapadapt::runner::ExperimentConfig;
use tapadapt::{Error, Result};

#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// TOML config file; missing keys take their defaults.
    #[arg(long, global = true)]
    pub config: Option<std::path::PathBuf>,

    /// Print the effective config as TOML and exit.
    #[arg(long, global = true)]
    pub print_config: bool,

    /// Override any config key, e.g. `--set learner.gamma=0.99`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,

    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',', global = true)]
    pub seeds: Option<Vec<u64>>,

    /// Samples per simulated stream.
    #[arg(long, global = true)]
    pub samples: Option<usize>,

    /// Ticks the agent stays Activated after an activation.
    #[arg(long, global = true)]
    pub response_ticks: Option<u32>,

    /// Activation threshold on the response probability.
    #[arg(long, global = true)]
    pub threshold: Option<f64>,

    /// Worker threads for multi-seed runs.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let base = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        let mut doc: toml::Value = toml::Value::try_from(&base).map_err(|e| Error::Config(e.to_string()))?;
        for o in &self.overrides {
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not KEY=VALUE")))?;
            set_path(&mut doc, key.trim(), parse_value(value.trim()))?;
        }
        let mut cfg: ExperimentConfig = doc.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        if let Some(s) = &self.seeds {
            cfg.seeds = s.clone();
        }
        if let Some(n) = self.samples {
            cfg.samples = n;
        }
        if let Some(r) = self.response_ticks {
            cfg.agent.response_ticks = r;
        }
        if let Some(t) = self.threshold {
            cfg.agent.threshold = t;
        }
        if let Some(t) = self.threads {
            cfg.threads = t;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// A TOML literal, or a bare string when the text does not parse as one.
fn parse_value(text: &str) -> toml::Value {
    format!("v = {text}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(text.to_string()))
}

fn set_path(doc: &mut toml::Value, key: &str, value: toml::Value) -> Result<()> {
    let mut parts = key.split('.').peekable();
    let mut node = doc;
    while let Some(part) = parts.next() {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{key}`: `{part}` is not inside a table")))?;
        if parts.peek().is_none() {
            if !table.contains_key(part) && !is_optional(key) {
                return Err(Error::Config(format!("unknown config key `{key}`")));
            }
            table.insert(part.to_string(), value);
            return Ok(());
        }
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    Err(Error::Config("empty override key".into()))
}

/// Keys that are absent from the serialized defaults because they are unset.
fn is_optional(key: &str) -> bool {
    matches!(
        key,
        "session.gateway"
            | "session.duty_cycle"
            | "simulator.corpus_dir"
            | "io.input"
            | "io.output"
            | "io.checkpoint"
            | "io.log"
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(overrides: &[&str]) -> ConfigArgs {
        ConfigArgs {
            overrides: overrides.iter().map(|s| s.to_string()).collect(),
            ..Default::default()
        }
    }

    #[test]
    fn overrides_reach_nested_keys() {
        let cfg = args(&["learner.gamma=0.9", "session.gateway=127.0.0.1:7000", "model.main_model=\"mlp\""])
            .resolve()
            .unwrap();
        assert_eq!(cfg.learner.gamma, 0.9);
        assert_eq!(cfg.session.gateway.as_deref(), Some("127.0.0.1:7000"));
        assert_eq!(cfg.model.main_model, tapadapt::model::MainModelKind::Mlp);
    }

    #[test]
    fn bad_overrides_are_config_errors() {
        for o in ["learner.gamma=2.0", "learner.nope=1", "gamma", "samples=\"x\""] {
            assert!(args(&[o]).resolve().unwrap_err().is_config(), "{o}");
        }
    }

    #[test]
    fn flags_beat_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "samples = 10\nseeds = [5]\n[agent]\nresponse_ticks = 4\n").unwrap();
        let cfg = ConfigArgs {
            config: Some(path),
            response_ticks: Some(9),
            ..Default::default()
        }
        .resolve()
        .unwrap();
        assert_eq!((cfg.samples, cfg.seeds.clone(), cfg.agent.response_ticks), (10, vec![5], 9));
    }
}
