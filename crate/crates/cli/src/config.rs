//! Run configuration: a flat TOML document of `key = value` pairs (dotted
//! keys and tables are flattened to `a.b` names), overridden by flags.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use bforest_core::config::{ExecutionMode, PlannerConfig};
use bforest_core::llm::{BackendConfig, BackendKind};
use serde::de::DeserializeOwned;
use toml::Value;

/// Keys whose values are filesystem paths; relative paths in a config file
/// are resolved against the file's directory.
const PATH_KEYS: [&str; 5] = ["catalog", "queries", "out", "prompts", "mock.rules"];

/// Flat settings, later entries overriding earlier ones.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings(pub BTreeMap<String, Value>);

impl Settings {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().context("config is not valid TOML")?;
        let mut out = Settings::default();
        flatten(&table, "", &mut out.0);
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut settings =
            Self::from_toml_str(&text).with_context(|| format!("in {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for key in PATH_KEYS {
            if let Some(v) = settings.0.get_mut(key) {
                *v = rebase(v, base);
            }
        }
        Ok(settings)
    }

    pub fn set(&mut self, key: &str, value: Value) {
        self.0.insert(key.to_string(), value);
    }

    /// Parses a `key=value` override. The value is read as a TOML value
    /// when possible and as a bare string otherwise.
    pub fn set_assignment(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| anyhow!("override `{assignment}` is not key=value"))?;
        let raw = raw.trim();
        let value = format!("v = {raw}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| Value::String(raw.to_string()));
        self.set(key.trim(), value);
        Ok(())
    }

    pub fn merge(&mut self, other: Settings) {
        self.0.extend(other.0);
    }
}

fn flatten(table: &toml::Table, prefix: &str, out: &mut BTreeMap<String, Value>) {
    for (k, v) in table {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            Value::Table(inner) => flatten(inner, &key, out),
            other => {
                out.insert(key, other.clone());
            }
        }
    }
}

fn rebase(value: &Value, base: &Path) -> Value {
    match value {
        Value::String(s) if Path::new(s).is_relative() => {
            Value::String(base.join(s).to_string_lossy().into_owned())
        }
        Value::Array(items) => Value::Array(items.iter().map(|v| rebase(v, base)).collect()),
        other => other.clone(),
    }
}

/// Everything a command needs to run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub catalog: PathBuf,
    /// Query files or directories of query files.
    pub queries: Vec<PathBuf>,
    pub out: PathBuf,
    pub prompts: Option<PathBuf>,
    /// Queries planned concurrently.
    pub jobs: usize,
    pub planner: PlannerConfig,
    pub backend: BackendConfig,
}

fn typed<T: DeserializeOwned>(key: &str, value: &Value) -> Result<T> {
    value
        .clone()
        .try_into()
        .map_err(|e| anyhow!("bad value for `{key}`: {e}"))
}

fn paths(key: &str, value: &Value) -> Result<Vec<PathBuf>> {
    match value {
        Value::Array(_) => typed::<Vec<PathBuf>>(key, value),
        _ => Ok(vec![typed::<PathBuf>(key, value)?]),
    }
}

pub fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

impl RunConfig {
    /// Builds a configuration. `require_paths` demands the catalog and
    /// query locations, which every command except `synth` needs.
    pub fn from_settings(settings: &Settings, require_paths: bool) -> Result<Self> {
        let mut catalog = None;
        let mut queries = Vec::new();
        let mut out = PathBuf::from("out");
        let mut prompts = None;
        let mut jobs = default_jobs();
        let mut planner = PlannerConfig::default();
        let mut backend = BackendConfig::default();

        for (key, v) in &settings.0 {
            let k = key.as_str();
            match k {
                "catalog" => catalog = Some(typed::<PathBuf>(k, v)?),
                "queries" => queries = paths(k, v)?,
                "out" => out = typed(k, v)?,
                "prompts" => prompts = Some(typed(k, v)?),
                "jobs" => jobs = typed(k, v)?,
                "mode" => planner.mode = typed::<ExecutionMode>(k, v)?,
                "max_rounds" => planner.max_rounds = typed(k, v)?,
                "pool_size" => planner.pool_size = typed(k, v)?,
                "regenerations_per_tree" => planner.regenerations_per_tree = typed(k, v)?,
                "attractions_per_day" => planner.attractions_per_day = typed(k, v)?,
                "attraction_pricing" => planner.attraction_pricing = typed(k, v)?,
                "commonsense" => planner.commonsense = typed(k, v)?,
                "llm_verify" => planner.llm_verify = typed(k, v)?,
                "ablate" => {
                    for name in typed::<Vec<String>>(k, v)? {
                        set_ablation(&mut planner, &name, true)?;
                    }
                }
                "budget_shares.transportation" => {
                    planner.budget_shares.transportation = typed(k, v)?
                }
                "budget_shares.accommodation" => planner.budget_shares.accommodation = typed(k, v)?,
                "budget_shares.dining" => planner.budget_shares.dining = typed(k, v)?,
                "budget_shares.attractions" => planner.budget_shares.attractions = typed(k, v)?,
                "heuristic_weights.cost" => planner.heuristic_weights.cost = typed(k, v)?,
                "heuristic_weights.soft" => planner.heuristic_weights.soft = typed(k, v)?,
                "heuristic_weights.rating" => planner.heuristic_weights.rating = typed(k, v)?,
                "backend" | "backend.kind" => backend.kind = typed::<BackendKind>(k, v)?,
                "backend.endpoint" => backend.endpoint = Some(typed(k, v)?),
                "backend.model" => backend.model = Some(typed(k, v)?),
                "backend.temperature" => backend.temperature = typed(k, v)?,
                "backend.api_key_env" => backend.api_key_env = typed(k, v)?,
                "backend.retries" => backend.retries = typed(k, v)?,
                "backend.timeout_ms" => backend.timeout_ms = typed(k, v)?,
                "backend.max_in_flight" => backend.max_in_flight = typed(k, v)?,
                "mock.rules" => backend.mock_rules = Some(typed(k, v)?),
                "mock.latency_ms" => backend.mock_latency_ms = typed(k, v)?,
                _ => match k.strip_prefix("ablation.") {
                    Some(name) => set_ablation(&mut planner, name, typed(k, v)?)?,
                    None => bail!("unknown config key `{k}`"),
                },
            }
        }

        planner.validate().map_err(|e| anyhow!(e))?;
        if jobs == 0 {
            bail!("jobs must be at least 1");
        }
        let catalog = match catalog {
            Some(c) => c,
            None if require_paths => bail!("no catalog given (--catalog or `catalog` key)"),
            None => PathBuf::new(),
        };
        if require_paths && queries.is_empty() {
            bail!("no queries given (--queries or `queries` key)");
        }
        if out.as_os_str().is_empty() {
            bail!("output path must not be empty");
        }
        Ok(RunConfig {
            catalog,
            queries,
            out,
            prompts,
            jobs,
            planner,
            backend,
        })
    }
}

fn set_ablation(planner: &mut PlannerConfig, name: &str, on: bool) -> Result<()> {
    let flag = match name {
        "no_coordination" => &mut planner.ablation.no_coordination,
        "no_rerank" => &mut planner.ablation.no_rerank,
        "no_heuristic" => &mut planner.ablation.no_heuristic,
        other => bail!("unknown ablation `{other}`"),
    };
    *flag = on;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings(text: &str) -> Settings {
        Settings::from_toml_str(text).unwrap()
    }

    #[test]
    fn flat_and_dotted_keys_agree() {
        let a = settings("catalog = \"c.json\"\nqueries = \"q\"\nbudget_shares.dining = 40\nmock.latency_ms = 200");
        let b = settings("catalog = \"c.json\"\nqueries = \"q\"\n[budget_shares]\ndining = 40\n[mock]\nlatency_ms = 200");
        assert_eq!(a, b);
        let cfg = RunConfig::from_settings(&a, true).unwrap();
        assert_eq!(cfg.planner.budget_shares.dining, 40);
        assert_eq!(cfg.backend.mock_latency_ms, 200);
    }

    #[test]
    fn overrides_win() {
        let mut s = settings(
            "catalog = \"c.json\"\nqueries = [\"a\", \"b\"]\nmode = \"parallel\"\npool_size = 5",
        );
        s.set_assignment("pool_size=9").unwrap();
        s.set_assignment("mode=sequential").unwrap();
        s.set_assignment("ablate=[\"no_rerank\"]").unwrap();
        let cfg = RunConfig::from_settings(&s, true).unwrap();
        assert_eq!(cfg.planner.pool_size, 9);
        assert_eq!(cfg.planner.mode, ExecutionMode::Sequential);
        assert!(cfg.planner.ablation.no_rerank);
        assert!(!cfg.planner.ablation.no_coordination);
        assert_eq!(cfg.queries.len(), 2);
    }

    #[test]
    fn bad_input_is_rejected() {
        assert!(RunConfig::from_settings(&settings("colour = 1"), false).is_err());
        assert!(RunConfig::from_settings(&settings("pool_size = 0"), false).is_err());
        assert!(RunConfig::from_settings(&settings("ablate = [\"no_magic\"]"), false).is_err());
        assert!(RunConfig::from_settings(&settings("queries = \"q\""), true).is_err());
        assert!(Settings::default().set_assignment("novalue").is_err());
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(
            &path,
            "catalog = \"data/c.json\"\nqueries = [\"q1.json\"]\nout = \"/abs/out\"",
        )
        .unwrap();
        let cfg = RunConfig::from_settings(&Settings::load(&path).unwrap(), true).unwrap();
        assert_eq!(cfg.catalog, dir.path().join("data/c.json"));
        assert_eq!(cfg.queries, vec![dir.path().join("q1.json")]);
        assert_eq!(cfg.out, PathBuf::from("/abs/out"));
    }
}
