use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use topexpert::scaffold::{default_ring_buckets, RingBucket};
use topexpert::trainer::{GridAxes, TrainConfig};
use topexpert::Error;

/// Run configuration file. Relative paths resolve against the file's directory.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// The one seed behind splitting, initialization, shuffling and sampling.
    #[serde(default)]
    pub seed: u64,
    /// Artifact directory; defaults to `out` next to the config file.
    pub out: Option<PathBuf>,
    pub data: DataConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub inspect: InspectConfig,
    #[serde(default)]
    pub grid: GridConfig,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub csv: PathBuf,
    #[serde(default = "default_smiles_column")]
    pub smiles_column: String,
    /// Task columns; when absent, every binary column is a task.
    pub tasks: Option<Vec<String>>,
}

fn default_smiles_column() -> String {
    "smiles".into()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Scaffold,
    Ring,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub protocol: Protocol,
    pub ratios: [f64; 3],
    /// Manifest path; defaults to `split.json` in the artifact directory.
    pub manifest: Option<PathBuf>,
    /// Order equal-size scaffold groups by a seeded shuffle instead of by key.
    pub shuffle_ties: bool,
    /// Ring-count buckets for the ring protocol.
    pub buckets: Vec<RingBucket>,
    /// Buckets whose molecules are scaffold-split into train, valid and test under the
    /// ring protocol. The other buckets are held out.
    pub in_distribution: Vec<String>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            protocol: Protocol::Scaffold,
            ratios: [0.8, 0.1, 0.1],
            manifest: None,
            shuffle_ties: false,
            buckets: default_ring_buckets(),
            in_distribution: vec!["D-1".into(), "D-2".into(), "D-3".into()],
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Defaults to `model.ckpt` in the artifact directory.
    pub checkpoint: Option<PathBuf>,
    /// `train`, `valid`, `test`, `all` or a ring bucket name.
    pub subset: String,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            checkpoint: None,
            subset: "test".into(),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InspectConfig {
    /// Defaults to `model.ckpt` in the artifact directory.
    pub checkpoint: Option<PathBuf>,
    pub subset: String,
}

impl Default for InspectConfig {
    fn default() -> Self {
        InspectConfig {
            checkpoint: None,
            subset: "train".into(),
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    /// Seeds per cell; defaults to the run seed.
    pub seeds: Option<Vec<u64>>,
    pub axes: GridAxes,
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

/// A configuration with overrides applied and every path made absolute or cwd-relative.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub run: RunConfig,
    pub out: PathBuf,
    pub manifest: PathBuf,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl Resolved {
    pub fn model_checkpoint(&self, explicit: Option<&PathBuf>) -> PathBuf {
        explicit
            .cloned()
            .unwrap_or_else(|| self.out.join("model.ckpt"))
    }
}

/// Parses a configuration text; `base` anchors relative paths.
pub fn parse(text: &str, base: &Path, overrides: &Overrides) -> Result<Resolved, Error> {
    let value: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    if value.get("train").and_then(|t| t.get("seed")).is_some() {
        return Err(Error::Config(
            "set `seed` at the top level, not in [train]".into(),
        ));
    }
    let mut run: RunConfig = toml::Value::Table(value)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    if let Some(seed) = overrides.seed {
        run.seed = seed;
        run.grid.seeds = Some(vec![seed]);
    }
    run.train.seed = run.seed;
    run.data.csv = resolve(base, &run.data.csv);
    let out = match &overrides.out {
        Some(o) => o.clone(),
        None => resolve(base, run.out.as_deref().unwrap_or(Path::new("out"))),
    };
    let manifest = match &run.split.manifest {
        Some(m) => resolve(base, m),
        None => out.join("split.json"),
    };
    run.eval.checkpoint = run.eval.checkpoint.as_deref().map(|p| resolve(base, p));
    run.inspect.checkpoint = run.inspect.checkpoint.as_deref().map(|p| resolve(base, p));
    Ok(Resolved { run, out, manifest })
}

pub fn load(path: &Path, overrides: &Overrides) -> Result<Resolved, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse(&text, base, overrides)
}
