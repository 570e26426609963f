use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use topexpert::molio::{detect_task_columns_in, load_csv, ring_counts, LabeledDataset};
use topexpert::scaffold::{murcko_scaffold, ring_split, scaffold_keys, scaffold_split_keys};
use topexpert::trainer::{
    cluster_only, evaluate, grid_search, history_jsonl, inspect, threads_from_env, Checkpoint,
    EvalReport, GridReport, InspectReport, Representative,
};
use topexpert::Error;

use crate::config::{Protocol, Resolved};

/// Writes through a sibling temporary file and a rename, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Error> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let mut text = serde_json::to_string_pretty(value).expect("reports serialize");
    text.push('\n');
    write_atomic(path, text.as_bytes())?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn require(path: &Path) -> Result<(), Error> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
        ))
    }
}

/// Task columns from the config, else every binary column of the file.
fn task_columns(cfg: &Resolved) -> Result<Vec<String>, Error> {
    let data = &cfg.run.data;
    match &data.tasks {
        Some(t) => Ok(t.clone()),
        None => {
            let detected = detect_task_columns_in(&data.csv, &data.smiles_column)?;
            if detected.is_empty() {
                return Err(Error::Config(format!(
                    "no binary task columns in {}",
                    data.csv.display()
                )));
            }
            Ok(detected)
        }
    }
}

fn load_with(cfg: &Resolved, tasks: &[String]) -> Result<LabeledDataset, Error> {
    let data = &cfg.run.data;
    require(&data.csv)?;
    let ds = load_csv(&data.csv, &data.smiles_column, tasks)?;
    log::info!(
        "loaded {} molecules, {} tasks ({} unparseable, {} unlabeled rows skipped)",
        ds.len(),
        ds.task_count(),
        ds.skipped_unparseable,
        ds.skipped_unlabeled
    );
    Ok(ds)
}

fn load_labeled(cfg: &Resolved) -> Result<LabeledDataset, Error> {
    load_with(cfg, &task_columns(cfg)?)
}

/// Partition of a dataset into index lists, as written by `split`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub protocol: Protocol,
    pub molecules: usize,
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
    /// Distinct scaffold keys of each partition.
    pub scaffold_keys: BTreeMap<String, Vec<String>>,
    /// Ring protocol only: members of every bucket.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub buckets: BTreeMap<String, Vec<usize>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub bucket_sizes: BTreeMap<String, usize>,
}

impl Manifest {
    fn split(&self) -> topexpert::scaffold::SplitAssignment {
        topexpert::scaffold::SplitAssignment {
            train: self.train.clone(),
            valid: self.valid.clone(),
            test: self.test.clone(),
        }
    }

    fn subset(&self, name: &str) -> Result<Vec<usize>, Error> {
        let rows = match name {
            "train" => self.train.clone(),
            "valid" => self.valid.clone(),
            "test" => self.test.clone(),
            "all" => (0..self.molecules).collect(),
            other => self
                .buckets
                .get(other)
                .cloned()
                .ok_or_else(|| Error::Config(format!("unknown subset '{other}'")))?,
        };
        if rows.is_empty() {
            return Err(Error::Config(format!("subset '{name}' is empty")));
        }
        Ok(rows)
    }
}

fn load_manifest(cfg: &Resolved, ds: &LabeledDataset) -> Result<Manifest, Error> {
    require(&cfg.manifest)?;
    let m: Manifest = read_json(&cfg.manifest)?;
    if m.molecules != ds.len() {
        return Err(Error::Config(format!(
            "manifest {} describes {} molecules but the dataset has {}",
            cfg.manifest.display(),
            m.molecules,
            ds.len()
        )));
    }
    Ok(m)
}

fn distinct(keys: &[String], rows: &[usize]) -> Vec<String> {
    rows.iter()
        .map(|&i| keys[i].clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

pub fn split(cfg: &Resolved) -> Result<(), Error> {
    let ds = load_labeled(cfg)?;
    let sc = &cfg.run.split;
    let keys = scaffold_keys(&ds);
    let seed = sc.shuffle_ties.then_some(cfg.run.seed);
    let (assignment, buckets) = match sc.protocol {
        Protocol::Scaffold => (
            scaffold_split_keys(&keys, sc.ratios, seed)?,
            BTreeMap::new(),
        ),
        Protocol::Ring => {
            let buckets = ring_split(&ds, &sc.buckets)?;
            for name in &sc.in_distribution {
                if !buckets.contains_key(name) {
                    return Err(Error::Config(format!(
                        "in_distribution names unknown bucket '{name}'"
                    )));
                }
            }
            let rows: Vec<usize> = sc
                .in_distribution
                .iter()
                .flat_map(|b| buckets[b].iter().copied())
                .collect();
            let sub_keys: Vec<String> = rows.iter().map(|&i| keys[i].clone()).collect();
            let local = scaffold_split_keys(&sub_keys, sc.ratios, seed)?;
            let global = |v: Vec<usize>| {
                let mut out: Vec<usize> = v.into_iter().map(|i| rows[i]).collect();
                out.sort_unstable();
                out
            };
            let assignment = topexpert::scaffold::SplitAssignment {
                train: global(local.train),
                valid: global(local.valid),
                test: global(local.test),
            };
            (assignment, buckets)
        }
    };
    let manifest = Manifest {
        protocol: sc.protocol,
        molecules: ds.len(),
        scaffold_keys: [
            ("train", &assignment.train),
            ("valid", &assignment.valid),
            ("test", &assignment.test),
        ]
        .into_iter()
        .map(|(n, rows)| (n.to_string(), distinct(&keys, rows)))
        .collect(),
        bucket_sizes: buckets.iter().map(|(k, v)| (k.clone(), v.len())).collect(),
        buckets,
        train: assignment.train,
        valid: assignment.valid,
        test: assignment.test,
    };
    write_json(&cfg.manifest, &manifest)
}

#[derive(Serialize)]
struct LabelCounts {
    task: String,
    positive: usize,
    negative: usize,
    missing: usize,
}

#[derive(Serialize)]
struct DatasetSummary {
    molecules: usize,
    tasks: usize,
    task_names: Vec<String>,
    skipped_unparseable: usize,
    skipped_unlabeled: usize,
    distinct_scaffolds: usize,
    labels: Vec<LabelCounts>,
}

#[derive(Serialize)]
struct MoleculeFeatures<'a> {
    index: usize,
    smiles: &'a str,
    atoms: usize,
    bonds: usize,
    rings: usize,
    aromatic_rings: usize,
    scaffold: &'a str,
}

pub fn featurize(cfg: &Resolved) -> Result<(), Error> {
    let ds = load_labeled(cfg)?;
    let keys = scaffold_keys(&ds);
    let labels = (0..ds.task_count())
        .map(|t| {
            let column = ds.records.iter().map(|r| r.labels[t]);
            LabelCounts {
                task: ds.task_names[t].clone(),
                positive: column.clone().filter(|l| *l == Some(true)).count(),
                negative: column.clone().filter(|l| *l == Some(false)).count(),
                missing: column.filter(Option::is_none).count(),
            }
        })
        .collect();
    let summary = DatasetSummary {
        molecules: ds.len(),
        tasks: ds.task_count(),
        task_names: ds.task_names.clone(),
        skipped_unparseable: ds.skipped_unparseable,
        skipped_unlabeled: ds.skipped_unlabeled,
        distinct_scaffolds: keys.iter().collect::<BTreeSet<_>>().len(),
        labels,
    };
    let mut lines = String::new();
    for (i, (r, key)) in ds.records.iter().zip(&keys).enumerate() {
        let (rings, aromatic_rings) = ring_counts(&murcko_scaffold(&r.graph));
        let row = MoleculeFeatures {
            index: i,
            smiles: &r.smiles,
            atoms: r.graph.n(),
            bonds: r.graph.m(),
            rings,
            aromatic_rings,
            scaffold: key,
        };
        lines.push_str(&serde_json::to_string(&row).expect("row serializes"));
        lines.push('\n');
    }
    write_atomic(&cfg.out.join("features.jsonl"), lines.as_bytes())?;
    write_json(&cfg.out.join("dataset.json"), &summary)
}

#[derive(Serialize)]
struct TrainSummary {
    best_epoch: usize,
    best_valid_auc: f64,
    epochs_run: usize,
    config_hash: String,
    checkpoint_digest: String,
    valid: EvalReport,
    test: Option<EvalReport>,
}

pub fn train(cfg: &Resolved) -> Result<(), Error> {
    let ds = load_labeled(cfg)?;
    let manifest = load_manifest(cfg, &ds)?;
    let split = manifest.split();
    let out = topexpert::trainer::train(&ds, &split, &cfg.run.train)?;
    let ckpt_path = cfg.out.join("model.ckpt");
    write_atomic(&ckpt_path, &out.best.to_bytes())?;
    write_atomic(
        &cfg.out.join("history.jsonl"),
        history_jsonl(&out.history).as_bytes(),
    )?;
    let summary = TrainSummary {
        best_epoch: out.best_epoch,
        best_valid_auc: out.best_valid_auc,
        epochs_run: out.epochs_run,
        config_hash: cfg.run.train.hash(),
        checkpoint_digest: out.best.digest(),
        valid: evaluate(&out.best, &ds, &split.valid)?,
        test: if split.test.is_empty() {
            None
        } else {
            Some(evaluate(&out.best, &ds, &split.test)?)
        },
    };
    write_json(&cfg.out.join("metrics.json"), &summary)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, Error> {
    require(path)?;
    Checkpoint::load(path)
}

/// Dataset rows for a subset; `all` needs no manifest.
fn subset_rows(cfg: &Resolved, ds: &LabeledDataset, subset: &str) -> Result<Vec<usize>, Error> {
    if subset == "all" {
        return Ok((0..ds.len()).collect());
    }
    load_manifest(cfg, ds)?.subset(subset)
}

#[derive(Serialize)]
struct EvalSummary {
    subset: String,
    checkpoint_digest: String,
    report: EvalReport,
}

pub fn eval(cfg: &Resolved) -> Result<(), Error> {
    let ckpt = load_checkpoint(&cfg.model_checkpoint(cfg.run.eval.checkpoint.as_ref()))?;
    let ds = load_with(cfg, &ckpt.meta.task_names)?;
    let subset = &cfg.run.eval.subset;
    let rows = subset_rows(cfg, &ds, subset)?;
    let summary = EvalSummary {
        subset: subset.clone(),
        checkpoint_digest: ckpt.digest(),
        report: evaluate(&ckpt, &ds, &rows)?,
    };
    write_json(&cfg.out.join(format!("eval_{subset}.json")), &summary)
}

#[derive(Serialize)]
struct InspectSummary {
    subset: String,
    checkpoint_digest: String,
    report: InspectReport,
}

pub fn inspect_cmd(cfg: &Resolved) -> Result<(), Error> {
    let ckpt = load_checkpoint(&cfg.model_checkpoint(cfg.run.inspect.checkpoint.as_ref()))?;
    let ds = load_with(cfg, &ckpt.meta.task_names)?;
    let subset = &cfg.run.inspect.subset;
    let rows = subset_rows(cfg, &ds, subset)?;
    let summary = InspectSummary {
        subset: subset.clone(),
        checkpoint_digest: ckpt.digest(),
        report: inspect(&ckpt, &ds, &rows)?,
    };
    write_json(&cfg.out.join(format!("inspect_{subset}.json")), &summary)
}

fn representatives_text(reps: &[Representative]) -> String {
    reps.iter()
        .map(|r| {
            format!(
                "{}\tcluster_{}\t{}\t{}\n",
                r.smiles, r.cluster, r.index, r.distance
            )
        })
        .collect()
}

pub fn cluster(cfg: &Resolved) -> Result<(), Error> {
    // Clustering needs no labels, so every parseable molecule takes part.
    let ds = load_with(cfg, &[])?;
    let out = cluster_only(&ds, &cfg.run.train)?;
    write_atomic(&cfg.out.join("cluster.ckpt"), &out.checkpoint.to_bytes())?;
    write_atomic(
        &cfg.out.join("cluster_history.jsonl"),
        history_jsonl(&out.report.history).as_bytes(),
    )?;
    write_atomic(
        &cfg.out.join("representatives.tsv"),
        representatives_text(&out.report.representatives).as_bytes(),
    )?;
    write_json(&cfg.out.join("cluster.json"), &out.report)
}

pub fn grid(cfg: &Resolved) -> Result<(), Error> {
    let ds = load_labeled(cfg)?;
    let manifest = load_manifest(cfg, &ds)?;
    let cells = cfg.run.grid.axes.cells(&cfg.run.train);
    let seeds = cfg
        .run
        .grid
        .seeds
        .clone()
        .unwrap_or_else(|| vec![cfg.run.seed]);
    let report: GridReport =
        grid_search(&ds, &manifest.split(), &cells, &seeds, threads_from_env())?;
    write_json(&cfg.out.join("grid.json"), &report)
}
