use std::collections::BTreeMap;

use rand::seq::{index::sample, SliceRandom};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, AdamState, Tape, Tensor};
use crate::encoder::GraphBatch;
use crate::experts::CombinerKind;
use crate::gating::{gumbel_noise, kmeans_restarts, Annealing};
use crate::losses::{
    alignment_loss, bce_masked, clustering_loss, direct_alignment_loss,
    scaffold_classification_loss, target_distribution, total_loss, LossError, LossTerms,
    LossWeights,
};
use crate::metrics::{macro_auc, nmi, MetricError};
use crate::molio::{featurize, FeatureGraph, LabeledDataset, MolecularGraph};
use crate::rng::{stream, Stream};
use crate::scaffold::{
    canonical_key, default_ring_buckets, murcko_scaffold, ring_split_graphs, ScaffoldVocab,
    SplitAssignment,
};
use crate::Error;

use super::checkpoint::{Checkpoint, CheckpointMeta};
use super::config::{AlignKind, TargetUpdate, TrainConfig};
use super::model::{GateMode, Model, Prediction};

/// Above this many training molecules, k-means runs on a uniform subsample.
pub const KMEANS_SUBSAMPLE_ABOVE: usize = 50_000;
pub const KMEANS_SUBSAMPLE: usize = 20_000;
pub const KMEANS_MAX_ITER: usize = 100;
pub const KMEANS_TOL: f64 = 1e-6;
/// Independent k-means++ runs; the lowest-inertia one seeds the centroids.
pub const KMEANS_RESTARTS: usize = 10;

/// Per-record derived data shared by training, evaluation and inspection.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub graphs: Vec<FeatureGraph>,
    /// Murcko scaffold key per record.
    pub scaffold_keys: Vec<String>,
    /// Ring-count group name per record under the default buckets.
    pub ring_groups: Vec<String>,
}

impl Prepared {
    pub fn new(ds: &LabeledDataset) -> Result<Self, Error> {
        let graphs = ds.records.iter().map(|r| featurize(&r.graph)).collect();
        let scaffold_keys = ds
            .records
            .iter()
            .map(|r| canonical_key(&murcko_scaffold(&r.graph)))
            .collect();
        let mol: Vec<&MolecularGraph> = ds.records.iter().map(|r| &r.graph).collect();
        let mut ring_groups = vec![String::new(); ds.len()];
        for (name, idx) in ring_split_graphs(&mol, &default_ring_buckets())? {
            for i in idx {
                ring_groups[i] = name.clone();
            }
        }
        Ok(Prepared {
            graphs,
            scaffold_keys,
            ring_groups,
        })
    }

    pub fn graphs_at(&self, indices: &[usize]) -> Vec<&FeatureGraph> {
        indices.iter().map(|&i| &self.graphs[i]).collect()
    }
}

/// Inputs of one optimization step.
#[derive(Clone, Copy, Debug)]
pub struct StepInput<'a> {
    pub graphs: &'a [&'a FeatureGraph],
    /// Row-major `N x T` labels; ignored when `class` is false.
    pub labels: &'a [Option<bool>],
    /// Scaffold vocabulary index per graph.
    pub scaffold: &'a [Option<usize>],
    pub groups: Option<&'a [usize]>,
    pub noise: Option<&'a Tensor>,
    pub tau: f64,
    /// Precomputed targets for these rows; recomputed from the batch when absent.
    pub targets: Option<&'a Tensor>,
    /// Whether the classification term takes part.
    pub class: bool,
}

/// Loss values of one step; absent terms were not computed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub class: Option<f64>,
    pub cluster: Option<f64>,
    pub align: Option<f64>,
    pub total: f64,
}

/// Forward pass, losses, backward pass and one Adam update.
pub fn train_step(
    model: &mut Model,
    adam: &mut AdamState,
    input: &StepInput,
) -> Result<StepLosses, Error> {
    let batch = GraphBatch::new(input.graphs)?;
    let mut tape = Tape::new();
    let cfg = &model.config;
    let mode = GateMode::Train {
        tau: input.tau,
        noise: input.noise,
        groups: input.groups,
    };
    let (z, q, class) = if input.class {
        let out = model.forward(&mut tape, &batch, mode)?;
        let class = if input.labels.iter().any(Option::is_some) {
            Some(bce_masked(&mut tape, out.probs, input.labels)?)
        } else {
            None
        };
        (out.z, out.q, class)
    } else {
        let (_, z, q) = model.represent(&mut tape, &batch)?;
        (z, q, None)
    };

    let (mut cluster, mut align) = (None, None);
    if let (Some(parts), Some(q), Some(z)) = (&model.align, q, z) {
        let p = match input.targets {
            Some(t) => t.clone(),
            None => target_distribution(tape.value(q)),
        };
        cluster = Some(clustering_loss(&mut tape, &p, q)?);
        let known: Vec<usize> = (0..input.scaffold.len())
            .filter(|&i| input.scaffold[i].is_some())
            .collect();
        let known_idx: Vec<usize> = known
            .iter()
            .map(|&i| input.scaffold[i].expect("filtered"))
            .collect();
        align = match cfg.align {
            AlignKind::Ot => {
                let emb = tape.param(&model.store, parts.scaffold_emb);
                let mu = match &model.gate {
                    super::model::Gate::Cluster { centroids, .. } => {
                        tape.param(&model.store, *centroids)
                    }
                    _ => unreachable!("alignment requires the cluster gate"),
                };
                Some(alignment_loss(&mut tape, q, emb, mu, input.scaffold)?)
            }
            _ if known.is_empty() => None,
            AlignKind::Direct => {
                let emb = tape.param(&model.store, parts.scaffold_emb);
                let zk = if known.len() == input.scaffold.len() {
                    z
                } else {
                    tape.gather_rows(z, &known)?
                };
                Some(direct_alignment_loss(&mut tape, zk, emb, &known_idx)?)
            }
            AlignKind::Classify => {
                let head = parts
                    .classifier
                    .expect("classifier exists for this objective");
                let zk = if known.len() == input.scaffold.len() {
                    z
                } else {
                    tape.gather_rows(z, &known)?
                };
                let logits = head.forward(&mut tape, &model.store, zk)?;
                Some(scaffold_classification_loss(&mut tape, logits, &known_idx)?)
            }
        };
    }

    let weights = LossWeights {
        alpha: cfg.alpha,
        beta: cfg.beta,
    };
    let total = total_loss(
        &mut tape,
        LossTerms {
            class,
            cluster,
            align,
        },
        weights,
    )?;
    let value = |v: Option<crate::autodiff::Var>| v.map(|v| tape.value(v).item());
    let losses = StepLosses {
        class: value(class),
        cluster: value(cluster),
        align: value(align),
        total: tape.value(total).item(),
    };
    if !losses.total.is_finite() {
        return Err(LossError::NonFinite {
            component: "total",
            value: losses.total,
        }
        .into());
    }
    if tape.requires_grad(total) {
        let grads = tape.backward(total)?;
        grads.accumulate(&mut model.store);
        adam.step(&mut model.store)?;
        model.store.zero_grad();
    }
    Ok(losses)
}

/// One line of the training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub tau: f64,
    pub class_loss: Option<f64>,
    pub cluster_loss: Option<f64>,
    pub align_loss: Option<f64>,
    pub total_loss: f64,
    pub valid_auc: Option<f64>,
}

/// Serializes records as JSON lines.
pub fn history_jsonl(history: &[EpochRecord]) -> String {
    history
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect()
}

/// Patience-based stopping on a metric that should increase.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: Option<(usize, f64)>,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
        }
    }

    /// Records the metric of `epoch`; returns `(improved, stop)`.
    pub fn observe(&mut self, epoch: usize, value: f64) -> (bool, bool) {
        let improved = self.best.is_none_or(|(_, b)| value > b);
        if improved {
            self.best = Some((epoch, value));
        }
        let best_epoch = self.best.expect("set above").0;
        (improved, epoch - best_epoch >= self.patience)
    }
}

fn mean_of(values: &[Option<f64>]) -> Option<f64> {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
}

fn labels_of(ds: &LabeledDataset, indices: &[usize]) -> Vec<Option<bool>> {
    indices
        .iter()
        .flat_map(|&i| ds.records[i].labels.iter().copied())
        .collect()
}

/// Training state between epochs.
pub struct Session<'a> {
    pub ds: &'a LabeledDataset,
    pub prepared: Prepared,
    pub train_idx: Vec<usize>,
    pub valid_idx: Vec<usize>,
    pub vocab: ScaffoldVocab,
    /// Vocabulary index per dataset record.
    pub scaffold_idx: Vec<Option<usize>>,
    /// Expert index per dataset record under the explicit gate.
    pub group_idx: Vec<Option<usize>>,
    pub explicit_groups: Vec<String>,
    pub model: Model,
    pub adam: AdamState,
    pub schedule: Annealing,
    pub epoch: usize,
    shuffle_rng: ChaCha8Rng,
    gumbel_rng: ChaCha8Rng,
}

impl<'a> Session<'a> {
    /// Featurizes the data, builds the model and initializes the gate centroids.
    pub fn new(
        ds: &'a LabeledDataset,
        split: &SplitAssignment,
        config: &TrainConfig,
    ) -> Result<Self, Error> {
        config.validate()?;
        if ds.task_count() == 0 {
            return Err(Error::Config(
                "training needs at least one task column".into(),
            ));
        }
        for &i in split.train.iter().chain(&split.valid).chain(&split.test) {
            if i >= ds.len() {
                return Err(Error::Config(format!(
                    "split index {i} outside dataset of {}",
                    ds.len()
                )));
            }
        }
        if split.train.is_empty() {
            return Err(Error::Config("training split is empty".into()));
        }
        if split.valid.is_empty() {
            return Err(Error::Config("validation split is empty".into()));
        }
        let prepared = Prepared::new(ds)?;
        let vocab = ScaffoldVocab::build(
            split
                .train
                .iter()
                .map(|&i| prepared.scaffold_keys[i].as_str()),
        );
        let scaffold_idx = prepared
            .scaffold_keys
            .iter()
            .map(|k| vocab.get(k))
            .collect();

        let (experts, explicit_groups, group_idx) =
            if config.combiner == CombinerKind::ExpertExplicit {
                let present: Vec<String> = split
                    .train
                    .iter()
                    .map(|&i| prepared.ring_groups[i].clone())
                    .collect::<std::collections::BTreeSet<_>>()
                    .into_iter()
                    .collect();
                let group_idx = prepared
                    .ring_groups
                    .iter()
                    .map(|g| present.iter().position(|p| p == g))
                    .collect();
                (present.len(), present, group_idx)
            } else {
                (config.experts(), Vec::new(), vec![None; ds.len()])
            };

        let model = Model::new(config, ds.task_count(), vocab.len(), experts)?;
        let adam = AdamState::new(adam_config(config), &model.store);
        let schedule = Annealing::new(
            config.t0,
            config.te,
            config.max_epochs.saturating_sub(1).max(1),
        )?;
        let mut session = Session {
            ds,
            prepared,
            train_idx: split.train.clone(),
            valid_idx: split.valid.clone(),
            vocab,
            scaffold_idx,
            group_idx,
            explicit_groups,
            model,
            adam,
            schedule,
            epoch: 0,
            shuffle_rng: stream(config.seed, Stream::Shuffle),
            gumbel_rng: stream(config.seed, Stream::Gumbel),
        };
        session.init_centroids()?;
        Ok(session)
    }

    fn init_centroids(&mut self) -> Result<(), Error> {
        match self.model.gate {
            super::model::Gate::Cluster { .. } => {
                let seed = self.model.config.seed;
                let k = self.model.experts;
                let mut idx = self.train_idx.clone();
                if idx.len() > KMEANS_SUBSAMPLE_ABOVE {
                    let mut rng = stream(seed, Stream::Subsample);
                    let mut pick: Vec<usize> =
                        sample(&mut rng, idx.len(), KMEANS_SUBSAMPLE).into_vec();
                    pick.sort_unstable();
                    idx = pick.into_iter().map(|i| idx[i]).collect();
                }
                if idx.len() < k {
                    return Err(Error::Config(format!(
                        "{} training molecules cannot seed {k} clusters",
                        idx.len()
                    )));
                }
                let graphs = self.prepared.graphs_at(&idx);
                self.model.standardize_topology(&graphs)?;
                let z = self
                    .model
                    .predict(&graphs)?
                    .space
                    .expect("cluster gate yields z");
                let km = kmeans_restarts(
                    &z,
                    k,
                    KMEANS_RESTARTS,
                    KMEANS_MAX_ITER,
                    KMEANS_TOL,
                    &mut stream(seed, Stream::KMeans),
                )?;
                self.model.set_centroids(km.centroids)
            }
            super::model::Gate::Explicit { .. } => self.update_explicit_centroids(),
            _ => Ok(()),
        }
    }

    /// Mean `h_G` of each group's training molecules.
    fn update_explicit_centroids(&mut self) -> Result<(), Error> {
        let h = self
            .model
            .predict(&self.prepared.graphs_at(&self.train_idx))?
            .space
            .expect("explicit gate yields h");
        let (k, d) = (self.model.experts, h.dims2().1);
        let mut sums = vec![0.0; k * d];
        let mut counts = vec![0usize; k];
        for (row, &i) in self.train_idx.iter().enumerate() {
            let g = self.group_idx[i].expect("training molecules have groups");
            counts[g] += 1;
            for (s, x) in sums[g * d..(g + 1) * d].iter_mut().zip(h.row(row)) {
                *s += x;
            }
        }
        for g in 0..k {
            sums[g * d..(g + 1) * d]
                .iter_mut()
                .for_each(|s| *s /= counts[g] as f64);
        }
        self.model.set_centroids(Tensor::new(vec![k, d], sums)?)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            meta: CheckpointMeta {
                config: self.model.config.clone(),
                task_names: self.ds.task_names.clone(),
                scaffold_vocab: self.vocab.keys().map(str::to_string).collect(),
                explicit_groups: self.explicit_groups.clone(),
                experts: self.model.experts,
                epoch: self.epoch,
                adam: self.adam.config,
                adam_step: self.adam.step_count(),
            },
            model: self.model.clone(),
            adam: self.adam.clone(),
        }
    }

    /// Macro ROC-AUC on the validation split in inference mode.
    pub fn validation_auc(&self) -> Result<f64, Error> {
        let pred = self
            .model
            .predict(&self.prepared.graphs_at(&self.valid_idx))?;
        let labels = labels_of(self.ds, &self.valid_idx);
        match macro_auc(pred.probs.data(), &labels, self.ds.task_count()) {
            Ok(r) => Ok(r.macro_auc),
            Err(MetricError::NoIncludedTasks) => Err(Error::Config(
                "validation split has no task with both classes observed".into(),
            )),
            Err(e) => Err(e.into()),
        }
    }

    /// Runs one epoch over the shuffled training split and returns its history record.
    pub fn run_epoch(&mut self) -> Result<EpochRecord, Error> {
        self.epoch += 1;
        let epoch = self.epoch;
        let tau = self.schedule.temperature(epoch - 1);
        let cfg = self.model.config.clone();
        let uses_targets = self.model.align.is_some();

        let mut order = self.train_idx.clone();
        let epoch_targets = if uses_targets && cfg.target_update == TargetUpdate::Epoch {
            Some(self.full_targets(&order)?)
        } else {
            None
        };
        let position: BTreeMap<usize, usize> =
            order.iter().enumerate().map(|(r, &i)| (i, r)).collect();
        order.shuffle(&mut self.shuffle_rng);

        let mut losses = Vec::new();
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let graphs = self.prepared.graphs_at(chunk);
            let labels = labels_of(self.ds, chunk);
            let scaffold: Vec<Option<usize>> =
                chunk.iter().map(|&i| self.scaffold_idx[i]).collect();
            let groups: Option<Vec<usize>> = chunk
                .iter()
                .map(|&i| self.group_idx[i])
                .collect::<Option<Vec<_>>>();
            let noise = self
                .model
                .config
                .combiner
                .uses_cluster_gate()
                .then(|| gumbel_noise(&mut self.gumbel_rng, chunk.len(), self.model.experts));
            let targets = epoch_targets
                .as_ref()
                .map(|p| gather(p, chunk.iter().map(|i| position[i])));
            let input = StepInput {
                graphs: &graphs,
                labels: &labels,
                scaffold: &scaffold,
                groups: groups.as_deref(),
                noise: noise.as_ref(),
                tau,
                targets: targets.as_ref(),
                class: true,
            };
            let step = train_step(&mut self.model, &mut self.adam, &input)
                .map_err(|e| numeric(e, epoch, b + 1))?;
            losses.push(step);
        }
        if matches!(self.model.gate, super::model::Gate::Explicit { .. }) {
            self.update_explicit_centroids()?;
        }
        let valid_auc = self.validation_auc()?;
        Ok(EpochRecord {
            epoch,
            tau,
            class_loss: mean_of(&losses.iter().map(|l| l.class).collect::<Vec<_>>()),
            cluster_loss: mean_of(&losses.iter().map(|l| l.cluster).collect::<Vec<_>>()),
            align_loss: mean_of(&losses.iter().map(|l| l.align).collect::<Vec<_>>()),
            total_loss: losses.iter().map(|l| l.total).sum::<f64>() / losses.len() as f64,
            valid_auc: Some(valid_auc),
        })
    }

    /// Targets over the listed records, normalized by dataset-wide frequencies.
    fn full_targets(&self, indices: &[usize]) -> Result<Tensor, Error> {
        let q = self
            .model
            .predict(&self.prepared.graphs_at(indices))?
            .weights;
        Ok(target_distribution(&q))
    }
}

fn adam_config(config: &TrainConfig) -> AdamConfig {
    AdamConfig {
        lr: config.lr,
        weight_decay: config.weight_decay,
        ..AdamConfig::default()
    }
}

fn gather(t: &Tensor, rows: impl Iterator<Item = usize>) -> Tensor {
    let (_, k) = t.dims2();
    let data: Vec<f64> = rows.flat_map(|r| t.row(r).to_vec()).collect();
    let n = data.len() / k.max(1);
    Tensor::new(vec![n, k], data).expect("rows have width k")
}

/// Attaches epoch and batch coordinates to a non-finite loss.
pub(crate) fn numeric(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::Loss(source @ LossError::NonFinite { .. }) => Error::Numeric {
            epoch,
            batch,
            source,
        },
        other => other,
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// State at the epoch with the highest validation AUC.
    pub best: Checkpoint,
    pub best_epoch: usize,
    pub best_valid_auc: f64,
    pub epochs_run: usize,
    pub history: Vec<EpochRecord>,
}

/// Full training run with early stopping on validation ROC-AUC.
pub fn train(
    ds: &LabeledDataset,
    split: &SplitAssignment,
    config: &TrainConfig,
) -> Result<TrainOutcome, Error> {
    let mut session = Session::new(ds, split, config)?;
    let mut stopper = EarlyStopping::new(config.patience);
    let mut history = Vec::new();
    let mut best = session.checkpoint();
    for _ in 0..config.max_epochs {
        let record = session.run_epoch()?;
        let auc = record.valid_auc.expect("validation runs every epoch");
        log::info!(
            "epoch {} tau {:.4} loss {:.6} valid auc {:.4}",
            record.epoch,
            record.tau,
            record.total_loss,
            auc
        );
        let epoch = record.epoch;
        history.push(record);
        let (improved, stop) = stopper.observe(epoch, auc);
        if improved {
            best = session.checkpoint();
        }
        if stop {
            break;
        }
    }
    let (best_epoch, best_valid_auc) = stopper.best.expect("at least one epoch");
    Ok(TrainOutcome {
        best,
        best_epoch,
        best_valid_auc,
        epochs_run: session.epoch,
        history,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskAuc {
    pub task: String,
    pub auc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub molecules: usize,
    pub macro_auc: f64,
    pub per_task: Vec<TaskAuc>,
    pub excluded_tasks: Vec<String>,
    /// Molecules per argmax gate weight.
    pub cluster_histogram: Vec<usize>,
    /// NMI between scaffold keys and argmax clusters.
    pub scaffold_nmi: f64,
}

pub(crate) fn check_compatible(ckpt: &Checkpoint, ds: &LabeledDataset) -> Result<(), Error> {
    if ckpt.meta.task_names != ds.task_names {
        return Err(Error::Checkpoint(format!(
            "checkpoint tasks {:?} do not match dataset tasks {:?}",
            ckpt.meta.task_names, ds.task_names
        )));
    }
    Ok(())
}

fn check_indices(ds: &LabeledDataset, indices: &[usize]) -> Result<(), Error> {
    if indices.is_empty() {
        return Err(Error::Config("no molecules selected".into()));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= ds.len()) {
        return Err(Error::Config(format!(
            "index {bad} outside dataset of {}",
            ds.len()
        )));
    }
    Ok(())
}

pub fn argmax_rows(t: &Tensor) -> Vec<usize> {
    let (n, _) = t.dims2();
    (0..n)
        .map(|i| {
            t.row(i)
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (k, &v)| {
                    if v > best.1 {
                        (k, v)
                    } else {
                        best
                    }
                })
                .0
        })
        .collect()
}

fn histogram(assign: &[usize], k: usize) -> Vec<usize> {
    let mut h = vec![0; k];
    for &a in assign {
        h[a] += 1;
    }
    h
}

/// Inference-mode predictions for selected records.
pub fn predict(
    ckpt: &Checkpoint,
    ds: &LabeledDataset,
    indices: &[usize],
) -> Result<Prediction, Error> {
    check_indices(ds, indices)?;
    let graphs: Vec<FeatureGraph> = indices
        .iter()
        .map(|&i| featurize(&ds.records[i].graph))
        .collect();
    ckpt.model.predict(&graphs.iter().collect::<Vec<_>>())
}

/// Macro and per-task ROC-AUC, cluster histogram and scaffold NMI on selected records.
pub fn evaluate(
    ckpt: &Checkpoint,
    ds: &LabeledDataset,
    indices: &[usize],
) -> Result<EvalReport, Error> {
    check_compatible(ckpt, ds)?;
    let pred = predict(ckpt, ds, indices)?;
    let labels = labels_of(ds, indices);
    let report = macro_auc(pred.probs.data(), &labels, ds.task_count())?;
    let assign = argmax_rows(&pred.weights);
    let keys: Vec<String> = indices
        .iter()
        .map(|&i| canonical_key(&murcko_scaffold(&ds.records[i].graph)))
        .collect();
    Ok(EvalReport {
        molecules: indices.len(),
        macro_auc: report.macro_auc,
        per_task: ds
            .task_names
            .iter()
            .zip(&report.per_task)
            .map(|(t, a)| TaskAuc {
                task: t.clone(),
                auc: *a,
            })
            .collect(),
        excluded_tasks: report
            .excluded_tasks
            .iter()
            .map(|&t| ds.task_names[t].clone())
            .collect(),
        cluster_histogram: histogram(&assign, ckpt.model.experts),
        scaffold_nmi: nmi(&keys, &assign)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Representative {
    pub cluster: usize,
    /// Dataset record index.
    pub index: usize,
    pub smiles: String,
    pub distance: f64,
}

/// For each centroid, the row of `space` at minimal Euclidean distance (lowest index on ties).
pub fn nearest_rows(space: &Tensor, centroids: &Tensor) -> Vec<(usize, f64)> {
    let (n, _) = space.dims2();
    let (k, _) = centroids.dims2();
    (0..k)
        .map(|c| {
            let mu = centroids.row(c);
            let (i, d2) = (0..n)
                .map(|i| {
                    (
                        i,
                        space
                            .row(i)
                            .iter()
                            .zip(mu)
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum::<f64>(),
                    )
                })
                .fold(
                    (0, f64::INFINITY),
                    |best, cur| if cur.1 < best.1 { cur } else { best },
                );
            (i, d2.sqrt())
        })
        .collect()
}

pub(crate) fn representatives(
    ds: &LabeledDataset,
    indices: &[usize],
    space: Option<&Tensor>,
    centroids: Option<&Tensor>,
) -> Vec<Representative> {
    match (space, centroids) {
        (Some(s), Some(c)) => nearest_rows(s, c)
            .into_iter()
            .enumerate()
            .map(|(cluster, (row, distance))| Representative {
                cluster,
                index: indices[row],
                smiles: ds.records[indices[row]].smiles.clone(),
                distance,
            })
            .collect(),
        _ => Vec::new(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupRatios {
    pub group: String,
    pub molecules: usize,
    /// Fraction of the group's molecules assigned to each cluster.
    pub ratios: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InspectReport {
    pub molecules: usize,
    pub cluster_counts: Vec<usize>,
    /// Ring-count groups with at least one molecule.
    pub groups: Vec<GroupRatios>,
    pub representatives: Vec<Representative>,
}

/// Cluster usage per ring-count group and the molecule nearest each centroid.
pub fn inspect(
    ckpt: &Checkpoint,
    ds: &LabeledDataset,
    indices: &[usize],
) -> Result<InspectReport, Error> {
    check_compatible(ckpt, ds)?;
    let pred = predict(ckpt, ds, indices)?;
    let assign = argmax_rows(&pred.weights);
    let k = ckpt.model.experts;
    let mol: Vec<&MolecularGraph> = indices.iter().map(|&i| &ds.records[i].graph).collect();
    let buckets = ring_split_graphs(&mol, &default_ring_buckets())?;
    let groups = buckets
        .into_iter()
        .filter(|(_, rows)| !rows.is_empty())
        .map(|(group, rows)| {
            let counts = histogram(&rows.iter().map(|&r| assign[r]).collect::<Vec<_>>(), k);
            GroupRatios {
                group,
                molecules: rows.len(),
                ratios: counts
                    .iter()
                    .map(|&c| c as f64 / rows.len() as f64)
                    .collect(),
            }
        })
        .collect();
    let centroids = ckpt.model.centroids();
    Ok(InspectReport {
        molecules: indices.len(),
        cluster_counts: histogram(&assign, k),
        groups,
        representatives: representatives(ds, indices, pred.space.as_ref(), centroids.as_ref()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patience_stops_fifty_epochs_after_best() {
        let mut s = EarlyStopping::new(50);
        let mut stopped = None;
        for epoch in 1..=200 {
            let (_, stop) = s.observe(epoch, 1.0 - epoch as f64 * 1e-3);
            if stop {
                stopped = Some(epoch);
                break;
            }
        }
        assert_eq!(stopped, Some(51));
        assert_eq!(s.best.unwrap().0, 1);
    }

    #[test]
    fn ties_do_not_reset_patience() {
        let mut s = EarlyStopping::new(2);
        assert_eq!(s.observe(1, 0.5), (true, false));
        assert_eq!(s.observe(2, 0.5), (false, false));
        assert_eq!(s.observe(3, 0.5), (false, true));
    }

    #[test]
    fn nearest_rows_picks_minimum() {
        let space = Tensor::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0], vec![3.0, 0.0]]).unwrap();
        let c = Tensor::from_rows(&[vec![2.9, 0.1], vec![0.6, 0.6]]).unwrap();
        let r = nearest_rows(&space, &c);
        assert_eq!(r[0].0, 2);
        assert_eq!(r[1].0, 1);
    }
}
