use rand::seq::{index::sample, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::autodiff::AdamState;
use crate::experts::CombinerKind;
use crate::gating::kmeans_restarts;
use crate::losses::target_distribution;
use crate::metrics::nmi;
use crate::molio::LabeledDataset;
use crate::rng::{stream, Stream};
use crate::scaffold::ScaffoldVocab;
use crate::Error;

use super::checkpoint::{Checkpoint, CheckpointMeta};
use super::config::{TargetUpdate, TrainConfig};
use super::model::Model;
use super::train::{
    argmax_rows, numeric, representatives, train_step, EpochRecord, Prepared, Representative,
    StepInput, KMEANS_MAX_ITER, KMEANS_RESTARTS, KMEANS_SUBSAMPLE, KMEANS_SUBSAMPLE_ABOVE,
    KMEANS_TOL,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub molecules: usize,
    /// Argmax cluster per record.
    pub assignments: Vec<usize>,
    pub cluster_counts: Vec<usize>,
    /// NMI between scaffold keys and assignments.
    pub scaffold_nmi: f64,
    pub representatives: Vec<Representative>,
    pub history: Vec<EpochRecord>,
}

#[derive(Clone, Debug)]
pub struct ClusterOutcome {
    pub report: ClusterReport,
    pub checkpoint: Checkpoint,
}

/// Topology-based deep clustering: k-means initialization, then minibatch updates of
/// `alpha * cluster + beta * align` for `max_epochs` epochs over every record. Labels are
/// not used.
pub fn cluster_only(ds: &LabeledDataset, config: &TrainConfig) -> Result<ClusterOutcome, Error> {
    config.validate()?;
    if config.combiner != CombinerKind::Topexpert {
        return Err(Error::Config(
            "clustering mode uses the topexpert combiner".into(),
        ));
    }
    let n = ds.len();
    if n < config.k {
        return Err(Error::Config(format!(
            "{n} molecules cannot seed {} clusters",
            config.k
        )));
    }
    let prepared = Prepared::new(ds)?;
    let vocab = ScaffoldVocab::build(prepared.scaffold_keys.iter().map(String::as_str));
    let scaffold_idx: Vec<Option<usize>> = prepared
        .scaffold_keys
        .iter()
        .map(|k| vocab.get(k))
        .collect();
    let all: Vec<usize> = (0..n).collect();
    let graphs = prepared.graphs_at(&all);

    let mut model = Model::new(config, ds.task_count(), vocab.len(), config.k)?;
    let mut adam = AdamState::new(
        crate::autodiff::AdamConfig {
            lr: config.lr,
            weight_decay: config.weight_decay,
            ..Default::default()
        },
        &model.store,
    );

    let mut init_rows = all.clone();
    if n > KMEANS_SUBSAMPLE_ABOVE {
        let mut pick = sample(
            &mut stream(config.seed, Stream::Subsample),
            n,
            KMEANS_SUBSAMPLE,
        )
        .into_vec();
        pick.sort_unstable();
        init_rows = pick;
    }
    let init_graphs = prepared.graphs_at(&init_rows);
    model.standardize_topology(&init_graphs)?;
    let z0 = model
        .predict(&init_graphs)?
        .space
        .expect("cluster gate yields z");
    let km = kmeans_restarts(
        &z0,
        config.k,
        KMEANS_RESTARTS,
        KMEANS_MAX_ITER,
        KMEANS_TOL,
        &mut stream(config.seed, Stream::KMeans),
    )?;
    model.set_centroids(km.centroids)?;

    let mut shuffle_rng = stream(config.seed, Stream::Shuffle);
    let mut history = Vec::with_capacity(config.max_epochs);
    for epoch in 1..=config.max_epochs {
        let full = if config.target_update == TargetUpdate::Epoch {
            Some(target_distribution(&model.predict(&graphs)?.weights))
        } else {
            None
        };
        let mut order = all.clone();
        order.shuffle(&mut shuffle_rng);
        let (mut cl, mut al, mut tot, mut batches) = (0.0, 0.0, 0.0, 0usize);
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let g = prepared.graphs_at(chunk);
            let scaffold: Vec<Option<usize>> = chunk.iter().map(|&i| scaffold_idx[i]).collect();
            let targets = full.as_ref().map(|p| {
                let rows: Vec<Vec<f64>> = chunk.iter().map(|&i| p.row(i).to_vec()).collect();
                crate::autodiff::Tensor::from_rows(&rows).expect("equal widths")
            });
            let input = StepInput {
                graphs: &g,
                labels: &[],
                scaffold: &scaffold,
                groups: None,
                noise: None,
                tau: config.t0,
                targets: targets.as_ref(),
                class: false,
            };
            let step =
                train_step(&mut model, &mut adam, &input).map_err(|e| numeric(e, epoch, b + 1))?;
            cl += step.cluster.unwrap_or(0.0);
            al += step.align.unwrap_or(0.0);
            tot += step.total;
            batches += 1;
        }
        let m = batches as f64;
        history.push(EpochRecord {
            epoch,
            tau: config.t0,
            class_loss: None,
            cluster_loss: Some(cl / m),
            align_loss: Some(al / m),
            total_loss: tot / m,
            valid_auc: None,
        });
        log::info!("cluster epoch {epoch} loss {:.6}", tot / m);
    }

    let pred = model.predict(&graphs)?;
    let assignments = argmax_rows(&pred.weights);
    let mut cluster_counts = vec![0; config.k];
    for &a in &assignments {
        cluster_counts[a] += 1;
    }
    let centroids = model.centroids();
    let report = ClusterReport {
        molecules: n,
        scaffold_nmi: nmi(&prepared.scaffold_keys, &assignments)?,
        representatives: representatives(ds, &all, pred.space.as_ref(), centroids.as_ref()),
        assignments,
        cluster_counts,
        history,
    };
    let checkpoint = Checkpoint {
        meta: CheckpointMeta {
            config: config.clone(),
            task_names: ds.task_names.clone(),
            scaffold_vocab: vocab.keys().map(str::to_string).collect(),
            explicit_groups: Vec::new(),
            experts: config.k,
            epoch: config.max_epochs,
            adam: adam.config,
            adam_step: adam.step_count(),
        },
        model,
        adam,
    };
    Ok(ClusterOutcome { report, checkpoint })
}
