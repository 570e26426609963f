mod common;

use common::{interleaved_split, tiny_config};
use rand::Rng;
use topexpert::autodiff::{AdamConfig, AdamState, Tensor};
use topexpert::experts::CombinerKind;
use topexpert::gating::gumbel_noise;
use topexpert::metrics::roc_auc;
use topexpert::molio::{featurize, LabeledDataset, Record};
use topexpert::rng::{stream, Stream};
use topexpert::synthetic::{planted_families, two_group_task};
use topexpert::trainer::{
    cluster_only, evaluate, grid_search, history_jsonl, inspect, nearest_rows, predict, train,
    train_step, Checkpoint, EpochRecord, GridAxes, Model, Session, StepInput, TrainConfig,
};

fn all(n: usize) -> Vec<usize> {
    (0..n).collect()
}

fn train_auc(session: &Session, ds: &LabeledDataset, idx: &[usize]) -> f64 {
    evaluate(&session.checkpoint(), ds, idx).unwrap().macro_auc
}

#[test]
fn two_group_task_is_learned_within_one_hundred_epochs() {
    let ds = two_group_task(100, 0).dataset;
    let split = interleaved_split(ds.len(), 10);
    let config = TrainConfig {
        k: 2,
        hidden: 32,
        layers: 3,
        gate_hidden: 32,
        d_z: 8,
        max_epochs: 100,
        patience: 100,
        ..tiny_config(CombinerKind::Topexpert)
    };
    let mut session = Session::new(&ds, &split, &config).unwrap();
    let mut reached = None;
    for _ in 0..config.max_epochs {
        let record = session.run_epoch().unwrap();
        if record.epoch.is_multiple_of(5) && train_auc(&session, &ds, &split.train) >= 0.95 {
            reached = Some(record.epoch);
            break;
        }
    }
    assert!(
        reached.is_some(),
        "train AUC stayed below 0.95 for 100 epochs"
    );
}

#[test]
fn identical_seed_gives_identical_checkpoint() {
    let ds = two_group_task(20, 1).dataset;
    let split = interleaved_split(ds.len(), 5);
    let config = tiny_config(CombinerKind::Topexpert);
    let a = train(&ds, &split, &config).unwrap();
    let b = train(&ds, &split, &config).unwrap();
    assert_eq!(a.best.digest(), b.best.digest());
    assert_eq!(a.history, b.history);

    let other = train(&ds, &split, &TrainConfig { seed: 7, ..config }).unwrap();
    assert_ne!(a.best.digest(), other.best.digest());
}

#[test]
fn checkpoint_file_round_trip() {
    let ds = two_group_task(20, 2).dataset;
    let split = interleaved_split(ds.len(), 5);
    let out = train(&ds, &split, &tiny_config(CombinerKind::Topexpert)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    out.best.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded.digest(), out.best.digest());
    assert_eq!(loaded.to_bytes(), std::fs::read(&path).unwrap());
    let idx = all(ds.len());
    assert_eq!(
        evaluate(&loaded, &ds, &idx).unwrap(),
        evaluate(&out.best, &ds, &idx).unwrap()
    );
}

#[test]
fn reported_checkpoint_is_the_best_validation_epoch() {
    let ds = two_group_task(20, 3).dataset;
    let split = interleaved_split(ds.len(), 4);
    let config = TrainConfig {
        max_epochs: 8,
        ..tiny_config(CombinerKind::Topexpert)
    };
    let out = train(&ds, &split, &config).unwrap();
    let aucs: Vec<f64> = out.history.iter().map(|r| r.valid_auc.unwrap()).collect();
    let max = aucs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let first_max = aucs.iter().position(|&a| a == max).unwrap() + 1;
    assert_eq!(out.best_epoch, first_max);
    assert_eq!(out.best.meta.epoch, first_max);
    assert_eq!(out.best_valid_auc, max);
    let recomputed = evaluate(&out.best, &ds, &split.valid).unwrap().macro_auc;
    assert_eq!(recomputed, max);
}

#[test]
fn history_is_one_json_line_per_epoch() {
    let ds = two_group_task(20, 4).dataset;
    let split = interleaved_split(ds.len(), 5);
    let out = train(&ds, &split, &tiny_config(CombinerKind::Moe)).unwrap();
    let text = history_jsonl(&out.history);
    let parsed: Vec<EpochRecord> = text
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(parsed, out.history);
    assert_eq!(parsed.len(), out.epochs_run);
    assert!(text.ends_with('\n'));
}

#[test]
fn one_hot_gate_leaves_other_experts_untouched() {
    let ds = two_group_task(8, 5).dataset;
    let config = TrainConfig {
        alpha: 0.5,
        beta: 0.5,
        weight_decay: 0.0,
        ..tiny_config(CombinerKind::Topexpert)
    };
    let mut model = Model::new(&config, 1, 4, 3).unwrap();
    let graphs: Vec<_> = ds.records.iter().map(|r| featurize(&r.graph)).collect();
    let refs: Vec<_> = graphs.iter().collect();
    let n = refs.len();
    // Noise that overwhelms log q for expert 0; with a tiny temperature the other weights
    // underflow to exactly zero.
    let noise = Tensor::new(vec![n, 3], (0..n).flat_map(|_| [1e3, 0.0, 0.0]).collect()).unwrap();
    let labels: Vec<Option<bool>> = ds.records.iter().map(|r| r.labels[0]).collect();
    let scaffold: Vec<Option<usize>> = (0..n).map(|i| Some(i % 4)).collect();
    let mut adam = AdamState::new(
        AdamConfig {
            lr: 1e-2,
            ..Default::default()
        },
        &model.store,
    );
    let w = model.store.id("experts.w").unwrap();
    let b = model.store.id("experts.b").unwrap();
    let before = (model.store.value(w).clone(), model.store.value(b).clone());
    let input = StepInput {
        graphs: &refs,
        labels: &labels,
        scaffold: &scaffold,
        groups: None,
        noise: Some(&noise),
        tau: 1e-3,
        targets: None,
        class: true,
    };
    train_step(&mut model, &mut adam, &input).unwrap();

    let (d, cols) = model.store.value(w).dims2();
    let moved = |k: usize| {
        let r = model.expert_columns(k);
        let wm = (0..d).any(|i| {
            r.clone()
                .any(|c| model.store.value(w).data()[i * cols + c] != before.0.data()[i * cols + c])
        });
        let bm = r
            .clone()
            .any(|c| model.store.value(b).data()[c] != before.1.data()[c]);
        wm || bm
    };
    assert!(moved(0), "the selected expert must be updated");
    assert!(!moved(1) && !moved(2), "unselected experts changed");
}

#[test]
fn sabotaged_grid_cell_loses() {
    let ds = two_group_task(20, 6).dataset;
    let split = interleaved_split(ds.len(), 5);
    let base = tiny_config(CombinerKind::Topexpert);
    let cells = GridAxes {
        lr: vec![1e-3, 10.0],
        ..Default::default()
    }
    .cells(&base);
    let report = grid_search(&ds, &split, &cells, &[0, 1], 2).unwrap();
    assert_eq!(report.rows.len(), cells.len() * 2);
    assert_eq!(report.best_cell, 0);
    assert_eq!(report.best_config.lr, 1e-3);

    let single = grid_search(&ds, &split, &cells[..1], &[0], 1).unwrap();
    assert_eq!(single.best_cell, 0);
    assert_eq!(single.rows.len(), 1);
}

#[test]
fn untrained_model_is_at_chance_on_random_labels() {
    let planted = planted_families(100, 8).dataset;
    let mut rng = stream(8, Stream::Synthetic);
    let records: Vec<Record> = planted
        .records
        .iter()
        .map(|r| Record {
            labels: vec![Some(rng.gen_bool(0.5))],
            ..r.clone()
        })
        .collect();
    let ds = LabeledDataset::from_records(records, vec!["random".into()]).unwrap();
    let split = interleaved_split(ds.len(), 10);
    let config = TrainConfig {
        hidden: 32,
        ..tiny_config(CombinerKind::Topexpert)
    };
    let ckpt = Session::new(&ds, &split, &config).unwrap().checkpoint();
    assert_eq!(ckpt.meta.epoch, 0);
    let auc = evaluate(&ckpt, &ds, &all(ds.len())).unwrap().macro_auc;
    assert!((auc - 0.5).abs() <= 0.1, "untrained AUC {auc}");
}

#[test]
fn reports_account_for_every_molecule() {
    let ds = planted_families(10, 9).dataset;
    let records: Vec<Record> = ds
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| Record {
            labels: vec![Some(i % 2 == 0)],
            ..r.clone()
        })
        .collect();
    let ds = LabeledDataset::from_records(records, vec!["t".into()]).unwrap();
    let split = interleaved_split(ds.len(), 5);
    let out = train(&ds, &split, &tiny_config(CombinerKind::Topexpert)).unwrap();
    let idx = all(ds.len());

    let report = evaluate(&out.best, &ds, &idx).unwrap();
    assert_eq!(report.cluster_histogram.iter().sum::<usize>(), ds.len());
    assert_eq!(report.cluster_histogram.len(), 3);

    let ins = inspect(&out.best, &ds, &idx).unwrap();
    assert_eq!(ins.cluster_counts, report.cluster_histogram);
    assert_eq!(
        ins.groups.iter().map(|g| g.molecules).sum::<usize>(),
        ds.len()
    );
    for g in &ins.groups {
        assert!(
            (g.ratios.iter().sum::<f64>() - 1.0).abs() < 1e-12,
            "{} ratios",
            g.group
        );
    }

    // Representatives are the nearest molecules by exhaustive scan.
    let pred = predict(&out.best, &ds, &idx).unwrap();
    let space = pred.space.unwrap();
    let centroids = out.best.model.centroids().unwrap();
    assert_eq!(ins.representatives.len(), 3);
    for rep in &ins.representatives {
        let dist = |i: usize| {
            space
                .row(i)
                .iter()
                .zip(centroids.row(rep.cluster))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        };
        let best = idx.iter().map(|&i| dist(i)).fold(f64::INFINITY, f64::min);
        assert_eq!(rep.distance, best);
        assert_eq!(dist(rep.index), best);
        assert_eq!(rep.smiles, ds.records[rep.index].smiles);
    }
    assert_eq!(nearest_rows(&space, &centroids).len(), 3);
}

#[test]
fn explicit_combiner_uses_one_expert_per_ring_group() {
    let ds = two_group_task(15, 10).dataset;
    let split = interleaved_split(ds.len(), 5);
    let out = train(&ds, &split, &tiny_config(CombinerKind::ExpertExplicit)).unwrap();
    let groups = &out.best.meta.explicit_groups;
    assert_eq!(groups.len(), out.best.meta.experts);
    assert!(groups.len() >= 2, "groups {groups:?}");
    let pred = predict(&out.best, &ds, &all(ds.len())).unwrap();
    for i in 0..ds.len() {
        let row = pred.weights.row(i);
        assert_eq!(row.iter().filter(|&&w| w == 1.0).count(), 1);
        assert_eq!(row.iter().filter(|&&w| w == 0.0).count(), row.len() - 1);
    }
}

#[test]
fn clustering_without_alignment_is_a_partition() {
    let ds = planted_families(10, 11).dataset;
    let config = TrainConfig {
        beta: 0.0,
        alpha: 1.0,
        max_epochs: 3,
        ..tiny_config(CombinerKind::Topexpert)
    };
    let out = cluster_only(&ds, &config).unwrap();
    let r = &out.report;
    assert_eq!(r.assignments.len(), ds.len());
    assert!(r.assignments.iter().all(|&a| a < 3));
    assert_eq!(r.cluster_counts.iter().sum::<usize>(), ds.len());
    assert_eq!(r.history.len(), 3);
    assert!((0.0..=1.0).contains(&r.scaffold_nmi));

    let again = cluster_only(&ds, &config).unwrap();
    assert_eq!(again.report, out.report);
    assert_eq!(again.checkpoint.digest(), out.checkpoint.digest());
}

#[test]
fn gumbel_draws_are_reproducible() {
    let a = gumbel_noise(&mut stream(4, Stream::Gumbel), 5, 3);
    let b = gumbel_noise(&mut stream(4, Stream::Gumbel), 5, 3);
    assert_eq!(a, b);
}

#[test]
fn auc_is_invariant_to_monotone_transforms() {
    let scores = [0.1, 0.4, 0.35, 0.8, 0.65];
    let labels = [false, false, true, true, false];
    let base = roc_auc(&scores, &labels).unwrap();
    let warped: Vec<f64> = scores.iter().map(|s| (5.0 * s).exp() - 3.0).collect();
    assert_eq!(roc_auc(&warped, &labels).unwrap(), base);
}
