//! ROC-AUC with missing labels, and normalized mutual information.

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("no task has both classes observed")]
    NoIncludedTasks,
    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),
    #[error("non-finite score at position {0}")]
    NonFinite(usize),
}

/// Area under the ROC curve by the rank-sum statistic, ties sharing average rank.
/// `None` when either class is absent.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<Option<f64>, MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::Length(scores.len(), labels.len()));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(MetricError::NonFinite(i));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j+1 share their average.
        let avg = (i + j + 2) as f64 / 2.0;
        pos_rank_sum += avg * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, q) = (n_pos as f64, n_neg as f64);
    Ok(Some((pos_rank_sum - p * (p + 1.0) / 2.0) / (p * q)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AucReport {
    pub macro_auc: f64,
    /// Per-task AUC, `None` for excluded tasks.
    pub per_task: Vec<Option<f64>>,
    pub excluded_tasks: Vec<usize>,
}

/// Macro ROC-AUC over an `N x T` row-major score matrix with optional labels. Tasks whose
/// observed labels contain a single class are excluded.
pub fn macro_auc(
    scores: &[f64],
    labels: &[Option<bool>],
    tasks: usize,
) -> Result<AucReport, MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::Length(scores.len(), labels.len()));
    }
    let mut per_task = Vec::with_capacity(tasks);
    for t in 0..tasks {
        let (s, l): (Vec<f64>, Vec<bool>) = scores
            .iter()
            .zip(labels)
            .skip(t)
            .step_by(tasks)
            .filter_map(|(s, l)| l.map(|l| (*s, l)))
            .unzip();
        per_task.push(roc_auc(&s, &l)?);
    }
    let included: Vec<f64> = per_task.iter().flatten().copied().collect();
    if included.is_empty() {
        return Err(MetricError::NoIncludedTasks);
    }
    let excluded_tasks = (0..tasks).filter(|&t| per_task[t].is_none()).collect();
    Ok(AucReport {
        macro_auc: included.iter().sum::<f64>() / included.len() as f64,
        per_task,
        excluded_tasks,
    })
}

fn dense_labels<T: Eq + Hash>(xs: &[T]) -> (Vec<usize>, usize) {
    let mut ids: HashMap<&T, usize> = HashMap::new();
    let out = xs
        .iter()
        .map(|x| {
            let next = ids.len();
            *ids.entry(x).or_insert(next)
        })
        .collect();
    (out, ids.len())
}

/// `I(A; B) / sqrt(H(A) H(B))`. If either partition has zero entropy the result is 1 when
/// both are single-cluster and 0 otherwise.
pub fn nmi<A: Eq + Hash, B: Eq + Hash>(a: &[A], b: &[B]) -> Result<f64, MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::Length(a.len(), b.len()));
    }
    let n = a.len();
    if n == 0 {
        return Ok(0.0);
    }
    let (la, ka) = dense_labels(a);
    let (lb, kb) = dense_labels(b);
    if ka == 1 || kb == 1 {
        return Ok(if ka == 1 && kb == 1 { 1.0 } else { 0.0 });
    }
    let mut joint = vec![0usize; ka * kb];
    let mut ca = vec![0usize; ka];
    let mut cb = vec![0usize; kb];
    for (&x, &y) in la.iter().zip(&lb) {
        joint[x * kb + y] += 1;
        ca[x] += 1;
        cb[y] += 1;
    }
    let nf = n as f64;
    let entropy = |counts: &[usize]| -> f64 {
        counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / nf;
                -p * p.ln()
            })
            .sum()
    };
    let mut mi = 0.0;
    for x in 0..ka {
        for y in 0..kb {
            let c = joint[x * kb + y];
            if c > 0 {
                let c = c as f64;
                mi += c / nf * (c * nf / (ca[x] as f64 * cb[y] as f64)).ln();
            }
        }
    }
    let denom = (entropy(&ca) * entropy(&cb)).sqrt();
    Ok((mi / denom).clamp(0.0, 1.0))
}
