//! Expert heads and the rules that mix their outputs.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tape, Tensor, TensorError, Var};
use crate::nn::Linear;

/// Tolerance on gate rows summing to one.
pub const WEIGHT_SUM_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CombinerKind {
    Topexpert,
    Single,
    Moe,
    Ensemble,
    LinearSoftmaxGate,
    ExpertExplicit,
}

impl CombinerKind {
    pub const ALL: [CombinerKind; 6] = [
        CombinerKind::Topexpert,
        CombinerKind::Single,
        CombinerKind::Moe,
        CombinerKind::Ensemble,
        CombinerKind::LinearSoftmaxGate,
        CombinerKind::ExpertExplicit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CombinerKind::Topexpert => "topexpert",
            CombinerKind::Single => "single",
            CombinerKind::Moe => "moe",
            CombinerKind::Ensemble => "ensemble",
            CombinerKind::LinearSoftmaxGate => "linear-softmax-gate",
            CombinerKind::ExpertExplicit => "expert-explicit",
        }
    }

    /// Whether the gate is the Student-t / Gumbel clustering gate.
    pub fn uses_cluster_gate(self) -> bool {
        matches!(self, CombinerKind::Topexpert | CombinerKind::Moe)
    }

    /// Whether clustering and alignment objectives apply.
    pub fn uses_cluster_losses(self) -> bool {
        self == CombinerKind::Topexpert
    }
}

impl std::str::FromStr for CombinerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CombinerKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown combiner '{s}'"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Train,
    Inference,
}

/// `K` affine heads stored side by side: column `k * T + t` is task `t` of expert `k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExpertBank {
    pub heads: Linear,
    pub k: usize,
    pub tasks: usize,
}

impl ExpertBank {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        d: usize,
        k: usize,
        tasks: usize,
        rng: &mut R,
    ) -> Self {
        ExpertBank {
            heads: Linear::new(store, "experts", d, k * tasks, rng),
            k,
            tasks,
        }
    }

    /// Logits `o`, shape `N x (K T)`.
    pub fn logits(&self, tape: &mut Tape, store: &ParamStore, h: Var) -> Result<Var, TensorError> {
        self.heads.forward(tape, store, h)
    }
}

/// `y_it = sum_k w_ik sigmoid(o_ikt)` for logits laid out as in [`ExpertBank`].
pub fn combine(
    tape: &mut Tape,
    logits: Var,
    weights: Var,
    tasks: usize,
) -> Result<Var, TensorError> {
    let ws = tape.value(weights);
    if ws.ndim() != 2 {
        return Err(TensorError::Dimension {
            op: "combine",
            detail: format!("weights {:?}", ws.shape()),
        });
    }
    let (n, k) = ws.dims2();
    let os = tape.value(logits).shape();
    if os != [n, k * tasks] {
        return Err(TensorError::Dimension {
            op: "combine",
            detail: format!(
                "logits {:?} vs weights {:?} with {} tasks",
                os,
                [n, k],
                tasks
            ),
        });
    }
    for i in 0..n {
        let s: f64 = ws.row(i).iter().sum();
        if (s - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(TensorError::Contract(format!("gate row {i} sums to {s}")));
        }
    }
    let probs = tape.sigmoid(logits);
    let expand: Vec<usize> = (0..k).flat_map(|j| std::iter::repeat_n(j, tasks)).collect();
    let w_wide = tape.index_select(weights, 1, &expand)?;
    let weighted = tape.mul(probs, w_wide)?;
    let mut fold = Tensor::zeros(&[k * tasks, tasks]);
    for j in 0..k {
        for t in 0..tasks {
            fold.data_mut()[(j * tasks + t) * tasks + t] = 1.0;
        }
    }
    let fold = tape.constant(fold);
    tape.matmul(weighted, fold)
}

/// Uniform `1/K` weights.
pub fn uniform_weights(tape: &mut Tape, n: usize, k: usize) -> Var {
    tape.constant(Tensor::full(&[n, k], 1.0 / k as f64))
}

/// One-hot weights from per-row expert indices.
pub fn one_hot_weights(tape: &mut Tape, experts: &[usize], k: usize) -> Var {
    let mut t = Tensor::zeros(&[experts.len(), k]);
    for (i, &e) in experts.iter().enumerate() {
        t.data_mut()[i * k + e] = 1.0;
    }
    tape.constant(t)
}

/// Index of the nearest row of `centroids` for every row of `points`.
pub fn nearest_centroid(points: &Tensor, centroids: &Tensor) -> Vec<usize> {
    let (n, _) = points.dims2();
    let (k, _) = centroids.dims2();
    (0..n)
        .map(|i| {
            let p = points.row(i);
            (0..k)
                .map(|j| {
                    let d: f64 = p
                        .iter()
                        .zip(centroids.row(j))
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    (j, d)
                })
                .fold(
                    (0, f64::INFINITY),
                    |best, cur| if cur.1 < best.1 { cur } else { best },
                )
                .0
        })
        .collect()
}
