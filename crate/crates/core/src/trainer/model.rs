use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, TensorError, Var};
use crate::encoder::{GinConfig, GinEncoder, GraphBatch};
use crate::experts::{
    combine, nearest_centroid, one_hot_weights, uniform_weights, CombinerKind, ExpertBank,
};
use crate::gating::{assign, gumbel_sample};
use crate::molio::FeatureGraph;
use crate::nn::{xavier, Linear, Mlp};
use crate::rng::{stream, Stream};
use crate::Error;

use super::config::{AlignKind, TrainConfig};

/// Graphs per forward pass during inference.
pub const INFERENCE_CHUNK: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub enum Gate {
    /// Fixed `1/K` weights (single head or ensemble).
    Uniform,
    /// Topology MLP with Student-t assignment to trainable centroids.
    Cluster { mlp: Mlp, centroids: ParamId },
    /// Softmax over a linear map of `h_G`.
    Linear(Linear),
    /// One-hot by group in training, nearest group centroid of `h_G` at inference.
    Explicit { centroids: Tensor },
}

/// Scaffold-side parameters of the alignment objective.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignParts {
    pub scaffold_emb: ParamId,
    pub classifier: Option<Linear>,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: TrainConfig,
    pub tasks: usize,
    pub experts: usize,
    pub vocab: usize,
    pub store: ParamStore,
    pub encoder: GinEncoder,
    pub bank: ExpertBank,
    pub gate: Gate,
    pub align: Option<AlignParts>,
}

/// How gate weights are produced in one forward pass.
#[derive(Clone, Copy, Debug)]
pub enum GateMode<'a> {
    Train {
        tau: f64,
        /// Gumbel noise, required by the cluster gate.
        noise: Option<&'a Tensor>,
        /// Group index per graph, required by the explicit gate.
        groups: Option<&'a [usize]>,
    },
    Inference,
}

#[derive(Clone, Copy, Debug)]
pub struct Forward {
    pub h: Var,
    pub z: Option<Var>,
    pub q: Option<Var>,
    pub weights: Var,
    pub probs: Var,
}

/// Values of one inference pass, row-aligned with the input graphs.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    /// `N x T` probabilities.
    pub probs: Tensor,
    /// `N x K` gate weights.
    pub weights: Tensor,
    /// `N x d` representation in which the gate's centroids live, if any.
    pub space: Option<Tensor>,
}

impl Model {
    /// Builds a freshly initialized model. Each parameter group draws from its own stream.
    pub fn new(
        config: &TrainConfig,
        tasks: usize,
        vocab: usize,
        experts: usize,
    ) -> Result<Self, Error> {
        if experts == 0 {
            return Err(Error::Config("at least one expert is required".into()));
        }
        let mut store = ParamStore::new();
        let gin = GinConfig {
            hidden: config.hidden,
            layers: config.layers,
            readout: config.readout,
        };
        let d = config.hidden;
        let encoder = GinEncoder::new(
            &mut store,
            gin,
            &mut stream(config.seed, Stream::EncoderInit),
        );
        let bank = ExpertBank::new(
            &mut store,
            d,
            experts,
            tasks,
            &mut stream(config.seed, Stream::ExpertInit),
        );
        let mut gate_rng = stream(config.seed, Stream::GateInit);
        let gate = match config.combiner {
            CombinerKind::Topexpert | CombinerKind::Moe => {
                let widths = [d, config.gate_hidden, config.gate_hidden, config.d_z];
                let mlp = Mlp::new(&mut store, "gate.mlp", &widths, &mut gate_rng);
                let centroids = store.add("gate.centroids", Tensor::zeros(&[experts, config.d_z]));
                Gate::Cluster { mlp, centroids }
            }
            CombinerKind::LinearSoftmaxGate => Gate::Linear(Linear::new(
                &mut store,
                "gate.linear",
                d,
                experts,
                &mut gate_rng,
            )),
            CombinerKind::ExpertExplicit => Gate::Explicit {
                centroids: Tensor::zeros(&[experts, d]),
            },
            CombinerKind::Single | CombinerKind::Ensemble => Gate::Uniform,
        };
        let align = if config.combiner.uses_cluster_losses() {
            if vocab == 0 {
                return Err(Error::Config("scaffold vocabulary is empty".into()));
            }
            let mut rng = stream(config.seed, Stream::ScaffoldInit);
            let scaffold_emb = store.add("align.scaffold_emb", xavier(&mut rng, vocab, config.d_z));
            let classifier = (config.align == AlignKind::Classify)
                .then(|| Linear::new(&mut store, "align.classifier", config.d_z, vocab, &mut rng));
            Some(AlignParts {
                scaffold_emb,
                classifier,
            })
        } else {
            None
        };
        Ok(Model {
            config: config.clone(),
            tasks,
            experts,
            vocab,
            store,
            encoder,
            bank,
            gate,
            align,
        })
    }

    /// `h_G`, and for the cluster gate `z` and `q`.
    pub fn represent(
        &self,
        tape: &mut Tape,
        batch: &GraphBatch,
    ) -> Result<(Var, Option<Var>, Option<Var>), Error> {
        let h = self.encoder.forward(tape, &self.store, batch)?;
        if let Gate::Cluster { mlp, centroids } = &self.gate {
            let z = mlp.forward(tape, &self.store, h)?;
            let mu = tape.param(&self.store, *centroids);
            let q = assign(tape, z, mu)?;
            return Ok((h, Some(z), Some(q)));
        }
        Ok((h, None, None))
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        batch: &GraphBatch,
        mode: GateMode,
    ) -> Result<Forward, Error> {
        let (h, z, q) = self.represent(tape, batch)?;
        let n = batch.num_graphs();
        let weights = match (&self.gate, mode) {
            (Gate::Uniform, _) => uniform_weights(tape, n, self.experts),
            (Gate::Cluster { .. }, GateMode::Inference) => q.expect("cluster gate yields q"),
            (Gate::Cluster { .. }, GateMode::Train { tau, noise, .. }) => {
                let noise =
                    noise.ok_or_else(|| contract("cluster gate needs Gumbel noise in training"))?;
                gumbel_sample(tape, q.expect("cluster gate yields q"), noise, tau)?
            }
            (Gate::Linear(lin), _) => {
                let logits = lin.forward(tape, &self.store, h)?;
                tape.softmax(logits, 1)?
            }
            (Gate::Explicit { .. }, GateMode::Train { groups, .. }) => {
                let groups = groups
                    .ok_or_else(|| contract("explicit gate needs group indices in training"))?;
                if groups.len() != n || groups.iter().any(|&g| g >= self.experts) {
                    return Err(contract(
                        "group indices do not match the batch or the expert count",
                    ));
                }
                one_hot_weights(tape, groups, self.experts)
            }
            (Gate::Explicit { centroids }, GateMode::Inference) => {
                let nearest = nearest_centroid(tape.value(h), centroids);
                one_hot_weights(tape, &nearest, self.experts)
            }
        };
        let logits = self.bank.logits(tape, &self.store, h)?;
        let probs = combine(tape, logits, weights, self.tasks)?;
        Ok(Forward {
            h,
            z,
            q,
            weights,
            probs,
        })
    }

    /// Deterministic inference in fixed-size chunks.
    pub fn predict(&self, graphs: &[&FeatureGraph]) -> Result<Prediction, Error> {
        let n = graphs.len();
        let mut probs = Vec::with_capacity(n * self.tasks);
        let mut weights = Vec::with_capacity(n * self.experts);
        let mut space: Vec<f64> = Vec::new();
        let mut width = 0;
        for chunk in graphs.chunks(INFERENCE_CHUNK) {
            let batch = GraphBatch::new(chunk)?;
            let mut tape = Tape::new();
            let out = self.forward(&mut tape, &batch, GateMode::Inference)?;
            probs.extend_from_slice(tape.value(out.probs).data());
            weights.extend_from_slice(tape.value(out.weights).data());
            let s = match self.gate {
                Gate::Cluster { .. } => out.z,
                Gate::Explicit { .. } => Some(out.h),
                _ => None,
            };
            if let Some(s) = s {
                width = tape.value(s).dims2().1;
                space.extend_from_slice(tape.value(s).data());
            }
        }
        Ok(Prediction {
            probs: Tensor::new(vec![n, self.tasks], probs)?,
            weights: Tensor::new(vec![n, self.experts], weights)?,
            space: if width > 0 {
                Some(Tensor::new(vec![n, width], space)?)
            } else {
                None
            },
        })
    }

    /// Data-dependent initialization of the topology MLP: shifts and scales its output layer
    /// so that `z` over `graphs` has zero mean and unit mean per-dimension variance.
    pub fn standardize_topology(&mut self, graphs: &[&FeatureGraph]) -> Result<(), Error> {
        let Gate::Cluster { mlp, .. } = &self.gate else {
            return Ok(());
        };
        let last = *mlp.layers.last().expect("topology MLP has layers");
        let z = self.predict(graphs)?.space.expect("cluster gate yields z");
        let (n, d) = z.dims2();
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for (m, x) in mean.iter_mut().zip(z.row(i)) {
                *m += x / n as f64;
            }
        }
        let var = (0..n)
            .map(|i| {
                z.row(i)
                    .iter()
                    .zip(&mean)
                    .map(|(x, m)| (x - m) * (x - m))
                    .sum::<f64>()
            })
            .sum::<f64>()
            / (n * d) as f64;
        if !(var > 0.0 && var.is_finite()) {
            return Ok(());
        }
        let c = 1.0 / var.sqrt();
        self.store
            .value_mut(last.w)
            .data_mut()
            .iter_mut()
            .for_each(|w| *w *= c);
        for (b, m) in self
            .store
            .value_mut(last.b)
            .data_mut()
            .iter_mut()
            .zip(&mean)
        {
            *b = (*b - m) * c;
        }
        Ok(())
    }

    /// Centroids of the gate, in the space reported by [`Prediction::space`].
    pub fn centroids(&self) -> Option<Tensor> {
        match &self.gate {
            Gate::Cluster { centroids, .. } => Some(self.store.value(*centroids).clone()),
            Gate::Explicit { centroids } => Some(centroids.clone()),
            _ => None,
        }
    }

    /// Replaces the gate centroids.
    pub fn set_centroids(&mut self, values: Tensor) -> Result<(), Error> {
        let target = match &mut self.gate {
            Gate::Cluster { centroids, .. } => self.store.value_mut(*centroids),
            Gate::Explicit { centroids } => centroids,
            _ => return Err(contract("this gate has no centroids")),
        };
        if target.shape() != values.shape() {
            return Err(contract(&format!(
                "centroids {:?} vs {:?}",
                values.shape(),
                target.shape()
            )));
        }
        *target = values;
        Ok(())
    }

    /// Column range of expert `k` inside the bank's weight and bias tensors.
    pub fn expert_columns(&self, k: usize) -> std::ops::Range<usize> {
        k * self.tasks..(k + 1) * self.tasks
    }
}

fn contract(msg: &str) -> Error {
    Error::Tensor(TensorError::Contract(msg.to_string()))
}
