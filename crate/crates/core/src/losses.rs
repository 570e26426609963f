//! Training objectives.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, TensorError, Var};

/// Bounds applied to predicted probabilities before taking logs.
pub const PROB_CLAMP: f64 = 1e-12;
/// Floor on vector norms inside the cosine cost.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LossError {
    #[error("no observed labels in the batch")]
    NoLabels,
    #[error("non-finite {component} loss: {value}")]
    NonFinite { component: &'static str, value: f64 },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Binary cross-entropy averaged over observed `(i, t)` entries. `labels` is row-major
/// `N x T` with `None` for missing values.
pub fn bce_masked(tape: &mut Tape, probs: Var, labels: &[Option<bool>]) -> Result<Var, LossError> {
    let shape = tape.value(probs).shape().to_vec();
    if shape.iter().product::<usize>() != labels.len() {
        return Err(TensorError::Dimension {
            op: "bce_masked",
            detail: format!("predictions {:?} vs {} labels", shape, labels.len()),
        }
        .into());
    }
    let observed = labels.iter().filter(|l| l.is_some()).count();
    if observed == 0 {
        return Err(LossError::NoLabels);
    }
    let pos: Vec<f64> = labels
        .iter()
        .map(|l| (*l == Some(true)) as u8 as f64)
        .collect();
    let neg: Vec<f64> = labels
        .iter()
        .map(|l| (*l == Some(false)) as u8 as f64)
        .collect();
    let pos = tape.constant(Tensor::new(shape.clone(), pos)?);
    let neg = tape.constant(Tensor::new(shape, neg)?);
    let p = tape.clamp(probs, PROB_CLAMP, 1.0 - PROB_CLAMP);
    let log_p = tape.log(p)?;
    let one_minus = tape.rsub_scalar(1.0, p);
    let log_q = tape.log(one_minus)?;
    let a = tape.mul(pos, log_p)?;
    let b = tape.mul(neg, log_q)?;
    let both = tape.add(a, b)?;
    let total = tape.sum(both);
    Ok(tape.scale(total, -1.0 / observed as f64))
}

/// Sharpened targets `p_ik ∝ q_ik^2 / f_k` with `f_k = sum_i q_ik`. Plain values, no gradient.
pub fn target_distribution(q: &Tensor) -> Tensor {
    let (n, k) = q.dims2();
    let mut f = vec![0.0; k];
    for i in 0..n {
        for (fk, v) in f.iter_mut().zip(q.row(i)) {
            *fk += v;
        }
    }
    let mut out = Vec::with_capacity(n * k);
    for i in 0..n {
        let raw: Vec<f64> = q.row(i).iter().zip(&f).map(|(v, fk)| v * v / fk).collect();
        let s: f64 = raw.iter().sum();
        out.extend(raw.iter().map(|r| r / s));
    }
    Tensor::new(vec![n, k], out).expect("shape matches")
}

/// `(1/N) sum_ik p_ik log(p_ik / q_ik)` with `p` constant; zero entries of `p` contribute 0.
pub fn clustering_loss(tape: &mut Tape, p: &Tensor, q: Var) -> Result<Var, LossError> {
    let (n, _) = p.dims2();
    if tape.value(q).shape() != p.shape() {
        return Err(TensorError::Dimension {
            op: "clustering_loss",
            detail: format!("p {:?} vs q {:?}", p.shape(), tape.value(q).shape()),
        }
        .into());
    }
    let entropy_term: f64 = p
        .data()
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|v| v * v.ln())
        .sum();
    let pv = tape.constant(p.clone());
    let log_q = tape.log(q)?;
    let cross = tape.mul(pv, log_q)?;
    let cross = tape.sum(cross);
    let kl = tape.rsub_scalar(entropy_term, cross);
    Ok(tape.scale(kl, 1.0 / n as f64))
}

/// Optimal-transport alignment between one-hot scaffold indicators and cluster
/// assignments under the cosine cost `1 - cos(e_v, mu_k)`. With a one-hot source marginal
/// the only feasible plan is `s q^T`, so the loss is `(1/N) sum_i sum_k q_ik c(v_i, k)`.
///
/// `scaffold[i]` is the vocabulary index of sample `i`, or `None` for scaffolds outside the
/// vocabulary; those samples contribute zero but still count in `N`.
pub fn alignment_loss(
    tape: &mut Tape,
    q: Var,
    scaffold_emb: Var,
    centroids: Var,
    scaffold: &[Option<usize>],
) -> Result<Var, LossError> {
    let (n, k) = tape.value(q).dims2();
    if scaffold.len() != n {
        return Err(TensorError::Dimension {
            op: "alignment_loss",
            detail: format!("{} scaffold indices for {} rows of q", scaffold.len(), n),
        }
        .into());
    }
    let known: Vec<usize> = (0..n).filter(|&i| scaffold[i].is_some()).collect();
    if known.is_empty() {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let idx: Vec<usize> = known
        .iter()
        .map(|&i| scaffold[i].expect("filtered"))
        .collect();
    let e = tape.gather_rows(scaffold_emb, &idx)?;
    let cos = tape.cosine(e, centroids, NORM_EPS)?;
    let cost = tape.rsub_scalar(1.0, cos);
    let q_known = if known.len() == n {
        q
    } else {
        tape.gather_rows(q, &known)?
    };
    debug_assert_eq!(tape.value(cost).shape(), [known.len(), k]);
    let weighted = tape.mul(q_known, cost)?;
    let total = tape.sum(weighted);
    Ok(tape.scale(total, 1.0 / n as f64))
}

/// Mean Euclidean distance between each topology vector and its scaffold embedding.
pub fn direct_alignment_loss(
    tape: &mut Tape,
    z: Var,
    scaffold_emb: Var,
    scaffold: &[usize],
) -> Result<Var, LossError> {
    let e = tape.gather_rows(scaffold_emb, scaffold)?;
    let diff = tape.sub(z, e)?;
    let norms = tape.row_norm(diff)?;
    Ok(tape.mean(norms))
}

/// Mean cross-entropy of `N x V` scaffold logits against scaffold indices.
pub fn scaffold_classification_loss(
    tape: &mut Tape,
    logits: Var,
    scaffold: &[usize],
) -> Result<Var, LossError> {
    let (n, v) = tape.value(logits).dims2();
    if scaffold.len() != n {
        return Err(TensorError::Dimension {
            op: "scaffold_classification_loss",
            detail: format!("{} indices for {} rows", scaffold.len(), n),
        }
        .into());
    }
    if let Some(bad) = scaffold.iter().find(|&&s| s >= v) {
        return Err(TensorError::Contract(format!(
            "scaffold index {bad} outside vocabulary of {v}"
        ))
        .into());
    }
    let logp = tape.log_softmax(logits, 1)?;
    let mut pick = Tensor::zeros(&[n, v]);
    for (i, &s) in scaffold.iter().enumerate() {
        pick.data_mut()[i * v + s] = 1.0;
    }
    let pick = tape.constant(pick);
    let chosen = tape.mul(logp, pick)?;
    let total = tape.sum(chosen);
    Ok(tape.scale(total, -1.0 / n as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
}

/// Loss terms of one batch; unused terms are `None`.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub class: Option<Var>,
    pub cluster: Option<Var>,
    pub align: Option<Var>,
}

/// `class + alpha * cluster + beta * align`. Terms with zero weight are left off the tape so
/// they cannot contribute even a signed zero. Any non-finite term aborts with its name.
pub fn total_loss(
    tape: &mut Tape,
    terms: LossTerms,
    weights: LossWeights,
) -> Result<Var, LossError> {
    let parts = [
        ("class", terms.class, 1.0),
        ("cluster", terms.cluster, weights.alpha),
        ("align", terms.align, weights.beta),
    ];
    let mut total: Option<Var> = None;
    for (component, var, w) in parts {
        let Some(var) = var else { continue };
        let value = tape.value(var).item();
        if !value.is_finite() {
            return Err(LossError::NonFinite { component, value });
        }
        if w == 0.0 {
            continue;
        }
        let term = if w == 1.0 { var } else { tape.scale(var, w) };
        total = Some(match total {
            Some(t) => tape.add(t, term)?,
            None => term,
        });
    }
    Ok(total.unwrap_or_else(|| tape.constant(Tensor::scalar(0.0))))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bce_matches_hand_value_and_skips_missing() {
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::new(vec![2, 2], vec![0.8, 0.3, 0.6, 0.9]).unwrap());
        let labels = [Some(true), None, Some(false), Some(true)];
        let loss = bce_masked(&mut tape, p, &labels).unwrap();
        let want = -(0.8f64.ln() + 0.4f64.ln() + 0.9f64.ln()) / 3.0;
        assert!((tape.value(loss).item() - want).abs() < 1e-14);
        assert!(matches!(
            bce_masked(&mut tape, p, &[None; 4]),
            Err(LossError::NoLabels)
        ));
    }

    #[test]
    fn bce_is_finite_at_saturated_probabilities() {
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::vector(vec![0.0, 1.0]));
        let loss = bce_masked(&mut tape, p, &[Some(true), Some(false)]).unwrap();
        assert!(tape.value(loss).item().is_finite());
    }

    #[test]
    fn target_distribution_sharpens_and_normalizes() {
        let q = Tensor::from_rows(&[vec![0.6, 0.4], vec![0.5, 0.5]]).unwrap();
        let p = target_distribution(&q);
        let f = [1.1, 0.9];
        let raw0 = [0.36 / f[0], 0.16 / f[1]];
        assert!((p.at2(0, 0) - raw0[0] / (raw0[0] + raw0[1])).abs() < 1e-15);
        for i in 0..2 {
            assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
        assert!(p.at2(0, 0) > q.at2(0, 0));
    }

    #[test]
    fn clustering_loss_is_zero_at_p_equal_q() {
        let qt = Tensor::from_rows(&[vec![0.3, 0.7], vec![0.9, 0.1]]).unwrap();
        let mut tape = Tape::new();
        let q = tape.constant(qt.clone());
        let loss = clustering_loss(&mut tape, &qt, q).unwrap();
        assert!(tape.value(loss).item().abs() < 1e-15);
    }

    #[test]
    fn alignment_uses_cosine_cost() {
        let mut tape = Tape::new();
        let q = tape.constant(Tensor::from_rows(&[vec![0.25, 0.75], vec![1.0, 0.0]]).unwrap());
        let emb = tape.constant(Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap());
        let mu = tape.constant(Tensor::from_rows(&[vec![2.0, 0.0], vec![0.0, 3.0]]).unwrap());
        let loss = alignment_loss(&mut tape, q, emb, mu, &[Some(0), None]).unwrap();
        assert!((tape.value(loss).item() - 0.75 / 2.0).abs() < 1e-15);
    }

    #[test]
    fn alternative_alignment_values() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::from_rows(&[vec![3.0, 4.0], vec![1.0, 1.0]]).unwrap());
        let emb = tape.constant(Tensor::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap());
        let d = direct_alignment_loss(&mut tape, z, emb, &[0, 1]).unwrap();
        assert!((tape.value(d).item() - 2.5).abs() < 1e-15);
        let logits = tape.constant(Tensor::zeros(&[2, 4]));
        let c = scaffold_classification_loss(&mut tape, logits, &[0, 3]).unwrap();
        assert!((tape.value(c).item() - 4f64.ln()).abs() < 1e-14);
        assert!(scaffold_classification_loss(&mut tape, logits, &[0, 4]).is_err());
    }

    #[test]
    fn total_loss_weights_and_skips() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::scalar(1.0));
        let b = tape.leaf(Tensor::scalar(2.0));
        let c = tape.leaf(Tensor::scalar(4.0));
        let terms = LossTerms {
            class: Some(a),
            cluster: Some(b),
            align: Some(c),
        };
        let t = total_loss(
            &mut tape,
            terms,
            LossWeights {
                alpha: 0.5,
                beta: 0.25,
            },
        )
        .unwrap();
        assert_eq!(tape.value(t).item(), 3.0);
        let t = total_loss(
            &mut tape,
            terms,
            LossWeights {
                alpha: 0.0,
                beta: 0.0,
            },
        )
        .unwrap();
        assert_eq!(t, a);
        let bad = tape.leaf(Tensor::scalar(f64::NAN));
        let terms = LossTerms {
            class: Some(a),
            cluster: Some(bad),
            align: None,
        };
        let err = total_loss(
            &mut tape,
            terms,
            LossWeights {
                alpha: 1.0,
                beta: 1.0,
            },
        )
        .unwrap_err();
        assert!(matches!(
            err,
            LossError::NonFinite {
                component: "cluster",
                ..
            }
        ));
    }
}
