//! Cluster-based gate: topology MLP, Student-t assignment, Gumbel-Softmax sampling,
//! temperature annealing and k-means centroid initialization.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, TensorError, Var};

/// Floor applied to `q` before taking its log in the Gumbel-Softmax.
pub const Q_FLOOR: f64 = 1e-20;

/// Soft assignments `q_ik ∝ (1 + |z_i - mu_k|^2)^-1`, computed as a softmax of
/// `-log(1 + d_ik)` so that rows are normalized by the same kernel that produced them.
pub fn assign(tape: &mut Tape, z: Var, centroids: Var) -> Result<Var, TensorError> {
    let d = tape.sq_dist(z, centroids)?;
    let one_plus = tape.add_scalar(d, 1.0);
    let log_kernel = tape.log(one_plus)?;
    let neg = tape.scale(log_kernel, -1.0);
    tape.softmax(neg, 1)
}

/// Standard Gumbel variate from a uniform draw, `-ln(-ln u)`.
pub fn gumbel(u: f64) -> f64 {
    -(-u.ln()).ln()
}

/// `N x K` standard Gumbel noise. Uniforms are drawn from the open interval (0, 1).
pub fn gumbel_noise<R: Rng>(rng: &mut R, n: usize, k: usize) -> Tensor {
    let data = (0..n * k)
        .map(|_| {
            let u: f64 = loop {
                let u: f64 = rng.gen();
                if u > 0.0 {
                    break u;
                }
            };
            gumbel(u)
        })
        .collect();
    Tensor::new(vec![n, k], data).expect("shape matches")
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScheduleError {
    #[error("temperature must be positive, got {0}")]
    Temperature(f64),
    #[error("annealing needs T0 > TE > 0 and at least one epoch, got T0 = {t0}, TE = {te}, E = {epochs}")]
    Schedule { t0: f64, te: f64, epochs: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// `g = softmax((log max(q, floor) + noise) / tau)` with `noise` held constant.
pub fn gumbel_sample(
    tape: &mut Tape,
    q: Var,
    noise: &Tensor,
    tau: f64,
) -> Result<Var, ScheduleError> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(ScheduleError::Temperature(tau));
    }
    let floored = tape.clamp(q, Q_FLOOR, f64::INFINITY);
    let logq = tape.log(floored)?;
    let noise = tape.constant(noise.clone());
    let perturbed = tape.add(logq, noise)?;
    let scaled = tape.scale(perturbed, 1.0 / tau);
    Ok(tape.softmax(scaled, 1)?)
}

/// Exponential annealing `tau(e) = T0 (TE / T0)^(e / E)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Annealing {
    pub t0: f64,
    pub te: f64,
    pub epochs: usize,
}

impl Annealing {
    pub fn new(t0: f64, te: f64, epochs: usize) -> Result<Self, ScheduleError> {
        if !(t0.is_finite() && te > 0.0 && t0 > te && epochs > 0) {
            return Err(ScheduleError::Schedule { t0, te, epochs });
        }
        Ok(Annealing { t0, te, epochs })
    }

    /// Temperature at epoch counter `e`; clamped to the schedule's end beyond `E`.
    pub fn temperature(&self, e: usize) -> f64 {
        if e == 0 {
            return self.t0;
        }
        if e >= self.epochs {
            return self.te;
        }
        self.t0 * (self.te / self.t0).powf(e as f64 / self.epochs as f64)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeans {
    /// `K x d` centroids.
    pub centroids: Tensor,
    pub labels: Vec<usize>,
    /// Inertia after seeding and after each Lloyd iteration.
    pub inertia: Vec<f64>,
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    centroids
        .iter()
        .enumerate()
        .map(|(k, c)| (k, sq(point, c)))
        .fold(
            (0, f64::INFINITY),
            |best, cur| if cur.1 < best.1 { cur } else { best },
        )
}

/// k-means++ seeding followed by Lloyd iterations (at most `max_iter`, or until the
/// relative inertia change falls below `tol`). Empty clusters are reseeded with the point
/// farthest from its centroid. When fewer than `k` distinct points exist, seeding falls
/// back to uniformly drawn distinct indices.
pub fn kmeans<R: Rng>(
    points: &Tensor,
    k: usize,
    max_iter: usize,
    tol: f64,
    rng: &mut R,
) -> Result<KMeans, TensorError> {
    let (n, _) = points.dims2();
    if k == 0 || n < k {
        return Err(TensorError::Contract(format!(
            "kmeans needs 1 <= K <= N, got K = {k}, N = {n}"
        )));
    }
    let rows: Vec<&[f64]> = (0..n).map(|i| points.row(i)).collect();

    // k-means++ seeding.
    let mut centroids: Vec<Vec<f64>> = vec![rows[rng.gen_range(0..n)].to_vec()];
    let mut dist: Vec<f64> = rows.iter().map(|r| sq(r, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = dist.iter().sum();
        if total <= 0.0 {
            break;
        }
        let mut target = rng.gen::<f64>() * total;
        let mut pick = n - 1;
        for (i, d) in dist.iter().enumerate() {
            if *d > 0.0 && target < *d {
                pick = i;
                break;
            }
            target -= d;
        }
        if dist[pick] <= 0.0 {
            pick = dist.iter().rposition(|&d| d > 0.0).expect("total > 0");
        }
        centroids.push(rows[pick].to_vec());
        for (d, r) in dist.iter_mut().zip(&rows) {
            *d = d.min(sq(r, centroids.last().expect("just pushed")));
        }
    }
    if centroids.len() < k {
        // Degenerate data: too few distinct points for k-means++.
        centroids = sample(rng, n, k)
            .into_iter()
            .map(|i| rows[i].to_vec())
            .collect();
    }

    let assign_all = |centroids: &[Vec<f64>]| -> (Vec<usize>, Vec<f64>) {
        rows.iter().map(|r| nearest(r, centroids)).unzip()
    };
    let (mut labels, mut dists) = assign_all(&centroids);
    let mut inertia = vec![dists.iter().sum::<f64>()];
    for _ in 0..max_iter {
        let dim = rows[0].len();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (r, &l) in rows.iter().zip(&labels) {
            counts[l] += 1;
            for (s, x) in sums[l].iter_mut().zip(r.iter()) {
                *s += x;
            }
        }
        let mut taken = vec![false; n];
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            } else {
                let far = (0..n)
                    .filter(|&i| !taken[i])
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]))
                    .expect("n >= k");
                taken[far] = true;
                centroids[c] = rows[far].to_vec();
            }
        }
        (labels, dists) = assign_all(&centroids);
        let current: f64 = dists.iter().sum();
        let previous = *inertia.last().expect("seeded");
        inertia.push(current);
        if previous == 0.0 || (previous - current).abs() / previous < tol {
            break;
        }
    }
    let flat = centroids.concat();
    Ok(KMeans {
        centroids: Tensor::new(vec![k, rows[0].len()], flat)?,
        labels,
        inertia,
    })
}

/// Runs [`kmeans`] `restarts` times from the same stream and keeps the run with the lowest
/// final inertia (the earliest run on ties).
pub fn kmeans_restarts<R: Rng>(
    points: &Tensor,
    k: usize,
    restarts: usize,
    max_iter: usize,
    tol: f64,
    rng: &mut R,
) -> Result<KMeans, TensorError> {
    let mut best = kmeans(points, k, max_iter, tol, rng)?;
    for _ in 1..restarts {
        let run = kmeans(points, k, max_iter, tol, rng)?;
        if run.inertia.last() < best.inertia.last() {
            best = run;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    #[test]
    fn assignments_follow_student_kernel() {
        let z = Tensor::from_rows(&[vec![0.0, 0.0], vec![1.0, 2.0]]).unwrap();
        let mu = Tensor::from_rows(&[vec![0.0, 1.0], vec![3.0, 0.0], vec![-1.0, -1.0]]).unwrap();
        let mut tape = Tape::new();
        let (zv, mv) = (tape.constant(z.clone()), tape.constant(mu.clone()));
        let q = assign(&mut tape, zv, mv).unwrap();
        let q = tape.value(q);
        for i in 0..2 {
            let kernel: Vec<f64> = (0..3)
                .map(|k| {
                    let d: f64 = z
                        .row(i)
                        .iter()
                        .zip(mu.row(k))
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    1.0 / (1.0 + d)
                })
                .collect();
            let s: f64 = kernel.iter().sum();
            for k in 0..3 {
                assert!((q.at2(i, k) - kernel[k] / s).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn gumbel_sample_rejects_bad_temperature() {
        let mut tape = Tape::new();
        let q = tape.constant(Tensor::full(&[1, 2], 0.5));
        let noise = Tensor::zeros(&[1, 2]);
        assert!(matches!(
            gumbel_sample(&mut tape, q, &noise, 0.0),
            Err(ScheduleError::Temperature(_))
        ));
        assert!(matches!(
            gumbel_sample(&mut tape, q, &noise, f64::NAN),
            Err(ScheduleError::Temperature(_))
        ));
    }

    #[test]
    fn zero_noise_and_unit_temperature_return_q() {
        let mut tape = Tape::new();
        let qt = Tensor::from_rows(&[vec![0.2, 0.3, 0.5]]).unwrap();
        let q = tape.constant(qt.clone());
        let g = gumbel_sample(&mut tape, q, &Tensor::zeros(&[1, 3]), 1.0).unwrap();
        for (a, b) in tape.value(g).data().iter().zip(qt.data()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn annealing_is_geometric() {
        let s = Annealing::new(10.0, 0.1, 4).unwrap();
        let expected = [
            10.0,
            10.0 * 0.01f64.powf(0.25),
            1.0,
            10.0 * 0.01f64.powf(0.75),
            0.1,
        ];
        for (e, want) in expected.iter().enumerate() {
            assert!((s.temperature(e) - want).abs() < 1e-12, "epoch {e}");
        }
        assert_eq!(s.temperature(9), 0.1);
        assert!(Annealing::new(0.1, 10.0, 4).is_err());
        assert!(Annealing::new(10.0, 0.1, 0).is_err());
    }

    fn blobs() -> (Tensor, Vec<usize>) {
        let mut rng = stream(1, Stream::Synthetic);
        let centers = [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]];
        let mut rows = Vec::new();
        let mut truth = Vec::new();
        for (c, center) in centers.iter().enumerate() {
            for _ in 0..30 {
                rows.push(vec![
                    center[0] + rng.gen_range(-1.0..1.0),
                    center[1] + rng.gen_range(-1.0..1.0),
                ]);
                truth.push(c);
            }
        }
        (Tensor::from_rows(&rows).unwrap(), truth)
    }

    #[test]
    fn kmeans_recovers_separated_blobs() {
        let (points, truth) = blobs();
        let km = kmeans(&points, 3, 100, 1e-6, &mut stream(0, Stream::KMeans)).unwrap();
        assert_eq!(crate::metrics::nmi(&truth, &km.labels).unwrap(), 1.0);
        assert!(km.inertia.windows(2).all(|w| w[1] <= w[0] + 1e-9));
    }

    #[test]
    fn restarts_never_worsen_inertia() {
        let (points, _) = blobs();
        for seed in 0..5 {
            let one = kmeans(&points, 5, 100, 1e-6, &mut stream(seed, Stream::KMeans)).unwrap();
            let best = kmeans_restarts(&points, 5, 8, 100, 1e-6, &mut stream(seed, Stream::KMeans))
                .unwrap();
            assert!(best.inertia.last() <= one.inertia.last());
        }
    }

    #[test]
    fn kmeans_handles_duplicates_and_bad_k() {
        let points = Tensor::full(&[4, 2], 1.0);
        let km = kmeans(&points, 2, 10, 1e-6, &mut stream(0, Stream::KMeans)).unwrap();
        assert_eq!(km.centroids.shape(), [2, 2]);
        assert!(kmeans(&points, 5, 10, 1e-6, &mut stream(0, Stream::KMeans)).is_err());
        assert!(kmeans(&points, 0, 10, 1e-6, &mut stream(0, Stream::KMeans)).is_err());
    }
}
