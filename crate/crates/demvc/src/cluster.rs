//! Per-view cluster centers with the Student-t soft assignment, the sharpened
//! auxiliary target distribution, KL clustering losses and their analytic
//! gradients, plus k-means initialization and the shared-center consistency
//! step.

use crate::error::{DemvcError, Result};
use crate::rng;
use crate::tensor::Tensor;
use rand::Rng;

/// Guard inside logarithms and divisions.
const EPS: f64 = 1e-12;

/// K cluster centers in the d-dimensional embedded space of one view.
#[derive(Debug, Clone)]
pub struct ClusterHead {
    centers: Tensor,
}

impl ClusterHead {
    pub fn new(centers: Tensor) -> Result<Self> {
        if centers.shape().len() != 2 || centers.rows() < 2 {
            return Err(DemvcError::Usage(format!(
                "cluster head needs a (K >= 2) x d center matrix, got shape {:?}",
                centers.shape()
            )));
        }
        centers.ensure_finite("cluster centers")?;
        Ok(ClusterHead { centers })
    }

    pub fn n_clusters(&self) -> usize {
        self.centers.rows()
    }

    pub fn embed_dim(&self) -> usize {
        self.centers.cols()
    }

    pub fn centers(&self) -> &Tensor {
        &self.centers
    }

    pub fn centers_mut(&mut self) -> &mut Tensor {
        &mut self.centers
    }

    /// Student-t similarity of every embedded point to every center:
    /// q_ij = (1 + ||z_i - mu_j||^2)^-1, row-normalized.
    pub fn soft_assign(&self, z: &Tensor) -> Result<SoftAssignment> {
        let d = self.embed_dim();
        if z.shape().len() != 2 || z.cols() != d {
            return Err(DemvcError::dimension(
                "soft_assign",
                &[z.rows(), d],
                z.shape(),
            ));
        }
        let (n, k) = (z.rows(), self.n_clusters());
        let mut q = Tensor::zeros(&[n, k]);
        for i in 0..n {
            let zi = z.row(i);
            let row = q.row_mut(i);
            let mut total = 0.0;
            for (j, qv) in row.iter_mut().enumerate() {
                let mu = self.centers.row(j);
                let mut dist = 0.0;
                for (a, b) in zi.iter().zip(mu) {
                    let diff = a - b;
                    dist += diff * diff;
                }
                *qv = 1.0 / (1.0 + dist);
                total += *qv;
            }
            for qv in row.iter_mut() {
                *qv /= total;
            }
        }
        Ok(SoftAssignment(q))
    }

    /// Analytic gradients of kl_loss(p, soft_assign(self, z)) with respect to
    /// the embedded points and the centers. `p` is treated as a constant.
    ///
    /// With u_ij = (1 + ||z_i - mu_j||^2)^-1, rho_i = sum_j p_ij:
    ///   dL/dz_i  =  2 sum_j (p_ij - rho_i q_ij) u_ij (z_i - mu_j)
    ///   dL/dmu_j = -2 sum_i (p_ij - rho_i q_ij) u_ij (z_i - mu_j)
    pub fn kl_backward(&self, z: &Tensor, p: &TargetDistribution) -> Result<(Tensor, Tensor)> {
        let d = self.embed_dim();
        let (n, k) = (z.rows(), self.n_clusters());
        if z.shape().len() != 2 || z.cols() != d {
            return Err(DemvcError::dimension("kl_backward", &[n, d], z.shape()));
        }
        if p.values().shape() != [n, k] {
            return Err(DemvcError::dimension(
                "kl_backward target",
                &[n, k],
                p.values().shape(),
            ));
        }
        let mut grad_z = Tensor::zeros(&[n, d]);
        let mut grad_mu = Tensor::zeros(&[k, d]);
        let mut u = vec![0.0; k];
        for i in 0..n {
            let zi = z.row(i);
            let p_row = p.values().row(i);
            let mut total = 0.0;
            for (j, uv) in u.iter_mut().enumerate() {
                let mu = self.centers.row(j);
                let mut dist = 0.0;
                for (a, b) in zi.iter().zip(mu) {
                    let diff = a - b;
                    dist += diff * diff;
                }
                *uv = 1.0 / (1.0 + dist);
                total += *uv;
            }
            let rho: f64 = p_row.iter().sum();
            for j in 0..k {
                let q = u[j] / total;
                let coeff = 2.0 * (p_row[j] - rho * q) * u[j];
                let mu = self.centers.row(j);
                for c in 0..d {
                    let delta = zi[c] - mu[c];
                    grad_z.data_mut()[i * d + c] += coeff * delta;
                    grad_mu.data_mut()[j * d + c] -= coeff * delta;
                }
            }
        }
        Ok((grad_z, grad_mu))
    }
}

/// Row-stochastic soft cluster assignment with strictly positive entries.
#[derive(Debug, Clone)]
pub struct SoftAssignment(Tensor);

impl SoftAssignment {
    /// Validates the row-sum and positivity invariants.
    pub fn from_tensor(t: Tensor) -> Result<Self> {
        validate_rows(&t, true)?;
        Ok(SoftAssignment(t))
    }

    /// Accepts boundary distributions (exact zeros, e.g. one-hot rows) that
    /// `soft_assign` itself can never produce. Rows must still be normalized.
    pub fn from_tensor_unchecked(t: Tensor) -> Self {
        SoftAssignment(t)
    }

    pub fn values(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    /// Index of the row maximum, lowest index on ties.
    pub fn hard_labels(&self) -> Vec<usize> {
        argmax_rows(&self.0)
    }
}

/// Sharpened target distribution. Held constant during differentiation.
#[derive(Debug, Clone)]
pub struct TargetDistribution(Tensor);

impl TargetDistribution {
    pub fn from_tensor(t: Tensor) -> Result<Self> {
        validate_rows(&t, false)?;
        Ok(TargetDistribution(t))
    }

    pub fn values(&self) -> &Tensor {
        &self.0
    }

    pub fn checksum(&self) -> u64 {
        self.0.checksum()
    }

    /// Rows restricted to `indices`, for mini-batch losses.
    pub fn gather_rows(&self, indices: &[usize]) -> TargetDistribution {
        TargetDistribution(self.0.gather_rows(indices))
    }
}

fn validate_rows(t: &Tensor, strictly_positive: bool) -> Result<()> {
    if t.shape().len() != 2 {
        return Err(DemvcError::Usage(format!(
            "distribution must be 2-D, got shape {:?}",
            t.shape()
        )));
    }
    for i in 0..t.rows() {
        let row = t.row(i);
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(DemvcError::Evaluation(format!(
                "row {i} sums to {sum}, expected 1"
            )));
        }
        for &v in row {
            if strictly_positive && !(v > 0.0 && v <= 1.0) {
                return Err(DemvcError::Evaluation(format!(
                    "row {i} holds {v}, outside (0, 1]"
                )));
            }
            if !strictly_positive && !(0.0..=1.0).contains(&v) {
                return Err(DemvcError::Evaluation(format!(
                    "row {i} holds {v}, outside [0, 1]"
                )));
            }
        }
    }
    Ok(())
}

fn argmax_rows(t: &Tensor) -> Vec<usize> {
    (0..t.rows())
        .map(|i| {
            let row = t.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Sharpens a soft assignment into its auxiliary target:
/// p_ij = (q_ij^2 / f_j) / sum_j' (q_ij'^2 / f_j') with f_j the soft cluster
/// frequency sum_i q_ij.
pub fn target_distribution(q: &SoftAssignment) -> TargetDistribution {
    let qt = q.values();
    let (n, k) = (qt.rows(), qt.cols());
    let mut freq = vec![0.0f64; k];
    for i in 0..n {
        for (f, v) in freq.iter_mut().zip(qt.row(i)) {
            *f += v;
        }
    }
    for f in freq.iter_mut() {
        if *f <= 0.0 {
            *f = EPS;
        }
    }
    let mut p = Tensor::zeros(&[n, k]);
    for i in 0..n {
        let q_row = qt.row(i);
        let p_row = p.row_mut(i);
        let mut total = 0.0;
        for j in 0..k {
            p_row[j] = q_row[j] * q_row[j] / freq[j];
            total += p_row[j];
        }
        for v in p_row.iter_mut() {
            *v /= total;
        }
    }
    TargetDistribution(p)
}

/// KL(P || Q) = sum_ij p_ij ln(p_ij / q_ij), with 0 ln(0/q) taken as 0 and q
/// clamped at 1e-12 inside the log.
pub fn kl_loss(p: &TargetDistribution, q: &SoftAssignment) -> Result<f64> {
    kl_loss_counting(p, q).map(|(v, _)| v)
}

/// Same as [`kl_loss`] but also reports how many q entries hit the clamp.
pub fn kl_loss_counting(p: &TargetDistribution, q: &SoftAssignment) -> Result<(f64, u64)> {
    let (pt, qt) = (p.values(), q.values());
    if pt.shape() != qt.shape() {
        return Err(DemvcError::dimension("kl_loss", pt.shape(), qt.shape()));
    }
    let mut total = 0.0;
    let mut clamped = 0u64;
    for (&pv, &qv) in pt.data().iter().zip(qt.data()) {
        if pv <= 0.0 {
            continue;
        }
        let denom = if qv < EPS {
            clamped += 1;
            EPS
        } else {
            qv
        };
        total += pv * (pv / denom).ln();
    }
    // rounding can push an exact zero (P == Q) a few ulps negative
    if total < 0.0 && total > -1e-9 {
        total = 0.0;
    }
    Ok((total, clamped))
}

/// Result of Lloyd's algorithm with k-means++ seeding.
#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub centers: Tensor,
    pub labels: Vec<usize>,
    /// Within-cluster sum of squared distances at the final state.
    pub objective: f64,
    pub iterations: usize,
    /// Empty-cluster reseed events encountered.
    pub reseeds: usize,
    /// Objective after each Lloyd iteration.
    pub objective_trace: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// Lloyd iterations from k-means++ seeding, stopping on an assignment
/// fixpoint or after `max_iters`. Empty clusters are reseeded to the point
/// farthest from its nearest center.
pub fn kmeans(z: &Tensor, k: usize, seed: u64, max_iters: usize) -> Result<KMeansResult> {
    let n = z.rows();
    let d = z.cols();
    if k < 2 {
        return Err(DemvcError::Usage(format!("kmeans needs K >= 2, got {k}")));
    }
    if n < k {
        return Err(DemvcError::Usage(format!(
            "kmeans needs at least K = {k} points, got {n}"
        )));
    }

    let mut rng = rng::rng_for(seed, rng::streams::KMEANS);
    // k-means++ seeding: first center uniform, the rest sampled with
    // probability proportional to the squared distance to the nearest chosen
    // center.
    let mut centers = Tensor::zeros(&[k, d]);
    let first = rng.gen_range(0..n);
    centers.row_mut(0).copy_from_slice(z.row(first));
    let mut best_d2: Vec<f64> = (0..n).map(|i| sq_dist(z.row(i), centers.row(0))).collect();
    for j in 1..k {
        let total: f64 = best_d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen_range(0.0..total);
            let mut chosen = n - 1;
            for (i, &w) in best_d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        centers.row_mut(j).copy_from_slice(z.row(pick));
        for (i, b) in best_d2.iter_mut().enumerate() {
            let dist = sq_dist(z.row(i), centers.row(j));
            if dist < *b {
                *b = dist;
            }
        }
    }

    let assign = |centers: &Tensor| -> Vec<usize> {
        (0..n)
            .map(|i| {
                let zi = z.row(i);
                let mut best = 0;
                let mut best_dist = sq_dist(zi, centers.row(0));
                for j in 1..k {
                    let dist = sq_dist(zi, centers.row(j));
                    if dist < best_dist {
                        best_dist = dist;
                        best = j;
                    }
                }
                best
            })
            .collect()
    };
    let objective_of = |centers: &Tensor, labels: &[usize]| -> f64 {
        labels
            .iter()
            .enumerate()
            .map(|(i, &l)| sq_dist(z.row(i), centers.row(l)))
            .sum()
    };

    let mut labels = assign(&centers);
    let mut reseeds = 0usize;
    let mut iterations = 0usize;
    let mut objective_trace = Vec::new();
    for _ in 0..max_iters {
        iterations += 1;
        // update step: means of the assigned points
        let mut counts = vec![0usize; k];
        let mut sums = Tensor::zeros(&[k, d]);
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            for (s, v) in sums.row_mut(l).iter_mut().zip(z.row(i)) {
                *s += v;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                let inv = 1.0 / counts[j] as f64;
                for (c, s) in centers.row_mut(j).iter_mut().zip(sums.row(j)) {
                    *c = s * inv;
                }
            }
        }
        // empty clusters grab the point farthest from its nearest center
        for j in 0..k {
            if counts[j] == 0 {
                reseeds += 1;
                let mut far_i = 0;
                let mut far_dist = -1.0;
                for i in 0..n {
                    let zi = z.row(i);
                    let mut nearest = f64::INFINITY;
                    for jj in 0..k {
                        let dist = sq_dist(zi, centers.row(jj));
                        if dist < nearest {
                            nearest = dist;
                        }
                    }
                    if nearest > far_dist {
                        far_dist = nearest;
                        far_i = i;
                    }
                }
                centers.row_mut(j).copy_from_slice(z.row(far_i));
            }
        }
        let next = assign(&centers);
        objective_trace.push(objective_of(&centers, &next));
        let converged = next == labels;
        labels = next;
        if converged {
            break;
        }
    }
    let objective = objective_of(&centers, &labels);
    Ok(KMeansResult {
        centers,
        labels,
        objective,
        iterations,
        reseeds,
        objective_trace,
    })
}

/// Copies the referred view's centers into every head (the center-consistency
/// initialization). Later training may diverge them again.
pub fn init_shared_centers(heads: &mut [ClusterHead], referred_centers: &Tensor) -> Result<()> {
    for head in heads.iter() {
        if head.centers.shape() != referred_centers.shape() {
            return Err(DemvcError::dimension(
                "init_shared_centers",
                head.centers.shape(),
                referred_centers.shape(),
            ));
        }
    }
    for head in heads.iter_mut() {
        head.centers = referred_centers.clone();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::finite_diff_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn head(k: usize, d: usize, data: Vec<f64>) -> ClusterHead {
        ClusterHead::new(Tensor::matrix(k, d, data).unwrap()).unwrap()
    }

    fn random_q(n: usize, k: usize, rng: &mut ChaCha8Rng) -> SoftAssignment {
        let mut data = Vec::with_capacity(n * k);
        for _ in 0..n {
            let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.01..1.0)).collect();
            let s: f64 = raw.iter().sum();
            data.extend(raw.iter().map(|v| v / s));
        }
        SoftAssignment::from_tensor(Tensor::matrix(n, k, data).unwrap()).unwrap()
    }

    #[test]
    fn equidistant_point_gets_uniform_assignment() {
        let h = head(2, 2, vec![1.0, 0.0, -1.0, 0.0]);
        let z = Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap();
        let q = h.soft_assign(&z).unwrap();
        assert_eq!(q.values().data(), &[0.5, 0.5]);
    }

    #[test]
    fn one_dim_hand_example() {
        // z = 0, centers 0 and 2: kernels 1 and 1/5 -> q = [5/6, 1/6]
        let h = head(2, 1, vec![0.0, 2.0]);
        let z = Tensor::matrix(1, 1, vec![0.0]).unwrap();
        let q = h.soft_assign(&z).unwrap();
        assert!((q.values().data()[0] - 5.0 / 6.0).abs() < 1e-12);
        assert!((q.values().data()[1] - 1.0 / 6.0).abs() < 1e-12);
        assert_eq!(q.hard_labels(), vec![0]);
    }

    #[test]
    fn hard_labels_break_ties_toward_the_lowest_index() {
        let q = SoftAssignment::from_tensor(
            Tensor::matrix(
                3,
                3,
                vec![
                    1.0 / 3.0,
                    1.0 / 3.0,
                    1.0 / 3.0, // uniform -> 0
                    0.2,
                    0.4,
                    0.4, // tie between 1 and 2 -> 1
                    0.1,
                    0.2,
                    0.7, // plain argmax -> 2
                ],
            )
            .unwrap(),
        )
        .unwrap();
        assert_eq!(q.hard_labels(), vec![0, 1, 2]);
    }

    #[test]
    fn assignment_is_translation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let centers: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let points: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let h = head(3, 2, centers.clone());
        let z = Tensor::matrix(4, 2, points.clone()).unwrap();
        let q0 = h.soft_assign(&z).unwrap();

        let t = [0.5, -0.25];
        let shifted_centers: Vec<f64> = centers
            .iter()
            .enumerate()
            .map(|(i, v)| v + t[i % 2])
            .collect();
        let shifted_points: Vec<f64> = points
            .iter()
            .enumerate()
            .map(|(i, v)| v + t[i % 2])
            .collect();
        let h2 = head(3, 2, shifted_centers);
        let z2 = Tensor::matrix(4, 2, shifted_points).unwrap();
        let q1 = h2.soft_assign(&z2).unwrap();
        for (a, b) in q0.values().data().iter().zip(q1.values().data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn soft_assign_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let k = rng.gen_range(2..6);
            let d = rng.gen_range(1..5);
            let n = rng.gen_range(1..10);
            let h = head(k, d, (0..k * d).map(|_| rng.gen_range(-3.0..3.0)).collect());
            let z = Tensor::matrix(n, d, (0..n * d).map(|_| rng.gen_range(-3.0..3.0)).collect())
                .unwrap();
            let q = h.soft_assign(&z).unwrap();
            for i in 0..n {
                let s: f64 = q.values().row(i).iter().sum();
                assert!((s - 1.0).abs() < 1e-9);
                assert!(q.values().row(i).iter().all(|&v| v > 0.0 && v <= 1.0));
            }
        }
    }

    #[test]
    fn one_hot_rows_are_a_fixed_point_of_the_target() {
        let raw = Tensor::matrix(3, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
        let q = SoftAssignment::from_tensor_unchecked(raw.clone());
        let p = target_distribution(&q);
        assert_eq!(p.values().data(), raw.data());
    }

    #[test]
    fn two_row_hand_example_sharpens() {
        let q =
            SoftAssignment::from_tensor(Tensor::matrix(2, 2, vec![0.8, 0.2, 0.2, 0.8]).unwrap())
                .unwrap();
        let p = target_distribution(&q);
        let expected = 16.0 / 17.0;
        assert!((p.values().data()[0] - expected).abs() < 1e-12);
        assert!((p.values().data()[1] - 1.0 / 17.0).abs() < 1e-12);
        assert!((p.values().data()[2] - 1.0 / 17.0).abs() < 1e-12);
        assert!((p.values().data()[3] - expected).abs() < 1e-12);
        // column sums are 1.0 each
        let c0 = p.values().data()[0] + p.values().data()[2];
        assert!((c0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_assignment_is_a_fixed_point_of_the_target() {
        for k in 2..6usize {
            for n in [1usize, 3, 4, 7] {
                let q = SoftAssignment::from_tensor(
                    Tensor::matrix(n, k, vec![1.0 / k as f64; n * k]).unwrap(),
                )
                .unwrap();
                let p = target_distribution(&q);
                let first = p.values().data()[0];
                assert!(p.values().data().iter().all(|&v| v == first));
                assert!((first - 1.0 / k as f64).abs() < 1e-14, "k={k} n={n}");
            }
        }
    }

    #[test]
    fn target_sharpens_when_columns_are_balanced() {
        // rows are cyclic shifts of one probability vector, so all column
        // sums are equal and max_j p_ij >= max_j q_ij must hold per row
        let base = [0.5, 0.3, 0.2];
        let mut data = Vec::new();
        for shift in 0..3 {
            for j in 0..3 {
                data.push(base[(j + shift) % 3]);
            }
        }
        let q = SoftAssignment::from_tensor(Tensor::matrix(3, 3, data).unwrap()).unwrap();
        let p = target_distribution(&q);
        for i in 0..3 {
            let qmax = q.values().row(i).iter().cloned().fold(0.0, f64::max);
            let pmax = p.values().row(i).iter().cloned().fold(0.0, f64::max);
            assert!(pmax >= qmax, "row {i}: {pmax} < {qmax}");
        }
    }

    #[test]
    fn kl_of_identical_distributions_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = random_q(5, 3, &mut rng);
        let p = TargetDistribution::from_tensor(q.values().clone()).unwrap();
        assert_eq!(kl_loss(&p, &q).unwrap(), 0.0);
    }

    #[test]
    fn kl_hand_example_is_ln_two() {
        let p =
            TargetDistribution::from_tensor(Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap()).unwrap();
        let q = SoftAssignment::from_tensor(Tensor::matrix(1, 2, vec![0.5, 0.5]).unwrap()).unwrap();
        let v = kl_loss(&p, &q).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn kl_is_nonnegative_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let k = rng.gen_range(2..5);
            let n = rng.gen_range(1..6);
            let q = random_q(n, k, &mut rng);
            let p =
                TargetDistribution::from_tensor(random_q(n, k, &mut rng).into_tensor()).unwrap();
            assert!(kl_loss(&p, &q).unwrap() >= 0.0);
        }
    }

    #[test]
    fn clamped_q_entries_are_counted() {
        let p =
            TargetDistribution::from_tensor(Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap()).unwrap();
        let q =
            SoftAssignment::from_tensor_unchecked(Tensor::matrix(1, 2, vec![0.0, 1.0]).unwrap());
        let (v, clamped) = kl_loss_counting(&p, &q).unwrap();
        assert_eq!(clamped, 1);
        assert!(v > 20.0); // ln(1/1e-12) ~= 27.6
    }

    #[test]
    fn kl_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // N=6, K=3, d=4 with P built from a different random configuration
        let z = Tensor::matrix(6, 4, (0..24).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let centers =
            Tensor::matrix(3, 4, (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let h = ClusterHead::new(centers.clone()).unwrap();
        let other =
            Tensor::matrix(6, 4, (0..24).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let p = target_distribution(&h.soft_assign(&other).unwrap());

        let (grad_z, grad_mu) = h.kl_backward(&z, &p).unwrap();
        assert!(grad_z.norm() > 1e-6);

        let err = finite_diff_check(
            |params: &[Tensor]| {
                let probe = ClusterHead::new(params[1].clone())?;
                let q = probe.soft_assign(&params[0])?;
                kl_loss(&p, &q)
            },
            &[z, centers],
            &[grad_z, grad_mu],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-5, "rel err {err}");
    }

    #[test]
    fn kl_gradient_vanishes_when_target_equals_assignment() {
        // P == Q(z): the constrained KL is stationary, so both the analytic
        // gradient and the central differences must be ~0.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let z = Tensor::matrix(4, 2, (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let centers =
            Tensor::matrix(2, 2, (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let h = ClusterHead::new(centers.clone()).unwrap();
        let p = TargetDistribution::from_tensor(h.soft_assign(&z).unwrap().into_tensor()).unwrap();

        let (grad_z, grad_mu) = h.kl_backward(&z, &p).unwrap();
        assert!(grad_z.norm() < 1e-12, "analytic z-grad {}", grad_z.norm());
        assert!(
            grad_mu.norm() < 1e-12,
            "analytic mu-grad {}",
            grad_mu.norm()
        );

        // central differences agree within truncation noise
        let step = 1e-5;
        let mut probe_z = z.clone();
        for i in 0..probe_z.len() {
            let orig = probe_z.data()[i];
            probe_z.data_mut()[i] = orig + step;
            let plus = kl_loss(&p, &h.soft_assign(&probe_z).unwrap()).unwrap();
            probe_z.data_mut()[i] = orig - step;
            let minus = kl_loss(&p, &h.soft_assign(&probe_z).unwrap()).unwrap();
            probe_z.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            assert!(numeric.abs() < 1e-8, "component {i}: {numeric}");
        }
    }

    #[test]
    fn target_is_detached_from_its_provenance() {
        // P is a value: rewriting the assignment and embeddings it was
        // derived from must not change gradients taken against it
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut z_src =
            Tensor::matrix(5, 3, (0..15).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let h = head(2, 3, (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let mut q_src = h.soft_assign(&z_src).unwrap();
        let p = target_distribution(&q_src);

        let z = Tensor::matrix(5, 3, (0..15).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let (gz1, gmu1) = h.kl_backward(&z, &p).unwrap();
        for v in z_src.data_mut() {
            *v = 0.0;
        }
        for v in q_src.0.data_mut() {
            *v = 0.5;
        }
        let (gz2, gmu2) = h.kl_backward(&z, &p).unwrap();
        assert_eq!(gz1.checksum(), gz2.checksum());
        assert_eq!(gmu1.checksum(), gmu2.checksum());
    }

    #[test]
    fn symmetric_configuration_has_no_gradient_off_axis() {
        // sample sits on the axis through both centers; the orthogonal
        // component of its gradient must vanish exactly
        let h = head(2, 2, vec![1.0, 0.0, -1.0, 0.0]);
        let z = Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap();
        let p =
            TargetDistribution::from_tensor(Tensor::matrix(1, 2, vec![0.5, 0.5]).unwrap()).unwrap();
        let (grad_z, _) = h.kl_backward(&z, &p).unwrap();
        assert_eq!(grad_z.data()[1], 0.0);
        assert!(grad_z.data()[0].abs() > 1e-6);
    }

    // Brute-force k-means oracle: all 2^N two-cluster labelings.
    fn brute_force_two_means(z: &Tensor) -> f64 {
        let n = z.rows();
        let d = z.cols();
        let mut best = f64::INFINITY;
        for mask in 0..(1u32 << n) {
            let mut means = [vec![0.0; d], vec![0.0; d]];
            let mut counts = [0usize; 2];
            for i in 0..n {
                let side = ((mask >> i) & 1) as usize;
                counts[side] += 1;
                for (m, v) in means[side].iter_mut().zip(z.row(i)) {
                    *m += v;
                }
            }
            if counts[0] == 0 || counts[1] == 0 {
                continue;
            }
            for side in 0..2 {
                for m in means[side].iter_mut() {
                    *m /= counts[side] as f64;
                }
            }
            let mut obj = 0.0;
            for i in 0..n {
                let side = ((mask >> i) & 1) as usize;
                obj += sq_dist(z.row(i), &means[side]);
            }
            if obj < best {
                best = obj;
            }
        }
        best
    }

    #[test]
    fn kmeans_hand_example() {
        let z = Tensor::matrix(4, 1, vec![0.0, 1.0, 9.0, 10.0]).unwrap();
        let res = kmeans(&z, 2, 7, 100).unwrap();
        assert!((res.objective - 1.0).abs() < 1e-12);
        let mut centers: Vec<f64> = res.centers.data().to_vec();
        centers.sort_by(f64::total_cmp);
        assert_eq!(centers, vec![0.5, 9.5]);
        assert_eq!(res.labels[0], res.labels[1]);
        assert_eq!(res.labels[2], res.labels[3]);
        assert_ne!(res.labels[0], res.labels[2]);
    }

    #[test]
    fn kmeans_with_n_equal_k_is_exact() {
        let z = Tensor::matrix(3, 2, vec![0.0, 0.0, 5.0, 5.0, -4.0, 2.0]).unwrap();
        let res = kmeans(&z, 3, 1, 50).unwrap();
        assert_eq!(res.objective, 0.0);
    }

    #[test]
    fn kmeans_matches_brute_force_on_separated_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for trial in 0..10u64 {
            let n = rng.gen_range(4..=8);
            // two blobs separated by >= 10x their internal spread
            let mut data = Vec::new();
            for i in 0..n {
                let c = if i % 2 == 0 { 0.0 } else { 20.0 };
                data.push(c + rng.gen_range(-1.0..1.0));
                data.push(c + rng.gen_range(-1.0..1.0));
            }
            let z = Tensor::matrix(n, 2, data).unwrap();
            let res = kmeans(&z, 2, trial, 100).unwrap();
            let best = brute_force_two_means(&z);
            assert!(
                (res.objective - best).abs() <= 1e-9 * best.max(1.0),
                "trial {trial}: kmeans {} vs brute {}",
                res.objective,
                best
            );
        }
    }

    #[test]
    fn kmeans_objective_is_non_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let z =
            Tensor::matrix(40, 3, (0..120).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let res = kmeans(&z, 4, 5, 100).unwrap();
        assert_eq!(res.reseeds, 0);
        for w in res.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "trace not monotone: {w:?}");
        }
    }

    #[test]
    fn kmeans_terminates_on_degenerate_duplicates() {
        let z = Tensor::matrix(4, 1, vec![0.0; 4]).unwrap();
        let res = kmeans(&z, 2, 3, 100).unwrap();
        assert_eq!(res.objective, 0.0);
        assert!(res.reseeds >= 1);
    }

    #[test]
    fn kmeans_rejects_fewer_points_than_clusters() {
        let z = Tensor::matrix(2, 1, vec![0.0, 1.0]).unwrap();
        assert!(matches!(kmeans(&z, 3, 0, 10), Err(DemvcError::Usage(_))));
    }

    #[test]
    fn shared_center_initialization_copies_bit_for_bit() {
        let mut heads = vec![
            head(2, 2, vec![1.0, 2.0, 3.0, 4.0]),
            head(2, 2, vec![5.0, 6.0, 7.0, 8.0]),
            head(2, 2, vec![0.0, 0.0, 0.0, 0.0]),
        ];
        let referred = Tensor::matrix(2, 2, vec![0.25, -0.5, 1.75, 0.125]).unwrap();
        init_shared_centers(&mut heads, &referred).unwrap();
        for h in &heads {
            assert_eq!(h.centers().checksum(), referred.checksum());
        }
        // a later edit to one head no longer constrains the others
        heads[0].centers_mut().data_mut()[0] = 9.0;
        assert_ne!(heads[0].centers().checksum(), heads[1].centers().checksum());
    }

    #[test]
    fn shared_center_initialization_checks_shape() {
        let mut heads = vec![head(2, 2, vec![0.0; 4])];
        let wrong = Tensor::matrix(3, 2, vec![0.0; 6]).unwrap();
        assert!(init_shared_centers(&mut heads, &wrong).is_err());
    }
}
