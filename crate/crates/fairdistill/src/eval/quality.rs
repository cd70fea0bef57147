//! Sample-quality scores that compare a synthetic batch against real rows in
//! the encoded feature space: density (how many real-neighborhood balls each
//! synthetic point falls into, relative to k) and coverage (the fraction of
//! real points with at least one synthetic point inside their ball).
//!
//! A real point's ball radius is the distance to its k-th nearest other real
//! point. All comparisons use squared distances so membership tests are
//! exact; a point on the boundary counts as inside.

use ndarray::Array2;

use super::EvalError;

fn sq_dist(a: &Array2<f64>, i: usize, b: &Array2<f64>, j: usize) -> f64 {
    let mut acc = 0.0;
    for c in 0..a.ncols() {
        let d = a[[i, c]] - b[[j, c]];
        acc += d * d;
    }
    acc
}

/// Squared radius of each real point's k-nearest-neighbor ball, neighbors
/// drawn from the other real points.
fn knn_sq_radii(real: &Array2<f64>, k: usize) -> Vec<f64> {
    let n = real.nrows();
    let mut radii = Vec::with_capacity(n);
    let mut dists = Vec::with_capacity(n - 1);
    for i in 0..n {
        dists.clear();
        for j in 0..n {
            if j != i {
                dists.push(sq_dist(real, i, real, j));
            }
        }
        let (_, kth, _) = dists.select_nth_unstable_by(k - 1, f64::total_cmp);
        radii.push(*kth);
    }
    radii
}

/// Density and coverage of `fake` with respect to `real`, with k-NN ball
/// radii (k = `k_nn`). Density can exceed 1 when synthetic points crowd into
/// dense real regions; coverage is a fraction in [0, 1].
pub fn density_coverage(
    real: &Array2<f64>,
    fake: &Array2<f64>,
    k_nn: usize,
) -> Result<(f64, f64), EvalError> {
    if k_nn == 0 {
        return Err(EvalError::Config("k_nn must be at least 1".into()));
    }
    let n_real = real.nrows();
    let n_fake = fake.nrows();
    if n_real <= k_nn {
        return Err(EvalError::TooFewRows {
            got: n_real,
            need: k_nn + 1,
            what: "real rows for k-NN radii".into(),
        });
    }
    if n_fake == 0 {
        return Err(EvalError::TooFewRows {
            got: 0,
            need: 1,
            what: "synthetic rows".into(),
        });
    }
    if real.ncols() != fake.ncols() {
        return Err(EvalError::Shape(format!(
            "real has {} columns, synthetic {}",
            real.ncols(),
            fake.ncols()
        )));
    }

    let radii = knn_sq_radii(real, k_nn);
    let mut in_ball_total = 0usize;
    let mut covered = vec![false; n_real];
    for j in 0..n_fake {
        for i in 0..n_real {
            if sq_dist(real, i, fake, j) <= radii[i] {
                in_ball_total += 1;
                covered[i] = true;
            }
        }
    }
    let density = in_ball_total as f64 / (k_nn as f64 * n_fake as f64);
    let coverage = covered.iter().filter(|&&c| c).count() as f64 / n_real as f64;
    Ok((density, coverage))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_samples_have_full_coverage() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let real = Array2::from_shape_fn((40, 3), |_| rng.random_range(-1.0..1.0));
        let fake = real.clone();
        let (density, coverage) = density_coverage(&real, &fake, 5).unwrap();
        assert_eq!(coverage, 1.0);
        // Every fake point sits at distance zero from its twin and inside
        // many neighboring balls, so density lands near 1 or above.
        assert!(density >= 1.0 / 5.0, "density {density}");
    }

    #[test]
    fn distant_fake_scores_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let real = Array2::from_shape_fn((30, 2), |_| rng.random_range(0.0..1.0));
        let fake = Array2::from_shape_fn((30, 2), |_| rng.random_range(100.0..101.0));
        let (density, coverage) = density_coverage(&real, &fake, 5).unwrap();
        assert_eq!(density, 0.0);
        assert_eq!(coverage, 0.0);
    }

    #[test]
    fn collapsed_fake_has_high_density_low_coverage() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let real = Array2::from_shape_fn((100, 2), |_| rng.random_range(-1.0..1.0));
        // All fake mass on one real point: locally dense, globally narrow.
        let fake = Array2::from_shape_fn((100, 2), |(_, c)| real[[0, c]]);
        let (density, coverage) = density_coverage(&real, &fake, 5).unwrap();
        assert!(density > 1.0, "density {density}");
        assert!(coverage < 0.2, "coverage {coverage}");
    }

    #[test]
    fn boundary_point_counts_as_inside() {
        // Real points on a line; radius of the middle point reaches its
        // neighbor exactly, and a fake point placed there must count.
        let real = Array2::from_shape_vec((4, 1), vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let fake = Array2::from_shape_vec((1, 1), vec![1.0]).unwrap();
        let (density, coverage) = density_coverage(&real, &fake, 1).unwrap();
        // Fake at 1.0: inside balls of reals at 0.0 (radius 1), 1.0 (radius
        // 1), and 2.0 (radius 1). 3.0 has radius 1, fake is at distance 2.
        assert_eq!(density, 3.0);
        assert_eq!(coverage, 0.75);
    }

    #[test]
    fn too_few_real_rows_is_an_error() {
        let real = Array2::zeros((4, 2));
        let fake = Array2::zeros((3, 2));
        assert!(matches!(
            density_coverage(&real, &fake, 5),
            Err(EvalError::TooFewRows { .. })
        ));
    }
}
