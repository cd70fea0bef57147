//! Principal component analysis via a cyclic Jacobi eigensolver on the
//! feature covariance matrix. Component signs are fixed by making each
//! component's largest-magnitude loading positive, so projections are
//! reproducible across runs and machines.

use ndarray::{Array1, Array2, Axis};

use super::EvalError;

#[derive(Debug, Clone)]
pub struct PcaProjection {
    /// Column means removed before projecting.
    pub mean: Array1<f64>,
    /// d x c loading matrix; columns are principal axes.
    pub components: Array2<f64>,
    /// n x c projected (centered) data.
    pub projected: Array2<f64>,
    pub explained_variance: Vec<f64>,
    /// Fraction of total variance captured per component.
    pub explained_ratio: Vec<f64>,
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns unsorted eigenvalues and the orthogonal matrix of eigenvectors
/// (as columns).
fn jacobi_eigen(sym: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
    let d = sym.nrows();
    let mut m = sym.clone();
    let mut v: Array2<f64> = Array2::eye(d);
    let frob: f64 = m.iter().map(|x| x * x).sum();
    let tol = (1e-28 * frob).max(f64::MIN_POSITIVE);

    for _sweep in 0..100 {
        let off: f64 = (0..d)
            .flat_map(|p| ((p + 1)..d).map(move |q| (p, q)))
            .map(|(p, q)| m[[p, q]] * m[[p, q]])
            .sum::<f64>()
            * 2.0;
        if off <= tol {
            break;
        }
        for p in 0..d.saturating_sub(1) {
            for q in (p + 1)..d {
                let apq = m[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * apq);
                // Smaller-angle root of t^2 + 2 t theta - 1 = 0.
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for i in 0..d {
                    let mip = m[[i, p]];
                    let miq = m[[i, q]];
                    m[[i, p]] = c * mip - s * miq;
                    m[[i, q]] = s * mip + c * miq;
                }
                for i in 0..d {
                    let mpi = m[[p, i]];
                    let mqi = m[[q, i]];
                    m[[p, i]] = c * mpi - s * mqi;
                    m[[q, i]] = s * mpi + c * mqi;
                }
                for i in 0..d {
                    let vip = v[[i, p]];
                    let viq = v[[i, q]];
                    v[[i, p]] = c * vip - s * viq;
                    v[[i, q]] = s * vip + c * viq;
                }
            }
        }
    }
    (m.diag().to_owned(), v)
}

/// Project centered data onto its top principal components.
///
/// Errors with `RankDeficient` when the data cannot support the requested
/// number of components: fewer columns than components, (numerically) zero
/// variance left at some requested component, or fewer than two rows.
pub fn pca_project(x: &Array2<f64>, components: usize) -> Result<PcaProjection, EvalError> {
    let n = x.nrows();
    let d = x.ncols();
    if components == 0 {
        return Err(EvalError::Config("components must be at least 1".into()));
    }
    if n < 2 {
        return Err(EvalError::TooFewRows {
            got: n,
            need: 2,
            what: "pca input".into(),
        });
    }
    if components > d {
        return Err(EvalError::RankDeficient {
            requested: components,
            rank: d,
        });
    }

    let mean = x.mean_axis(Axis(0)).expect("non-empty");
    let centered = x - &mean;
    let cov = centered.t().dot(&centered) / (n as f64 - 1.0);

    let (values, vectors) = jacobi_eigen(&cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));

    let trace: f64 = values.iter().map(|v| v.max(0.0)).sum();
    if trace <= 0.0 {
        return Err(EvalError::RankDeficient {
            requested: components,
            rank: 0,
        });
    }
    let rank_tol = 1e-12 * values[order[0]].max(0.0);
    let mut w = Array2::zeros((d, components));
    let mut explained = Vec::with_capacity(components);
    for (c, &oi) in order.iter().take(components).enumerate() {
        let lambda = values[oi].max(0.0);
        if lambda <= rank_tol {
            let rank = order
                .iter()
                .filter(|&&i| values[i].max(0.0) > rank_tol)
                .count();
            return Err(EvalError::RankDeficient {
                requested: components,
                rank,
            });
        }
        explained.push(lambda);
        let mut col = vectors.column(oi).to_owned();
        // Sign convention: largest-magnitude loading points positive.
        let mut peak = 0;
        for (i, v) in col.iter().enumerate() {
            if v.abs() > col[peak].abs() {
                peak = i;
            }
        }
        if col[peak] < 0.0 {
            col.mapv_inplace(|v| -v);
        }
        w.column_mut(c).assign(&col);
    }

    let projected = centered.dot(&w);
    let explained_ratio = explained.iter().map(|v| v / trace).collect();
    Ok(PcaProjection {
        mean,
        components: w,
        projected,
        explained_variance: explained,
        explained_ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn axis_aligned_variance_orders_components() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Array2::from_shape_fn((500, 3), |(_, c)| {
            let scale = [5.0, 1.0, 0.1][c];
            rng.random_range(-scale..scale)
        });
        let p = pca_project(&x, 2).unwrap();
        // First axis dominated by column 0, second by column 1.
        assert!(p.components[[0, 0]].abs() > 0.99, "{:?}", p.components);
        assert!(p.components[[1, 1]].abs() > 0.99);
        assert!(p.explained_ratio[0] > p.explained_ratio[1]);
        assert!(p.explained_ratio[0] > 0.8);
        // Sign convention: the peak loadings are positive.
        assert!(p.components[[0, 0]] > 0.0);
        assert!(p.components[[1, 1]] > 0.0);
    }

    #[test]
    fn recovers_rotated_principal_axis() {
        // Strong variance along (1, 1), weak along (1, -1).
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Array2::from_shape_fn((800, 2), |_| 0.0).mapv(|_: f64| 0.0);
        let mut x = x;
        for i in 0..800 {
            let a: f64 = rng.random_range(-3.0..3.0);
            let b: f64 = rng.random_range(-0.3..0.3);
            x[[i, 0]] = (a + b) / 2.0f64.sqrt();
            x[[i, 1]] = (a - b) / 2.0f64.sqrt();
        }
        let p = pca_project(&x, 1).unwrap();
        let c = p.components.column(0);
        let expect = 1.0 / 2.0f64.sqrt();
        assert!((c[0] - expect).abs() < 0.02, "c0 = {}", c[0]);
        assert!((c[1] - expect).abs() < 0.02, "c1 = {}", c[1]);
    }

    #[test]
    fn projection_is_centered() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Array2::from_shape_fn((100, 4), |_| rng.random_range(5.0..9.0));
        let p = pca_project(&x, 2).unwrap();
        assert_eq!(p.projected.dim(), (100, 2));
        for c in 0..2 {
            let m = p.projected.column(c).sum() / 100.0;
            assert!(m.abs() < 1e-9, "projected mean {m}");
        }
    }

    /// Independent oracle: power iteration with deflation.
    fn power_eigen(m: &Array2<f64>, count: usize) -> Vec<(f64, Array1<f64>)> {
        let d = m.nrows();
        let mut work = m.clone();
        let mut out = Vec::new();
        for _ in 0..count {
            let mut v = Array1::from_elem(d, 1.0 / (d as f64).sqrt());
            for _ in 0..2000 {
                let next = work.dot(&v);
                let norm = next.dot(&next).sqrt();
                if norm == 0.0 {
                    break;
                }
                v = next / norm;
            }
            let lambda = v.dot(&work.dot(&v));
            for i in 0..d {
                for j in 0..d {
                    work[[i, j]] -= lambda * v[i] * v[j];
                }
            }
            out.push((lambda, v));
        }
        out
    }

    #[test]
    fn matches_power_iteration_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for trial in 0..10 {
            let d = 5;
            let base = Array2::from_shape_fn((d, d), |_| rng.random_range(-1.0..1.0));
            let sym = &base + &base.t();
            let (values, vectors) = jacobi_eigen(&sym);
            let mut order: Vec<usize> = (0..d).collect();
            order.sort_by(|&a, &b| values[b].abs().total_cmp(&values[a].abs()));

            // Power iteration finds eigenvalues by descending magnitude.
            let oracle = power_eigen(&sym, 2);
            for (rank, (lam_o, v_o)) in oracle.iter().enumerate() {
                let oi = order[rank];
                assert!(
                    (values[oi] - lam_o).abs() <= 1e-9 * lam_o.abs().max(1.0),
                    "trial {trial} eigenvalue {rank}: jacobi {} oracle {lam_o}",
                    values[oi]
                );
                let dot: f64 = vectors.column(oi).dot(v_o);
                assert!(
                    (dot.abs() - 1.0).abs() < 1e-6,
                    "trial {trial} eigenvector {rank} misaligned: |dot| = {}",
                    dot.abs()
                );
            }
        }
    }

    #[test]
    fn rank_deficient_data_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut x = Array2::zeros((50, 2));
        for i in 0..50 {
            let v: f64 = rng.random_range(-1.0..1.0);
            x[[i, 0]] = v;
            x[[i, 1]] = 2.0 * v;
        }
        assert!(pca_project(&x, 1).is_ok());
        assert!(matches!(
            pca_project(&x, 2),
            Err(EvalError::RankDeficient { requested: 2, rank: 1 })
        ));
        // More components than columns.
        assert!(matches!(
            pca_project(&x, 3),
            Err(EvalError::RankDeficient { requested: 3, rank: 2 })
        ));
        // Constant data has no variance at all.
        let flat = Array2::from_elem((10, 2), 3.0);
        assert!(pca_project(&flat, 1).is_err());
    }
}
