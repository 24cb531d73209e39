//! Post-hoc latent-space analysis: PCA projections, cosine-similarity
//! matrices between architecture groups, and the separation summary used to
//! compare regularized against unconstrained latent spaces.

use ndgrad::Tensor;

use crate::error::{Error, Result};

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// `(eigenvalues, eigenvectors)` with eigenvectors in columns, unsorted.
fn jacobi_eigen(matrix: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut a = matrix.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[p * n + q] * a[p * n + q];
            }
        }
        if off < 1e-24 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-30 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let eigenvalues = (0..n).map(|i| a[i * n + i]).collect();
    (eigenvalues, v)
}

/// Principal-component projection of mean-centered points.
///
/// Components come from the eigendecomposition of the sample covariance,
/// ordered by descending eigenvalue, with the sign convention that each
/// component's largest-magnitude loading is positive. When the data rank is
/// below `dims`, only the informative components are returned (with a
/// warning on stderr).
pub fn pca_project(points: &Tensor, dims: usize) -> Result<(Tensor, Vec<f64>)> {
    let (n, d) = points.dim2().map_err(Error::Autodiff)?;
    if dims == 0 {
        return Err(Error::Data("pca needs dims >= 1".into()));
    }
    if n < dims + 1 {
        return Err(Error::Data(format!("pca needs at least dims+1 = {} points, got {n}", dims + 1)));
    }
    let data = points.data();
    let mut mean = vec![0.0; d];
    for r in 0..n {
        for c in 0..d {
            mean[c] += data[r * d + c];
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut centered = vec![0.0; n * d];
    for r in 0..n {
        for c in 0..d {
            centered[r * d + c] = data[r * d + c] - mean[c];
        }
    }
    let mut cov = vec![0.0; d * d];
    for r in 0..n {
        for i in 0..d {
            let xi = centered[r * d + i];
            for j in i..d {
                cov[i * d + j] += xi * centered[r * d + j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let val = cov[i * d + j] / (n as f64 - 1.0);
            cov[i * d + j] = val;
            cov[j * d + i] = val;
        }
    }

    let (eigenvalues, vectors) = jacobi_eigen(&cov, d);
    let total: f64 = eigenvalues.iter().map(|&e| e.max(0.0)).sum();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eigenvalues[b].partial_cmp(&eigenvalues[a]).expect("finite"));

    // Drop components whose eigenvalue is numerically zero (rank deficiency).
    let tol = eigenvalues[order[0]].abs().max(1e-300) * 1e-12;
    let keep: Vec<usize> =
        order.iter().copied().take(dims).filter(|&i| eigenvalues[i] > tol).collect();
    if keep.len() < dims {
        eprintln!(
            "warning: pca rank {} is below the requested {} components",
            keep.len(),
            dims
        );
    }

    let k = keep.len();
    let mut components = vec![0.0; d * k];
    for (col, &ei) in keep.iter().enumerate() {
        // Sign convention: largest-magnitude loading positive.
        let mut best = 0;
        for r in 1..d {
            if vectors[r * d + ei].abs() > vectors[best * d + ei].abs() {
                best = r;
            }
        }
        let flip = if vectors[best * d + ei] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..d {
            components[r * k + col] = flip * vectors[r * d + ei];
        }
    }

    let mut projections = vec![0.0; n * k];
    for r in 0..n {
        for c in 0..k {
            let mut acc = 0.0;
            for j in 0..d {
                acc += centered[r * d + j] * components[j * k + c];
            }
            projections[r * k + c] = acc;
        }
    }
    let explained: Vec<f64> = keep
        .iter()
        .map(|&i| if total > 0.0 { eigenvalues[i] / total } else { 0.0 })
        .collect();
    Ok((Tensor::matrix(n, k, projections)?, explained))
}

/// Pairwise cosine similarity: entry `(i, j)` relates row `i` of `a` to row
/// `j` of `b`. Zero-norm rows make the similarity undefined.
pub fn cosine_similarity_matrix(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (na, d) = a.dim2().map_err(Error::Autodiff)?;
    let (nb, db) = b.dim2().map_err(Error::Autodiff)?;
    if d != db {
        return Err(Error::Data(format!("vector dims differ: {d} vs {db}")));
    }
    let norm = |t: &Tensor, n: usize| -> Result<Vec<f64>> {
        (0..n)
            .map(|r| {
                let row = &t.data()[r * d..(r + 1) * d];
                let nrm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
                if nrm == 0.0 {
                    Err(Error::UndefinedSimilarity(format!("zero vector at row {r}")))
                } else {
                    Ok(nrm)
                }
            })
            .collect()
    };
    let norms_a = norm(a, na)?;
    let norms_b = norm(b, nb)?;
    let mut out = vec![0.0; na * nb];
    for i in 0..na {
        let ra = &a.data()[i * d..(i + 1) * d];
        for j in 0..nb {
            let rb = &b.data()[j * d..(j + 1) * d];
            let dot: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
            out[i * nb + j] = dot / (norms_a[i] * norms_b[j]);
        }
    }
    Ok(Tensor::matrix(na, nb, out)?)
}

/// Group-similarity summary comparing the best-scoring architectures with
/// the worst-scoring ones.
#[derive(Clone, Debug)]
pub struct SeparationReport {
    /// Mean cosine similarity among distinct pairs of the top group.
    pub within_top: f64,
    /// Mean cosine similarity between the top and worst groups.
    pub top_vs_worst: f64,
    /// `within_top - top_vs_worst`.
    pub delta: f64,
    /// Row indices (into the input ordering) of the two groups.
    pub top_indices: Vec<usize>,
    pub worst_indices: Vec<usize>,
}

/// Ranks latent points by score, then reports mean within-top similarity and
/// mean top-versus-worst similarity. Ties rank by input order.
pub fn separation_report(
    latents: &Tensor,
    scores: &[f64],
    top_n: usize,
    worst_n: usize,
) -> Result<SeparationReport> {
    let (n, _) = latents.dim2().map_err(Error::Autodiff)?;
    if scores.len() != n {
        return Err(Error::Data(format!("{} scores for {n} latent points", scores.len())));
    }
    if top_n == 0 || worst_n == 0 || top_n + worst_n > n {
        return Err(Error::Data(format!(
            "group sizes {top_n}+{worst_n} must be positive and fit the population {n}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        scores[b].partial_cmp(&scores[a]).expect("finite scores").then_with(|| a.cmp(&b))
    });
    let top_indices: Vec<usize> = order[..top_n].to_vec();
    let worst_indices: Vec<usize> = order[n - worst_n..].to_vec();

    let gather = |idx: &[usize]| -> Result<Tensor> {
        let d = latents.cols().map_err(Error::Autodiff)?;
        let mut rows = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            rows.extend_from_slice(&latents.data()[i * d..(i + 1) * d]);
        }
        Ok(Tensor::matrix(idx.len(), d, rows)?)
    };
    let top = gather(&top_indices)?;
    let worst = gather(&worst_indices)?;

    let within = cosine_similarity_matrix(&top, &top)?;
    let mut within_sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..top_n {
        for j in (i + 1)..top_n {
            within_sum += within.data()[i * top_n + j];
            pairs += 1;
        }
    }
    let within_top =
        if pairs > 0 { within_sum / pairs as f64 } else { 1.0 };

    let across = cosine_similarity_matrix(&top, &worst)?;
    let top_vs_worst = across.data().iter().sum::<f64>() / (top_n * worst_n) as f64;

    Ok(SeparationReport {
        within_top,
        top_vs_worst,
        delta: within_top - top_vs_worst,
        top_indices,
        worst_indices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndgrad::CounterRng;

    #[test]
    fn collinear_points_explain_everything_in_one_component() {
        let points =
            Tensor::matrix(4, 2, vec![1.0, 2.0, 2.0, 4.0, 3.0, 6.0, 4.0, 8.0]).unwrap();
        let (proj, explained) = pca_project(&points, 2).unwrap();
        // Rank 1: a single component carrying all variance.
        assert_eq!(explained.len(), 1);
        assert!((explained[0] - 1.0).abs() < 1e-9);
        assert_eq!(proj.cols().unwrap(), 1);
    }

    #[test]
    fn isotropic_cloud_has_near_uniform_spectrum() {
        let mut rng = CounterRng::new(33);
        let t = Tensor::randn(&[10_000, 4], 1.0, &mut rng);
        let (_, explained) = pca_project(&t, 4).unwrap();
        assert_eq!(explained.len(), 4);
        for &e in &explained {
            assert!((e - 0.25).abs() < 0.03, "explained {explained:?}");
        }
    }

    #[test]
    fn full_projection_preserves_centered_geometry() {
        let mut rng = CounterRng::new(34);
        let t = Tensor::randn(&[50, 3], 1.0, &mut rng);
        let (proj, _) = pca_project(&t, 3).unwrap();
        // Orthonormal basis: pairwise distances survive the rotation.
        let dist = |d: &[f64], i: usize, j: usize, w: usize| -> f64 {
            (0..w).map(|c| (d[i * w + c] - d[j * w + c]).powi(2)).sum::<f64>()
        };
        for i in 0..10 {
            for j in (i + 1)..10 {
                let a = dist(t.data(), i, j, 3);
                let b = dist(proj.data(), i, j, 3);
                assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn pca_is_translation_invariant_up_to_sign() {
        let mut rng = CounterRng::new(35);
        let t = Tensor::randn(&[40, 3], 1.0, &mut rng);
        let shifted = Tensor::matrix(
            40,
            3,
            t.data().iter().enumerate().map(|(i, x)| x + [5.0, -2.0, 9.0][i % 3]).collect(),
        )
        .unwrap();
        let (pa, ea) = pca_project(&t, 2).unwrap();
        let (pb, eb) = pca_project(&shifted, 2).unwrap();
        for (a, b) in ea.iter().zip(&eb) {
            assert!((a - b).abs() < 1e-9);
        }
        for (a, b) in pa.data().iter().zip(pb.data()) {
            assert!((a - b).abs() < 1e-7, "{a} vs {b}");
        }
    }

    #[test]
    fn cosine_similarity_basics() {
        let v = Tensor::matrix(1, 2, vec![3.0, 4.0]).unwrap();
        let m = cosine_similarity_matrix(&v, &v).unwrap();
        assert!((m.data()[0] - 1.0).abs() < 1e-12);

        let a = Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap();
        let b = Tensor::matrix(1, 2, vec![0.0, 5.0]).unwrap();
        assert!(cosine_similarity_matrix(&a, &b).unwrap().data()[0].abs() < 1e-12);

        let neg = Tensor::matrix(1, 2, vec![-1.0, 0.0]).unwrap();
        assert!((cosine_similarity_matrix(&a, &neg).unwrap().data()[0] + 1.0).abs() < 1e-12);

        // Positive scaling leaves similarity unchanged.
        let scaled = Tensor::matrix(1, 2, vec![7.0, 0.0]).unwrap();
        assert_eq!(
            cosine_similarity_matrix(&a, &b).unwrap().data()[0],
            cosine_similarity_matrix(&scaled, &b).unwrap().data()[0]
        );

        let zero = Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap();
        assert!(matches!(
            cosine_similarity_matrix(&a, &zero),
            Err(Error::UndefinedSimilarity(_))
        ));
    }

    #[test]
    fn degenerate_embedding_has_zero_separation() {
        // All latents identical: within-top and top-vs-worst similarities
        // are both exactly 1.
        let latents = Tensor::matrix(6, 3, vec![1.0, 2.0, 3.0].repeat(6)).unwrap();
        let scores = vec![6.0, 5.0, 4.0, 3.0, 2.0, 1.0];
        let report = separation_report(&latents, &scores, 2, 2).unwrap();
        assert!(report.delta.abs() < 1e-12);
        assert_eq!(report.top_indices, vec![0, 1]);
        assert_eq!(report.worst_indices, vec![4, 5]);
    }

    #[test]
    fn separated_clusters_have_positive_delta() {
        let mut rows = Vec::new();
        let mut scores = Vec::new();
        let mut rng = CounterRng::new(36);
        for i in 0..20 {
            let good = i < 10;
            let base: [f64; 2] = if good { [5.0, 5.0] } else { [-5.0, 5.0] };
            rows.push(base[0] + 0.1 * rng.normal());
            rows.push(base[1] + 0.1 * rng.normal());
            scores.push(if good { 10.0 - i as f64 * 0.01 } else { 1.0 - i as f64 * 0.01 });
        }
        let latents = Tensor::matrix(20, 2, rows).unwrap();
        let report = separation_report(&latents, &scores, 10, 10).unwrap();
        assert!(report.delta > 0.1, "delta {}", report.delta);
        assert_eq!(report.top_indices.len(), 10);
        assert_eq!(report.worst_indices.len(), 10);
    }
}
