use super::{Rng, Tensor};
use crate::error::{Error, Result};

/// Matrix product with `k`-ascending accumulation.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(Error::contract(format!(
            "matmul inner dimensions differ: {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for p in 0..k {
                acc += ad[i * k + p] * bd[p * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    Tensor::new(vec![m, n], out)
}

pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub fn norm(u: &[f64]) -> f64 {
    dot(u, u).sqrt()
}

/// Result of [`cosine_similarity`]. `degenerate` is set when either input is
/// all-zero, in which case `value` is 0.0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cosine {
    pub value: f64,
    pub degenerate: bool,
}

pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<Cosine> {
    if u.len() != v.len() {
        return Err(Error::contract(format!(
            "cosine similarity of vectors with lengths {} and {}",
            u.len(),
            v.len()
        )));
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Ok(Cosine {
            value: 0.0,
            degenerate: true,
        });
    }
    // 1 - |u/|u| - v/|v||^2 / 2: equal unit vectors give exactly 1.0, and
    // for positively scaled copies the squared residual is far below half an
    // ulp of 1, so the result still rounds to 1.0.
    let half_sq: f64 = u
        .iter()
        .zip(v)
        .map(|(a, b)| {
            let d = a / nu - b / nv;
            d * d
        })
        .sum::<f64>()
        / 2.0;
    let value = (1.0 - half_sq).clamp(-1.0, 1.0);
    Ok(Cosine {
        value,
        degenerate: false,
    })
}

/// Mean over the token (row) axis.
pub fn mean_pool(x: &Tensor) -> Result<Vec<f64>> {
    let (n, d) = x.dims2()?;
    if n == 0 {
        return Err(Error::contract("mean_pool over zero tokens"));
    }
    let mut acc = vec![0.0; d];
    for i in 0..n {
        for (a, v) in acc.iter_mut().zip(x.row(i)) {
            *a += v;
        }
    }
    Ok(acc.into_iter().map(|a| a / n as f64).collect())
}

#[derive(Debug, Clone)]
pub struct Pca {
    /// `k x d`, orthonormal rows.
    pub components: Tensor,
    /// `n x k` projections of the centered data.
    pub projected: Tensor,
    /// Non-increasing variances along each component.
    pub explained_variance: Vec<f64>,
}

const PCA_TOL: f64 = 1e-10;
const PCA_MAX_ITER: usize = 10_000;

/// Principal components by power iteration with deflation on the sample
/// covariance (`n - 1` denominator). The start vector for every component is
/// drawn from `Rng::new(0)` and orthogonalized against earlier components.
pub fn pca_embed(x: &Tensor, k: usize) -> Result<Pca> {
    let (n, d) = x.dims2()?;
    if n < 2 {
        return Err(Error::contract(format!("pca needs at least 2 rows, got {n}")));
    }
    if k == 0 || k > n.min(d) {
        return Err(Error::contract(format!(
            "pca k={k} outside 1..={} for data shape {:?}",
            n.min(d),
            x.shape()
        )));
    }

    let mean = mean_pool(x)?;
    let mut centered = x.clone();
    for i in 0..n {
        for (v, m) in centered.row_mut(i).iter_mut().zip(&mean) {
            *v -= m;
        }
    }

    let mut cov = vec![0.0; d * d];
    for a in 0..d {
        for b in a..d {
            let mut acc = 0.0;
            for i in 0..n {
                acc += centered.get2(i, a) * centered.get2(i, b);
            }
            let c = acc / (n - 1) as f64;
            cov[a * d + b] = c;
            cov[b * d + a] = c;
        }
    }
    let scale = (0..d).map(|i| cov[i * d + i]).sum::<f64>().max(f64::MIN_POSITIVE);

    let mut rng = Rng::new(0);
    let mut comps: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut variances = Vec::with_capacity(k);
    for _ in 0..k {
        let mut v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        orthonormalize(&mut v, &comps);
        let mut lambda = 0.0;
        for _ in 0..PCA_MAX_ITER {
            let mut w = sym_mul(&cov, d, &v);
            orthonormalize_against(&mut w, &comps);
            let wn = norm(&w);
            if wn <= 1e-14 * scale {
                // Remaining covariance is numerically zero; any orthonormal
                // direction is a valid component.
                lambda = 0.0;
                break;
            }
            w.iter_mut().for_each(|x| *x /= wn);
            let delta = v
                .iter()
                .zip(&w)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            v = w;
            lambda = wn;
            if delta < PCA_TOL {
                break;
            }
        }
        // Deterministic sign: largest-magnitude entry positive.
        let pivot = v
            .iter()
            .enumerate()
            .fold((0, 0.0_f64), |best, (i, x)| if x.abs() > best.1 { (i, x.abs()) } else { best })
            .0;
        if v[pivot] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        let prev = variances.last().copied().unwrap_or(f64::INFINITY);
        let rayleigh = dot(&v, &sym_mul(&cov, d, &v)).max(0.0);
        let var = if lambda == 0.0 { 0.0 } else { rayleigh.min(prev) };
        variances.push(var);
        comps.push(v);
    }

    let components = Tensor::new(vec![k, d], comps.concat())?;
    let projected = matmul(&centered, &components.transpose()?)?;
    Ok(Pca {
        components,
        projected,
        explained_variance: variances,
    })
}

fn sym_mul(m: &[f64], d: usize, v: &[f64]) -> Vec<f64> {
    (0..d).map(|i| dot(&m[i * d..(i + 1) * d], v)).collect()
}

fn orthonormalize_against(v: &mut [f64], basis: &[Vec<f64>]) {
    for b in basis {
        let p = dot(v, b);
        v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
    }
}

fn orthonormalize(v: &mut Vec<f64>, basis: &[Vec<f64>]) {
    orthonormalize_against(v, basis);
    // Twice is enough for numerical orthogonality.
    orthonormalize_against(v, basis);
    let n = norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    } else {
        // Start vector fell inside the span; use the first unit vector that
        // does not.
        for e in 0..v.len() {
            let mut u = vec![0.0; v.len()];
            u[e] = 1.0;
            orthonormalize_against(&mut u, basis);
            let un = norm(&u);
            if un > 1e-8 {
                *v = u.into_iter().map(|x| x / un).collect();
                return;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let b = t(&[&[5.0, 6.0], &[7.0, 8.0]]);
        assert_eq!(matmul(&Tensor::identity(2), &b).unwrap(), b);
    }

    #[test]
    fn matmul_hand_arithmetic() {
        let a = t(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let b = t(&[&[5.0, 6.0], &[7.0, 8.0]]);
        assert_eq!(matmul(&a, &b).unwrap(), t(&[&[19.0, 22.0], &[43.0, 50.0]]));
    }

    #[test]
    fn matmul_zero_annihilates() {
        let a = t(&[&[1.5, -2.0, 3.0], &[0.25, 4.0, -1.0]]);
        let z = Tensor::zeros(vec![3, 4]);
        assert!(matmul(&a, &z).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_mismatch_names_shapes() {
        let err = matmul(&Tensor::zeros(vec![2, 3]), &Tensor::zeros(vec![2, 3])).unwrap_err();
        assert!(err.is_contract());
        let msg = err.to_string();
        assert!(msg.contains("[2, 3] x [2, 3]"), "{msg}");
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[1.0, 0.0]).unwrap().value, 1.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap().value, 0.0);
        assert_eq!(
            cosine_similarity(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap().value,
            1.0
        );
    }

    #[test]
    fn cosine_degenerate() {
        let c = cosine_similarity(&[0.0, 0.0], &[1.0, 2.0]).unwrap();
        assert_eq!(c, Cosine { value: 0.0, degenerate: true });
        assert!(cosine_similarity(&[1.0], &[1.0, 2.0]).unwrap_err().is_contract());
    }

    #[test]
    fn mean_pool_examples() {
        let x = t(&[&[1.0, 2.0], &[1.0, 2.0], &[1.0, 2.0]]);
        assert_eq!(mean_pool(&x).unwrap(), vec![1.0, 2.0]);
        assert_eq!(mean_pool(&t(&[&[3.0, -4.0]])).unwrap(), vec![3.0, -4.0]);
        assert!(mean_pool(&Tensor::zeros(vec![0, 3])).unwrap_err().is_contract());
    }

    #[test]
    fn pca_rank_one_line() {
        let x = Tensor::from_rows(&(0..6).map(|i| vec![i as f64, 2.0 * i as f64]).collect::<Vec<_>>()).unwrap();
        let p = pca_embed(&x, 2).unwrap();
        assert!(p.explained_variance[0] > 0.0);
        assert!(p.explained_variance[1].abs() < 1e-12 * p.explained_variance[0]);
        for j in 0..2 {
            let col_mean: f64 = (0..6).map(|i| p.projected.get2(i, j)).sum::<f64>() / 6.0;
            assert!(col_mean.abs() < 1e-12);
        }
    }

    #[test]
    fn pca_symmetric_cross_matches_brute_force() {
        let x = t(&[&[1.0, 0.0], &[-1.0, 0.0], &[0.0, 1.0], &[0.0, -1.0]]);
        // Brute force: covariance of the cross is diag(2/3, 2/3); both
        // eigenvalues of a scaled identity equal its diagonal.
        let brute = {
            let n = 4.0;
            let sxx: f64 = [1.0f64, -1.0, 0.0, 0.0].iter().map(|v| v * v).sum();
            let syy: f64 = [0.0f64, 0.0, 1.0, -1.0].iter().map(|v| v * v).sum();
            (sxx / (n - 1.0), syy / (n - 1.0))
        };
        let p = pca_embed(&x, 2).unwrap();
        assert!((p.explained_variance[0] - brute.0).abs() < 1e-12);
        assert!((p.explained_variance[1] - brute.1).abs() < 1e-12);
    }

    #[test]
    fn pca_rejects_large_k() {
        let x = t(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert!(pca_embed(&x, 3).unwrap_err().is_contract());
    }

    proptest::proptest! {
        #[test]
        fn positive_scaling_gives_exactly_one(
            u in proptest::collection::vec(-1e3f64..1e3, 1..40),
            c in 1e-6f64..1e6,
        ) {
            proptest::prop_assume!(u.iter().any(|&x| x != 0.0));
            let v: Vec<f64> = u.iter().map(|x| c * x).collect();
            proptest::prop_assert_eq!(cosine_similarity(&u, &v).unwrap().value, 1.0);
            let w: Vec<f64> = u.iter().map(|x| -x).collect();
            proptest::prop_assert!((cosine_similarity(&u, &w).unwrap().value + 1.0).abs() < 1e-14);
        }

        #[test]
        fn cosine_is_symmetric_and_bounded(
            u in proptest::collection::vec(-5.0f64..5.0, 8),
            v in proptest::collection::vec(-5.0f64..5.0, 8),
        ) {
            let a = cosine_similarity(&u, &v).unwrap().value;
            proptest::prop_assert_eq!(a, cosine_similarity(&v, &u).unwrap().value);
            proptest::prop_assert!((-1.0..=1.0).contains(&a));
            let dot: f64 = u.iter().zip(&v).map(|(x, y)| x * y).sum();
            let n = norm(&u) * norm(&v);
            if n > 1e-6 {
                proptest::prop_assert!((a - dot / n).abs() < 1e-12);
            }
        }
    }
}
