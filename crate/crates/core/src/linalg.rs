//! Small dense linear-algebra helpers built on nalgebra's SVD.

use nalgebra::DMatrix;

/// Default relative singular-value threshold.
pub const DEFAULT_TOL: f64 = 1e-10;

/// Full singular decomposition data of an `l x m` matrix: singular values
/// (padded with zeros up to `m`) and the matching rows of `V^T`.
struct FullSvd {
    sigma: Vec<f64>,
    v_t: DMatrix<f64>,
}

fn full_svd(mat: &DMatrix<f64>) -> FullSvd {
    let (l, m) = mat.shape();
    // Zero-padding to at least m rows makes nalgebra return the full V.
    let padded = if l < m {
        let mut p = DMatrix::zeros(m, m);
        p.view_mut((0, 0), (l, m)).copy_from(mat);
        p
    } else {
        mat.clone()
    };
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("v_t requested");
    let sigma = svd.singular_values.iter().copied().collect();
    FullSvd { sigma, v_t }
}

fn threshold(sigma: &[f64], tol: f64) -> f64 {
    let smax = sigma.iter().fold(0.0_f64, |a, &b| a.max(b));
    tol * smax
}

/// Numerical rank with relative threshold `tol * sigma_max`.
pub fn rank(mat: &DMatrix<f64>, tol: f64) -> usize {
    if mat.nrows() == 0 || mat.ncols() == 0 {
        return 0;
    }
    let svd = mat.clone().svd(false, false);
    let s: Vec<f64> = svd.singular_values.iter().copied().collect();
    let smax = s.iter().fold(0.0_f64, |a, &b| a.max(b));
    if smax == 0.0 {
        return 0;
    }
    let thr = tol * smax;
    s.iter().filter(|&&x| x > thr).count()
}

/// Orthonormal basis (columns) of the kernel of `mat`.
///
/// Each column is sign-normalized so that its largest-magnitude entry is
/// positive, which makes the basis deterministic for one-dimensional kernels.
pub fn kernel_basis(mat: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let m = mat.ncols();
    if mat.nrows() == 0 || mat.iter().all(|&x| x == 0.0) {
        return DMatrix::identity(m, m);
    }
    let FullSvd { sigma, v_t } = full_svd(mat);
    let thr = threshold(&sigma, tol);
    let idx: Vec<usize> = (0..m).filter(|&i| sigma[i] <= thr).collect();
    let mut basis = DMatrix::zeros(m, idx.len());
    for (c, &i) in idx.iter().enumerate() {
        let row = v_t.row(i);
        let mut best = 0.0_f64;
        let mut sign = 1.0;
        for &x in row.iter() {
            if x.abs() > best + 1e-14 {
                best = x.abs();
                sign = x.signum();
            }
        }
        for k in 0..m {
            basis[(k, c)] = sign * row[k];
        }
    }
    basis
}

/// Orthogonal projector onto the kernel of `mat`.
pub fn kernel_projector(mat: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let b = kernel_basis(mat, tol);
    &b * b.transpose()
}

/// Moore-Penrose pseudoinverse via SVD with relative threshold.
pub fn pinv(mat: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let (l, m) = mat.shape();
    if mat.iter().all(|&x| x == 0.0) {
        return DMatrix::zeros(m, l);
    }
    let svd = mat.clone().svd(true, true);
    let smax = svd.singular_values.iter().fold(0.0_f64, |a, &b| a.max(b));
    let eps = tol * smax;
    let mut out = svd.pseudo_inverse(eps).expect("both factors computed");
    // Flush rounding noise so exactly sparse structure survives products.
    let floor = 8.0 * f64::EPSILON * out.amax();
    out.iter_mut().filter(|x| x.abs() <= floor).for_each(|x| *x = 0.0);
    out
}

/// Largest singular value.
pub fn spectral_norm(mat: &DMatrix<f64>) -> f64 {
    if mat.nrows() == 0 || mat.ncols() == 0 {
        return 0.0;
    }
    mat.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(0.0_f64, |a, &b| a.max(b))
}

/// Singular values in descending order.
pub fn singular_values(mat: &DMatrix<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = mat
        .clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    s
}

/// Euclidean norm of a slice.
pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
