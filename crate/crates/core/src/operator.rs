//! Constant-coefficient first-order differential operators
//! `A = sum_k A^(k) d_k` represented by their coefficient matrices.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::linalg;

/// A first-order constant-coefficient operator with `d >= 2` variables,
/// `l` equations and `m` field components.
#[derive(Clone, Debug, PartialEq)]
pub struct DifferentialOperator {
    d: usize,
    l: usize,
    m: usize,
    coeffs: Vec<DMatrix<f64>>,
}

/// Symbol of a first-order operator on any number of grid axes. Used for
/// rescaled, reduced and limit constraints, which need not satisfy `d >= 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct Symbol {
    coeffs: Vec<DMatrix<f64>>,
}

impl Symbol {
    pub fn new(coeffs: Vec<DMatrix<f64>>) -> Result<Self> {
        let first = coeffs
            .first()
            .ok_or_else(|| dim_err("symbol needs at least one coefficient"))?;
        let shape = first.shape();
        if coeffs.iter().any(|c| c.shape() != shape) {
            return Err(dim_err("symbol coefficients differ in shape"));
        }
        Ok(Self { coeffs })
    }

    pub fn axes(&self) -> usize {
        self.coeffs.len()
    }

    pub fn rows(&self) -> usize {
        self.coeffs[0].nrows()
    }

    pub fn cols(&self) -> usize {
        self.coeffs[0].ncols()
    }

    pub fn coeffs(&self) -> &[DMatrix<f64>] {
        &self.coeffs
    }

    /// `sum_k B^(k) eta_k`; `eta.len()` must equal the number of axes.
    pub fn eval(&self, eta: &[f64]) -> DMatrix<f64> {
        debug_assert_eq!(eta.len(), self.coeffs.len());
        let mut out = DMatrix::zeros(self.rows(), self.cols());
        for (c, &e) in self.coeffs.iter().zip(eta) {
            if e != 0.0 {
                out += c * e;
            }
        }
        out
    }

    /// Keep only the rows in `range`.
    pub fn select_rows(&self, range: std::ops::Range<usize>) -> Symbol {
        let coeffs = self
            .coeffs
            .iter()
            .map(|c| c.rows(range.start, range.len()).into_owned())
            .collect();
        Symbol { coeffs }
    }
}

/// Outcome of a sampled constant-rank test (hypothesis A1).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankCertificate {
    pub is_constant: bool,
    pub r: usize,
    pub min_rank: usize,
    pub max_rank: usize,
    pub samples: usize,
    pub tol: f64,
    /// Set when every sampled symbol vanished (A = 0), which is excluded.
    pub trivial: bool,
}

/// Normalization data for hypothesis A2.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorDecomposition {
    pub r: usize,
    pub a_d_plus: DMatrix<f64>,
    /// First `r` rows of each `A^(k)`, `k < d`.
    pub a_prime_plus: Vec<DMatrix<f64>>,
    /// Last `l - r` rows of each `A^(k)`, `k < d`.
    pub a_prime_minus: Vec<DMatrix<f64>>,
    pub row_transform: DMatrix<f64>,
}

/// The limit constraint `A_0 = [A^(d)_+ d_d ; A'_-]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LimitOperator {
    pub base: DifferentialOperator,
    pub r: usize,
}

impl LimitOperator {
    pub fn symbol(&self, eta: &[f64]) -> Result<DMatrix<f64>> {
        self.base.evaluate_symbol(eta)
    }
}

impl DifferentialOperator {
    pub fn new(coeffs: Vec<DMatrix<f64>>) -> Result<Self> {
        let d = coeffs.len();
        if d < 2 {
            return Err(dim_err(format!("operator needs d >= 2, got {d}")));
        }
        let (l, m) = coeffs[0].shape();
        if l == 0 || m == 0 {
            return Err(dim_err("operator needs l >= 1 and m >= 1"));
        }
        if coeffs.iter().any(|c| c.shape() != (l, m)) {
            return Err(dim_err("coefficient matrices differ in shape"));
        }
        if coeffs.iter().flat_map(|c| c.iter()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("non-finite coefficient".into()));
        }
        Ok(Self { d, l, m, coeffs })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn coeffs(&self) -> &[DMatrix<f64>] {
        &self.coeffs
    }

    /// `A^(k)` with zero-based `k`.
    pub fn coeff(&self, k: usize) -> &DMatrix<f64> {
        &self.coeffs[k]
    }

    /// `A^(d)`.
    pub fn a_d(&self) -> &DMatrix<f64> {
        &self.coeffs[self.d - 1]
    }

    pub fn evaluate_symbol(&self, eta: &[f64]) -> Result<DMatrix<f64>> {
        if eta.len() != self.d {
            return Err(dim_err(format!("eta has length {}, expected {}", eta.len(), self.d)));
        }
        Ok(self.symbol().eval(eta))
    }

    pub fn evaluate_rescaled_symbol(&self, eps: f64, eta: &[f64]) -> Result<DMatrix<f64>> {
        if eta.len() != self.d {
            return Err(dim_err(format!("eta has length {}, expected {}", eta.len(), self.d)));
        }
        Ok(self.rescaled(eps)?.eval(eta))
    }

    pub fn symbol(&self) -> Symbol {
        Symbol { coeffs: self.coeffs.clone() }
    }

    /// Symbol of `A_eps = A' + (1/eps) A^(d) d_d`.
    pub fn rescaled(&self, eps: f64) -> Result<Symbol> {
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(Error::InvalidParameter(format!("eps must be positive, got {eps}")));
        }
        let mut coeffs = self.coeffs.clone();
        if eps != 1.0 {
            coeffs[self.d - 1] /= eps;
        }
        Ok(Symbol { coeffs })
    }

    /// Symbol of `A'` acting in the first `d-1` variables.
    pub fn reduced_xprime(&self) -> Symbol {
        Symbol { coeffs: self.coeffs[..self.d - 1].to_vec() }
    }

    /// Symbol of `A^(d) d_d` as a one-variable operator.
    pub fn thickness(&self) -> Symbol {
        Symbol { coeffs: vec![self.a_d().clone()] }
    }

    /// Sampled constant-rank test over `n_samples` quasi-uniform sphere
    /// directions plus all coordinate axes.
    pub fn check_constant_rank(&self, n_samples: usize, tol: f64) -> Result<RankCertificate> {
        if n_samples == 0 || !(tol > 0.0) {
            return Err(Error::InvalidParameter("need n_samples >= 1 and tol > 0".into()));
        }
        let sym = self.symbol();
        let mut dirs = sphere_directions(self.d, n_samples);
        for k in 0..self.d {
            let mut e = vec![0.0; self.d];
            e[k] = 1.0;
            dirs.push(e);
        }
        let mut min_rank = usize::MAX;
        let mut max_rank = 0;
        for eta in &dirs {
            let r = linalg::rank(&sym.eval(eta), tol);
            min_rank = min_rank.min(r);
            max_rank = max_rank.max(r);
        }
        let trivial = max_rank == 0;
        Ok(RankCertificate {
            is_constant: !trivial && min_rank == max_rank,
            r: max_rank,
            min_rank,
            max_rank,
            samples: dirs.len(),
            tol,
            trivial,
        })
    }

    /// Left-multiplies by an invertible row transform so that
    /// `A^(d) = [A^(d)_+; 0]` with `A^(d)_+` in reduced row echelon form.
    pub fn normalize(&self, tol: f64) -> Result<(DifferentialOperator, OperatorDecomposition)> {
        if !(tol > 0.0) {
            return Err(Error::InvalidParameter("tol must be positive".into()));
        }
        let (l, m) = (self.l, self.m);
        let mut a = self.a_d().clone();
        let mut t = DMatrix::<f64>::identity(l, l);
        let scale = a.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()));
        let pivot_tol = tol * scale.max(f64::MIN_POSITIVE);
        let mut r = 0;
        for col in 0..m {
            if r == l {
                break;
            }
            let mut piv = r;
            let mut best = a[(r, col)].abs();
            for i in r + 1..l {
                if a[(i, col)].abs() > best {
                    best = a[(i, col)].abs();
                    piv = i;
                }
            }
            if best <= pivot_tol {
                continue;
            }
            a.swap_rows(r, piv);
            t.swap_rows(r, piv);
            let p = a[(r, col)];
            for j in 0..m {
                a[(r, j)] /= p;
            }
            for j in 0..l {
                t[(r, j)] /= p;
            }
            for i in 0..l {
                if i != r {
                    let f = a[(i, col)];
                    if f != 0.0 {
                        for j in 0..m {
                            a[(i, j)] -= f * a[(r, j)];
                        }
                        for j in 0..l {
                            t[(i, j)] -= f * t[(r, j)];
                        }
                    }
                }
            }
            r += 1;
        }
        let leftover = a.rows(r, l - r).iter().fold(0.0_f64, |acc, x| acc.max(x.abs()));
        if leftover > 1e-12 * scale.max(1.0) {
            return Err(Error::DegenerateNormalization(format!(
                "tolerance {tol:e} discarded rows of A^(d) with magnitude {leftover:.3e}"
            )));
        }
        let svd_rank = linalg::rank(self.a_d(), linalg::DEFAULT_TOL);
        if svd_rank != r {
            return Err(Error::DegenerateNormalization(format!(
                "elimination rank {r} differs from singular-value rank {svd_rank}"
            )));
        }
        let sv = linalg::singular_values(&t);
        let cond = sv[0] / sv[sv.len() - 1];
        if !cond.is_finite() {
            return Err(Error::DegenerateNormalization("row transform is singular".into()));
        }
        let mut coeffs: Vec<DMatrix<f64>> = self.coeffs.iter().map(|c| &t * c).collect();
        let last = self.d - 1;
        for i in r..l {
            for j in 0..m {
                coeffs[last][(i, j)] = 0.0;
            }
        }
        let normalized = DifferentialOperator::new(coeffs)?;
        let dec = OperatorDecomposition {
            r,
            a_d_plus: normalized.a_d().rows(0, r).into_owned(),
            a_prime_plus: normalized.coeffs[..last].iter().map(|c| c.rows(0, r).into_owned()).collect(),
            a_prime_minus: normalized.coeffs[..last]
                .iter()
                .map(|c| c.rows(r, l - r).into_owned())
                .collect(),
            row_transform: t,
        };
        Ok((normalized, dec))
    }

    /// Assembles `A_0` from a normalized operator and its decomposition.
    pub fn limit_operator(&self, dec: &OperatorDecomposition) -> Result<LimitOperator> {
        let (l, m, r) = (self.l, self.m, dec.r);
        if r > l
            || dec.a_d_plus.shape() != (r, m)
            || dec.a_prime_plus.len() != self.d - 1
            || dec.a_prime_minus.len() != self.d - 1
            || dec.a_prime_minus.iter().any(|c| c.shape() != (l - r, m))
        {
            return Err(dim_err("decomposition does not match operator"));
        }
        let mut coeffs = Vec::with_capacity(self.d);
        for minus in &dec.a_prime_minus {
            let mut c = DMatrix::zeros(l, m);
            c.view_mut((r, 0), (l - r, m)).copy_from(minus);
            coeffs.push(c);
        }
        let mut cd = DMatrix::zeros(l, m);
        cd.view_mut((0, 0), (r, m)).copy_from(&dec.a_d_plus);
        coeffs.push(cd);
        Ok(LimitOperator { base: DifferentialOperator::new(coeffs)?, r })
    }

    /// Normalizes with the default tolerance and assembles `A_0`.
    pub fn limit(&self) -> Result<LimitOperator> {
        let (n, dec) = self.normalize(linalg::DEFAULT_TOL)?;
        n.limit_operator(&dec)
    }

    /// Residual of the antisymmetry relation (hypothesis A4).
    pub fn check_antisymmetry(&self, tol: f64) -> f64 {
        let pinv = linalg::pinv(self.a_d(), tol);
        let mut worst = 0.0_f64;
        for k1 in 0..self.d - 1 {
            for k2 in k1..self.d - 1 {
                let a = &self.coeffs[k1] * &pinv * &self.coeffs[k2];
                let b = &self.coeffs[k2] * &pinv * &self.coeffs[k1];
                worst = worst.max((a + b).norm());
            }
        }
        worst
    }

    /// Built-in operators: `div` (l=1, m=d) and `curl` on `n x d` matrices
    /// (`(curl V)_{a,ij} = d_i V_{aj} - d_j V_{ai}`, rows ordered by `a`, then
    /// lexicographically in `(i, j)` with `i < j`).
    pub fn builtin(name: &str, n: usize, d: usize) -> Result<Self> {
        if d < 2 {
            return Err(dim_err("builtin operators need d >= 2"));
        }
        match name {
            "div" => {
                let coeffs = (0..d)
                    .map(|k| {
                        let mut c = DMatrix::zeros(1, d);
                        c[(0, k)] = 1.0;
                        c
                    })
                    .collect();
                Self::new(coeffs)
            }
            "curl" => {
                if n == 0 {
                    return Err(Error::InvalidParameter("curl needs n >= 1".into()));
                }
                let pairs = d * (d - 1) / 2;
                let (l, m) = (n * pairs, n * d);
                let mut coeffs = vec![DMatrix::zeros(l, m); d];
                let mut row = 0;
                for a in 0..n {
                    for i in 0..d {
                        for j in i + 1..d {
                            coeffs[i][(row, a * d + j)] = 1.0;
                            coeffs[j][(row, a * d + i)] = -1.0;
                            row += 1;
                        }
                    }
                }
                Self::new(coeffs)
            }
            other => Err(Error::InvalidParameter(format!("unknown builtin operator '{other}'"))),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&OperatorDoc::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: OperatorDoc = serde_json::from_str(s)?;
        doc.try_into()
    }
}

/// JSON form `{d, l, m, coeffs}` with each matrix given as a list of rows.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OperatorDoc {
    pub d: usize,
    pub l: usize,
    pub m: usize,
    pub coeffs: Vec<Vec<Vec<f64>>>,
}

impl From<&DifferentialOperator> for OperatorDoc {
    fn from(op: &DifferentialOperator) -> Self {
        let coeffs = op
            .coeffs
            .iter()
            .map(|c| (0..c.nrows()).map(|i| c.row(i).iter().copied().collect()).collect())
            .collect();
        OperatorDoc { d: op.d, l: op.l, m: op.m, coeffs }
    }
}

impl TryFrom<OperatorDoc> for DifferentialOperator {
    type Error = Error;

    fn try_from(doc: OperatorDoc) -> Result<Self> {
        if doc.coeffs.len() != doc.d {
            return Err(dim_err(format!("expected {} matrices, found {}", doc.d, doc.coeffs.len())));
        }
        let mut mats = Vec::with_capacity(doc.d);
        for rows in &doc.coeffs {
            if rows.len() != doc.l || rows.iter().any(|r| r.len() != doc.m) {
                return Err(dim_err(format!("matrix is not {}x{}", doc.l, doc.m)));
            }
            let flat: Vec<f64> = rows.iter().flatten().copied().collect();
            mats.push(DMatrix::from_row_slice(doc.l, doc.m, &flat));
        }
        DifferentialOperator::new(mats)
    }
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut x = 0.0;
    while i > 0 {
        x += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    x
}

const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

/// Deterministic quasi-uniform unit vectors: Halton points pushed through
/// Box-Muller and normalized.
pub fn sphere_directions(d: usize, count: usize) -> Vec<Vec<f64>> {
    let pairs = d.div_ceil(2);
    assert!(2 * pairs <= PRIMES.len(), "dimension too large for the Halton table");
    let mut out = Vec::with_capacity(count);
    let mut i = 1u64;
    while out.len() < count {
        let mut g = Vec::with_capacity(2 * pairs);
        for p in 0..pairs {
            let u1 = radical_inverse(i, PRIMES[2 * p]).max(1e-300);
            let u2 = radical_inverse(i, PRIMES[2 * p + 1]);
            let rad = (-2.0 * u1.ln()).sqrt();
            let th = 2.0 * std::f64::consts::PI * u2;
            g.push(rad * th.cos());
            g.push(rad * th.sin());
        }
        g.truncate(d);
        let n = linalg::norm(&g);
        i += 1;
        if n > 1e-12 {
            out.push(g.into_iter().map(|x| x / n).collect());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(1, v.len(), v)
    }

    #[test]
    fn div_symbol_examples() {
        let div = DifferentialOperator::builtin("div", 1, 3).unwrap();
        assert_eq!(div.evaluate_symbol(&[1.0, 0.0, 0.0]).unwrap(), row(&[1.0, 0.0, 0.0]));
        assert_eq!(div.evaluate_symbol(&[1.0, 2.0, 3.0]).unwrap(), row(&[1.0, 2.0, 3.0]));
        assert!(div.evaluate_symbol(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn curl_2d_symbol() {
        let curl = DifferentialOperator::builtin("curl", 1, 2).unwrap();
        assert_eq!(curl.coeff(0), &row(&[0.0, 1.0]));
        assert_eq!(curl.coeff(1), &row(&[-1.0, 0.0]));
        assert_eq!(curl.evaluate_symbol(&[1.0, 0.0]).unwrap(), row(&[0.0, 1.0]));
    }

    #[test]
    fn rescaled_symbol_examples() {
        let div = DifferentialOperator::builtin("div", 1, 2).unwrap();
        assert_eq!(div.evaluate_rescaled_symbol(0.5, &[0.0, 1.0]).unwrap(), row(&[0.0, 2.0]));
        let s = div.evaluate_rescaled_symbol(0.1, &[1.0, 1.0]).unwrap();
        assert!((s[(0, 0)] - 1.0).abs() < 1e-15 && (s[(0, 1)] - 10.0).abs() < 1e-12);
        assert!(div.evaluate_rescaled_symbol(0.0, &[1.0, 1.0]).is_err());
        assert!(div.evaluate_rescaled_symbol(-1.0, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn curl_two_rows_block_diagonal() {
        let c = DifferentialOperator::builtin("curl", 2, 2).unwrap();
        assert_eq!((c.l(), c.m()), (2, 4));
        assert_eq!(c.coeff(0), &DMatrix::from_row_slice(2, 4, &[0., 1., 0., 0., 0., 0., 0., 1.]));
    }

    #[test]
    fn unknown_builtin_rejected() {
        assert!(DifferentialOperator::builtin("grad", 1, 2).is_err());
    }

    #[test]
    fn diag_operator_is_not_constant_rank() {
        let a1 = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let a2 = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]);
        let op = DifferentialOperator::new(vec![a1, a2]).unwrap();
        let cert = op.check_constant_rank(200, 1e-10).unwrap();
        assert!(!cert.is_constant);
        assert_eq!((cert.min_rank, cert.max_rank), (1, 2));
    }

    #[test]
    fn zero_operator_flagged_trivial() {
        let op = DifferentialOperator::new(vec![DMatrix::zeros(1, 2); 2]).unwrap();
        let cert = op.check_constant_rank(10, 1e-10).unwrap();
        assert!(cert.trivial && !cert.is_constant);
    }

    #[test]
    fn normalize_identity_and_scaling() {
        let div = DifferentialOperator::builtin("div", 1, 3).unwrap();
        let (_, dec) = div.normalize(1e-10).unwrap();
        assert_eq!(dec.row_transform, DMatrix::identity(1, 1));
        let scaled = DifferentialOperator::new(div.coeffs().iter().map(|c| c * 2.0).collect()).unwrap();
        let (n, dec) = scaled.normalize(1e-10).unwrap();
        assert_eq!(dec.row_transform, DMatrix::from_element(1, 1, 0.5));
        assert_eq!(n, div);
    }

    #[test]
    fn normalize_curl_3d_moves_d3_rows_first() {
        let curl = DifferentialOperator::builtin("curl", 1, 3).unwrap();
        let (n, dec) = curl.normalize(1e-10).unwrap();
        assert_eq!(dec.r, 2);
        // rows (1,3) and (2,3) contain d_3 and come first
        assert!(n.a_d().row(2).iter().all(|&x| x == 0.0));
        assert!(n.a_d().rows(0, 2).iter().any(|&x| x != 0.0));
        assert_eq!(dec.row_transform.row(2), DMatrix::from_row_slice(1, 3, &[1., 0., 0.]).row(0));
    }

    #[test]
    fn degenerate_normalization_reported() {
        let a1 = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let a2 = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1e-6]);
        let op = DifferentialOperator::new(vec![a1, a2]).unwrap();
        assert!(op.normalize(1e-10).is_ok());
        assert!(matches!(op.normalize(1e-3), Err(Error::DegenerateNormalization(_))));
    }

    #[test]
    fn limit_of_div() {
        let div = DifferentialOperator::builtin("div", 1, 3).unwrap();
        let lim = div.limit().unwrap();
        assert_eq!(lim.base.coeff(0), &DMatrix::zeros(1, 3));
        assert_eq!(lim.base.coeff(1), &DMatrix::zeros(1, 3));
        assert_eq!(lim.base.coeff(2), &row(&[0.0, 0.0, 1.0]));
    }

    #[test]
    fn limit_with_vanishing_ad_is_aprime() {
        let a1 = row(&[1.0, 0.0]);
        let a2 = DMatrix::zeros(1, 2);
        let op = DifferentialOperator::new(vec![a1.clone(), a2]).unwrap();
        let lim = op.limit().unwrap();
        assert_eq!(lim.r, 0);
        assert_eq!(lim.base.coeff(0), &a1);
    }

    #[test]
    fn antisymmetry_examples() {
        for d in 2..=4 {
            let div = DifferentialOperator::builtin("div", 1, d).unwrap();
            assert_eq!(div.check_antisymmetry(1e-10), 0.0);
        }
        // d = 2: single term 2 A1 A2^+ A1
        let op = DifferentialOperator::new(vec![row(&[1.0, 1.0]), row(&[1.0, 0.0])]).unwrap();
        let pinv = linalg::pinv(op.coeff(1), 1e-10);
        let expect = (op.coeff(0) * &pinv * op.coeff(0) * 2.0).norm();
        assert!((op.check_antisymmetry(1e-10) - expect).abs() < 1e-14);
    }

    #[test]
    fn json_round_trip() {
        let curl = DifferentialOperator::builtin("curl", 1, 3).unwrap();
        let back = DifferentialOperator::from_json(&curl.to_json().unwrap()).unwrap();
        assert_eq!(back, curl);
        assert!(DifferentialOperator::from_json(r#"{"d":2,"l":1,"m":2,"coeffs":[[[1,0]]]}"#).is_err());
    }

    #[test]
    fn sphere_directions_are_unit() {
        for d in 2..=5 {
            for v in sphere_directions(d, 50) {
                assert_eq!(v.len(), d);
                assert!((linalg::norm(&v) - 1.0).abs() < 1e-14);
            }
        }
    }
}
