//! Dense linear-algebra helpers shared by every module.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SysIdError};

/// Relative singular-value cutoff used for pseudo-inverses and rank decisions.
pub const PINV_RTOL: f64 = 1e-10;

/// Thin SVD with descending singular values and a deterministic sign convention.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub v_t: DMatrix<f64>,
}

type Factors = (DMatrix<f64>, DVector<f64>, DMatrix<f64>);

fn factors(dec: nalgebra::SVD<f64, nalgebra::Dyn, nalgebra::Dyn>) -> Option<Factors> {
    Some((dec.u?, dec.singular_values, dec.v_t?))
}

fn transposed((u, s, v_t): Factors) -> Factors {
    (v_t.transpose(), s, u.transpose())
}

/// SVD of a tall matrix through its QR factorization.
fn qr_svd(m: &DMatrix<f64>) -> Option<Factors> {
    let qr = m.clone().qr();
    let (q, r) = (qr.q(), qr.r());
    let (u, s, v_t) = factors(r.svd(true, true))?;
    Some((q * u, s, v_t))
}

fn reconstruction_error(m: &DMatrix<f64>, (u, s, v_t): &Factors) -> f64 {
    if s.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return f64::INFINITY;
    }
    let rec = u * DMatrix::from_diagonal(s) * v_t;
    let k = s.len();
    let ortho = (u.transpose() * u - DMatrix::<f64>::identity(k, k)).amax()
        + (v_t * v_t.transpose() - DMatrix::<f64>::identity(k, k)).amax();
    (rec - m).amax() / m.amax().max(f64::MIN_POSITIVE) + ortho
}

/// Factors of `m` that reproduce it to working precision.
///
/// The Golub-Kahan iteration in nalgebra occasionally returns factors that do
/// not reconstruct rank-deficient inputs (the error can reach 1e-2), so each
/// result is checked and alternative routes (transpose, QR first, tighter
/// tolerance) are tried until one passes; otherwise the most accurate is kept.
fn checked_factors(m: &DMatrix<f64>) -> Factors {
    let (r, c) = m.shape();
    let tol = 1e-11 * (1 + r.max(c)) as f64;
    let attempts: [&dyn Fn() -> Option<Factors>; 4] = [
        &|| factors(m.clone().svd(true, true)),
        &|| factors(m.transpose().svd(true, true)).map(transposed),
        &|| if r >= c { qr_svd(m) } else { qr_svd(&m.transpose()).map(transposed) },
        &|| factors(m.clone().try_svd(true, true, f64::EPSILON, 0)?),
    ];
    let mut best: Option<(f64, Factors)> = None;
    for attempt in attempts {
        let Some(f) = attempt() else { continue };
        let err = reconstruction_error(m, &f);
        if err <= tol {
            return f;
        }
        if best.as_ref().is_none_or(|(e, _)| err < *e) {
            best = Some((err, f));
        }
    }
    best.expect("at least one SVD route succeeds").1
}

/// Thin SVD of `m`, singular values descending. Each column of `u` is flipped
/// so that its largest-magnitude entry is positive; the matching row of `v_t`
/// is flipped with it.
pub fn svd(m: &DMatrix<f64>) -> Svd {
    let (r, c) = m.shape();
    let k = r.min(c);
    if k == 0 {
        return Svd {
            u: DMatrix::zeros(r, 0),
            singular_values: DVector::zeros(0),
            v_t: DMatrix::zeros(0, c),
        };
    }
    let (u0, s0, vt0) = checked_factors(m);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| s0[b].total_cmp(&s0[a]));
    let mut u = DMatrix::from_fn(r, k, |i, j| u0[(i, order[j])]);
    let mut v_t = DMatrix::from_fn(k, c, |i, j| vt0[(order[i], j)]);
    let sv = DVector::from_fn(k, |i, _| s0[order[i]]);
    for j in 0..k {
        let mut best = 0.0f64;
        let mut sign = 1.0;
        for i in 0..r {
            let x = u[(i, j)];
            if x.abs() > best {
                best = x.abs();
                sign = x.signum();
            }
        }
        if sign < 0.0 {
            u.column_mut(j).neg_mut();
            v_t.row_mut(j).neg_mut();
        }
    }
    Svd {
        u,
        singular_values: sv,
        v_t,
    }
}

/// Singular values in descending order.
pub fn singular_values(m: &DMatrix<f64>) -> DVector<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return DVector::zeros(0);
    }
    svd(m).singular_values
}

/// Operator 2-norm.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    let sv = singular_values(m);
    if sv.is_empty() {
        0.0
    } else {
        sv[0]
    }
}

/// `i`-th largest singular value, counting from zero; zero when `i` exceeds the rank bound.
pub fn sigma(m: &DMatrix<f64>, i: usize) -> f64 {
    let sv = singular_values(m);
    if i < sv.len() {
        sv[i]
    } else {
        0.0
    }
}

/// Moore-Penrose pseudo-inverse, dropping singular values below `rtol * sigma_max`.
pub fn pinv_with(m: &DMatrix<f64>, rtol: f64) -> DMatrix<f64> {
    let (r, c) = m.shape();
    let dec = svd(m);
    let mut out = DMatrix::zeros(c, r);
    if dec.singular_values.is_empty() {
        return out;
    }
    let cutoff = rtol * dec.singular_values[0];
    for (i, &s) in dec.singular_values.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            let vi = dec.v_t.row(i).transpose();
            let ui = dec.u.column(i);
            out += (vi * ui.transpose()) / s;
        }
    }
    out
}

/// Pseudo-inverse with the default cutoff.
pub fn pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    pinv_with(m, PINV_RTOL)
}

/// Largest eigenvalue magnitude of a square matrix.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

fn symmetric_part(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Symmetric square root of a PSD matrix. Eigenvalues down to
/// `-1e-10 * max(1, |lambda|_max)` are treated as rounding noise and clamped.
pub fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(SysIdError::Dimension("psd_sqrt needs a square matrix".into()));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(SysIdError::NonFinite("covariance"));
    }
    if m.nrows() == 0 {
        return Ok(m.clone());
    }
    let eig = symmetric_part(m).symmetric_eigen();
    let scale = eig.eigenvalues.amax().max(1.0);
    let min = eig.eigenvalues.min();
    if min < -1e-10 * scale {
        return Err(SysIdError::NotPsd { min_eigenvalue: min });
    }
    let d = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose())
}

/// Inverse symmetric square root of a PSD matrix, shifting the spectrum by
/// `reg` when the smallest eigenvalue does not exceed it.
pub fn psd_inv_sqrt(m: &DMatrix<f64>, reg: f64) -> DMatrix<f64> {
    let eig = symmetric_part(m).symmetric_eigen();
    let shift = if eig.eigenvalues.min() <= reg { reg } else { 0.0 };
    let d = eig
        .eigenvalues
        .map(|l| 1.0 / (l + shift).max(reg).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

/// Eigenvalues of a symmetric matrix (symmetrized first).
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    symmetric_part(m).symmetric_eigen().eigenvalues
}

/// Stacks matrices with equal column counts vertically.
pub fn vstack(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let cols = blocks.first().map_or(0, |b| b.ncols());
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        out.view_mut((r, 0), b.shape()).copy_from(b);
        r += b.nrows();
    }
    out
}

/// Concatenates matrices with equal row counts horizontally.
pub fn hstack(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks.first().map_or(0, |b| b.nrows());
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut c = 0;
    for b in blocks {
        out.view_mut((0, c), b.shape()).copy_from(b);
        c += b.ncols();
    }
    out
}

/// Converts row-major nested rows into a matrix; `cols` is needed when there are no rows.
pub fn from_rows(rows: &[Vec<f64>], cols: usize) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(rows.len(), cols);
    for (i, row) in rows.iter().enumerate() {
        if row.len() != cols {
            return Err(SysIdError::Dimension(format!(
                "row {i} has {} entries, expected {cols}",
                row.len()
            )));
        }
        for (j, &x) in row.iter().enumerate() {
            out[(i, j)] = x;
        }
    }
    Ok(out)
}

/// Row-major nested rows of a matrix.
pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}
