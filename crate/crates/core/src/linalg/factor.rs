use super::{matmul_at, Mat};
use crate::error::{Error, Result};

/// LU factorisation with partial pivoting, packed in place.
pub(crate) struct LuFactor {
    lu: Mat,
    perm: Vec<usize>,
}

pub(crate) fn lu_factor(a: &Mat) -> Result<LuFactor> {
    if !a.is_square() {
        return Err(Error::NotSquare {
            op: "lu",
            rows: a.rows(),
            cols: a.cols(),
        });
    }
    let n = a.rows();
    let mut lu = a.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    for k in 0..n {
        let (p, pivot) = (k..n)
            .map(|i| (i, lu[(i, k)].abs()))
            .fold(
                (k, -1.0),
                |best, cur| if cur.1 > best.1 { cur } else { best },
            );
        if pivot == 0.0 || !pivot.is_finite() {
            return Err(Error::Singular("lu"));
        }
        if p != k {
            for j in 0..n {
                let tmp = lu[(k, j)];
                lu[(k, j)] = lu[(p, j)];
                lu[(p, j)] = tmp;
            }
            perm.swap(k, p);
        }
        let d = lu[(k, k)];
        for i in k + 1..n {
            let f = lu[(i, k)] / d;
            lu[(i, k)] = f;
            if f != 0.0 {
                let (top, bottom) = lu.data_mut().split_at_mut(i * n);
                let row_k = &top[k * n + k + 1..k * n + n];
                let row_i = &mut bottom[k + 1..n];
                for (x, y) in row_i.iter_mut().zip(row_k) {
                    *x -= f * y;
                }
            }
        }
    }
    Ok(LuFactor { lu, perm })
}

impl LuFactor {
    pub(crate) fn solve(&self, rhs: &Mat) -> Result<Mat> {
        let n = self.lu.rows();
        if rhs.rows() != n {
            return Err(Error::DimensionMismatch {
                op: "lu_solve",
                left: self.lu.shape(),
                right: rhs.shape(),
            });
        }
        let m = rhs.cols();
        let mut x = Mat::zeros(n, m);
        for (i, &p) in self.perm.iter().enumerate() {
            x.row_mut(i).copy_from_slice(rhs.row(p));
        }
        let data = x.data_mut();
        for i in 0..n {
            for k in 0..i {
                let f = self.lu[(i, k)];
                if f != 0.0 {
                    let (top, bottom) = data.split_at_mut(i * m);
                    for (a, b) in bottom[..m].iter_mut().zip(&top[k * m..k * m + m]) {
                        *a -= f * b;
                    }
                }
            }
        }
        for i in (0..n).rev() {
            for k in i + 1..n {
                let f = self.lu[(i, k)];
                if f != 0.0 {
                    let (top, bottom) = data.split_at_mut(k * m);
                    for (a, b) in top[i * m..i * m + m].iter_mut().zip(&bottom[..m]) {
                        *a -= f * b;
                    }
                }
            }
            let d = self.lu[(i, i)];
            for a in &mut data[i * m..i * m + m] {
                *a /= d;
            }
        }
        Ok(x)
    }
}

/// Solves `a · x = rhs` for a square `a`.
pub fn lu_solve(a: &Mat, rhs: &Mat) -> Result<Mat> {
    lu_factor(a)?.solve(rhs)
}

/// Lower Cholesky factor `L` with `a = L Lᵀ`.
pub fn cholesky(a: &Mat) -> Result<Mat> {
    if !a.is_square() {
        return Err(Error::NotSquare {
            op: "cholesky",
            rows: a.rows(),
            cols: a.cols(),
        });
    }
    let n = a.rows();
    let mut l = Mat::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= 0.0 || !d.is_finite() {
            return Err(Error::Singular("cholesky"));
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

/// Forward substitution with a lower-triangular matrix.
pub fn solve_lower(l: &Mat, b: &[f64]) -> Result<Vec<f64>> {
    let n = l.rows();
    if b.len() != n || !l.is_square() {
        return Err(Error::DimensionMismatch {
            op: "solve_lower",
            left: l.shape(),
            right: (b.len(), 1),
        });
    }
    let mut x = vec![0.0; n];
    for i in 0..n {
        let row = l.row(i);
        let s: f64 = row[..i].iter().zip(&x[..i]).map(|(a, b)| a * b).sum();
        let d = row[i];
        if d == 0.0 {
            return Err(Error::Singular("solve_lower"));
        }
        x[i] = (b[i] - s) / d;
    }
    Ok(x)
}

/// Upper-triangular `R` (square, `cols × cols`) of a Householder QR of a
/// tall matrix, with a non-negative diagonal. `RᵀR = aᵀa`.
pub fn householder_r(a: &Mat) -> Result<Mat> {
    let (m, n) = a.shape();
    if m < n {
        return Err(Error::DimensionMismatch {
            op: "householder_r",
            left: a.shape(),
            right: (n, n),
        });
    }
    // Work on columns stored contiguously.
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| a.column(j)).collect();
    let mut r = Mat::zeros(n, n);
    for k in 0..n {
        let norm = cols[k][k..].iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            for j in k + 1..n {
                r[(k, j)] = cols[j][k];
            }
            continue;
        }
        let alpha = if cols[k][k] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = cols[k][k..].to_vec();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        r[(k, k)] = alpha;
        if vnorm2 > 0.0 {
            for col in cols.iter_mut().skip(k + 1) {
                let dot: f64 = v.iter().zip(&col[k..]).map(|(a, b)| a * b).sum();
                let f = 2.0 * dot / vnorm2;
                for (c, vi) in col[k..].iter_mut().zip(&v) {
                    *c -= f * vi;
                }
            }
        }
        for j in k + 1..n {
            r[(k, j)] = cols[j][k];
        }
    }
    for k in 0..n {
        if r[(k, k)] < 0.0 {
            for j in k..n {
                r[(k, j)] = -r[(k, j)];
            }
        }
    }
    Ok(r)
}

/// Gram–Schmidt factorisation `Θ = Q · diag(scale) · T_gram` of the nonzero
/// columns of `Θ`.
///
/// The columns are orthogonalised from last to first, so for a
/// lower-triangular `Θ` the triangular factor `T_gram` is lower triangular
/// and for a strictly lower-triangular `Θ` with a nonzero sub-diagonal `Q` is
/// the shifted identity. Rows of the raw factor are divided by their
/// diagonal, so `T_gram` has a unit diagonal.
#[derive(Clone, Debug)]
pub struct GramSchmidt {
    /// `rows × m` with orthonormal columns.
    pub q: Mat,
    pub scale: Vec<f64>,
    /// `m × m`, unit diagonal.
    pub t_gram: Mat,
}

impl GramSchmidt {
    /// `Q diag(scale) T_gram`, padded back to a square matrix with the
    /// dropped trailing zero columns.
    pub fn reconstruct(&self) -> Mat {
        let n = self.q.rows();
        let m = self.q.cols();
        let qd = Mat::from_fn(n, m, |i, j| self.q[(i, j)] * self.scale[j]);
        let prod = qd.matmul(&self.t_gram).expect("consistent factors");
        Mat::from_fn(n, n, |i, j| if j < m { prod[(i, j)] } else { 0.0 })
    }
}

pub fn gram_schmidt_triangular(theta: &Mat) -> Result<GramSchmidt> {
    if !theta.is_square() {
        return Err(Error::NotSquare {
            op: "gram_schmidt_triangular",
            rows: theta.rows(),
            cols: theta.cols(),
        });
    }
    let n = theta.rows();
    // Trailing structurally-zero columns are dropped.
    let mut m = n;
    while m > 0 && theta.column(m - 1).iter().all(|&x| x == 0.0) {
        m -= 1;
    }
    let scale_ref = theta.frobenius_norm().max(f64::MIN_POSITIVE);
    let mut q_cols: Vec<Vec<f64>> = vec![Vec::new(); m];
    let mut r = Mat::zeros(m, m);
    for j in (0..m).rev() {
        let mut v = theta.column(j);
        // Two passes of modified Gram–Schmidt against the later columns.
        for _ in 0..2 {
            for (k, qk) in q_cols.iter().enumerate().skip(j + 1) {
                let c: f64 = qk.iter().zip(&v).map(|(a, b)| a * b).sum();
                r[(k, j)] += c;
                for (vi, qi) in v.iter_mut().zip(qk) {
                    *vi -= c * qi;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm <= 1e-13 * scale_ref {
            return Err(Error::RankDeficient { column: j });
        }
        r[(j, j)] = norm;
        q_cols[j] = v.into_iter().map(|x| x / norm).collect();
    }
    let q = Mat::from_fn(n, m, |i, j| q_cols[j][i]);
    let scale: Vec<f64> = (0..m).map(|i| r[(i, i)]).collect();
    let t_gram = Mat::from_fn(m, m, |i, j| r[(i, j)] / scale[i]);
    Ok(GramSchmidt { q, scale, t_gram })
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, descending.
pub fn symmetric_eigenvalues(a: &Mat) -> Result<Vec<f64>> {
    if !a.is_square() {
        return Err(Error::NotSquare {
            op: "symmetric_eigenvalues",
            rows: a.rows(),
            cols: a.cols(),
        });
    }
    if !a.is_finite() {
        return Err(Error::NonFinite("symmetric_eigenvalues argument".into()));
    }
    let n = a.rows();
    let mut m = a.clone();
    const MAX_SWEEPS: usize = 100;
    for sweep in 0..=MAX_SWEEPS {
        let mut off = 0.0;
        let mut diag = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    off += m[(i, j)] * m[(i, j)];
                } else {
                    diag += m[(i, i)] * m[(i, i)];
                }
            }
        }
        if off <= 1e-30 * diag || off == 0.0 {
            break;
        }
        if sweep == MAX_SWEEPS {
            return Err(Error::NoConvergence {
                what: "jacobi eigenvalues",
                iterations: MAX_SWEEPS,
            });
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                let tau = (aqq - app) / (2.0 * apq);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let t = if tau == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    Ok(ev)
}

/// Singular values, descending, from the eigenvalues of `mᵀm`.
pub fn singular_values(m: &Mat) -> Result<Vec<f64>> {
    if m.rows() == 0 || m.cols() == 0 {
        return Err(Error::InvalidParameter(
            "singular_values of an empty matrix".into(),
        ));
    }
    if !m.is_finite() {
        return Err(Error::NonFinite("singular_values argument".into()));
    }
    let gram = matmul_at(m, m);
    Ok(symmetric_eigenvalues(&gram)?
        .into_iter()
        .map(|x| x.max(0.0).sqrt())
        .collect())
}
