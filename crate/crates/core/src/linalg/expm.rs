use super::factor::{lu_factor, LuFactor};
use super::{matmul, Mat};
use crate::error::{Error, Result};

// Degree-13 diagonal Padé coefficients and the matching scaling threshold.
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA13: f64 = 5.371920351148152;

/// The operations the Padé evaluation needs. Implemented for plain matrices
/// and for block upper-triangular pairs `[[X, Y], [0, X]]`, so the Fréchet
/// derivative runs the exact same rational approximant on the doubled matrix
/// at a third of the cost.
trait PadeAlgebra: Sized + Clone {
    fn mul(&self, other: &Self) -> Self;
    fn scaled(&self, s: f64) -> Self;
    fn axpy(&mut self, s: f64, other: &Self);
    fn add_identity(&mut self, s: f64);
    /// `lhs⁻¹ · rhs`
    fn solve(lhs: &Self, rhs: &Self) -> Result<Self>;
}

impl PadeAlgebra for Mat {
    fn mul(&self, other: &Self) -> Self {
        matmul(self, other).expect("square operands")
    }

    fn scaled(&self, s: f64) -> Self {
        Mat::scaled(self, s)
    }

    fn axpy(&mut self, s: f64, other: &Self) {
        Mat::axpy(self, s, other).expect("same shape");
    }

    fn add_identity(&mut self, s: f64) {
        for i in 0..self.rows() {
            self[(i, i)] += s;
        }
    }

    fn solve(lhs: &Self, rhs: &Self) -> Result<Self> {
        lu_factor(lhs)?.solve(rhs)
    }
}

/// `[[x, y], [0, x]]`
#[derive(Clone)]
struct BlockPair {
    x: Mat,
    y: Mat,
}

impl PadeAlgebra for BlockPair {
    fn mul(&self, other: &Self) -> Self {
        let x = matmul(&self.x, &other.x).expect("square");
        let mut y = matmul(&self.x, &other.y).expect("square");
        super::gemm_into(1.0, &self.y, &other.x, 1.0, &mut y);
        BlockPair { x, y }
    }

    fn scaled(&self, s: f64) -> Self {
        BlockPair {
            x: self.x.scaled(s),
            y: self.y.scaled(s),
        }
    }

    fn axpy(&mut self, s: f64, other: &Self) {
        self.x.axpy(s, &other.x).expect("same shape");
        self.y.axpy(s, &other.y).expect("same shape");
    }

    fn add_identity(&mut self, s: f64) {
        self.x.add_identity(s);
    }

    fn solve(lhs: &Self, rhs: &Self) -> Result<Self> {
        // [[A, B], [0, A]]⁻¹ [[C, D], [0, C]] = [[A⁻¹C, A⁻¹(D − B A⁻¹C)], [0, A⁻¹C]]
        let lu: LuFactor = lu_factor(&lhs.x)?;
        let x = lu.solve(&rhs.x)?;
        let mut d = rhs.y.clone();
        super::gemm_into(-1.0, &lhs.y, &x, 1.0, &mut d);
        let y = lu.solve(&d)?;
        Ok(BlockPair { x, y })
    }
}

fn squarings_for(norm: f64) -> u32 {
    if norm <= THETA13 {
        0
    } else {
        (norm / THETA13).log2().ceil().max(0.0) as u32
    }
}

fn pade13<A: PadeAlgebra>(a: &A) -> Result<A> {
    let b = &PADE13;
    let a2 = a.mul(a);
    let a4 = a2.mul(&a2);
    let a6 = a4.mul(&a2);

    let mut inner_u = a6.scaled(b[13]);
    inner_u.axpy(b[11], &a4);
    inner_u.axpy(b[9], &a2);
    let mut u_poly = a6.mul(&inner_u);
    u_poly.axpy(b[7], &a6);
    u_poly.axpy(b[5], &a4);
    u_poly.axpy(b[3], &a2);
    u_poly.add_identity(b[1]);
    let u = a.mul(&u_poly);

    let mut inner_v = a6.scaled(b[12]);
    inner_v.axpy(b[10], &a4);
    inner_v.axpy(b[8], &a2);
    let mut v = a6.mul(&inner_v);
    v.axpy(b[6], &a6);
    v.axpy(b[4], &a4);
    v.axpy(b[2], &a2);
    v.add_identity(b[0]);

    let mut num = v.clone();
    num.axpy(1.0, &u);
    let mut den = v;
    den.axpy(-1.0, &u);
    A::solve(&den, &num)
}

fn expm_generic<A: PadeAlgebra>(a: &A, norm_1: f64) -> Result<A> {
    let s = squarings_for(norm_1);
    let scaled = a.scaled(0.5f64.powi(s as i32));
    let mut r = pade13(&scaled)?;
    for _ in 0..s {
        r = r.mul(&r);
    }
    Ok(r)
}

/// Matrix exponential by scaling and squaring with a degree-13 Padé
/// approximant; the number of squarings comes from `‖b‖₁`.
pub fn expm(b: &Mat) -> Result<Mat> {
    if !b.is_square() {
        return Err(Error::NotSquare {
            op: "expm",
            rows: b.rows(),
            cols: b.cols(),
        });
    }
    if !b.is_finite() {
        return Err(Error::NonFinite("expm argument".into()));
    }
    let n = b.rows();
    if n == 0 {
        return Ok(Mat::zeros(0, 0));
    }
    expm_generic(b, b.norm_1())
}

/// Returns `(exp(b), L(b, e))` where `L(b, e)` is the directional derivative
/// of the exponential at `b` in direction `e`.
///
/// Uses `exp([[b, e], [0, b]]) = [[exp(b), L], [0, exp(b)]]`. The doubled
/// matrix is never formed; its block upper-triangular structure is carried
/// through the Padé evaluation instead.
pub fn expm_frechet(b: &Mat, e: &Mat) -> Result<(Mat, Mat)> {
    if !b.is_square() {
        return Err(Error::NotSquare {
            op: "expm_frechet",
            rows: b.rows(),
            cols: b.cols(),
        });
    }
    if b.shape() != e.shape() {
        return Err(Error::DimensionMismatch {
            op: "expm_frechet",
            left: b.shape(),
            right: e.shape(),
        });
    }
    if !b.is_finite() || !e.is_finite() {
        return Err(Error::NonFinite("expm_frechet argument".into()));
    }
    let n = b.rows();
    if n == 0 {
        return Ok((Mat::zeros(0, 0), Mat::zeros(0, 0)));
    }
    // 1-norm of the doubled matrix: left block columns see only `b`, right
    // block columns see `e` stacked on `b`.
    let mut col_b = vec![0.0; n];
    let mut col_e = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            col_b[j] += b[(i, j)].abs();
            col_e[j] += e[(i, j)].abs();
        }
    }
    let norm = col_b
        .iter()
        .zip(&col_e)
        .map(|(cb, ce)| cb + ce)
        .fold(0.0, f64::max);
    let pair = BlockPair {
        x: b.clone(),
        y: e.clone(),
    };
    let out = expm_generic(&pair, norm)?;
    Ok((out.x, out.y))
}
