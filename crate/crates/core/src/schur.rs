//! The recurrent matrix in real Schur form.
//!
//! `V = P Θ Pᵀ` with `P = exp(B)` for a skew-symmetric generator `B`, and
//! `Θ = Λ + T` where `Λ` is block-diagonal with scaled rotations
//! `γᵢ [[cos θᵢ, −sin θᵢ], [sin θᵢ, cos θᵢ]]` and `T` is strictly lower
//! triangular. The positions `(2k+1, 2k)` belong to the rotation blocks, so
//! `T` is zero there and `Λ`, `T` never overlap.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{expm, expm_frechet, matmul, Mat};

/// Treatment of the rotation moduli during training.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaMode {
    /// γ is trained without a penalty.
    Free,
    /// γ is trained with the penalty `δ Σ (1 − γᵢ)²`.
    Regularized,
    /// γ is held at the given value; its gradient is zeroed.
    Clamped(f64),
}

impl GammaMode {
    pub fn validate(&self) -> Result<()> {
        match *self {
            GammaMode::Clamped(value) if !(value > 0.0) => Err(Error::InvalidParameter(format!(
                "clamped gamma must be > 0, got {value}"
            ))),
            _ => Ok(()),
        }
    }

    pub fn is_clamped(&self) -> bool {
        matches!(self, GammaMode::Clamped(_))
    }
}

/// How the skew-symmetric generator of `P` is drawn at initialisation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    Henaff,
    Cayley,
    RandomOrth,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SchurParams {
    n: usize,
    /// Full skew-symmetric matrix; only the strict lower half is free.
    pub b_skew: Mat,
    pub gamma: Vec<f64>,
    pub theta: Vec<f64>,
    /// Strictly lower triangular, zero at the rotation-block positions.
    pub t_lower: Mat,
}

/// Gradients with the same layout as [`SchurParams`].
///
/// `b_skew` holds, at `(i, j)` with `i > j`, the derivative with respect to
/// the free generator entry `b_ij` (whose mirror `b_ji = −b_ij` moves with
/// it); the matrix is stored skew-symmetric.
#[derive(Clone, Debug, PartialEq)]
pub struct SchurGrads {
    pub b_skew: Mat,
    pub gamma: Vec<f64>,
    pub theta: Vec<f64>,
    pub t_lower: Mat,
}

impl SchurGrads {
    pub fn zeros(n: usize) -> Self {
        SchurGrads {
            b_skew: Mat::zeros(n, n),
            gamma: vec![0.0; n / 2],
            theta: vec![0.0; n / 2],
            t_lower: Mat::zeros(n, n),
        }
    }

    pub fn add_assign(&mut self, other: &SchurGrads) {
        self.b_skew.axpy(1.0, &other.b_skew).expect("same n");
        self.t_lower.axpy(1.0, &other.t_lower).expect("same n");
        for (a, b) in self.gamma.iter_mut().zip(&other.gamma) {
            *a += b;
        }
        for (a, b) in self.theta.iter_mut().zip(&other.theta) {
            *a += b;
        }
    }

    /// Sum of squares over the free parameters.
    pub fn norm_sq(&self) -> f64 {
        let n = self.b_skew.rows();
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..i {
                s += self.b_skew[(i, j)].powi(2) + self.t_lower[(i, j)].powi(2);
            }
        }
        s + self.gamma.iter().map(|g| g * g).sum::<f64>()
            + self.theta.iter().map(|g| g * g).sum::<f64>()
    }
}

/// `P`, `Θ` and `V` for one optimiser step; `P` and `Θ` double as the cache
/// for [`SchurParams::backward_v`].
#[derive(Clone, Debug)]
pub struct Assembled {
    pub v: Mat,
    pub p: Mat,
    pub theta: Mat,
}

/// `γ [[cos θ, −sin θ], [sin θ, cos θ]]`
pub fn rotation_block(gamma: f64, theta: f64) -> Mat {
    let (s, c) = theta.sin_cos();
    Mat::from_fn(2, 2, |i, j| {
        gamma
            * match (i, j) {
                (0, 0) | (1, 1) => c,
                (0, 1) => -s,
                _ => s,
            }
    })
}

/// Whether `(i, j)` is a free entry of `T`: strictly below the diagonal and
/// not the sub-diagonal slot of a rotation block.
#[inline]
pub fn is_free_t_entry(i: usize, j: usize) -> bool {
    i > j && !(i == j + 1 && j % 2 == 0)
}

impl SchurParams {
    pub fn new(b_skew: Mat, gamma: Vec<f64>, theta: Vec<f64>, t_lower: Mat) -> Result<Self> {
        let n = b_skew.rows();
        let p = SchurParams {
            n,
            b_skew,
            gamma,
            theta,
            t_lower,
        };
        p.validate()?;
        Ok(p)
    }

    /// `γ = 1`, `θ = 0`, `T = 0`, `B = 0`: the identity.
    pub fn identity(n: usize) -> Result<Self> {
        SchurParams::new(
            Mat::zeros(n, n),
            vec![1.0; n / 2],
            vec![0.0; n / 2],
            Mat::zeros(n, n),
        )
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n;
        if n == 0 || n % 2 != 0 {
            return Err(Error::InvalidParameter(format!(
                "hidden size must be even and positive, got {n}"
            )));
        }
        if self.b_skew.shape() != (n, n) {
            return Err(Error::DimensionMismatch {
                op: "schur b_skew",
                left: (n, n),
                right: self.b_skew.shape(),
            });
        }
        if self.t_lower.shape() != (n, n) {
            return Err(Error::DimensionMismatch {
                op: "schur t_lower",
                left: (n, n),
                right: self.t_lower.shape(),
            });
        }
        if self.gamma.len() != n / 2 || self.theta.len() != n / 2 {
            return Err(Error::InvalidParameter(format!(
                "expected {} block moduli and angles, got {} and {}",
                n / 2,
                self.gamma.len(),
                self.theta.len()
            )));
        }
        for i in 0..n {
            for j in 0..n {
                if self.b_skew[(i, j)] != -self.b_skew[(j, i)] {
                    return Err(Error::InvalidParameter(format!(
                        "b_skew is not skew-symmetric at ({i}, {j})"
                    )));
                }
                if !is_free_t_entry(i, j) && self.t_lower[(i, j)] != 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "t_lower must be zero at ({i}, {j})"
                    )));
                }
            }
        }
        if let Some(g) = self.gamma.iter().find(|g| !(**g > 0.0) || !g.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "block modulus must be > 0, got {g}"
            )));
        }
        if !self.b_skew.is_finite()
            || !self.t_lower.is_finite()
            || self.theta.iter().any(|t| !t.is_finite())
        {
            return Err(Error::NonFinite("schur parameters".into()));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of free scalars: generator lower half, free `T` entries,
    /// moduli and angles.
    pub fn parameter_count(n: usize) -> usize {
        let half = n * (n - 1) / 2;
        half + (half - n / 2) + n / 2 + n / 2
    }

    /// `Θ = Λ + T`
    pub fn assemble_theta(&self) -> Mat {
        let mut theta = self.t_lower.clone();
        for (k, (&g, &t)) in self.gamma.iter().zip(&self.theta).enumerate() {
            let r = rotation_block(g, t);
            for a in 0..2 {
                for b in 0..2 {
                    theta[(2 * k + a, 2 * k + b)] = r[(a, b)];
                }
            }
        }
        theta
    }

    pub fn p_matrix(&self) -> Result<Mat> {
        expm(&self.b_skew)
    }

    /// `P = exp(B)`, `Θ`, `V = P Θ Pᵀ`.
    pub fn assemble_v(&self) -> Result<Assembled> {
        let p = self.p_matrix()?;
        let theta = self.assemble_theta();
        let pt = matmul(&p, &theta)?;
        let v = crate::linalg::matmul_bt(&pt, &p);
        Ok(Assembled { v, p, theta })
    }

    /// Maps `∂L/∂V` onto the parameters.
    ///
    /// `∂L/∂Θ = Pᵀ G P`; the block and `T` gradients are read off it. For the
    /// generator, `∂L/∂P = G P Θᵀ + Gᵀ P Θ` is pulled back through the
    /// exponential with the adjoint Fréchet derivative `L(Bᵀ, ·)`.
    pub fn backward_v(
        &self,
        grad_v: &Mat,
        cache: &Assembled,
        mode: GammaMode,
    ) -> Result<SchurGrads> {
        let n = self.n;
        if grad_v.shape() != (n, n) {
            return Err(Error::DimensionMismatch {
                op: "backward_v",
                left: (n, n),
                right: grad_v.shape(),
            });
        }
        let p = &cache.p;
        let theta_m = &cache.theta;
        let gp = matmul(grad_v, p)?;
        let grad_theta = crate::linalg::matmul_at(p, &gp);

        let mut grads = SchurGrads::zeros(n);
        for i in 0..n {
            for j in 0..i {
                if is_free_t_entry(i, j) {
                    grads.t_lower[(i, j)] = grad_theta[(i, j)];
                }
            }
        }
        for k in 0..n / 2 {
            let (s, c) = self.theta[k].sin_cos();
            let g = self.gamma[k];
            let (a, b, cc, d) = (
                grad_theta[(2 * k, 2 * k)],
                grad_theta[(2 * k, 2 * k + 1)],
                grad_theta[(2 * k + 1, 2 * k)],
                grad_theta[(2 * k + 1, 2 * k + 1)],
            );
            // ∂R/∂γ = [[c, −s], [s, c]], ∂R/∂θ = γ [[−s, −c], [c, −s]]
            grads.gamma[k] = if mode.is_clamped() {
                0.0
            } else {
                a * c - b * s + cc * s + d * c
            };
            grads.theta[k] = g * (-a * s - b * c + cc * c - d * s);
        }

        // ∂L/∂P
        let g_theta_t = crate::linalg::matmul_bt(&gp, theta_m);
        let gtp = crate::linalg::matmul_at(grad_v, p);
        let mut grad_p = g_theta_t;
        crate::linalg::gemm_into(1.0, &gtp, theta_m, 1.0, &mut grad_p);
        let (_, grad_b_full) = expm_frechet(&self.b_skew.transpose(), &grad_p)?;
        for i in 0..n {
            for j in 0..i {
                let g = grad_b_full[(i, j)] - grad_b_full[(j, i)];
                grads.b_skew[(i, j)] = g;
                grads.b_skew[(j, i)] = -g;
            }
        }
        Ok(grads)
    }

    /// `δ Σ (1 − γᵢ)² + t_decay ‖T‖²_F` (the γ term only in regularised
    /// mode) and its gradient.
    pub fn regularizer_loss_and_grads(
        &self,
        mode: GammaMode,
        delta: f64,
        t_decay: f64,
    ) -> (f64, SchurGrads) {
        let mut grads = SchurGrads::zeros(self.n);
        let mut loss = 0.0;
        if mode == GammaMode::Regularized {
            for (g, out) in self.gamma.iter().zip(grads.gamma.iter_mut()) {
                loss += delta * (1.0 - g) * (1.0 - g);
                *out = -2.0 * delta * (1.0 - g);
            }
        }
        let mut t_sq = 0.0;
        for i in 0..self.n {
            for j in 0..i {
                let t = self.t_lower[(i, j)];
                t_sq += t * t;
                grads.t_lower[(i, j)] = 2.0 * t_decay * t;
            }
        }
        loss += t_decay * t_sq;
        (loss, grads)
    }

    pub fn mean_gamma(&self) -> f64 {
        self.gamma.iter().sum::<f64>() / self.gamma.len() as f64
    }

    pub fn t_frobenius(&self) -> f64 {
        self.t_lower.frobenius_norm()
    }

    /// Sets the generator entry `(i, j)`, `i > j`, and its mirror.
    pub fn set_generator(&mut self, i: usize, j: usize, value: f64) {
        debug_assert!(i > j);
        self.b_skew[(i, j)] = value;
        self.b_skew[(j, i)] = -value;
    }

    pub fn to_checkpoint(&self, scheme: Option<InitScheme>, seed: Option<u64>) -> SchurCheckpoint {
        let lower =
            |m: &Mat| -> Vec<Vec<f64>> { (0..self.n).map(|i| m.row(i)[..i].to_vec()).collect() };
        SchurCheckpoint {
            n: self.n,
            b_skew: lower(&self.b_skew),
            gamma: self.gamma.clone(),
            theta: self.theta.clone(),
            t_lower: lower(&self.t_lower),
            scheme,
            seed,
        }
    }

    pub fn from_checkpoint(ck: &SchurCheckpoint) -> Result<Self> {
        let n = ck.n;
        let unpack = |rows: &[Vec<f64>], skew: bool, what: &str| -> Result<Mat> {
            if rows.len() != n {
                return Err(Error::InvalidParameter(format!(
                    "{what}: expected {n} rows, got {}",
                    rows.len()
                )));
            }
            let mut m = Mat::zeros(n, n);
            for (i, row) in rows.iter().enumerate() {
                if row.len() != i {
                    return Err(Error::InvalidParameter(format!(
                        "{what}: row {i} must have {i} entries, got {}",
                        row.len()
                    )));
                }
                for (j, &v) in row.iter().enumerate() {
                    m[(i, j)] = v;
                    if skew {
                        m[(j, i)] = -v;
                    }
                }
            }
            Ok(m)
        };
        SchurParams::new(
            unpack(&ck.b_skew, true, "b_skew")?,
            ck.gamma.clone(),
            ck.theta.clone(),
            unpack(&ck.t_lower, false, "t_lower")?,
        )
    }
}

/// On-disk form of [`SchurParams`]: strict lower halves as ragged row lists
/// (row `i` has `i` entries).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchurCheckpoint {
    pub n: usize,
    pub b_skew: Vec<Vec<f64>>,
    pub gamma: Vec<f64>,
    pub theta: Vec<f64>,
    pub t_lower: Vec<Vec<f64>>,
    pub scheme: Option<InitScheme>,
    pub seed: Option<u64>,
}

/// `γ = 1`, `θ ~ U[0, 2π)`, `T = 0`, generator per `scheme`. With `T = 0`
/// and unit moduli the resulting `V` is orthogonal.
pub fn init_params(n: usize, scheme: InitScheme, seed: u64) -> Result<SchurParams> {
    if n == 0 || n % 2 != 0 {
        return Err(Error::InvalidParameter(format!(
            "hidden size must be even and positive, got {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta: Vec<f64> = (0..n / 2)
        .map(|_| rng.random_range(0.0..2.0 * PI))
        .collect();
    let mut b = Mat::zeros(n, n);
    match scheme {
        InitScheme::Henaff | InitScheme::Cayley => {
            for k in 0..n / 2 {
                let s = if scheme == InitScheme::Henaff {
                    rng.random_range(-PI..PI)
                } else {
                    let u: f64 = rng.random_range(0.0..0.5);
                    let v: f64 = rng.random_range(-1.0..1.0);
                    ((u / (1.0 - u)).sqrt() * v.signum()).clamp(-PI, PI)
                };
                b[(2 * k + 1, 2 * k)] = s;
                b[(2 * k, 2 * k + 1)] = -s;
            }
        }
        InitScheme::RandomOrth => {
            let scale = 1.0 / (n as f64).sqrt();
            let g = Mat::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal) * scale);
            for i in 0..n {
                for j in 0..i {
                    let v = 0.5 * (g[(i, j)] - g[(j, i)]);
                    b[(i, j)] = v;
                    b[(j, i)] = -v;
                }
            }
        }
    }
    SchurParams::new(b, vec![1.0; n / 2], theta, Mat::zeros(n, n))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::linalg::{eigenvalues_small, Complex};
    use rand_distr::{Distribution, Normal};

    pub(crate) fn random_params(n: usize, seed: u64, t_scale: f64) -> SchurParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = init_params(n, InitScheme::RandomOrth, seed).unwrap();
        let normal = Normal::new(0.0, 1.0).unwrap();
        for i in 0..n {
            for j in 0..i {
                p.set_generator(i, j, normal.sample(&mut rng));
                if is_free_t_entry(i, j) {
                    p.t_lower[(i, j)] = t_scale * normal.sample(&mut rng);
                }
            }
        }
        for g in p.gamma.iter_mut() {
            *g = rng.random_range(0.5..1.5);
        }
        p
    }

    pub(crate) fn spectra_match(got: &[Complex], expected: &[Complex], tol: f64) -> bool {
        let mut used = vec![false; got.len()];
        got.len() == expected.len()
            && expected.iter().all(|e| {
                let best = (0..got.len())
                    .filter(|i| !used[*i])
                    .min_by(|a, b| got[*a].dist(e).total_cmp(&got[*b].dist(e)));
                match best {
                    Some(i) if got[i].dist(e) <= tol => {
                        used[i] = true;
                        true
                    }
                    _ => false,
                }
            })
    }

    pub(crate) fn block_spectrum(p: &SchurParams) -> Vec<Complex> {
        p.gamma
            .iter()
            .zip(&p.theta)
            .flat_map(|(&g, &t)| [Complex::from_polar(g, t), Complex::from_polar(g, -t)])
            .collect()
    }

    #[test]
    fn rotation_blocks() {
        assert!(
            rotation_block(1.0, 0.0)
                .sub(&Mat::identity(2))
                .unwrap()
                .max_abs()
                < 1e-16
        );
        let r = rotation_block(1.0, PI / 2.0);
        let expected = Mat::from_rows(&[vec![0.0, -1.0], vec![1.0, 0.0]]).unwrap();
        assert!(r.sub(&expected).unwrap().max_abs() < 1e-15);
        let r = rotation_block(0.958, 1.0);
        let det = r[(0, 0)] * r[(1, 1)] - r[(0, 1)] * r[(1, 0)];
        assert!((det - 0.958f64 * 0.958).abs() < 1e-12);
    }

    #[test]
    fn theta_assembly() {
        assert_eq!(
            SchurParams::identity(6).unwrap().assemble_theta(),
            Mat::identity(6)
        );
        let mut p = SchurParams::identity(4).unwrap();
        p.theta = vec![PI / 2.0, 0.0];
        p.gamma = vec![1.0, 2.0];
        let theta = p.assemble_theta();
        let expected = Mat::from_rows(&[
            vec![0.0, -1.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.0, 0.0, 2.0, 0.0],
            vec![0.0, 0.0, 0.0, 2.0],
        ])
        .unwrap();
        assert!(theta.sub(&expected).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn upper_triangle_above_blocks_is_zero() {
        let p = random_params(8, 3, 1.0);
        let theta = p.assemble_theta();
        for i in 0..8 {
            for j in i + 1..8 {
                if !(j == i + 1 && i % 2 == 0) {
                    assert_eq!(theta[(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn theta_spectrum_ignores_t() {
        for seed in 0..10 {
            let p = random_params(8, seed, 1.0);
            let ev = eigenvalues_small(&p.assemble_theta()).unwrap();
            assert!(spectra_match(&ev, &block_spectrum(&p), 1e-6), "seed {seed}");
        }
    }

    #[test]
    fn v_assembly() {
        let mut p = random_params(6, 1, 0.5);
        p.b_skew = Mat::zeros(6, 6);
        let a = p.assemble_v().unwrap();
        assert!(a.p.sub(&Mat::identity(6)).unwrap().max_abs() == 0.0);
        assert!(a.v.sub(&a.theta).unwrap().max_abs() < 1e-15);

        let mut q = random_params(8, 2, 0.0);
        q.gamma = vec![1.0; 4];
        let a = q.assemble_v().unwrap();
        assert!(a.v.orthogonality_error() <= 1e-9);
    }

    #[test]
    fn v_spectrum_equals_theta_spectrum() {
        for seed in 0..16 {
            let n = 2 + 2 * (seed as usize % 8);
            let p = random_params(n, seed, 0.5);
            let ev = eigenvalues_small(&p.assemble_v().unwrap().v).unwrap();
            assert!(
                spectra_match(&ev, &block_spectrum(&p), 1e-6),
                "seed {seed}, n {n}"
            );
        }
    }

    fn probe_loss(p: &SchurParams, g: &Mat) -> f64 {
        p.assemble_v().unwrap().v.dot(g)
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    /// Central differences of `⟨G, V⟩` for every free parameter; returns the
    /// worst relative error.
    pub(crate) fn fd_check(p: &SchurParams, g: &Mat, mode: GammaMode) -> f64 {
        let h = 1e-6;
        let n = p.n();
        let a = p.assemble_v().unwrap();
        let grads = p.backward_v(g, &a, mode).unwrap();
        let mut worst: f64 = 0.0;
        let mut check = |analytic: f64, f: &dyn Fn(&mut SchurParams, f64)| {
            let mut plus = p.clone();
            f(&mut plus, h);
            let mut minus = p.clone();
            f(&mut minus, -h);
            let fd = (probe_loss(&plus, g) - probe_loss(&minus, g)) / (2.0 * h);
            worst = worst.max(rel_err(analytic, fd));
        };
        for i in 0..n {
            for j in 0..i {
                let base = p.b_skew[(i, j)];
                check(grads.b_skew[(i, j)], &|q, d| {
                    q.set_generator(i, j, base + d)
                });
                if is_free_t_entry(i, j) {
                    check(grads.t_lower[(i, j)], &|q, d| q.t_lower[(i, j)] += d);
                }
            }
        }
        for k in 0..n / 2 {
            if !mode.is_clamped() {
                check(grads.gamma[k], &|q, d| q.gamma[k] += d);
            }
            check(grads.theta[k], &|q, d| q.theta[k] += d);
        }
        worst
    }

    #[test]
    fn backward_zero_gradient() {
        let p = random_params(6, 4, 1.0);
        let a = p.assemble_v().unwrap();
        let g = p
            .backward_v(&Mat::zeros(6, 6), &a, GammaMode::Free)
            .unwrap();
        assert_eq!(g, SchurGrads::zeros(6));
    }

    #[test]
    fn backward_matches_finite_differences() {
        for seed in 0..50 {
            let n = 4;
            let p = random_params(n, seed, 0.7);
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let g = Mat::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let worst = fd_check(&p, &g, GammaMode::Free);
            assert!(worst <= 1e-5, "seed {seed}: {worst}");
        }
    }

    #[test]
    fn clamped_mode_zeroes_gamma_gradient() {
        let p = random_params(6, 9, 1.0);
        let a = p.assemble_v().unwrap();
        let g = Mat::from_fn(6, 6, |i, j| (i * 6 + j) as f64 * 0.1);
        let grads = p.backward_v(&g, &a, GammaMode::Clamped(1.0)).unwrap();
        assert!(grads.gamma.iter().all(|&x| x == 0.0));
        assert!(grads.theta.iter().any(|&x| x != 0.0));
    }

    #[test]
    fn regularizer_values() {
        let p = SchurParams::identity(8).unwrap();
        let (loss, g) = p.regularizer_loss_and_grads(GammaMode::Regularized, 3.0, 1.0);
        assert_eq!(loss, 0.0);
        assert_eq!(g, SchurGrads::zeros(8));

        let mut q = SchurParams::identity(4).unwrap();
        q.gamma = vec![0.9, 1.1];
        let (loss, g) = q.regularizer_loss_and_grads(GammaMode::Regularized, 0.1, 0.0);
        assert!((loss - 0.002).abs() < 1e-15);
        assert!((g.gamma[0] + 0.02).abs() < 1e-15 && (g.gamma[1] - 0.02).abs() < 1e-15);

        let (loss, g) = q.regularizer_loss_and_grads(GammaMode::Free, 0.1, 0.0);
        assert_eq!(loss, 0.0);
        assert!(g.gamma.iter().all(|&x| x == 0.0));
        let (_, g) = q.regularizer_loss_and_grads(GammaMode::Clamped(1.0), 0.1, 0.0);
        assert!(g.gamma.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn t_decay_gradient_matches_finite_differences() {
        let p = random_params(8, 12, 1.0);
        let t_decay = 1e-4;
        let (_, g) = p.regularizer_loss_and_grads(GammaMode::Free, 0.0, t_decay);
        let h = 1e-4;
        for i in 0..8 {
            for j in 0..i {
                if !is_free_t_entry(i, j) {
                    continue;
                }
                let mut plus = p.clone();
                plus.t_lower[(i, j)] += h;
                let mut minus = p.clone();
                minus.t_lower[(i, j)] -= h;
                let fd = (plus
                    .regularizer_loss_and_grads(GammaMode::Free, 0.0, t_decay)
                    .0
                    - minus
                        .regularizer_loss_and_grads(GammaMode::Free, 0.0, t_decay)
                        .0)
                    / (2.0 * h);
                assert!(rel_err(fd, g.t_lower[(i, j)]) <= 1e-8, "({i},{j})");
            }
        }
    }

    #[test]
    fn init_schemes() {
        for scheme in [
            InitScheme::Henaff,
            InitScheme::Cayley,
            InitScheme::RandomOrth,
        ] {
            let p = init_params(16, scheme, 42).unwrap();
            assert!(p.gamma.iter().all(|&g| g == 1.0));
            assert_eq!(p.t_lower, Mat::zeros(16, 16));
            assert!(p.theta.iter().all(|&t| (0.0..2.0 * PI).contains(&t)));
            let v = p.assemble_v().unwrap().v;
            assert!(v.orthogonality_error() <= 1e-9);
            assert_eq!(p, init_params(16, scheme, 42).unwrap());
            assert_ne!(p, init_params(16, scheme, 43).unwrap());
        }
        assert!(init_params(7, InitScheme::Henaff, 0).is_err());
    }

    #[test]
    fn parameter_count() {
        for n in [2usize, 4, 8, 128] {
            let mut free_t = 0;
            for i in 0..n {
                for j in 0..n {
                    if is_free_t_entry(i, j) {
                        free_t += 1;
                    }
                }
            }
            let expected = n * (n - 1) / 2 + free_t + n / 2 + n / 2;
            assert_eq!(SchurParams::parameter_count(n), expected);
        }
        assert_eq!(SchurParams::parameter_count(128), 16320);
    }

    #[test]
    fn checkpoint_roundtrip_is_exact() {
        let p = random_params(6, 21, 0.3);
        let ck = p.to_checkpoint(Some(InitScheme::RandomOrth), Some(21));
        let json = serde_json::to_string(&ck).unwrap();
        let back: SchurCheckpoint = serde_json::from_str(&json).unwrap();
        assert_eq!(SchurParams::from_checkpoint(&back).unwrap(), p);
        assert_eq!(back.b_skew[3].len(), 3);
    }

    #[test]
    fn checkpoint_rejects_block_overlap() {
        let mut ck = SchurParams::identity(4).unwrap().to_checkpoint(None, None);
        ck.t_lower[1][0] = 0.5;
        assert!(SchurParams::from_checkpoint(&ck).is_err());
        let mut ck = SchurParams::identity(4).unwrap().to_checkpoint(None, None);
        ck.gamma[0] = 0.0;
        assert!(SchurParams::from_checkpoint(&ck).is_err());
    }
}
