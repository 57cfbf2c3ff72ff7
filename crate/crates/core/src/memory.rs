//! Fisher memory of linear networks `h_{t+1} = Θ h_t + u s_t + noise`,
//! the Proposition 1 lower bound, and transient-amplification ensembles.
//!
//! The noise covariance `C = ε Σ_k Θᵏ Θᵏᵀ` of the structured family used
//! here is extremely ill-conditioned (condition numbers near 1e26 occur at
//! `n = 100`), so the curve is computed from a square-root factor `L`,
//! `C = ε L Lᵀ`, accumulated one term at a time with orthogonal
//! transformations. Forming `C` and factoring it loses every digit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, gram_schmidt_triangular, matmul, singular_values, solve_lower, Mat};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FmcConfig {
    pub n: usize,
    pub d: f64,
    pub alpha: f64,
    pub beta: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// `J(k)` is reported for `k = 0 … k_max`.
    #[serde(default = "default_k_max")]
    pub k_max: usize,
    #[serde(default = "default_tol")]
    pub series_tol: f64,
}

fn default_eps() -> f64 {
    1.0
}
fn default_k_max() -> usize {
    200
}
fn default_tol() -> f64 {
    1e-12
}

impl FmcConfig {
    pub fn new(n: usize, d: f64, alpha: f64, beta: f64) -> Self {
        FmcConfig {
            n,
            d,
            alpha,
            beta,
            eps: default_eps(),
            k_max: default_k_max(),
            series_tol: default_tol(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidParameter(format!(
                "n must be >= 2, got {}",
                self.n
            )));
        }
        if !(self.eps > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "eps must be > 0, got {}",
                self.eps
            )));
        }
        if !(0.0..1.0).contains(&self.d) {
            return Err(Error::InvalidParameter(format!(
                "d must lie in [0, 1), got {}",
                self.d
            )));
        }
        if !(self.series_tol > 0.0) || ![self.alpha, self.beta].iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidParameter(
                "alpha, beta must be finite and series_tol > 0".into(),
            ));
        }
        Ok(())
    }

    /// Series cap: `10 n` terms.
    pub fn k_cap(&self) -> usize {
        10 * self.n
    }
}

/// `d` on the diagonal, `α` on the first sub-diagonal, `β` below it.
pub fn build_theta_family(cfg: &FmcConfig) -> Mat {
    Mat::from_fn(cfg.n, cfg.n, |i, j| match i.checked_sub(j) {
        Some(0) => cfg.d,
        Some(1) => cfg.alpha,
        Some(_) => cfg.beta,
        None => 0.0,
    })
}

/// Stop once the newest term is below `tol` and at least `n` terms are in,
/// since non-normal iterates can grow before they decay.
fn series_done(term_norm: f64, k: usize, n: usize, tol: f64) -> bool {
    term_norm < tol && k >= n
}

/// `ε Σ_{k≥0} Θᵏ Θᵏᵀ`, summed directly. Prefer
/// [`noise_covariance_factor`] for anything ill-conditioned.
pub fn noise_covariance(theta: &Mat, eps: f64, tol: f64, k_cap: usize) -> Result<Mat> {
    check_square(theta)?;
    let n = theta.rows();
    let mut c = Mat::identity(n);
    let mut p = theta.clone();
    let mut prev = f64::INFINITY;
    let mut k = 1;
    loop {
        let norm = p.frobenius_norm();
        if series_done(norm, k, n, tol) || norm == 0.0 {
            break;
        }
        if k >= k_cap {
            if norm >= prev {
                return Err(Error::SeriesDiverged {
                    terms: k,
                    last_norm: norm,
                });
            }
            break;
        }
        c.axpy(1.0, &crate::linalg::matmul_bt(&p, &p))?;
        p = matmul(theta, &p)?;
        prev = norm;
        k += 1;
    }
    Ok(c.scaled(eps))
}

/// Lower-triangular `L` with `L Lᵀ = Σ_k Θᵏ Θᵏᵀ` (the `ε`-free covariance)
/// and the number of series terms used.
pub fn noise_covariance_factor(theta: &Mat, tol: f64, k_cap: usize) -> Result<(Mat, usize, bool)> {
    check_square(theta)?;
    let n = theta.rows();
    // Upper-triangular R = Lᵀ, updated in place.
    let mut r = Mat::identity(n);
    let mut p = theta.clone();
    let mut prev = f64::INFINITY;
    let mut terms = 1;
    let mut truncated = false;
    loop {
        let norm = p.frobenius_norm();
        if norm == 0.0 || series_done(norm, terms, n, tol) {
            break;
        }
        if terms >= k_cap {
            if norm >= prev {
                return Err(Error::SeriesDiverged {
                    terms,
                    last_norm: norm,
                });
            }
            truncated = true;
            break;
        }
        if !norm.is_finite() {
            return Err(Error::Overflow { power: terms });
        }
        append_rows(&mut r, &p);
        p = matmul(theta, &p)?;
        prev = norm;
        terms += 1;
    }
    Ok((r.transpose(), terms, truncated))
}

/// Replaces upper-triangular `R` by the triangular factor of `[R; Pᵀ]`,
/// so that `RᵀR` gains `P Pᵀ`. Householder reflections, one per column,
/// each touching row `k` of `R` and all of `Pᵀ`.
fn append_rows(r: &mut Mat, p: &Mat) {
    let n = r.rows();
    // Column k of Pᵀ is row k of P: keep Pᵀ column-major as P's rows.
    let mut b: Vec<Vec<f64>> = (0..n).map(|k| p.row(k).to_vec()).collect();
    for k in 0..n {
        let rkk = r[(k, k)];
        let bk_norm2: f64 = b[k].iter().map(|x| x * x).sum();
        if bk_norm2 == 0.0 {
            if rkk < 0.0 {
                for j in k..n {
                    r[(k, j)] = -r[(k, j)];
                }
            }
            continue;
        }
        let norm = (rkk * rkk + bk_norm2).sqrt();
        // Reflector v = [rkk − s; b_k] mapping [rkk; b_k] to [s; 0].
        let s = if rkk > 0.0 { -norm } else { norm };
        let v0 = rkk - s;
        let vnorm2 = v0 * v0 + bk_norm2;
        let (bk, rest) = b.split_at_mut(k + 1);
        let bk = &bk[k];
        for (off, bj) in rest.iter_mut().enumerate() {
            let j = k + 1 + off;
            let dot = v0 * r[(k, j)] + bk.iter().zip(bj.iter()).map(|(a, c)| a * c).sum::<f64>();
            let f = 2.0 * dot / vnorm2;
            r[(k, j)] -= f * v0;
            for (x, a) in bj.iter_mut().zip(bk) {
                *x -= f * a;
            }
        }
        r[(k, k)] = s;
        if s < 0.0 {
            for j in k..n {
                r[(k, j)] = -r[(k, j)];
            }
        }
        b[k].iter_mut().for_each(|x| *x = 0.0);
    }
}

fn check_square(theta: &Mat) -> Result<()> {
    if !theta.is_square() {
        return Err(Error::NotSquare {
            op: "fisher memory",
            rows: theta.rows(),
            cols: theta.cols(),
        });
    }
    if !theta.is_finite() {
        return Err(Error::NonFinite("fisher memory matrix".into()));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FmcResult {
    /// `J(0) … J(k_max)`.
    pub j_curve: Vec<f64>,
    pub j_tot: f64,
    /// Terms of the covariance series that were summed.
    pub truncation_terms: usize,
    /// The covariance series hit its cap while still shrinking.
    pub truncated: bool,
}

/// `J(k) = uᵀ Θᵏᵀ C⁻¹ Θᵏ u` with `u = e₁`, for an arbitrary `Θ`.
pub fn fisher_memory_curve_of(
    theta: &Mat,
    eps: f64,
    k_max: usize,
    tol: f64,
    k_cap: usize,
) -> Result<FmcResult> {
    let n = theta.rows();
    let (l, terms, truncated) = noise_covariance_factor(theta, tol, k_cap)?;
    let j_at = |v: &[f64]| -> Result<f64> {
        if v.iter().all(|x| *x == 0.0) {
            return Ok(0.0);
        }
        let y = solve_lower(&l, v)?;
        Ok(y.iter().map(|x| x * x).sum::<f64>() / eps)
    };
    let mut v = vec![0.0; n];
    v[0] = 1.0;
    let mut j_curve = Vec::with_capacity(k_max + 1);
    let mut j_tot = 0.0;
    let mut k = 0;
    let mut tot_done = false;
    while k <= k_max || !tot_done {
        let j = j_at(&v)?;
        if !j.is_finite() || j < 0.0 {
            return Err(Error::NonFinite(format!("J({k}) = {j}")));
        }
        if k <= k_max {
            j_curve.push(j);
        }
        if !tot_done {
            j_tot += j;
            tot_done = series_done(j, k, n, tol) || k + 1 >= k_cap || (j == 0.0 && k >= n);
        }
        v = theta.matvec(&v)?;
        k += 1;
    }
    Ok(FmcResult {
        j_curve,
        j_tot,
        truncation_terms: terms,
        truncated,
    })
}

pub fn fisher_memory_curve(cfg: &FmcConfig) -> Result<FmcResult> {
    cfg.validate()?;
    fisher_memory_curve_of(
        &build_theta_family(cfg),
        cfg.eps,
        cfg.k_max,
        cfg.series_tol,
        cfg.k_cap(),
    )
}

/// `J(k) = αᵏ(α−1)/(α^{k+1}−1)`, with the limit `1/(k+1)` at `α = 1`.
pub fn delay_line_fmc_closed_form(alpha: f64, k: usize) -> f64 {
    if alpha == 1.0 {
        return 1.0 / (k as f64 + 1.0);
    }
    let la = alpha.ln();
    // αᵏ(α−1)/(α^{k+1}−1), with the denominator via expm1 for α near 1.
    (k as f64 * la).exp() * (alpha - 1.0) / ((k as f64 + 1.0) * la).exp_m1()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prop1Row {
    pub k: usize,
    pub j: f64,
    pub bound: f64,
    pub margin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prop1Report {
    pub n: usize,
    /// Square of the common sub-diagonal entry.
    pub alpha: f64,
    pub sigma_max: f64,
    pub rows: Vec<Prop1Row>,
}

impl Prop1Report {
    pub fn min_margin(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.margin)
            .fold(f64::INFINITY, f64::min)
    }
}

/// A strictly lower-triangular matrix with `√α` on the sub-diagonal and
/// entries drawn uniformly from `[-1, 1)` further below.
pub fn random_prop1_theta(n: usize, alpha: f64, rng: &mut impl Rng) -> Mat {
    let s = alpha.sqrt();
    Mat::from_fn(n, n, |i, j| match i.checked_sub(j) {
        Some(1) => s,
        Some(k) if k >= 2 => rng.random_range(-1.0..1.0),
        _ => 0.0,
    })
}

/// Relative slack allowed before a bound violation is reported.
pub const PROP1_SLACK: f64 = 1e-9;

/// Checks `J(k) ≥ αᵏ(α−1)/(α^{k+1}−1) / (ε σ_max^{2(n−1)})` for
/// `k ≤ n−1`, where `√α` is the common sub-diagonal of the strictly lower
/// `theta` and `σ_max` the top singular value of its Gram–Schmidt factor.
pub fn prop1_bound_check(theta: &Mat, eps: f64) -> Result<Prop1Report> {
    check_square(theta)?;
    let n = theta.rows();
    if n < 2 || !theta.is_strictly_lower() {
        return Err(Error::InvalidParameter(
            "expected a strictly lower-triangular matrix, n >= 2".into(),
        ));
    }
    let sub = theta[(1, 0)];
    if !(sub > 0.0) || (1..n).any(|i| (theta[(i, i - 1)] - sub).abs() > 1e-12 * sub) {
        return Err(Error::InvalidParameter(
            "sub-diagonal entries must share one positive value".into(),
        ));
    }
    let alpha = sub * sub;
    let gs = gram_schmidt_triangular(theta)?;
    let sigma_max = singular_values(&gs.t_gram)?[0];
    let fmc = fisher_memory_curve_of(theta, eps, n - 1, 1e-12, 10 * n)?;
    let scale = 1.0 / (eps * sigma_max.powi(2 * (n as i32 - 1)));
    let mut rows = Vec::with_capacity(n);
    for (k, &j) in fmc.j_curve.iter().enumerate() {
        let bound = scale * delay_line_fmc_closed_form(alpha, k);
        let margin = j - bound;
        if margin < -PROP1_SLACK * bound {
            return Err(Error::BoundViolated { k, value: j, bound });
        }
        rows.push(Prop1Row {
            k,
            j,
            bound,
            margin,
        });
    }
    Ok(Prop1Report {
        n,
        alpha,
        sigma_max,
        rows,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prop1Violation {
    pub sample: usize,
    pub n: usize,
    pub alpha: f64,
    pub k: usize,
    pub value: f64,
    pub bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prop1Sweep {
    pub samples: usize,
    pub n_max: usize,
    pub alphas: Vec<f64>,
    pub violations: Vec<Prop1Violation>,
    /// Smallest `(J − bound) / bound` over every sample and `k`.
    pub min_relative_margin: f64,
}

/// Checks the bound on `samples` matrices from [`random_prop1_theta`] with
/// `n` uniform in `2..=n_max` and `α` cycling through `alphas`.
pub fn prop1_sweep(samples: usize, n_max: usize, alphas: &[f64], seed: u64) -> Result<Prop1Sweep> {
    if n_max < 2 || alphas.is_empty() || alphas.iter().any(|a| !(*a > 0.0)) {
        return Err(Error::InvalidParameter(
            "need n_max >= 2 and positive alphas".into(),
        ));
    }
    let outcomes: Vec<Result<(Option<Prop1Violation>, f64)>> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let n = rng.random_range(2..=n_max);
            let alpha = alphas[i % alphas.len()];
            let theta = random_prop1_theta(n, alpha, &mut rng);
            match prop1_bound_check(&theta, 1.0) {
                Ok(rep) => Ok((
                    None,
                    rep.rows
                        .iter()
                        .map(|r| r.margin / r.bound)
                        .fold(f64::INFINITY, f64::min),
                )),
                Err(Error::BoundViolated { k, value, bound }) => {
                    let v = Prop1Violation {
                        sample: i,
                        n,
                        alpha,
                        k,
                        value,
                        bound,
                    };
                    Ok((Some(v), (value - bound) / bound))
                }
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut violations = Vec::new();
    let mut min_relative_margin = f64::INFINITY;
    for o in outcomes {
        let (v, m) = o?;
        violations.extend(v);
        min_relative_margin = min_relative_margin.min(m);
    }
    Ok(Prop1Sweep {
        samples,
        n_max,
        alphas: alphas.to_vec(),
        violations,
        min_relative_margin,
    })
}

/// Per-`t` mean and standard deviation across samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransientStats {
    /// Standard deviation across hidden units.
    pub unit_std: SeriesStats,
    /// `‖h_t‖₂`.
    pub norm: SeriesStats,
}

impl TransientStats {
    /// Largest mean norm over `t ≥ 1` (every trajectory starts at norm 1).
    pub fn peak_mean_norm(&self) -> f64 {
        self.norm.mean[1..]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

fn population_std(x: &[f64]) -> f64 {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64).sqrt()
}

fn summarize(per_sample: &[Vec<f64>], t_len: usize) -> SeriesStats {
    let s = per_sample.len() as f64;
    let mut mean = vec![0.0; t_len];
    for row in per_sample {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= s);
    let mut var = vec![0.0; t_len];
    for row in per_sample {
        for ((acc, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *acc += (v - m) * (v - m);
        }
    }
    SeriesStats {
        mean,
        std: var.into_iter().map(|v| (v / s).sqrt()).collect(),
    }
}

/// Simulates `h_{t+1} = Θ h_t` for `t = 0 … t_max` from `n_samples`
/// initial states uniform on the unit sphere. Sample `i` draws from its own
/// stream of the seeded generator, so results do not depend on threading.
pub fn transient_ensemble(
    cfg: &FmcConfig,
    n_samples: usize,
    t_max: usize,
    seed: u64,
) -> Result<TransientStats> {
    if n_samples == 0 {
        return Err(Error::InvalidParameter("n_samples must be >= 1".into()));
    }
    if cfg.n < 2 {
        return Err(Error::InvalidParameter(format!(
            "n must be >= 2, got {}",
            cfg.n
        )));
    }
    let theta = build_theta_family(cfg);
    let n = cfg.n;
    let runs: Vec<(Vec<f64>, Vec<f64>)> = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut h: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = h.iter().map(|x| x * x).sum::<f64>().sqrt();
            h.iter_mut().for_each(|x| *x /= norm);
            let mut stds = Vec::with_capacity(t_max + 1);
            let mut norms = Vec::with_capacity(t_max + 1);
            for t in 0..=t_max {
                stds.push(population_std(&h));
                norms.push(h.iter().map(|x| x * x).sum::<f64>().sqrt());
                if t < t_max {
                    h = theta.matvec(&h).expect("square");
                }
            }
            (stds, norms)
        })
        .collect();
    let (stds, norms): (Vec<_>, Vec<_>) = runs.into_iter().unzip();
    let stats = TransientStats {
        unit_std: summarize(&stds, t_max + 1),
        norm: summarize(&norms, t_max + 1),
    };
    if stats.norm.mean.iter().any(|x| !x.is_finite()) {
        return Err(Error::Overflow { power: t_max });
    }
    Ok(stats)
}

/// `J(k)` by explicit SPD solve against the directly summed covariance;
/// adequate only when `C` is well conditioned.
pub fn fisher_memory_curve_direct(theta: &Mat, eps: f64, k_max: usize) -> Result<Vec<f64>> {
    let n = theta.rows();
    let c = noise_covariance(theta, eps, 1e-14, 10 * n)?;
    let l = cholesky(&c)?;
    let mut v = vec![0.0; n];
    v[0] = 1.0;
    let mut out = Vec::with_capacity(k_max + 1);
    for _ in 0..=k_max {
        let y = solve_lower(&l, &v)?;
        out.push(y.iter().map(|x| x * x).sum());
        v = theta.matvec(&v)?;
    }
    Ok(out)
}
