//! Exact checks of polynomial gradient growth for unit-triangular
//! recurrences, and an empirical growth classifier for matrix powers.

use num_bigint::BigInt;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{polymat_powers, singular_values, Mat, Poly, PolyMat};
use crate::schur::{init_params, is_free_t_entry, InitScheme, SchurParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// `A` with unit diagonal, the symbol `x` strictly above it and zeros below.
pub fn prop2_matrix(n: usize) -> Result<PolyMat> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!("n must be >= 2, got {n}")));
    }
    let mut a = PolyMat::identity(n)?;
    for i in 0..n {
        for j in i + 1..n {
            a.set(i, j, Poly::x());
        }
    }
    Ok(a)
}

pub fn binomial(n: usize, k: usize) -> BigInt {
    if k > n {
        return BigInt::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigInt::one();
    for i in 0..k {
        acc = acc * BigInt::from(n - i) / BigInt::from(i + 1);
    }
    acc
}

/// `p_k^{(t)}`, the entry at gap `k` of `Aᵗ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prop2Entry {
    pub k: usize,
    pub t: usize,
    pub degree: Option<usize>,
    pub constant_term: String,
    /// Coefficients from `x⁰` upward, as decimal strings.
    pub coefficients: Vec<String>,
}

/// Log-log slope of `coeff(x^l)` of the widest-gap entry against `t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthFit {
    pub l: usize,
    pub slope: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prop2Checks {
    /// Entries with equal gap agree along every diagonal.
    pub toeplitz: bool,
    pub degree: bool,
    pub constant_term: bool,
    pub recurrence: bool,
    /// `coeff(x^l) ≤ 2^k · binom(t, l)` everywhere.
    pub ratio_bound: bool,
}

impl Prop2Checks {
    pub fn all(&self) -> bool {
        self.toeplitz && self.degree && self.constant_term && self.recurrence && self.ratio_bound
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prop2Report {
    pub n: usize,
    pub t_max: usize,
    pub entries: Vec<Prop2Entry>,
    pub fits: Vec<GrowthFit>,
    /// Largest `coeff(x^l) / (2^k binom(t, l))` seen; at most 1 when the
    /// ratio check passes.
    pub max_scaled_ratio: f64,
    pub checks: Prop2Checks,
    pub failures: Vec<String>,
}

/// Verifies, for every power `t ≤ t_max` and gap `k`, that `p_k^{(t)}` has
/// degree at most `k`, no constant term, satisfies
/// `p_k^{(r+1)} = x·[1 + Σ_{s<k} p_s^{(r)}] + p_k^{(r)}`, and has
/// coefficients bounded by `2^k · binom(t, l)`. Everything is exact.
pub fn verify_prop2(n: usize, t_max: usize) -> Result<Prop2Report> {
    if t_max == 0 {
        return Err(Error::InvalidParameter("t_max must be >= 1".into()));
    }
    let a = prop2_matrix(n)?;
    let powers = polymat_powers(&a, t_max)?;
    let mut checks = Prop2Checks {
        toeplitz: true,
        degree: true,
        constant_term: true,
        recurrence: true,
        ratio_bound: true,
    };
    let mut failures = Vec::new();
    let mut entries = Vec::new();
    let mut max_scaled_ratio: f64 = 0.0;

    // gap_polys[t-1][k] = p_k^{(t)}, k = 1..n-1 (index 0 unused).
    let mut gap_polys: Vec<Vec<Poly>> = Vec::with_capacity(t_max);
    for (ti, at) in powers.iter().enumerate() {
        let t = ti + 1;
        let mut row = vec![Poly::zero(); n];
        for k in 1..n {
            let p = at.get(0, k).clone();
            for i in 1..n - k {
                if at.get(i, i + k) != &p {
                    checks.toeplitz = false;
                    failures.push(format!(
                        "t={t}: entries at gap {k} differ along the diagonal"
                    ));
                }
            }
            if p.degree().is_some_and(|d| d > k) {
                checks.degree = false;
                failures.push(format!("t={t}, k={k}: degree {:?} exceeds k", p.degree()));
            }
            if !p.coeff(0).is_zero() {
                checks.constant_term = false;
                failures.push(format!("t={t}, k={k}: nonzero constant term"));
            }
            let cap = BigInt::from(1u64 << k);
            for (l, c) in p.coeffs().iter().enumerate().skip(1) {
                let b = binomial(t, l);
                if c.abs() > &cap * &b {
                    checks.ratio_bound = false;
                    failures.push(format!(
                        "t={t}, k={k}, l={l}: coefficient {c} above 2^k·binom(t,l)"
                    ));
                }
                if !b.is_zero() {
                    let r = c.to_f64().unwrap_or(f64::INFINITY)
                        / (cap.to_f64().unwrap() * b.to_f64().unwrap());
                    max_scaled_ratio = max_scaled_ratio.max(r);
                }
            }
            entries.push(Prop2Entry {
                k,
                t,
                degree: p.degree(),
                constant_term: p.coeff(0).to_string(),
                coefficients: p.coeffs().iter().map(|c| c.to_string()).collect(),
            });
            row[k] = p;
        }
        gap_polys.push(row);
    }

    for r in 1..t_max {
        let prev = &gap_polys[r - 1];
        let next = &gap_polys[r];
        for k in 1..n {
            let mut inner = Poly::constant(1);
            for s in prev.iter().take(k).skip(1) {
                inner = inner.add(s);
            }
            let expected = inner.shift().add(&prev[k]);
            if expected != next[k] {
                checks.recurrence = false;
                failures.push(format!(
                    "recurrence fails from t={r} to t={} at k={k}",
                    r + 1
                ));
            }
        }
    }
    // Base case: Aᵗ at t = 1 is x at every gap.
    for k in 1..n {
        if gap_polys[0][k] != Poly::x() {
            checks.recurrence = false;
            failures.push(format!("t=1, k={k}: expected x"));
        }
    }

    let fits = growth_fits(&gap_polys, n - 1, t_max);
    Ok(Prop2Report {
        n,
        t_max,
        entries,
        fits,
        max_scaled_ratio,
        checks,
        failures,
    })
}

fn growth_fits(gap_polys: &[Vec<Poly>], k: usize, t_max: usize) -> Vec<GrowthFit> {
    (1..=k)
        .filter_map(|l| {
            let pts: Vec<(f64, f64)> = (t_max / 2..=t_max)
                .filter(|&t| t >= 1)
                .filter_map(|t| {
                    let c = gap_polys[t - 1][k].coeff(l).to_f64()?;
                    (c > 0.0).then(|| ((t as f64).ln(), c.ln()))
                })
                .collect();
            least_squares_slope(&pts).map(|slope| GrowthFit { l, slope })
        })
        .collect()
}

fn least_squares_slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrowthClass {
    /// `σ_max(mᵗ) = 1` for every `t` (to 1e-9 in log).
    Constant,
    Decaying,
    /// Growth no faster than a polynomial of the given (rounded) degree.
    Polynomial {
        degree: usize,
    },
    Exponential,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthProbe {
    /// `σ_max(mᵗ)` for `t = 1 …` (shorter than requested on overflow).
    pub sigma: Vec<f64>,
    /// Slope of `log σ` against `log t` over the second half of the range.
    pub loglog_slope: f64,
    /// Slope of `log σ` against `t` over the same range.
    pub loglinear_slope: f64,
    pub class: GrowthClass,
    pub overflowed: bool,
}

/// Tracks `σ_max(mᵗ)` for `t = 1 … t_max` and classifies the growth.
///
/// A polynomial of degree `n−1` has log-log slope tending to `n−1`, while
/// exponential growth has slope proportional to `t`. Growth with slope above
/// `(n−1) + 0.5` is called exponential. Long horizons (hundreds of steps)
/// are needed: at short range the local slope of `binom(t, l)` sits visibly
/// above `l`.
pub fn iterate_growth_probe(m: &Mat, t_max: usize) -> Result<GrowthProbe> {
    if !m.is_square() {
        return Err(Error::NotSquare {
            op: "iterate_growth_probe",
            rows: m.rows(),
            cols: m.cols(),
        });
    }
    if t_max < 4 {
        return Err(Error::InvalidParameter("t_max must be >= 4".into()));
    }
    let n = m.rows();
    let mut sigma = Vec::with_capacity(t_max);
    let mut power = m.clone();
    let mut overflowed = false;
    for t in 1..=t_max {
        if !power.is_finite() || power.max_abs() > 1e150 {
            overflowed = true;
            break;
        }
        sigma.push(singular_values(&power)?[0]);
        if t < t_max {
            power = power.matmul(m)?;
        }
    }
    if sigma.len() < 4 {
        return Err(Error::Overflow {
            power: sigma.len() + 1,
        });
    }
    let half = sigma.len() / 2;
    let loglog: Vec<(f64, f64)> = (half..sigma.len())
        .filter(|&i| sigma[i] > 0.0)
        .map(|i| (((i + 1) as f64).ln(), sigma[i].ln()))
        .collect();
    let loglin: Vec<(f64, f64)> = (half..sigma.len())
        .filter(|&i| sigma[i] > 0.0)
        .map(|i| ((i + 1) as f64, sigma[i].ln()))
        .collect();
    // A matrix whose powers vanish decays as fast as anything can.
    let loglog_slope = least_squares_slope(&loglog).unwrap_or(f64::NEG_INFINITY);
    let loglinear_slope = least_squares_slope(&loglin).unwrap_or(f64::NEG_INFINITY);
    let max_log = sigma.iter().map(|s| s.ln().abs()).fold(0.0, f64::max);
    let class = if max_log < 1e-9 {
        GrowthClass::Constant
    } else if overflowed || loglog_slope > (n as f64 - 1.0) + 0.5 {
        GrowthClass::Exponential
    } else if loglog_slope < -0.5 {
        GrowthClass::Decaying
    } else {
        GrowthClass::Polynomial {
            degree: loglog_slope.max(0.0).round() as usize,
        }
    };
    Ok(GrowthProbe {
        sigma,
        loglog_slope,
        loglinear_slope,
        class,
        overflowed,
    })
}

/// Horizon used by [`labeled_growth_suite`] cases.
pub const GROWTH_SUITE_HORIZON: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrowthLabel {
    Orthogonal,
    Exponential,
    Polynomial,
}

impl GrowthLabel {
    /// Whether a probe result agrees with this label for an `n × n` matrix.
    pub fn accepts(self, class: GrowthClass, n: usize) -> bool {
        match (self, class) {
            (GrowthLabel::Orthogonal, GrowthClass::Constant) => true,
            (GrowthLabel::Exponential, GrowthClass::Exponential) => true,
            (GrowthLabel::Polynomial, GrowthClass::Polynomial { degree }) => degree < n,
            _ => false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LabeledCase {
    pub name: String,
    pub label: GrowthLabel,
    pub m: Mat,
}

/// Thirty matrices with known growth behaviour: ten orthogonal, ten with
/// spectral radius at least 1.05 (normal and non-normal), and ten
/// non-normal matrices whose eigenvalues all have modulus one.
pub fn labeled_growth_suite(seed: u64) -> Result<Vec<LabeledCase>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut cases = Vec::with_capacity(30);

    for i in 0..10 {
        let n = 2 * rng.random_range(2..=6);
        let scheme = [InitScheme::RandomOrth, InitScheme::Henaff][i % 2];
        let v = init_params(n, scheme, rng.random())?.assemble_v()?.v;
        cases.push(LabeledCase {
            name: format!("orthogonal-{i} (n={n})"),
            label: GrowthLabel::Orthogonal,
            m: v,
        });
    }

    for i in 0..10 {
        let n = 2 * rng.random_range(2..=6);
        let rho: f64 = rng.random_range(1.05..1.3);
        let mut p = init_params(n, InitScheme::RandomOrth, rng.random())?;
        let kind;
        if i % 2 == 0 {
            kind = "scaled orthogonal";
            p.gamma.iter_mut().for_each(|g| *g = rho);
        } else {
            kind = "non-normal";
            // Only the largest modulus needs to exceed one.
            for g in p.gamma.iter_mut() {
                *g = rng.random_range(0.5..1.0);
            }
            p.gamma[0] = rho;
            fill_free_t(&mut p, &mut rng, &normal, 0.5);
        }
        cases.push(LabeledCase {
            name: format!("exponential-{i} {kind} (n={n}, rho={rho:.3})"),
            label: GrowthLabel::Exponential,
            m: p.assemble_v()?.v,
        });
    }

    for i in 0..10 {
        let n = rng.random_range(3..=8);
        let m = if i < 6 {
            Mat::from_fn(n, n, |r, c| match r.cmp(&c) {
                std::cmp::Ordering::Equal => 1.0,
                std::cmp::Ordering::Greater => normal.sample(&mut rng),
                std::cmp::Ordering::Less => 0.0,
            })
        } else {
            // Unit-modulus rotations with a feed-forward coupling, rotated by
            // a random orthogonal basis. Equal angles make the coupling a
            // genuine Jordan chain.
            let n = 2 * (n / 2).max(2);
            let mut p = init_params(n, InitScheme::RandomOrth, rng.random())?;
            let angle = p.theta[0];
            p.theta.iter_mut().for_each(|t| *t = angle);
            fill_free_t(&mut p, &mut rng, &normal, 1.0);
            p.assemble_v()?.v
        };
        let n = m.rows();
        cases.push(LabeledCase {
            name: format!("polynomial-{i} (n={n})"),
            label: GrowthLabel::Polynomial,
            m,
        });
    }
    Ok(cases)
}

fn fill_free_t(p: &mut SchurParams, rng: &mut ChaCha8Rng, normal: &Normal<f64>, scale: f64) {
    let n = p.n();
    for i in 0..n {
        for j in 0..i {
            if is_free_t_entry(i, j) {
                p.t_lower[(i, j)] = scale * normal.sample(rng);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::polymat_power;

    #[test]
    fn small_matrices() {
        let a = prop2_matrix(2).unwrap();
        assert_eq!(a.get(0, 0), &Poly::constant(1));
        assert_eq!(a.get(0, 1), &Poly::x());
        assert_eq!(a.get(1, 0), &Poly::zero());
        let a2 = polymat_power(&prop2_matrix(3).unwrap(), 2).unwrap();
        assert_eq!(a2.get(0, 2), &Poly::from_i64(&[0, 2, 1]));
        assert!(prop2_matrix(1).is_err());
    }

    #[test]
    fn binomials() {
        assert_eq!(binomial(30, 8), BigInt::from(5_852_925));
        assert_eq!(binomial(5, 0), BigInt::one());
        assert_eq!(binomial(3, 4), BigInt::zero());
    }

    #[test]
    fn all_checks_pass_on_grid() {
        for n in 2..=8 {
            let rep = verify_prop2(n, 30).unwrap();
            assert!(rep.checks.all(), "n={n}: {:?}", rep.failures);
            assert!(rep.max_scaled_ratio <= 1.0);
        }
    }

    #[test]
    fn coefficients_match_closed_form() {
        // coeff(x^l) of p_k^{(t)} is binom(t, l)·binom(k−1, l−1): (I + xN)ᵗ
        // expanded binomially, with (N^l)_{0,k} counting increasing paths.
        let rep = verify_prop2(6, 20).unwrap();
        for e in &rep.entries {
            for (l, c) in e.coefficients.iter().enumerate() {
                let expected = if l == 0 {
                    BigInt::zero()
                } else {
                    binomial(e.t, l) * binomial(e.k - 1, l - 1)
                };
                assert_eq!(c, &expected.to_string(), "k={} t={} l={l}", e.k, e.t);
            }
        }
    }

    #[test]
    fn first_gap_is_linear() {
        let rep = verify_prop2(4, 12).unwrap();
        for e in rep.entries.iter().filter(|e| e.k == 1) {
            assert_eq!(e.coefficients, vec!["0".to_string(), e.t.to_string()]);
        }
    }

    #[test]
    fn growth_fit_slopes_approach_l() {
        let rep = verify_prop2(5, 30).unwrap();
        for f in &rep.fits {
            assert!(
                f.slope >= f.l as f64 - 0.05 && f.slope < f.l as f64 + 0.5,
                "{f:?}"
            );
        }
    }

    #[test]
    fn probe_orthogonal_is_constant() {
        let v = init_params(8, InitScheme::RandomOrth, 1)
            .unwrap()
            .assemble_v()
            .unwrap()
            .v;
        let p = iterate_growth_probe(&v, 300).unwrap();
        assert_eq!(p.class, GrowthClass::Constant);
        assert!(p.sigma.iter().all(|s| (s - 1.0).abs() < 1e-9));
    }

    #[test]
    fn probe_scaled_identity_is_exponential() {
        let p = iterate_growth_probe(&Mat::identity(4).scaled(1.1), 400).unwrap();
        assert_eq!(p.class, GrowthClass::Exponential);
        assert!((p.loglinear_slope - 1.1f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn probe_unipotent_is_polynomial() {
        let m = Mat::from_fn(5, 5, |i, j| if i <= j { 1.0 } else { 0.0 });
        let p = iterate_growth_probe(&m, 1000).unwrap();
        match p.class {
            GrowthClass::Polynomial { degree } => assert!(degree <= 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn probe_contraction_decays() {
        let p = iterate_growth_probe(&Mat::identity(3).scaled(0.9), 200).unwrap();
        assert_eq!(p.class, GrowthClass::Decaying);
    }

    #[test]
    fn probe_stops_on_overflow() {
        let p = iterate_growth_probe(&Mat::identity(2).scaled(10.0), 1000).unwrap();
        assert!(p.overflowed);
        assert_eq!(p.class, GrowthClass::Exponential);
    }

    #[test]
    fn labeled_suite_is_classified_correctly() {
        let suite = labeled_growth_suite(2019).unwrap();
        assert_eq!(suite.len(), 30);
        for case in &suite {
            let probe = iterate_growth_probe(&case.m, GROWTH_SUITE_HORIZON).unwrap();
            assert!(
                case.label.accepts(probe.class, case.m.rows()),
                "{}: {:?} (slope {})",
                case.name,
                probe.class,
                probe.loglog_slope
            );
        }
    }
}
