//! Connectivity diagnostics of trained recurrences.

use std::f64::consts::TAU;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::singular_values;
use crate::schur::SchurParams;

pub const THETA_BINS: usize = 64;
pub const GAMMA_BINS: usize = 40;
/// Upper edge of the γ histogram. Larger values land in the last bin.
pub const GAMMA_RANGE_MAX: f64 = 2.0;
/// `‖T‖_F / ‖Θ‖_F` at or below this is the normal regime.
pub const NORMAL_REGIME_MAX: f64 = 0.05;
/// Ratios strictly above this are the non-normal regime.
pub const NON_NORMAL_REGIME_MIN: f64 = 0.20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    fn build(values: impl IntoIterator<Item = f64>, lo: f64, hi: f64, bins: usize) -> Self {
        let mut counts = vec![0u64; bins];
        let width = (hi - lo) / bins as f64;
        for v in values {
            let idx = ((v - lo) / width).floor();
            let idx = if idx.is_nan() {
                0
            } else {
                idx.clamp(0.0, (bins - 1) as f64) as usize
            };
            counts[idx] += 1;
        }
        Histogram { lo, hi, counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn bin_edges(&self, i: usize) -> (f64, f64) {
        let w = (self.hi - self.lo) / self.counts.len() as f64;
        (self.lo + w * i as f64, self.lo + w * (i + 1) as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConnectivityReport {
    pub n: usize,
    pub mean_gamma: f64,
    pub gamma_histogram: Histogram,
    /// Angles wrapped into `[0, 2π)`.
    pub theta_histogram: Histogram,
    /// `m_k = mean_i |Θ_{i+k,i}|` for `k = 1 … n−1`; entry `k−1` holds `m_k`.
    pub subdiag_profile: Vec<f64>,
    pub t_frobenius: f64,
    pub theta_frobenius: f64,
    pub top_singular_value: f64,
}

impl ConnectivityReport {
    /// `‖T‖_F / ‖Θ‖_F`.
    pub fn non_normality(&self) -> f64 {
        if self.theta_frobenius == 0.0 {
            0.0
        } else {
            self.t_frobenius / self.theta_frobenius
        }
    }

    pub fn regime(&self) -> Regime {
        Regime::classify(self.non_normality())
    }
}

pub fn connectivity_report(p: &SchurParams) -> Result<ConnectivityReport> {
    p.validate()?;
    let n = p.n();
    let theta = p.assemble_theta();
    let subdiag_profile = (1..n)
        .map(|k| (0..n - k).map(|i| theta[(i + k, i)].abs()).sum::<f64>() / (n - k) as f64)
        .collect();
    let v = p.assemble_v()?.v;
    Ok(ConnectivityReport {
        n,
        mean_gamma: p.mean_gamma(),
        gamma_histogram: Histogram::build(
            p.gamma.iter().copied(),
            0.0,
            GAMMA_RANGE_MAX,
            GAMMA_BINS,
        ),
        theta_histogram: Histogram::build(
            p.theta.iter().map(|t| t.rem_euclid(TAU)),
            0.0,
            TAU,
            THETA_BINS,
        ),
        subdiag_profile,
        t_frobenius: p.t_frobenius(),
        theta_frobenius: theta.frobenius_norm(),
        top_singular_value: singular_values(&v)?[0],
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Normal,
    Intermediate,
    NonNormal,
}

impl Regime {
    pub fn classify(ratio: f64) -> Regime {
        if ratio <= NORMAL_REGIME_MAX {
            Regime::Normal
        } else if ratio > NON_NORMAL_REGIME_MIN {
            Regime::NonNormal
        } else {
            Regime::Intermediate
        }
    }
}

/// Field-wise `b − a`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub n: usize,
    pub delta_mean_gamma: f64,
    pub delta_t_frobenius: f64,
    pub delta_theta_frobenius: f64,
    pub delta_top_singular_value: f64,
    pub delta_subdiag_profile: Vec<f64>,
    pub delta_gamma_histogram: Vec<i64>,
    pub delta_theta_histogram: Vec<i64>,
    pub non_normality_a: f64,
    pub non_normality_b: f64,
    pub regime_a: Regime,
    pub regime_b: Regime,
}

impl ComparisonReport {
    pub fn is_zero(&self) -> bool {
        self.delta_mean_gamma == 0.0
            && self.delta_t_frobenius == 0.0
            && self.delta_theta_frobenius == 0.0
            && self.delta_top_singular_value == 0.0
            && self.delta_subdiag_profile.iter().all(|d| *d == 0.0)
            && self.delta_gamma_histogram.iter().all(|d| *d == 0)
            && self.delta_theta_histogram.iter().all(|d| *d == 0)
    }
}

pub fn run_comparison(a: &ConnectivityReport, b: &ConnectivityReport) -> Result<ComparisonReport> {
    if a.n != b.n {
        return Err(Error::DimensionMismatch {
            op: "run_comparison",
            left: (a.n, a.n),
            right: (b.n, b.n),
        });
    }
    let hist_delta = |x: &Histogram, y: &Histogram| -> Vec<i64> {
        x.counts
            .iter()
            .zip(&y.counts)
            .map(|(p, q)| *q as i64 - *p as i64)
            .collect()
    };
    Ok(ComparisonReport {
        n: a.n,
        delta_mean_gamma: b.mean_gamma - a.mean_gamma,
        delta_t_frobenius: b.t_frobenius - a.t_frobenius,
        delta_theta_frobenius: b.theta_frobenius - a.theta_frobenius,
        delta_top_singular_value: b.top_singular_value - a.top_singular_value,
        delta_subdiag_profile: a
            .subdiag_profile
            .iter()
            .zip(&b.subdiag_profile)
            .map(|(p, q)| q - p)
            .collect(),
        delta_gamma_histogram: hist_delta(&a.gamma_histogram, &b.gamma_histogram),
        delta_theta_histogram: hist_delta(&a.theta_histogram, &b.theta_histogram),
        non_normality_a: a.non_normality(),
        non_normality_b: b.non_normality(),
        regime_a: a.regime(),
        regime_b: b.regime(),
    })
}

/// Writes `k,m_k` rows.
pub fn write_profile_csv(report: &ConnectivityReport, mut w: impl Write) -> Result<()> {
    writeln!(w, "k,m_k")?;
    for (i, m) in report.subdiag_profile.iter().enumerate() {
        writeln!(w, "{},{}", i + 1, m)?;
    }
    Ok(())
}

/// Writes `bin_start,bin_end,count` rows.
pub fn write_histogram_csv(hist: &Histogram, mut w: impl Write) -> Result<()> {
    writeln!(w, "bin_start,bin_end,count")?;
    for (i, c) in hist.counts.iter().enumerate() {
        let (lo, hi) = hist.bin_edges(i);
        writeln!(w, "{lo},{hi},{c}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schur::tests::random_params;
    use crate::schur::{init_params, is_free_t_entry, InitScheme};
    use proptest::prelude::*;

    fn with_delay_line(n: usize, weight: f64) -> SchurParams {
        let mut p = init_params(n, InitScheme::RandomOrth, 3).unwrap();
        p.gamma.iter_mut().for_each(|g| *g = 1.0);
        for i in 1..n {
            if is_free_t_entry(i, i - 1) {
                p.t_lower[(i, i - 1)] = weight;
            }
        }
        p
    }

    #[test]
    fn orthogonal_solution_has_no_off_block_mass() {
        let p = init_params(10, InitScheme::Henaff, 5).unwrap();
        let r = connectivity_report(&p).unwrap();
        assert_eq!(r.t_frobenius, 0.0);
        assert!(r.subdiag_profile[1..].iter().all(|m| *m == 0.0));
        // Only the block sub-diagonal sin θ entries contribute to m_1.
        let expected: f64 = p.theta.iter().map(|t| t.sin().abs()).sum::<f64>() / 9.0;
        assert!((r.subdiag_profile[0] - expected).abs() < 1e-15);
        assert!((r.top_singular_value - 1.0).abs() < 1e-12);
        assert_eq!(r.regime(), Regime::Normal);
    }

    #[test]
    fn delay_line_dominates_profile() {
        let r = connectivity_report(&with_delay_line(12, 3.0)).unwrap();
        let m1 = r.subdiag_profile[0];
        assert!(r.subdiag_profile[1..].iter().all(|m| *m < m1));
    }

    #[test]
    fn mean_gamma_of_uniform_value() {
        let mut p = init_params(8, InitScheme::Cayley, 1).unwrap();
        p.gamma.iter_mut().for_each(|g| *g = 0.958);
        assert_eq!(connectivity_report(&p).unwrap().mean_gamma, 0.958);
    }

    #[test]
    fn histograms_count_every_parameter() {
        let mut p = random_params(16, 9, 1.0);
        p.gamma[0] = 7.0;
        p.theta[1] = -1.0;
        let r = connectivity_report(&p).unwrap();
        assert_eq!(r.gamma_histogram.total(), 8);
        assert_eq!(r.theta_histogram.total(), 8);
        assert_eq!(r.gamma_histogram.counts[GAMMA_BINS - 1], 1);
        assert_eq!(r.theta_histogram.counts.len(), THETA_BINS);
    }

    #[test]
    fn comparison_of_identical_reports_is_zero() {
        let r = connectivity_report(&random_params(8, 2, 0.3)).unwrap();
        assert!(run_comparison(&r, &r).unwrap().is_zero());
    }

    #[test]
    fn comparison_flags_regimes() {
        let a = connectivity_report(&with_delay_line(10, 0.0)).unwrap();
        let b = connectivity_report(&with_delay_line(10, 2.0)).unwrap();
        let c = run_comparison(&a, &b).unwrap();
        assert_eq!(c.regime_a, Regime::Normal);
        assert_eq!(c.regime_b, Regime::NonNormal);
        assert!(c.delta_t_frobenius > 0.0);
    }

    #[test]
    fn regime_boundaries() {
        assert_eq!(Regime::classify(0.05), Regime::Normal);
        assert_eq!(Regime::classify(0.050001), Regime::Intermediate);
        assert_eq!(Regime::classify(0.20), Regime::Intermediate);
        assert_eq!(Regime::classify(0.2000001), Regime::NonNormal);
    }

    #[test]
    fn comparison_rejects_size_mismatch() {
        let a = connectivity_report(&random_params(6, 1, 0.1)).unwrap();
        let b = connectivity_report(&random_params(8, 1, 0.1)).unwrap();
        assert!(run_comparison(&a, &b).is_err());
    }

    #[test]
    fn csv_headers() {
        let r = connectivity_report(&random_params(6, 4, 0.5)).unwrap();
        let mut buf = Vec::new();
        write_profile_csv(&r, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("k,m_k\n1,"));
        assert_eq!(text.lines().count(), 6);
        let mut buf = Vec::new();
        write_histogram_csv(&r.theta_histogram, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap().lines().count(),
            THETA_BINS + 1
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn profile_equals_brute_force_scan(seed in 0u64..1000, half in 1usize..8, t_scale in 0.0f64..3.0) {
            let n = 2 * half;
            let p = random_params(n, seed, t_scale);
            let r = connectivity_report(&p).unwrap();
            let theta = p.assemble_theta();
            for k in 1..n {
                let mut sum = 0.0;
                let mut count = 0usize;
                for i in 0..n {
                    for j in 0..n {
                        if i == j + k {
                            sum += theta[(i, j)].abs();
                            count += 1;
                        }
                    }
                }
                prop_assert_eq!(r.subdiag_profile[k - 1], sum / count as f64);
                prop_assert!(r.subdiag_profile[k - 1] >= 0.0);
            }
        }

        #[test]
        fn mean_gamma_is_arithmetic_mean(seed in 0u64..1000, half in 1usize..10) {
            let p = random_params(2 * half, seed, 0.0);
            let r = connectivity_report(&p).unwrap();
            let mean = p.gamma.iter().sum::<f64>() / p.gamma.len() as f64;
            prop_assert!((r.mean_gamma - mean).abs() <= 1e-15);
        }
    }
}
