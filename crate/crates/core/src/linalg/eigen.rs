use super::Mat;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Complex {
    pub re: f64,
    pub im: f64,
}

impl Complex {
    pub fn new(re: f64, im: f64) -> Self {
        Complex { re, im }
    }

    pub fn from_polar(r: f64, theta: f64) -> Self {
        Complex::new(r * theta.cos(), r * theta.sin())
    }

    pub fn abs(&self) -> f64 {
        self.re.hypot(self.im)
    }

    pub fn dist(&self, other: &Complex) -> f64 {
        (self.re - other.re).hypot(self.im - other.im)
    }
}

const MAX_SWEEPS: usize = 10_000;

/// Eigenvalues of a small dense matrix: Householder reduction to Hessenberg
/// form, then Francis double-shift QR sweeps (at most 10 000 in total).
///
/// Intended for verification on matrices up to a few dozen rows.
pub fn eigenvalues_small(m: &Mat) -> Result<Vec<Complex>> {
    if !m.is_square() {
        return Err(Error::NotSquare {
            op: "eigenvalues_small",
            rows: m.rows(),
            cols: m.cols(),
        });
    }
    if !m.is_finite() {
        return Err(Error::NonFinite("eigenvalues_small argument".into()));
    }
    let mut a = m.clone();
    hessenberg(&mut a);
    hqr(a)
}

fn hessenberg(a: &mut Mat) {
    let n = a.rows();
    if n < 3 {
        return;
    }
    for k in 0..n - 2 {
        let alpha_norm = (k + 1..n)
            .map(|i| a[(i, k)] * a[(i, k)])
            .sum::<f64>()
            .sqrt();
        if alpha_norm == 0.0 {
            continue;
        }
        let alpha = if a[(k + 1, k)] > 0.0 {
            -alpha_norm
        } else {
            alpha_norm
        };
        let mut v: Vec<f64> = (k + 1..n).map(|i| a[(i, k)]).collect();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        // A ← H A
        for j in 0..n {
            let dot: f64 = v
                .iter()
                .enumerate()
                .map(|(t, vi)| vi * a[(k + 1 + t, j)])
                .sum();
            let f = 2.0 * dot / vnorm2;
            for (t, vi) in v.iter().enumerate() {
                a[(k + 1 + t, j)] -= f * vi;
            }
        }
        // A ← A H
        for i in 0..n {
            let dot: f64 = v
                .iter()
                .enumerate()
                .map(|(t, vi)| vi * a[(i, k + 1 + t)])
                .sum();
            let f = 2.0 * dot / vnorm2;
            for (t, vi) in v.iter().enumerate() {
                a[(i, k + 1 + t)] -= f * vi;
            }
        }
        for i in k + 2..n {
            a[(i, k)] = 0.0;
        }
    }
}

/// Francis double-shift QR on an upper Hessenberg matrix (EISPACK `hqr`
/// structure, eigenvalues only).
fn hqr(mut a: Mat) -> Result<Vec<Complex>> {
    let n = a.rows();
    let mut out = Vec::with_capacity(n);
    if n == 0 {
        return Ok(out);
    }
    let anorm: f64 = (0..n)
        .flat_map(|i| (i.saturating_sub(1)..n).map(move |j| (i, j)))
        .map(|(i, j)| a[(i, j)].abs())
        .sum();
    let mut nn = n as isize - 1;
    let mut t = 0.0;
    let mut sweeps = 0usize;
    let mut its = 0usize;
    while nn >= 0 {
        let nu = nn as usize;
        // Look for a small sub-diagonal element.
        let mut l = nu;
        while l >= 1 {
            let s = a[(l - 1, l - 1)].abs() + a[(l, l)].abs();
            let s = if s == 0.0 { anorm } else { s };
            if a[(l, l - 1)].abs() <= f64::EPSILON * s {
                a[(l, l - 1)] = 0.0;
                break;
            }
            l -= 1;
        }
        let x = a[(nu, nu)];
        if l == nu {
            out.push(Complex::new(x + t, 0.0));
            nn -= 1;
            its = 0;
            continue;
        }
        let y = a[(nu - 1, nu - 1)];
        let w = a[(nu, nu - 1)] * a[(nu - 1, nu)];
        if l == nu - 1 {
            let p = 0.5 * (y - x);
            let q = p * p + w;
            let z = q.abs().sqrt();
            let x = x + t;
            if q >= 0.0 {
                let z = p + z.copysign(p);
                let first = x + z;
                let second = if z != 0.0 { x - w / z } else { first };
                out.push(Complex::new(first, 0.0));
                out.push(Complex::new(second, 0.0));
            } else {
                out.push(Complex::new(x + p, z));
                out.push(Complex::new(x + p, -z));
            }
            nn -= 2;
            its = 0;
            continue;
        }
        if sweeps >= MAX_SWEEPS {
            return Err(Error::NoConvergence {
                what: "QR eigenvalue iteration",
                iterations: sweeps,
            });
        }
        sweeps += 1;
        let (mut x, mut y, mut w) = (x, y, w);
        if its == 10 || its == 20 {
            // Exceptional shift.
            t += x;
            for i in 0..=nu {
                a[(i, i)] -= x;
            }
            let s = a[(nu, nu - 1)].abs() + a[(nu - 1, nu - 2)].abs();
            x = 0.75 * s;
            y = x;
            w = -0.4375 * s * s;
        }
        its += 1;
        // Find two consecutive small sub-diagonal elements.
        let mut m = nu - 2;
        let (mut p, mut q, mut r);
        loop {
            let z = a[(m, m)];
            let rr = x - z;
            let ss = y - z;
            p = (rr * ss - w) / a[(m + 1, m)] + a[(m, m + 1)];
            q = a[(m + 1, m + 1)] - z - rr - ss;
            r = a[(m + 2, m + 1)];
            let s = p.abs() + q.abs() + r.abs();
            p /= s;
            q /= s;
            r /= s;
            if m == l {
                break;
            }
            let u = a[(m, m - 1)].abs() * (q.abs() + r.abs());
            let v = p.abs() * (a[(m - 1, m - 1)].abs() + z.abs() + a[(m + 1, m + 1)].abs());
            if u <= f64::EPSILON * v {
                break;
            }
            m -= 1;
        }
        for i in m + 2..=nu {
            a[(i, i - 2)] = 0.0;
            if i != m + 2 {
                a[(i, i - 3)] = 0.0;
            }
        }
        let mut k = m;
        while k < nu {
            if k != m {
                p = a[(k, k - 1)];
                q = a[(k + 1, k - 1)];
                r = if k != nu - 1 { a[(k + 2, k - 1)] } else { 0.0 };
                x = p.abs() + q.abs() + r.abs();
                if x != 0.0 {
                    p /= x;
                    q /= x;
                    r /= x;
                }
            }
            let s = (p * p + q * q + r * r).sqrt().copysign(p);
            if s != 0.0 {
                if k == m {
                    if l != m {
                        a[(k, k - 1)] = -a[(k, k - 1)];
                    }
                } else {
                    a[(k, k - 1)] = -s * x;
                }
                p += s;
                x = p / s;
                y = q / s;
                let z = r / s;
                q /= p;
                r /= p;
                for j in k..=nu {
                    let mut pp = a[(k, j)] + q * a[(k + 1, j)];
                    if k != nu - 1 {
                        pp += r * a[(k + 2, j)];
                        a[(k + 2, j)] -= pp * z;
                    }
                    a[(k + 1, j)] -= pp * y;
                    a[(k, j)] -= pp * x;
                }
                let mmin = if nu < k + 3 { nu } else { k + 3 };
                for i in l..=mmin {
                    let mut pp = x * a[(i, k)] + y * a[(i, k + 1)];
                    if k != nu - 1 {
                        pp += z * a[(i, k + 2)];
                        a[(i, k + 2)] -= pp * r;
                    }
                    a[(i, k + 1)] -= pp * q;
                    a[(i, k)] -= pp;
                }
            }
            k += 1;
        }
    }
    Ok(out)
}
