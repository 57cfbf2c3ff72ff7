use std::fmt;

use num_bigint::BigInt;
use num_traits::{ToPrimitive, Zero};

use crate::error::{Error, Result};

/// Polynomial in one variable with arbitrary-precision integer
/// coefficients, lowest degree first, no trailing zeros.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Poly {
    coeffs: Vec<BigInt>,
}

impl Poly {
    pub fn zero() -> Self {
        Poly { coeffs: Vec::new() }
    }

    pub fn constant(c: i64) -> Self {
        Poly::from_coeffs(vec![BigInt::from(c)])
    }

    /// The monomial `x`.
    pub fn x() -> Self {
        Poly::from_coeffs(vec![BigInt::zero(), BigInt::from(1)])
    }

    pub fn from_coeffs(mut coeffs: Vec<BigInt>) -> Self {
        while coeffs.last().is_some_and(Zero::is_zero) {
            coeffs.pop();
        }
        Poly { coeffs }
    }

    pub fn from_i64(coeffs: &[i64]) -> Self {
        Poly::from_coeffs(coeffs.iter().map(|&c| BigInt::from(c)).collect())
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// `None` for the zero polynomial.
    pub fn degree(&self) -> Option<usize> {
        self.coeffs.len().checked_sub(1)
    }

    pub fn coeffs(&self) -> &[BigInt] {
        &self.coeffs
    }

    /// Coefficient of `x^l` (zero past the degree).
    pub fn coeff(&self, l: usize) -> BigInt {
        self.coeffs.get(l).cloned().unwrap_or_default()
    }

    pub fn add(&self, other: &Poly) -> Poly {
        let len = self.coeffs.len().max(other.coeffs.len());
        let coeffs = (0..len).map(|i| self.coeff(i) + other.coeff(i)).collect();
        Poly::from_coeffs(coeffs)
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        if self.is_zero() || other.is_zero() {
            return Poly::zero();
        }
        let mut out = vec![BigInt::zero(); self.coeffs.len() + other.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            if a.is_zero() {
                continue;
            }
            for (j, b) in other.coeffs.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Poly::from_coeffs(out)
    }

    /// Multiplies by `x`.
    pub fn shift(&self) -> Poly {
        if self.is_zero() {
            return Poly::zero();
        }
        let mut coeffs = Vec::with_capacity(self.coeffs.len() + 1);
        coeffs.push(BigInt::zero());
        coeffs.extend(self.coeffs.iter().cloned());
        Poly { coeffs }
    }

    pub fn eval_int(&self, x: &BigInt) -> BigInt {
        self.coeffs
            .iter()
            .rev()
            .fold(BigInt::zero(), |acc, c| acc * x + c)
    }

    pub fn eval_f64(&self, x: f64) -> f64 {
        self.coeffs
            .iter()
            .rev()
            .fold(0.0, |acc, c| acc * x + c.to_f64().unwrap_or(f64::INFINITY))
    }
}

impl fmt::Display for Poly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return write!(f, "0");
        }
        let mut first = true;
        for (i, c) in self.coeffs.iter().enumerate().rev() {
            if c.is_zero() {
                continue;
            }
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            let one = c == &BigInt::from(1);
            match i {
                0 => write!(f, "{c}")?,
                1 if one => write!(f, "x")?,
                _ if one => write!(f, "x^{i}")?,
                1 => write!(f, "{c}x")?,
                _ => write!(f, "{c}x^{i}")?,
            }
        }
        Ok(())
    }
}

/// Square matrix of integer polynomials.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PolyMat {
    n: usize,
    entries: Vec<Poly>,
}

impl PolyMat {
    pub fn zeros(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("PolyMat needs n >= 1".into()));
        }
        Ok(PolyMat {
            n,
            entries: vec![Poly::zero(); n * n],
        })
    }

    pub fn identity(n: usize) -> Result<Self> {
        let mut m = PolyMat::zeros(n)?;
        for i in 0..n {
            m.set(i, i, Poly::constant(1));
        }
        Ok(m)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> &Poly {
        &self.entries[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, p: Poly) {
        self.entries[i * self.n + j] = p;
    }

    pub fn mul(&self, other: &PolyMat) -> Result<PolyMat> {
        if self.n != other.n {
            return Err(Error::DimensionMismatch {
                op: "polymat_mul",
                left: (self.n, self.n),
                right: (other.n, other.n),
            });
        }
        let n = self.n;
        let mut out = PolyMat::zeros(n)?;
        for i in 0..n {
            for j in 0..n {
                let mut acc = Poly::zero();
                for k in 0..n {
                    let a = self.get(i, k);
                    let b = other.get(k, j);
                    if !a.is_zero() && !b.is_zero() {
                        acc = acc.add(&a.mul(b));
                    }
                }
                out.set(i, j, acc);
            }
        }
        Ok(out)
    }

    /// Integer matrix obtained by substituting `x`.
    pub fn eval_int(&self, x: i64) -> Vec<Vec<BigInt>> {
        let x = BigInt::from(x);
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j).eval_int(&x)).collect())
            .collect()
    }
}

/// `a^t` by repeated right multiplication, `t ≥ 1`.
pub fn polymat_power(a: &PolyMat, t: usize) -> Result<PolyMat> {
    Ok(polymat_powers(a, t)?.pop().expect("t >= 1"))
}

/// `[a¹, a², …, a^t]`, each obtained from the previous as `a^r · a`.
pub fn polymat_powers(a: &PolyMat, t: usize) -> Result<Vec<PolyMat>> {
    if t == 0 {
        return Err(Error::InvalidParameter("polymat_power needs t >= 1".into()));
    }
    let mut out = Vec::with_capacity(t);
    out.push(a.clone());
    for _ in 1..t {
        let next = out.last().expect("nonempty").mul(a)?;
        out.push(next);
    }
    Ok(out)
}
