//! Real polynomials, a simultaneous-iteration root finder and the Routh array.

use std::cmp::Ordering;
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest degree accepted by [`polynomial_roots`].
pub const MAX_ROOT_DEGREE: usize = 8;

const MAX_ITERATIONS: usize = 500;
const STEP_TOLERANCE: f64 = 1e-13;
const RESIDUAL_TOLERANCE: f64 = 1e-10;
const ROUTH_ZERO: f64 = 1e-12;

/// Polynomial with real coefficients stored in ascending degree order.
#[derive(Debug, Clone, PartialEq)]
pub struct RealPolynomial {
    coefficients: Vec<f64>,
}

impl RealPolynomial {
    /// Trailing zero coefficients are dropped; at least one coefficient must
    /// be nonzero.
    pub fn new(mut coefficients: Vec<f64>) -> Result<Self> {
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::domain("polynomial coefficients must be finite"));
        }
        while coefficients.last() == Some(&0.0) {
            coefficients.pop();
        }
        if coefficients.is_empty() {
            return Err(Error::domain("empty or zero polynomial"));
        }
        Ok(RealPolynomial { coefficients })
    }

    /// Builds the monic polynomial with the given roots. Conjugate pairs are
    /// expected; any leftover imaginary part is discarded.
    pub fn from_roots(roots: &[Complex64]) -> Result<Self> {
        let mut acc = vec![Complex64::new(1.0, 0.0)];
        for &z in roots {
            let mut next = vec![Complex64::new(0.0, 0.0); acc.len() + 1];
            for (k, &c) in acc.iter().enumerate() {
                next[k + 1] += c;
                next[k] -= c * z;
            }
            acc = next;
        }
        RealPolynomial::new(acc.into_iter().map(|c| c.re).collect())
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn degree(&self) -> usize {
        self.coefficients.len() - 1
    }

    pub fn leading(&self) -> f64 {
        *self.coefficients.last().unwrap()
    }

    pub fn eval(&self, z: Complex64) -> Complex64 {
        self.coefficients
            .iter()
            .rev()
            .fold(Complex64::new(0.0, 0.0), |acc, &c| acc * z + c)
    }

    pub fn eval_real(&self, x: f64) -> f64 {
        self.coefficients.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    /// Scale used by the residual bound in [`polynomial_roots`].
    pub fn coefficient_scale(&self) -> f64 {
        self.coefficients.iter().map(|c| c.abs()).sum::<f64>().max(1.0)
    }

    /// Divides through by the leading coefficient.
    pub fn monic(&self) -> RealPolynomial {
        let lead = self.leading();
        RealPolynomial {
            coefficients: self.coefficients.iter().map(|c| c / lead).collect(),
        }
    }
}

impl fmt::Display for RealPolynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let terms: Vec<String> = self
            .coefficients
            .iter()
            .enumerate()
            .rev()
            .filter(|(_, c)| **c != 0.0)
            .map(|(k, c)| match k {
                0 => format!("{c}"),
                1 => format!("{c}*s"),
                _ => format!("{c}*s^{k}"),
            })
            .collect();
        f.write_str(&terms.join(" + "))
    }
}

fn residual_bound(p: &RealPolynomial) -> f64 {
    RESIDUAL_TOLERANCE * p.coefficient_scale()
}

fn max_residual(p: &RealPolynomial, roots: &[Complex64]) -> f64 {
    roots.iter().map(|&z| p.eval(z).norm()).fold(0.0, f64::max)
}

/// All roots of `p` with multiplicity, sorted by real part then imaginary part.
///
/// Uses Weierstrass (Durand-Kerner) iteration on the monic polynomial, with
/// starting points on a circle of radius `1 + max|coefficient|`.
pub fn polynomial_roots(p: &RealPolynomial) -> Result<Vec<Complex64>> {
    let degree = p.degree();
    if degree == 0 {
        return Err(Error::domain("constant polynomial has no roots"));
    }
    if degree > MAX_ROOT_DEGREE {
        return Err(Error::domain(format!(
            "degree {degree} exceeds root finder cap {MAX_ROOT_DEGREE}"
        )));
    }
    let monic = p.monic();
    let radius = 1.0 + monic.coefficients.iter().map(|c| c.abs()).fold(0.0, f64::max);
    // irrational phase offset keeps guesses off the real axis and off symmetric configurations
    let offset = 0.4 * std::f64::consts::SQRT_2;
    let mut z: Vec<Complex64> = (0..degree)
        .map(|k| {
            let theta = offset + std::f64::consts::TAU * k as f64 / degree as f64;
            Complex64::from_polar(radius, theta)
        })
        .collect();

    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut max_step: f64 = 0.0;
        for i in 0..degree {
            let mut denom = Complex64::new(1.0, 0.0);
            for j in 0..degree {
                if i != j {
                    denom *= z[i] - z[j];
                }
            }
            if denom.norm() == 0.0 {
                // coincident iterates; nudge apart
                z[i] += Complex64::new(1e-8, 1e-8);
                max_step = f64::INFINITY;
                continue;
            }
            let step = monic.eval(z[i]) / denom;
            z[i] -= step;
            max_step = max_step.max(step.norm() / (1.0 + z[i].norm()));
        }
        if max_step < STEP_TOLERANCE {
            converged = true;
            break;
        }
    }

    let residual = max_residual(p, &z);
    // roots of higher multiplicity converge linearly and may chatter above the
    // step tolerance while already meeting the residual bound
    if !converged && !(residual <= residual_bound(p)) {
        return Err(Error::RootsNotConverged {
            iterations,
            residual,
            best: z,
        });
    }
    let mut roots = symmetrize_conjugates(z);
    sort_roots(&mut roots);
    Ok(roots)
}

/// Real polynomials have conjugate-symmetric roots; snap the numerical
/// output to that structure so ordering does not depend on rounding noise.
fn symmetrize_conjugates(z: Vec<Complex64>) -> Vec<Complex64> {
    let scale = z.iter().map(|c| c.norm()).fold(1.0, f64::max);
    let tol = 1e-9 * scale;
    let mut out = Vec::with_capacity(z.len());
    let mut upper: Vec<Complex64> = Vec::new();
    let mut lower: Vec<Complex64> = Vec::new();
    for c in z {
        if c.im.abs() <= tol {
            out.push(Complex64::new(c.re, 0.0));
        } else if c.im > 0.0 {
            upper.push(c);
        } else {
            lower.push(c);
        }
    }
    if upper.len() != lower.len() {
        out.extend(upper);
        out.extend(lower);
        return out;
    }
    for u in upper {
        let (idx, _) = lower
            .iter()
            .enumerate()
            .map(|(k, l)| (k, (l.conj() - u).norm()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        let l = lower.swap_remove(idx);
        let re = 0.5 * (u.re + l.re);
        let im = 0.5 * (u.im - l.im);
        out.push(Complex64::new(re, im));
        out.push(Complex64::new(re, -im));
    }
    out
}

fn sort_roots(roots: &mut [Complex64]) {
    roots.sort_by(|a, b| match a.re.total_cmp(&b.re) {
        Ordering::Equal => a.im.total_cmp(&b.im),
        other => other,
    });
}

/// Outcome of the Routh-Hurwitz test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouthVerdict {
    Stable,
    Unstable,
    /// A zero pivot appeared before any sign change.
    Indeterminate,
}

impl fmt::Display for RouthVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RouthVerdict::Stable => "stable",
            RouthVerdict::Unstable => "unstable",
            RouthVerdict::Indeterminate => "indeterminate",
        })
    }
}

/// First column of the Routh array of the monic-normalized polynomial.
#[derive(Debug, Clone, PartialEq)]
pub struct RouthColumn {
    pub entries: Vec<f64>,
    /// Construction stopped at a (near-)zero pivot, which is the last entry.
    pub degenerate: bool,
}

pub fn routh_first_column(p: &RealPolynomial) -> RouthColumn {
    let q = p.monic();
    let n = q.degree();
    // desc[k] multiplies s^(n-k)
    let desc: Vec<f64> = q.coefficients.iter().rev().copied().collect();
    let width = n / 2 + 1;
    let row = |offset: usize| -> Vec<f64> {
        (0..width)
            .map(|k| desc.get(2 * k + offset).copied().unwrap_or(0.0))
            .collect()
    };
    let mut prev = row(0);
    let mut cur = row(1);
    let mut entries = vec![prev[0]];
    for _ in 0..n {
        let scale = cur.iter().map(|c| c.abs()).fold(0.0, f64::max);
        entries.push(cur[0]);
        if scale == 0.0 || cur[0].abs() <= ROUTH_ZERO * scale {
            return RouthColumn {
                entries,
                degenerate: true,
            };
        }
        let next: Vec<f64> = (0..width)
            .map(|k| {
                let a = prev.get(k + 1).copied().unwrap_or(0.0);
                let b = cur.get(k + 1).copied().unwrap_or(0.0);
                (cur[0] * a - prev[0] * b) / cur[0]
            })
            .collect();
        prev = cur;
        cur = next;
    }
    entries.truncate(n + 1);
    RouthColumn {
        entries,
        degenerate: false,
    }
}

/// Routh-Hurwitz test for all roots in the open left half-plane.
pub fn routh_hurwitz_stable(p: &RealPolynomial) -> RouthVerdict {
    if p.degree() == 0 {
        return RouthVerdict::Stable;
    }
    let column = routh_first_column(p);
    let pivots = if column.degenerate {
        &column.entries[..column.entries.len() - 1]
    } else {
        &column.entries[..]
    };
    // a sign change ahead of a zero pivot still certifies a right half-plane root
    if pivots.iter().any(|&c| c < 0.0) {
        RouthVerdict::Unstable
    } else if column.degenerate {
        RouthVerdict::Indeterminate
    } else {
        RouthVerdict::Stable
    }
}
