//! m-th order consensus protocols and their internal stability.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::poly::{polynomial_roots, routh_hurwitz_stable, RealPolynomial, RouthVerdict};
use crate::topology::{laplacian_eigenvalues_triangular, Topology};

pub const MAX_ORDER: usize = 8;

/// Largest closed-loop matrix dimension `m * n` accepted.
pub const MAX_CLOSED_LOOP_DIM: usize = 512;

/// Gains of the study's third-order protocol; lower orders use a prefix.
pub const REFERENCE_GAINS: [f64; 3] = [0.2, 1.5, 1.0];

/// Consensus order, gains `gamma_0..gamma_{m-1}` and predecessor coupling `a`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProtocolConfig {
    gains: Vec<f64>,
    coupling: f64,
}

impl ProtocolConfig {
    pub fn new(gains: Vec<f64>, coupling: f64) -> Result<Self> {
        let m = gains.len();
        if m == 0 || m > MAX_ORDER {
            return Err(Error::domain(format!(
                "consensus order must be in 1..={MAX_ORDER}, got {m}"
            )));
        }
        if let Some((k, g)) = gains
            .iter()
            .enumerate()
            .find(|(_, g)| !(g.is_finite() && **g > 0.0))
        {
            return Err(Error::domain(format!("gain gamma_{k} = {g} must be positive")));
        }
        if !(coupling.is_finite() && coupling > 0.0) {
            return Err(Error::domain(format!("coupling a = {coupling} must be positive")));
        }
        Ok(ProtocolConfig { gains, coupling })
    }

    /// The reference gains (0.2, 1.5, 1.0) truncated to order `m`, with `a = 1`.
    pub fn reference(m: usize) -> Result<Self> {
        if m == 0 || m > REFERENCE_GAINS.len() {
            return Err(Error::domain(format!(
                "reference gains exist for orders 1..=3, got {m}"
            )));
        }
        ProtocolConfig::new(REFERENCE_GAINS[..m].to_vec(), 1.0)
    }

    pub fn order(&self) -> usize {
        self.gains.len()
    }

    pub fn gains(&self) -> &[f64] {
        &self.gains
    }

    pub fn coupling(&self) -> f64 {
        self.coupling
    }
}

/// `Q_m(s) = sum_k gamma_k s^k`.
pub fn shaping_polynomial(cfg: &ProtocolConfig) -> RealPolynomial {
    RealPolynomial::new(cfg.gains.clone()).expect("gains are positive")
}

/// `lambda^m - mu * Q_m(lambda)`. For an r-predecessor mode pass `mu = -a * d`.
pub fn mode_polynomial(cfg: &ProtocolConfig, mu: f64) -> RealPolynomial {
    let mut coefficients: Vec<f64> = cfg.gains.iter().map(|g| -mu * g).collect();
    coefficients.push(1.0);
    // -0.0 from mu = 0 is harmless, but keep the output tidy
    for c in &mut coefficients {
        if *c == 0.0 {
            *c = 0.0;
        }
    }
    RealPolynomial::new(coefficients).expect("monic polynomial")
}

/// Roots and stability of the mode attached to one Laplacian eigenvalue.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeAnalysis {
    /// Eigenvalue of `-L` already scaled by the coupling: `mu = -a * d`.
    pub mu: f64,
    #[serde(serialize_with = "serialize_roots")]
    pub roots: Vec<Complex64>,
    pub routh: RouthVerdict,
    /// Largest real part among the roots.
    pub margin: f64,
    /// Whether the mode is asymptotically stable (`margin < 0`).
    pub stable: bool,
    /// Zero Laplacian eigenvalue: a structural consensus mode, excluded from the verdict.
    pub consensus_mode: bool,
}

fn serialize_roots<S: serde::Serializer>(roots: &[Complex64], s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(roots.len()))?;
    for z in roots {
        seq.serialize_element(&[z.re, z.im])?;
    }
    seq.end()
}

pub fn analyze_mode(cfg: &ProtocolConfig, laplacian_eigenvalue: f64) -> Result<ModeAnalysis> {
    let mu = -cfg.coupling * laplacian_eigenvalue;
    let p = mode_polynomial(cfg, mu);
    let roots = polynomial_roots(&p)?;
    let margin = roots.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    Ok(ModeAnalysis {
        mu,
        routh: routh_hurwitz_stable(&p),
        margin,
        stable: margin < 0.0,
        consensus_mode: laplacian_eigenvalue == 0.0,
        roots,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityCheck {
    pub modes: Vec<ModeAnalysis>,
    pub overall: bool,
}

/// Mode-by-mode stability for an arbitrary list of Laplacian eigenvalues.
///
/// Zero eigenvalues are reported as consensus modes and do not enter the
/// overall verdict; every other mode must be Routh-stable with a negative
/// root margin.
pub fn stability_from_spectrum(cfg: &ProtocolConfig, eigenvalues: &[f64]) -> Result<StabilityCheck> {
    let modes = eigenvalues
        .iter()
        .map(|&d| analyze_mode(cfg, d))
        .collect::<Result<Vec<_>>>()?;
    let overall = modes
        .iter()
        .filter(|mode| !mode.consensus_mode)
        .all(|mode| mode.routh == RouthVerdict::Stable && mode.stable);
    Ok(StabilityCheck { modes, overall })
}

/// Internal stability of the leader-referenced error system.
pub fn internal_stability_check(t: &Topology, cfg: &ProtocolConfig) -> Result<StabilityCheck> {
    stability_from_spectrum(cfg, &laplacian_eigenvalues_triangular(t))
}

/// Block-companion matrix with identity super-diagonal blocks and bottom
/// block row `[-gamma_0 a L, ..., -gamma_{m-1} a L]`.
pub fn build_closed_loop_matrix(t: &Topology, cfg: &ProtocolConfig) -> Result<DMatrix<f64>> {
    let n = t.n();
    let m = cfg.order();
    let dim = m * n;
    if dim > MAX_CLOSED_LOOP_DIM {
        return Err(Error::SizeCap {
            dim,
            cap: MAX_CLOSED_LOOP_DIM,
        });
    }
    let mut out = DMatrix::zeros(dim, dim);
    for block in 0..m.saturating_sub(1) {
        for i in 0..n {
            out[(block * n + i, (block + 1) * n + i)] = 1.0;
        }
    }
    let l = t.laplacian();
    let bottom = (m - 1) * n;
    for (k, g) in cfg.gains.iter().enumerate() {
        let scale = -g * cfg.coupling;
        for i in 0..n {
            for j in 0..=i {
                let v = l[(i, j)];
                if v != 0.0 {
                    out[(bottom + i, k * n + j)] = scale * v;
                }
            }
        }
    }
    Ok(out)
}

fn shifted(m: &DMatrix<f64>, lambda: Complex64) -> DMatrix<Complex64> {
    let n = m.nrows();
    DMatrix::from_fn(n, n, |i, j| {
        let diag = if i == j { lambda } else { Complex64::new(0.0, 0.0) };
        diag - m[(i, j)]
    })
}

/// `|det(lambda I - M)|` via LU with partial pivoting.
pub fn characteristic_residual(m: &DMatrix<f64>, lambda: Complex64) -> Result<f64> {
    if !m.is_square() {
        return Err(Error::domain("characteristic residual needs a square matrix"));
    }
    if m.nrows() > MAX_CLOSED_LOOP_DIM {
        return Err(Error::SizeCap {
            dim: m.nrows(),
            cap: MAX_CLOSED_LOOP_DIM,
        });
    }
    Ok(shifted(m, lambda).lu().determinant().norm())
}

/// Product of the Euclidean row norms of `lambda I - M` (Hadamard bound on
/// the determinant), used to make [`characteristic_residual`] scale-free.
pub fn characteristic_scale(m: &DMatrix<f64>, lambda: Complex64) -> f64 {
    let a = shifted(m, lambda);
    a.row_iter()
        .map(|row| row.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt())
        .product()
}
