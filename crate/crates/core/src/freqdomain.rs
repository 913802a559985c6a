//! Frequency responses of the propagation coefficient and leader-to-error maps.
//!
//! With `Q(s) = sum_k gamma_k s^k` and `d` the number of predecessors:
//!
//! * `G(s)   = 1 / (s^m + a d Q(s))`
//! * `Phi(s) = a Q(s) G(s)`
//!
//! and the follower errors obey `E_i = G W + Phi * sum_{j=1..r} E_{i-j}`.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly::{routh_hurwitz_stable, RouthVerdict};
use crate::protocol::{mode_polynomial, shaping_polynomial, ProtocolConfig};
use crate::topology::Topology;

const POLE_GUARD: f64 = 1e-300;
const GOLDEN_TOLERANCE: f64 = 1e-9;
const REFINED_PEAKS: usize = 3;

fn denominator(cfg: &ProtocolConfig, degree: f64, q: Complex64, s: Complex64) -> Complex64 {
    s.powu(cfg.order() as u32) + cfg.coupling() * degree * q
}

/// Smith's complex division; exact when the denominator is real.
fn divide(num: Complex64, den: Complex64) -> Complex64 {
    if den.re.abs() >= den.im.abs() {
        let ratio = den.im / den.re;
        let scale = den.re + den.im * ratio;
        Complex64::new((num.re + num.im * ratio) / scale, (num.im - num.re * ratio) / scale)
    } else {
        let ratio = den.re / den.im;
        let scale = den.re * ratio + den.im;
        Complex64::new((num.re * ratio + num.im) / scale, (num.im * ratio - num.re) / scale)
    }
}

/// Evaluates `(G(s), Phi(s))` for a row with `degree` predecessors.
fn eval_pair(cfg: &ProtocolConfig, degree: f64, s: Complex64) -> Result<(Complex64, Complex64)> {
    let q = shaping_polynomial(cfg).eval(s);
    let den = denominator(cfg, degree, q, s);
    let magnitude = den.norm();
    if !(magnitude > POLE_GUARD) {
        return Err(Error::Pole { s, magnitude });
    }
    Ok((
        divide(Complex64::new(1.0, 0.0), den),
        divide(cfg.coupling() * q, den),
    ))
}

/// `G_m(s) = 1 / (s^m + a r Q_m(s))`.
pub fn eval_g(cfg: &ProtocolConfig, r: usize, s: Complex64) -> Result<Complex64> {
    eval_pair(cfg, r as f64, s).map(|(g, _)| g)
}

/// Propagation coefficient `Phi_m(s) = a Q_m(s) / (s^m + a r Q_m(s))`.
pub fn eval_phi(cfg: &ProtocolConfig, r: usize, s: Complex64) -> Result<Complex64> {
    eval_pair(cfg, r as f64, s).map(|(_, phi)| phi)
}

/// `|Phi_m(0)|`, which equals `1/r` for every order and gain choice.
pub fn dc_gain(cfg: &ProtocolConfig, r: usize) -> Result<f64> {
    if r == 0 {
        return Err(Error::domain("richness r must be at least 1"));
    }
    eval_phi(cfg, r, Complex64::new(0.0, 0.0)).map(|v| v.norm())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    Log,
    Linear,
}

/// Strictly increasing, nonnegative frequencies in rad/s.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyGrid {
    omegas: Vec<f64>,
    spacing: Spacing,
}

impl FrequencyGrid {
    pub fn new(omegas: Vec<f64>, spacing: Spacing) -> Result<Self> {
        if omegas.is_empty() {
            return Err(Error::domain("frequency grid is empty"));
        }
        if omegas.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::domain("frequencies must be finite and nonnegative"));
        }
        if omegas.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::domain("frequencies must be strictly increasing"));
        }
        Ok(FrequencyGrid { omegas, spacing })
    }

    /// `points` log-spaced samples over `[min, max]`, optionally preceded by `0`.
    pub fn log(min: f64, max: f64, points: usize, include_zero: bool) -> Result<Self> {
        if !(min > 0.0 && max > min && min.is_finite() && max.is_finite()) {
            return Err(Error::domain(format!("invalid log range [{min}, {max}]")));
        }
        if points < 2 {
            return Err(Error::domain("log grid needs at least 2 points"));
        }
        let (lo, hi) = (min.log10(), max.log10());
        let step = (hi - lo) / (points - 1) as f64;
        let mut omegas = Vec::with_capacity(points + 1);
        if include_zero {
            omegas.push(0.0);
        }
        omegas.extend((0..points).map(|k| {
            if k == points - 1 {
                max
            } else {
                10f64.powf(lo + step * k as f64)
            }
        }));
        FrequencyGrid::new(omegas, Spacing::Log)
    }

    pub fn linear(min: f64, max: f64, points: usize) -> Result<Self> {
        if points < 2 || !(max > min) || min < 0.0 {
            return Err(Error::domain(format!("invalid linear grid [{min}, {max}] x {points}")));
        }
        let step = (max - min) / (points - 1) as f64;
        FrequencyGrid::new(
            (0..points).map(|k| min + step * k as f64).collect(),
            Spacing::Linear,
        )
    }

    pub fn omegas(&self) -> &[f64] {
        &self.omegas
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn includes_zero(&self) -> bool {
        self.omegas[0] == 0.0
    }

    pub fn len(&self) -> usize {
        self.omegas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omegas.is_empty()
    }
}

/// The scalar transfers that can be swept.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transfer {
    G,
    Phi,
}

impl FromStr for Transfer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "g" => Ok(Transfer::G),
            "phi" => Ok(Transfer::Phi),
            other => Err(Error::domain(format!("unknown transfer `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResponseLabel {
    G,
    Phi,
    /// Leader disturbance to error of follower `i` (1-based).
    Follower(usize),
}

impl fmt::Display for ResponseLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ResponseLabel::G => f.write_str("G"),
            ResponseLabel::Phi => f.write_str("Phi"),
            ResponseLabel::Follower(i) => write!(f, "T{i}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyResponse {
    pub grid: FrequencyGrid,
    pub values: Vec<Complex64>,
    pub magnitudes: Vec<f64>,
    pub label: ResponseLabel,
}

impl FrequencyResponse {
    fn new(grid: FrequencyGrid, values: Vec<Complex64>, label: ResponseLabel) -> Self {
        let magnitudes = values.iter().map(|v| v.norm()).collect();
        FrequencyResponse {
            grid,
            values,
            magnitudes,
            label,
        }
    }

    /// CSV with header `omega,re,im,mag`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("omega,re,im,mag\n");
        for ((w, v), mag) in self.grid.omegas.iter().zip(&self.values).zip(&self.magnitudes) {
            out.push_str(&format!("{w:e},{:e},{:e},{mag:e}\n", v.re, v.im));
        }
        out
    }
}

/// Evaluates `which` at `j omega` for every grid point.
pub fn sweep(cfg: &ProtocolConfig, r: usize, grid: &FrequencyGrid, which: Transfer) -> Result<FrequencyResponse> {
    let values = grid
        .omegas
        .iter()
        .map(|&w| {
            let (g, phi) = eval_pair(cfg, r as f64, Complex64::new(0.0, w))?;
            Ok(match which {
                Transfer::G => g,
                Transfer::Phi => phi,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let label = match which {
        Transfer::G => ResponseLabel::G,
        Transfer::Phi => ResponseLabel::Phi,
    };
    Ok(FrequencyResponse::new(grid.clone(), values, label))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Attenuating,
    Marginal,
    Amplifying,
}

impl Verdict {
    pub fn classify(hinf: f64, tolerance: f64) -> Verdict {
        if hinf < 1.0 - tolerance {
            Verdict::Attenuating
        } else if hinf > 1.0 + tolerance {
            Verdict::Amplifying
        } else {
            Verdict::Marginal
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Attenuating => "attenuating",
            Verdict::Marginal => "marginal",
            Verdict::Amplifying => "amplifying",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StringStabilityReport {
    pub dc_gain: f64,
    pub hinf: f64,
    pub omega_peak: f64,
    pub verdict: Verdict,
    pub tolerance: f64,
}

/// Sweep range, density and verdict tolerance for [`hinf_estimate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepParams {
    pub omega_min: f64,
    pub omega_max: f64,
    pub points: usize,
    pub tolerance: f64,
}

impl Default for SweepParams {
    fn default() -> Self {
        SweepParams {
            omega_min: 1e-3,
            omega_max: 1e3,
            points: 2000,
            tolerance: 1e-6,
        }
    }
}

impl SweepParams {
    /// The dense grid used by [`hinf_estimate`], with `omega = 0` prepended.
    pub fn grid(&self) -> Result<FrequencyGrid> {
        FrequencyGrid::log(self.omega_min, self.omega_max, self.points, true)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid()?;
        if !(self.tolerance >= 0.0 && self.tolerance.is_finite()) {
            return Err(Error::domain("tolerance must be finite and nonnegative"));
        }
        Ok(())
    }
}

fn phi_magnitude(cfg: &ProtocolConfig, r: usize, w: f64) -> Result<f64> {
    eval_phi(cfg, r, Complex64::new(0.0, w)).map(|v| v.norm())
}

/// Golden-section search for the maximum of `|Phi|` on `[lo, hi]`.
fn golden_max(cfg: &ProtocolConfig, r: usize, mut lo: f64, mut hi: f64) -> Result<(f64, f64)> {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = phi_magnitude(cfg, r, x1)?;
    let mut f2 = phi_magnitude(cfg, r, x2)?;
    for _ in 0..400 {
        if hi - lo <= GOLDEN_TOLERANCE * hi.abs().max(f64::MIN_POSITIVE) {
            break;
        }
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = phi_magnitude(cfg, r, x2)?;
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = phi_magnitude(cfg, r, x1)?;
        }
    }
    Ok(if f1 >= f2 { (x1, f1) } else { (x2, f2) })
}

/// Estimates `sup_w |Phi_m(j w)|` and classifies string stability.
///
/// The dense sweep locates candidate peaks; the best three discrete local
/// maxima are then refined by golden-section search on their brackets.
pub fn hinf_estimate(cfg: &ProtocolConfig, r: usize, params: &SweepParams) -> Result<StringStabilityReport> {
    if r == 0 {
        return Err(Error::domain("richness r must be at least 1"));
    }
    params.validate()?;
    let poles = mode_polynomial(cfg, -cfg.coupling() * r as f64);
    if routh_hurwitz_stable(&poles) != RouthVerdict::Stable {
        return Err(Error::Unstable(format!(
            "s^m + a r Q(s) = {poles} is not Hurwitz; H-infinity norm undefined"
        )));
    }
    let grid = params.grid()?;
    let response = sweep(cfg, r, &grid, Transfer::Phi)?;
    let w = grid.omegas();
    let mags = &response.magnitudes;

    let mut peaks: Vec<usize> = (0..mags.len())
        .filter(|&k| {
            let left = k == 0 || mags[k] >= mags[k - 1];
            let right = k + 1 == mags.len() || mags[k] >= mags[k + 1];
            left && right
        })
        .collect();
    peaks.sort_by(|&a, &b| mags[b].total_cmp(&mags[a]).then(a.cmp(&b)));
    peaks.truncate(REFINED_PEAKS);

    // sampled maximum first, so exact ties keep the sampled frequency
    let mut best = (w[peaks[0]], mags[peaks[0]]);
    for &k in &peaks {
        let lo = w[k.saturating_sub(1)];
        let hi = w[(k + 1).min(w.len() - 1)];
        if hi > lo {
            let (wk, fk) = golden_max(cfg, r, lo, hi)?;
            if fk > best.1 {
                best = (wk, fk);
            }
        }
    }
    let dc = mags[0];
    let (omega_peak, hinf) = best;
    Ok(StringStabilityReport {
        dc_gain: dc,
        hinf,
        omega_peak,
        verdict: Verdict::classify(hinf, params.tolerance),
        tolerance: params.tolerance,
    })
}

/// Leader-to-error responses `T_1, ..., T_n` generated by the recursion
/// `T_i = G + Phi * sum_{j=1..r} T_{i-j}` with `T_k = 0` for `k <= 0`.
///
/// Each row uses its own predecessor count inside `G` and `Phi`, which is
/// `r` everywhere under leader padding.
pub fn follower_chain_responses(
    cfg: &ProtocolConfig,
    t: &Topology,
    grid: &FrequencyGrid,
) -> Result<Vec<FrequencyResponse>> {
    follower_chain_prefix(cfg, t, t.n(), grid)
}

fn follower_chain_prefix(
    cfg: &ProtocolConfig,
    t: &Topology,
    count: usize,
    grid: &FrequencyGrid,
) -> Result<Vec<FrequencyResponse>> {
    let r = t.r();
    let mut columns: Vec<Vec<Complex64>> = vec![Vec::with_capacity(grid.len()); count];
    let mut chain = vec![Complex64::new(0.0, 0.0); count];
    for &w in grid.omegas() {
        let s = Complex64::new(0.0, w);
        for row in 0..count {
            let (g, phi) = eval_pair(cfg, t.degrees()[row] as f64, s)?;
            let upstream: Complex64 = (1..=r.min(row)).map(|j| chain[row - j]).sum();
            chain[row] = g + phi * upstream;
            columns[row].push(chain[row]);
        }
    }
    Ok(columns
        .into_iter()
        .enumerate()
        .map(|(row, values)| FrequencyResponse::new(grid.clone(), values, ResponseLabel::Follower(row + 1)))
        .collect())
}

/// `E_i(j w) / W(j w)` for follower `i` (1-based).
pub fn follower_chain_response(
    cfg: &ProtocolConfig,
    t: &Topology,
    i: usize,
    grid: &FrequencyGrid,
) -> Result<FrequencyResponse> {
    if i == 0 || i > t.n() {
        return Err(Error::domain(format!("follower index {i} outside 1..={}", t.n())));
    }
    let mut all = follower_chain_prefix(cfg, t, i, grid)?;
    Ok(all.pop().unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{build_r_predecessor, BoundaryConvention::*};
    use proptest::prelude::*;

    fn cfg(gains: &[f64]) -> ProtocolConfig {
        ProtocolConfig::new(gains.to_vec(), 1.0).unwrap()
    }

    fn j(w: f64) -> Complex64 {
        Complex64::new(0.0, w)
    }

    #[test]
    fn g_examples() {
        let g = eval_g(&ProtocolConfig::reference(2).unwrap(), 2, j(0.0)).unwrap();
        assert!((g - Complex64::new(2.5, 0.0)).norm() < 1e-15);
        let g = eval_g(&cfg(&[0.2]), 1, j(0.2)).unwrap();
        assert!((g - Complex64::new(2.5, -2.5)).norm() < 1e-12);
        let err = eval_g(&cfg(&[0.2]), 2, Complex64::new(-0.4, 0.0));
        assert!(matches!(err, Err(Error::Pole { .. })));
    }

    #[test]
    fn phi_examples() {
        for m in 1..=3 {
            let c = ProtocolConfig::reference(m).unwrap();
            assert!((eval_phi(&c, 2, j(0.0)).unwrap().norm() - 0.5).abs() < 1e-15);
            assert!((eval_phi(&c, 3, j(0.0)).unwrap().norm() - 1.0 / 3.0).abs() < 1e-15);
        }
        let closed_form = 0.2 / (0.16f64 + 0.16).sqrt();
        let v = eval_phi(&cfg(&[0.2]), 2, j(0.4)).unwrap().norm();
        assert!((v - closed_form).abs() < 1e-15);
        assert!((v - 0.353553).abs() < 1e-6);
    }

    #[test]
    fn dc_gain_examples() {
        let c = cfg(&[0.7, 0.3]);
        assert_eq!(dc_gain(&c, 1).unwrap(), 1.0);
        assert_eq!(dc_gain(&c, 2).unwrap(), 0.5);
        assert_eq!(dc_gain(&c, 4).unwrap(), 0.25);
        assert!(dc_gain(&c, 0).is_err());
    }

    #[test]
    fn sweep_examples() {
        let c1 = ProtocolConfig::reference(1).unwrap();
        let g0 = FrequencyGrid::new(vec![0.0], Spacing::Linear).unwrap();
        assert_eq!(sweep(&c1, 2, &g0, Transfer::Phi).unwrap().magnitudes, vec![0.5]);
        let g2 = FrequencyGrid::new(vec![0.0, 0.4], Spacing::Linear).unwrap();
        let resp = sweep(&c1, 2, &g2, Transfer::Phi).unwrap();
        assert_eq!(resp.magnitudes[0], 0.5);
        assert!((resp.magnitudes[1] - 0.2 / 0.32f64.sqrt()).abs() < 1e-15);
        let c2 = ProtocolConfig::reference(2).unwrap();
        let resp = sweep(&c2, 2, &g0, Transfer::G).unwrap();
        assert!((resp.magnitudes[0] - 2.5).abs() < 1e-15);
        assert_eq!(resp.label, ResponseLabel::G);
    }

    #[test]
    fn sweep_reports_pole_frequency() {
        // m = 2, r = 1 and Q = 0 + 1 s: s^2 + s has a pole at 0
        let c = ProtocolConfig::new(vec![1e-320, 1.0], 1.0).unwrap();
        let grid = FrequencyGrid::new(vec![0.0], Spacing::Linear).unwrap();
        match sweep(&c, 1, &grid, Transfer::Phi) {
            Err(Error::Pole { s, .. }) => assert_eq!(s, j(0.0)),
            other => panic!("expected pole error, got {other:?}"),
        }
    }

    #[test]
    fn grid_validation() {
        assert!(FrequencyGrid::new(vec![], Spacing::Log).is_err());
        assert!(FrequencyGrid::new(vec![1.0, 1.0], Spacing::Log).is_err());
        assert!(FrequencyGrid::new(vec![-1.0, 1.0], Spacing::Log).is_err());
        assert!(FrequencyGrid::new(vec![0.0, f64::INFINITY], Spacing::Log).is_err());
        let g = FrequencyGrid::log(1e-3, 1e3, 2000, true).unwrap();
        assert_eq!(g.len(), 2001);
        assert!(g.includes_zero());
        assert_eq!(*g.omegas().last().unwrap(), 1e3);
        assert_eq!(g.omegas()[1], 1e-3);
    }

    #[test]
    fn hinf_first_order() {
        let c = ProtocolConfig::reference(1).unwrap();
        let rep = hinf_estimate(&c, 2, &SweepParams::default()).unwrap();
        assert_eq!(rep.hinf, 0.5);
        assert_eq!(rep.omega_peak, 0.0);
        assert_eq!(rep.verdict, Verdict::Attenuating);
        let rep = hinf_estimate(&c, 1, &SweepParams::default()).unwrap();
        assert_eq!(rep.hinf, 1.0);
        assert_eq!(rep.verdict, Verdict::Marginal);
    }

    // Peak values for the reference gains from an independent dense sweep plus
    // bounded scalar maximization (scipy), frozen before implementation.
    const REFERENCE_PEAKS: [(usize, usize, f64, f64); 5] = [
        (2, 1, 1.0641760594415954, 0.26154004552473076),
        (2, 2, 0.5173769253679109, 0.32061966784224416),
        (2, 3, 0.3413614916416626, 0.3596658369449426),
        (3, 2, 0.7193169835435007, 1.406029197094512),
        (3, 3, 0.43548063533008347, 1.627010929982794),
    ];

    #[test]
    fn hinf_matches_frozen_peaks() {
        for (m, r, peak, omega) in REFERENCE_PEAKS {
            let rep = hinf_estimate(&ProtocolConfig::reference(m).unwrap(), r, &SweepParams::default()).unwrap();
            assert!((rep.hinf - peak).abs() < 1e-10, "m={m} r={r}: {} vs {peak}", rep.hinf);
            assert!((rep.omega_peak - omega).abs() < 1e-4, "m={m} r={r}: {}", rep.omega_peak);
        }
    }

    #[test]
    fn second_order_single_predecessor_peak_closed_form() {
        // |Phi|^2 = (2.25u + 0.04) / (u^2 + 1.85u + 0.04), u = w^2; stationary at
        // 2.25u^2 + 0.08u - 0.016 = 0
        let u = (-0.08 + (0.0064f64 + 4.0 * 2.25 * 0.016).sqrt()) / 4.5;
        let peak = ((2.25 * u + 0.04) / (u * u + 1.85 * u + 0.04)).sqrt();
        let rep = hinf_estimate(&ProtocolConfig::reference(2).unwrap(), 1, &SweepParams::default()).unwrap();
        assert!((rep.hinf - peak).abs() < 1e-12);
        assert!((rep.omega_peak - u.sqrt()).abs() < 1e-6);
        assert_eq!(rep.verdict, Verdict::Amplifying);
    }

    #[test]
    fn hinf_third_order_single_predecessor_amplifies() {
        let rep = hinf_estimate(&ProtocolConfig::reference(3).unwrap(), 1, &SweepParams::default()).unwrap();
        assert_eq!(rep.verdict, Verdict::Amplifying);
        assert!(rep.omega_peak > 0.0 && rep.omega_peak < 3f64.sqrt());
        assert!((rep.hinf - 1.8290110074890515).abs() < 1e-10);
    }

    #[test]
    fn hinf_refuses_unstable() {
        // s^3 + a r (0.1 + 0.1 s + 0.1 s^2): Routh 0.1*0.1 < 0.1 * 1 -> unstable
        let c = ProtocolConfig::new(vec![1.0, 0.1, 0.1], 1.0).unwrap();
        assert!(matches!(
            hinf_estimate(&c, 1, &SweepParams::default()),
            Err(Error::Unstable(_))
        ));
    }

    #[test]
    fn chain_unrolls() {
        let c = ProtocolConfig::reference(2).unwrap();
        let grid = FrequencyGrid::new(vec![0.0, 0.3, 1.7], Spacing::Linear).unwrap();

        let t1 = build_r_predecessor(4, 1, LeaderPadded).unwrap();
        let first = follower_chain_response(&c, &t1, 1, &grid).unwrap();
        let second = follower_chain_response(&c, &t1, 2, &grid).unwrap();
        assert_eq!(second.label, ResponseLabel::Follower(2));
        for (k, &w) in grid.omegas().iter().enumerate() {
            let g = eval_g(&c, 1, j(w)).unwrap();
            let phi = eval_phi(&c, 1, j(w)).unwrap();
            assert!((first.values[k] - g).norm() < 1e-15);
            assert!((second.values[k] - g * (1.0 + phi)).norm() < 1e-14);
        }

        let t2 = build_r_predecessor(4, 2, LeaderPadded).unwrap();
        let third = follower_chain_response(&c, &t2, 3, &grid).unwrap();
        for (k, &w) in grid.omegas().iter().enumerate() {
            let g = eval_g(&c, 2, j(w)).unwrap();
            let phi = eval_phi(&c, 2, j(w)).unwrap();
            let expected = g * (1.0 + phi * (1.0 + phi) + phi);
            assert!((third.values[k] - expected).norm() < 1e-14);
        }
        assert!(follower_chain_response(&c, &t2, 0, &grid).is_err());
        assert!(follower_chain_response(&c, &t2, 5, &grid).is_err());
    }

    #[test]
    fn chain_closed_form_single_predecessor() {
        // T_i = G * sum_{k<i} Phi^k
        let c = ProtocolConfig::reference(3).unwrap();
        let grid = FrequencyGrid::log(1e-2, 1e1, 15, true).unwrap();
        let t = build_r_predecessor(8, 1, LeaderPadded).unwrap();
        let all = follower_chain_responses(&c, &t, &grid).unwrap();
        for (k, &w) in grid.omegas().iter().enumerate() {
            let g = eval_g(&c, 1, j(w)).unwrap();
            let phi = eval_phi(&c, 1, j(w)).unwrap();
            for (row, resp) in all.iter().enumerate() {
                let expected: Complex64 = g * (0..=row).map(|p| phi.powu(p as u32)).sum::<Complex64>();
                assert!((resp.values[k] - expected).norm() <= 1e-12 * expected.norm().max(1.0));
            }
        }
    }

    #[test]
    fn csv_header() {
        let c = ProtocolConfig::reference(1).unwrap();
        let grid = FrequencyGrid::new(vec![0.0], Spacing::Linear).unwrap();
        let csv = sweep(&c, 2, &grid, Transfer::Phi).unwrap().to_csv();
        assert_eq!(csv, "omega,re,im,mag\n0e0,5e-1,0e0,5e-1\n");
    }

    proptest! {
        #[test]
        fn dc_law(m in 1usize..=5, r in 1usize..=6, gains in proptest::collection::vec(0.01f64..10.0, 5), a in 0.1f64..5.0) {
            let c = ProtocolConfig::new(gains[..m].to_vec(), a).unwrap();
            prop_assert!((dc_gain(&c, r).unwrap() - 1.0 / r as f64).abs() < 1e-12);
        }

        #[test]
        fn first_order_magnitude_non_increasing(g0 in 0.01f64..5.0, r in 1usize..=6) {
            let c = ProtocolConfig::new(vec![g0], 1.0).unwrap();
            let grid = FrequencyGrid::log(1e-3, 1e3, 200, true).unwrap();
            let mags = sweep(&c, r, &grid, Transfer::Phi).unwrap().magnitudes;
            prop_assert!(mags.windows(2).all(|w| w[1] <= w[0]));
        }

        #[test]
        fn hinf_dominates_user_grid(m in 1usize..=3, r in 1usize..=3, ws in proptest::collection::vec(0.0f64..50.0, 1..30)) {
            let c = ProtocolConfig::reference(m).unwrap();
            let rep = hinf_estimate(&c, r, &SweepParams::default()).unwrap();
            let mut ws = ws;
            ws.sort_by(f64::total_cmp);
            ws.dedup();
            let grid = FrequencyGrid::new(ws, Spacing::Linear).unwrap();
            let mags = sweep(&c, r, &grid, Transfer::Phi).unwrap().magnitudes;
            prop_assert!(mags.iter().all(|&v| v <= rep.hinf + 1e-9));
            prop_assert!(rep.hinf >= rep.dc_gain - 1e-12);
        }
    }

    #[test]
    fn high_frequency_rolloff() {
        for m in 1..=3 {
            for r in 1..=3 {
                let c = ProtocolConfig::reference(m).unwrap();
                assert!(eval_phi(&c, r, j(1e4)).unwrap().norm() < 1e-2);
            }
        }
    }
}
