//! Time-domain simulation of the follower error dynamics
//!
//! `eps_i^(m) = -a sum_k gamma_k (L eps^(k))_i + w(t)`
//!
//! integrated as an `m * n` first-order system with classical RK4.
//! State layout is derivative-order major: `x[k * n + i] = eps_{i+1}^(k)`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocol::{internal_stability_check, ProtocolConfig};
use crate::topology::Topology;

const DIVERGENCE_LIMIT: f64 = 1e12;
const SETTLING_FRACTION: f64 = 0.01;

/// Common disturbance `w(t)` applied to every follower's top-order equation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DisturbanceProfile {
    /// `w = delta(t)`, realized exactly as a unit jump in `eps^(m-1)` at `t = 0+`.
    UnitImpulse,
    Step { height: f64 },
    /// Smoothstep ramps up on `[t_on, t_on + ramp]` and down on `[t_off, t_off + ramp]`.
    SmoothPulse {
        height: f64,
        t_on: f64,
        t_off: f64,
        ramp: f64,
    },
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

impl DisturbanceProfile {
    pub fn validate(&self) -> Result<()> {
        match *self {
            DisturbanceProfile::UnitImpulse => Ok(()),
            DisturbanceProfile::Step { height } if height.is_finite() => Ok(()),
            DisturbanceProfile::Step { .. } => Err(Error::domain("step height must be finite")),
            DisturbanceProfile::SmoothPulse {
                height,
                t_on,
                t_off,
                ramp,
            } => {
                if !height.is_finite() {
                    Err(Error::domain("pulse height must be finite"))
                } else if !(t_on >= 0.0 && t_on < t_off && t_off.is_finite()) {
                    Err(Error::domain("pulse needs 0 <= t_on < t_off"))
                } else if !(ramp > 0.0 && ramp.is_finite()) {
                    Err(Error::domain("pulse ramp must be positive"))
                } else {
                    Ok(())
                }
            }
        }
    }

    /// Forcing value at time `t`; zero for the impulse once it has been applied.
    pub fn forcing(&self, t: f64) -> f64 {
        match *self {
            DisturbanceProfile::UnitImpulse => 0.0,
            DisturbanceProfile::Step { height } => {
                if t >= 0.0 {
                    height
                } else {
                    0.0
                }
            }
            DisturbanceProfile::SmoothPulse {
                height,
                t_on,
                t_off,
                ramp,
            } => {
                let up = smoothstep((t - t_on) / ramp);
                let down = 1.0 - smoothstep((t - t_off) / ramp);
                height * up.min(down)
            }
        }
    }
}

/// State right after a unit impulse on every top-order equation.
pub fn impulse_initial_state(n: usize, m: usize) -> Vec<f64> {
    let mut x = vec![0.0; n * m];
    if m > 0 {
        x[(m - 1) * n..].fill(1.0);
    }
    x
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimParams {
    pub dt: f64,
    pub horizon: f64,
    /// Keep every k-th integration step in the trace.
    pub record_every: usize,
    /// Integrate even when the internal stability check fails.
    pub allow_unstable: bool,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            dt: 1e-3,
            horizon: 100.0,
            record_every: 1,
            allow_unstable: false,
        }
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::domain("dt must be positive"));
        }
        if !(self.horizon >= 10.0 * self.dt && self.horizon.is_finite()) {
            return Err(Error::domain("horizon must be at least 10 * dt"));
        }
        if self.record_every == 0 {
            return Err(Error::domain("record_every must be at least 1"));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }
}

/// Peak spacing errors and their downstream ratios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationMetrics {
    /// `peaks[k] = max_t |e_{k+1}(t)|`.
    pub peaks: Vec<f64>,
    /// `ratios[k] = peaks[k+1] / peaks[k]`, i.e. `rho_{k+2}`; absent when the upstream peak is zero.
    pub ratios: Vec<Option<f64>>,
    /// First time after which `|e_i|` stays below 1% of its peak.
    pub settling: Vec<Option<f64>>,
}

impl PropagationMetrics {
    /// `rho_i` for 1-based follower `i >= 2`.
    pub fn ratio(&self, i: usize) -> Option<f64> {
        i.checked_sub(2).and_then(|k| self.ratios.get(k).copied().flatten())
    }

    /// Peak of follower `i` (1-based).
    pub fn peak(&self, i: usize) -> f64 {
        self.peaks[i - 1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTrace {
    pub dt: f64,
    pub horizon: f64,
    pub times: Vec<f64>,
    /// `states[k]` is the `samples x n` trajectory of the k-th error derivative.
    pub states: Vec<DMatrix<f64>>,
    /// `samples x n` spacing errors.
    pub spacing: DMatrix<f64>,
    pub metrics: PropagationMetrics,
}

impl SimulationTrace {
    pub fn followers(&self) -> usize {
        self.spacing.ncols()
    }

    pub fn order(&self) -> usize {
        self.states.len()
    }

    /// Position error `eps_i` of follower `i` (1-based) at sample `j`.
    pub fn eps(&self, j: usize, i: usize) -> f64 {
        self.states[0][(j, i - 1)]
    }

    fn from_samples(dt: f64, horizon: f64, times: Vec<f64>, states: Vec<DMatrix<f64>>) -> Self {
        let spacing = spacing_from_positions(&states[0]);
        let mut trace = SimulationTrace {
            dt,
            horizon,
            times,
            states,
            spacing,
            metrics: PropagationMetrics {
                peaks: Vec::new(),
                ratios: Vec::new(),
                settling: Vec::new(),
            },
        };
        trace.metrics = propagation_metrics(&trace);
        trace
    }

    /// Long-format CSV `t,follower,eps,spacing`, keeping every `every`-th sample.
    pub fn to_csv(&self, every: usize) -> String {
        let every = every.max(1);
        let mut out = String::from("t,follower,eps,spacing\n");
        for j in (0..self.times.len()).step_by(every) {
            for i in 0..self.followers() {
                out.push_str(&format!(
                    "{},{},{:e},{:e}\n",
                    self.times[j],
                    i + 1,
                    self.states[0][(j, i)],
                    self.spacing[(j, i)]
                ));
            }
        }
        out
    }
}

fn spacing_from_positions(eps: &DMatrix<f64>) -> DMatrix<f64> {
    let (samples, n) = eps.shape();
    DMatrix::from_fn(samples, n, |j, i| {
        let upstream = if i == 0 { 0.0 } else { eps[(j, i - 1)] };
        upstream - eps[(j, i)]
    })
}

/// `e_i = eps_{i-1} - eps_i` with `eps_0 = 0`.
pub fn spacing_errors(trace: &SimulationTrace) -> DMatrix<f64> {
    spacing_from_positions(&trace.states[0])
}

pub fn propagation_metrics(trace: &SimulationTrace) -> PropagationMetrics {
    let spacing = &trace.spacing;
    let n = spacing.ncols();
    let peaks: Vec<f64> = (0..n)
        .map(|i| spacing.column(i).iter().fold(0.0, |acc: f64, v| acc.max(v.abs())))
        .collect();
    let ratios = peaks
        .windows(2)
        .map(|w| if w[0] > 0.0 { Some(w[1] / w[0]) } else { None })
        .collect();
    let settling = (0..n)
        .map(|i| {
            let peak = peaks[i];
            if peak == 0.0 {
                return None;
            }
            let threshold = SETTLING_FRACTION * peak;
            let column = spacing.column(i);
            let last_above = column.iter().rposition(|v| v.abs() >= threshold)?;
            trace.times.get(last_above + 1).copied()
        })
        .collect();
    PropagationMetrics {
        peaks,
        ratios,
        settling,
    }
}

struct ErrorDynamics<'a> {
    n: usize,
    m: usize,
    /// `a * gamma_k`
    weights: Vec<f64>,
    diagonal: Vec<f64>,
    predecessors: Vec<Vec<usize>>,
    disturbance: &'a DisturbanceProfile,
}

impl<'a> ErrorDynamics<'a> {
    fn new(t: &Topology, cfg: &ProtocolConfig, disturbance: &'a DisturbanceProfile) -> Self {
        let n = t.n();
        ErrorDynamics {
            n,
            m: cfg.order(),
            weights: cfg.gains().iter().map(|g| g * cfg.coupling()).collect(),
            diagonal: (0..n).map(|i| t.laplacian()[(i, i)]).collect(),
            predecessors: (0..n).map(|i| t.follower_predecessors(i).collect()).collect(),
            disturbance,
        }
    }

    fn rhs(&self, time: f64, x: &[f64], dx: &mut [f64]) {
        let (n, m) = (self.n, self.m);
        dx[..(m - 1) * n].copy_from_slice(&x[n..]);
        let w = self.disturbance.forcing(time);
        let top = (m - 1) * n;
        for i in 0..n {
            let mut u = 0.0;
            for (k, weight) in self.weights.iter().enumerate() {
                let layer = &x[k * n..(k + 1) * n];
                let mut lx = self.diagonal[i] * layer[i];
                for &j in &self.predecessors[i] {
                    lx -= layer[j];
                }
                u -= weight * lx;
            }
            dx[top + i] = u + w;
        }
    }
}

/// Integrates the error system from an impulse or a forced zero state.
pub fn simulate(
    t: &Topology,
    cfg: &ProtocolConfig,
    dist: &DisturbanceProfile,
    params: &SimParams,
) -> Result<SimulationTrace> {
    let x0 = match dist {
        DisturbanceProfile::UnitImpulse => impulse_initial_state(t.n(), cfg.order()),
        _ => vec![0.0; t.n() * cfg.order()],
    };
    simulate_from_state(t, cfg, &x0, dist, params)
}

/// Integrates the error system from an explicit initial state.
pub fn simulate_from_state(
    t: &Topology,
    cfg: &ProtocolConfig,
    x0: &[f64],
    dist: &DisturbanceProfile,
    params: &SimParams,
) -> Result<SimulationTrace> {
    params.validate()?;
    dist.validate()?;
    let (n, m) = (t.n(), cfg.order());
    if x0.len() != n * m {
        return Err(Error::domain(format!(
            "initial state has length {}, expected {}",
            x0.len(),
            n * m
        )));
    }
    let check = internal_stability_check(t, cfg)?;
    if !check.overall {
        if params.allow_unstable {
            log::warn!("simulating an internally unstable configuration");
        } else {
            return Err(Error::Unstable(
                "internal stability check failed; set allow_unstable to simulate anyway".into(),
            ));
        }
    }

    let sys = ErrorDynamics::new(t, cfg, dist);
    let dim = n * m;
    let steps = params.steps();
    let samples = steps / params.record_every + 1;
    let mut recorded: Vec<f64> = Vec::with_capacity(samples * dim);
    let mut times = Vec::with_capacity(samples);

    let mut x = x0.to_vec();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; dim], vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]);
    let mut tmp = vec![0.0; dim];
    let dt = params.dt;

    for step in 0..=steps {
        let time = step as f64 * dt;
        if step % params.record_every == 0 {
            times.push(time);
            recorded.extend_from_slice(&x);
        }
        if step == steps {
            break;
        }
        sys.rhs(time, &x, &mut k1);
        for d in 0..dim {
            tmp[d] = x[d] + 0.5 * dt * k1[d];
        }
        sys.rhs(time + 0.5 * dt, &tmp, &mut k2);
        for d in 0..dim {
            tmp[d] = x[d] + 0.5 * dt * k2[d];
        }
        sys.rhs(time + 0.5 * dt, &tmp, &mut k3);
        for d in 0..dim {
            tmp[d] = x[d] + dt * k3[d];
        }
        sys.rhs(time + dt, &tmp, &mut k4);
        for d in 0..dim {
            x[d] += dt / 6.0 * (k1[d] + 2.0 * k2[d] + 2.0 * k3[d] + k4[d]);
        }
        if x.iter().any(|v| !(v.abs() <= DIVERGENCE_LIMIT)) {
            return Err(Error::Diverged { time: time + dt });
        }
    }

    let count = times.len();
    let states = (0..m)
        .map(|k| DMatrix::from_fn(count, n, |j, i| recorded[j * dim + k * n + i]))
        .collect();
    Ok(SimulationTrace::from_samples(dt, steps as f64 * dt, times, states))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{build_r_predecessor, BoundaryConvention::*};

    fn reference(m: usize) -> ProtocolConfig {
        ProtocolConfig::reference(m).unwrap()
    }

    fn params(dt: f64, horizon: f64) -> SimParams {
        SimParams {
            dt,
            horizon,
            ..SimParams::default()
        }
    }

    #[test]
    fn impulse_state_layout() {
        assert_eq!(impulse_initial_state(2, 1), vec![1.0, 1.0]);
        assert_eq!(impulse_initial_state(3, 2), vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        assert_eq!(impulse_initial_state(1, 3), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn scalar_exponential_decay() {
        let t = build_r_predecessor(1, 1, LeaderPadded).unwrap();
        let trace = simulate(&t, &reference(1), &DisturbanceProfile::UnitImpulse, &params(1e-3, 10.0)).unwrap();
        let j = trace.times.iter().position(|&s| (s - 5.0).abs() < 1e-9).unwrap();
        assert!((trace.eps(j, 1) - (-1.0f64).exp()).abs() < 1e-6);
        assert_eq!(trace.metrics.peaks, vec![1.0]);
        assert!(trace.metrics.ratios.is_empty());
    }

    #[test]
    fn first_order_chain_matches_poisson_closed_form() {
        // r = 1, m = 1: eps_i(t) = e^{-0.2t} sum_{k<i} (0.2t)^k / k!, so
        // |e_i| peaks at t = 5(i-1) with value k^k e^{-k} / k!, k = i - 1
        let t = build_r_predecessor(6, 1, LeaderPadded).unwrap();
        let trace = simulate(&t, &reference(1), &DisturbanceProfile::UnitImpulse, &params(1e-3, 40.0)).unwrap();
        let mut factorial = 1.0;
        for i in 1..=6 {
            let k = (i - 1) as f64;
            if i > 1 {
                factorial *= k;
            }
            let expected = if i == 1 { 1.0 } else { k.powf(k) * (-k).exp() / factorial };
            assert!((trace.metrics.peak(i) - expected).abs() < 1e-9, "i={i}");
        }
    }

    #[test]
    fn spacing_is_telescoping_difference() {
        let eps = DMatrix::from_row_slice(2, 3, &[2.0, 2.0, 2.0, 0.0, 0.0, 0.0]);
        let e = spacing_from_positions(&eps);
        assert_eq!(e.row(0).iter().copied().collect::<Vec<_>>(), vec![-2.0, 0.0, 0.0]);
        assert!(e.row(1).iter().all(|&v| v == 0.0));

        let eps = DMatrix::from_row_slice(1, 2, &[1.0, 3.0]);
        assert_eq!(spacing_from_positions(&eps).row(0).iter().copied().collect::<Vec<_>>(), vec![-1.0, -2.0]);
    }

    #[test]
    fn spacing_recomputation_is_idempotent() {
        let t = build_r_predecessor(4, 2, LeaderPadded).unwrap();
        let trace = simulate(&t, &reference(2), &DisturbanceProfile::UnitImpulse, &params(1e-2, 5.0)).unwrap();
        assert_eq!(spacing_errors(&trace), trace.spacing);
        assert_eq!(propagation_metrics(&trace), trace.metrics);
    }

    #[test]
    fn zero_trace_has_absent_ratios() {
        let t = build_r_predecessor(3, 1, LeaderPadded).unwrap();
        let step = DisturbanceProfile::Step { height: 0.0 };
        let trace = simulate(&t, &reference(2), &step, &params(1e-2, 1.0)).unwrap();
        assert_eq!(trace.metrics.peaks, vec![0.0; 3]);
        assert_eq!(trace.metrics.ratios, vec![None, None]);
        assert_eq!(trace.metrics.settling, vec![None; 3]);
        assert_eq!(trace.metrics.ratio(2), None);
    }

    #[test]
    fn settling_time_of_scalar_decay() {
        // |e_1| = e^{-0.2 t} drops below 0.01 at t = 5 ln 100
        let t = build_r_predecessor(1, 1, LeaderPadded).unwrap();
        let trace = simulate(&t, &reference(1), &DisturbanceProfile::UnitImpulse, &params(1e-3, 30.0)).unwrap();
        let settle = trace.metrics.settling[0].unwrap();
        assert!((settle - 5.0 * 100f64.ln()).abs() < 2e-3);
    }

    #[test]
    fn rejects_bad_parameters() {
        let t = build_r_predecessor(2, 1, LeaderPadded).unwrap();
        let c = reference(1);
        let imp = DisturbanceProfile::UnitImpulse;
        assert!(simulate(&t, &c, &imp, &params(0.0, 1.0)).is_err());
        assert!(simulate(&t, &c, &imp, &params(0.1, 0.5)).is_err());
        let bad = DisturbanceProfile::SmoothPulse {
            height: 1.0,
            t_on: 2.0,
            t_off: 1.0,
            ramp: 0.1,
        };
        assert!(simulate(&t, &c, &bad, &params(0.01, 1.0)).is_err());
        assert!(simulate_from_state(&t, &c, &[1.0], &imp, &params(0.01, 1.0)).is_err());
    }

    #[test]
    fn unstable_configuration_needs_opt_in() {
        let t = build_r_predecessor(3, 1, LeaderPadded).unwrap();
        let c = ProtocolConfig::new(vec![1.0, 0.1, 0.1], 1.0).unwrap();
        let imp = DisturbanceProfile::UnitImpulse;
        assert!(matches!(simulate(&t, &c, &imp, &params(1e-2, 1.0)), Err(Error::Unstable(_))));
        let opt_in = SimParams {
            allow_unstable: true,
            ..params(1e-2, 1.0)
        };
        assert!(simulate(&t, &c, &imp, &opt_in).is_ok());
        let long = SimParams {
            allow_unstable: true,
            ..params(1e-2, 2000.0)
        };
        assert!(matches!(simulate(&t, &c, &imp, &long), Err(Error::Diverged { .. })));
    }

    #[test]
    fn smooth_pulse_shape() {
        let p = DisturbanceProfile::SmoothPulse {
            height: 2.0,
            t_on: 1.0,
            t_off: 3.0,
            ramp: 0.5,
        };
        assert_eq!(p.forcing(0.5), 0.0);
        assert_eq!(p.forcing(1.25), 1.0);
        assert_eq!(p.forcing(2.0), 2.0);
        assert_eq!(p.forcing(3.25), 1.0);
        assert_eq!(p.forcing(4.0), 0.0);
    }

    #[test]
    fn step_response_settles_to_static_error() {
        // static gain of T_1 at s = 0 is G(0) = 1 / (a r gamma_0)
        let t = build_r_predecessor(1, 2, LeaderPadded).unwrap();
        let trace = simulate(&t, &reference(2), &DisturbanceProfile::Step { height: 1.0 }, &params(1e-2, 200.0)).unwrap();
        let last = trace.times.len() - 1;
        assert!((trace.eps(last, 1) - 2.5).abs() < 1e-6);
    }

    #[test]
    fn record_stride() {
        let t = build_r_predecessor(2, 1, LeaderPadded).unwrap();
        let p = SimParams {
            record_every: 10,
            ..params(1e-2, 1.0)
        };
        let trace = simulate(&t, &reference(1), &DisturbanceProfile::UnitImpulse, &p).unwrap();
        assert_eq!(trace.times.len(), 11);
        assert!((trace.times[10] - 1.0).abs() < 1e-12);
        assert_eq!(trace.states[0].nrows(), 11);
        let csv = trace.to_csv(5);
        assert_eq!(csv.lines().count(), 1 + 3 * 2);
        assert!(csv.starts_with("t,follower,eps,spacing\n0,1,1e0,-1e0\n0,2,1e0,0e0\n"));
    }

    #[test]
    fn deterministic_bitwise() {
        let t = build_r_predecessor(5, 2, Truncated).unwrap();
        let a = simulate(&t, &reference(3), &DisturbanceProfile::UnitImpulse, &params(1e-2, 20.0)).unwrap();
        let b = simulate(&t, &reference(3), &DisturbanceProfile::UnitImpulse, &params(1e-2, 20.0)).unwrap();
        assert_eq!(a, b);
    }
}
