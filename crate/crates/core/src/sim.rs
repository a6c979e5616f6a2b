//! Closed-loop simulation and trajectory monitors.

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lure::{decay_envelope, LureSystem, StabilityCertificate, VerifyError};
use crate::nn::SectorBound;

/// Environment variable capping worker threads for batch runs.
pub const THREADS_ENV: &str = "LURE_VERIFY_THREADS";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("initial state must be nonnegative, entry {index} is {value}")]
    NegativeInitialState { index: usize, value: f64 },
    #[error("initial state has length {got}, plant has {expected} states")]
    StateLength { expected: usize, got: usize },
    #[error("state norm exceeded {guard:e} at t = {time}")]
    Diverged {
        time: f64,
        guard: f64,
        partial: Box<Trajectory>,
    },
    #[error("cannot estimate decay rate: {0}")]
    Estimation(&'static str),
    #[error(transparent)]
    Verify(#[from] VerifyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Integrator step in seconds.
    pub step: f64,
    pub horizon: f64,
    pub positivity_tol: f64,
    pub seed: u64,
    /// Initial conditions are drawn uniformly from `[0, ic_max]ⁿ`.
    pub ic_max: f64,
    pub overflow_guard: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            step: 1e-3,
            horizon: 10.0,
            positivity_tol: 1e-8,
            seed: 0,
            ic_max: 5.0,
            overflow_guard: 1e12,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::InvalidConfig(msg));
        if !(self.step > 0.0 && self.step.is_finite()) {
            return bad(format!("step must be positive, got {}", self.step));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad(format!("horizon must be positive, got {}", self.horizon));
        }
        if self.step >= self.horizon {
            return bad(format!(
                "step {} must be smaller than horizon {}",
                self.step, self.horizon
            ));
        }
        if !(self.positivity_tol >= 0.0) {
            return bad(format!("positivity_tol must be >= 0, got {}", self.positivity_tol));
        }
        if !(self.ic_max >= 0.0 && self.ic_max.is_finite()) {
            return bad(format!("ic_max must be >= 0, got {}", self.ic_max));
        }
        if !(self.overflow_guard > 0.0) {
            return bad(format!("overflow_guard must be positive, got {}", self.overflow_guard));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        ((self.horizon / self.step).round() as usize).max(1)
    }
}

/// Sampled closed-loop solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
    pub outputs: Vec<Vec<f64>>,
}

pub fn norm1(x: &[f64]) -> f64 {
    x.iter().map(|v| v.abs()).sum()
}

impl Trajectory {
    fn with_capacity(cap: usize) -> Self {
        Self {
            times: Vec::with_capacity(cap),
            states: Vec::with_capacity(cap),
            inputs: Vec::with_capacity(cap),
            outputs: Vec::with_capacity(cap),
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn initial_state(&self) -> &[f64] {
        &self.states[0]
    }

    pub fn final_state(&self) -> &[f64] {
        &self.states[self.states.len() - 1]
    }

    /// Smallest state component over the whole run.
    pub fn min_state(&self) -> f64 {
        self.states
            .iter()
            .flatten()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// Samples whose state has a component below `-tol`.
    pub fn positivity_violations(&self, tol: f64) -> usize {
        self.states
            .iter()
            .filter(|x| x.iter().any(|&v| v < -tol))
            .count()
    }

    /// Samples where `‖x(t)‖₁` exceeds the certified envelope by more than
    /// the relative tolerance.
    pub fn envelope_violations(
        &self,
        cert: &StabilityCertificate,
        rel_tol: f64,
    ) -> Result<usize, VerifyError> {
        let x0 = norm1(self.initial_state());
        let mut count = 0;
        for (t, x) in self.times.iter().zip(&self.states) {
            if norm1(x) > decay_envelope(cert, x0, *t)? * (1.0 + rel_tol) {
                count += 1;
            }
        }
        Ok(count)
    }

    /// CSV with header `t,x1..xn,u1..um,y1..yp` and 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let n = self.states.first().map_or(0, Vec::len);
        let m = self.inputs.first().map_or(0, Vec::len);
        let p = self.outputs.first().map_or(0, Vec::len);
        let mut header = vec!["t".to_owned()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.extend((1..=m).map(|i| format!("u{i}")));
        header.extend((1..=p).map(|i| format!("y{i}")));
        writeln!(w, "{}", header.join(","))?;
        for k in 0..self.len() {
            let row: Vec<String> = std::iter::once(&self.times[k])
                .chain(&self.states[k])
                .chain(&self.inputs[k])
                .chain(&self.outputs[k])
                .map(|v| format!("{v:.16e}"))
                .collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

fn record(
    traj: &mut Trajectory,
    sys: &LureSystem,
    t: f64,
    x: &[f64],
) -> Result<(), VerifyError> {
    let y = sys.plant().c().mul_vec(x)?;
    let u = sys.controller().forward(&y)?;
    traj.times.push(t);
    traj.states.push(x.to_vec());
    traj.inputs.push(u);
    traj.outputs.push(y);
    Ok(())
}

fn axpy(x: &[f64], h: f64, k: &[f64]) -> Vec<f64> {
    x.iter().zip(k).map(|(a, b)| a + h * b).collect()
}

/// Fixed-step classical Runge–Kutta integration of `ẋ = Ax + Bπ(Cx)`.
pub fn integrate(sys: &LureSystem, x0: &[f64], cfg: &SimConfig) -> Result<Trajectory, SimError> {
    cfg.validate()?;
    let n = sys.plant().state_dim();
    if x0.len() != n {
        return Err(SimError::StateLength {
            expected: n,
            got: x0.len(),
        });
    }
    if let Some((index, &value)) = x0.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
        return Err(SimError::NegativeInitialState { index, value });
    }
    let steps = cfg.steps();
    let h = cfg.step;
    let mut traj = Trajectory::with_capacity(steps + 1);
    let mut x = x0.to_vec();
    record(&mut traj, sys, 0.0, &x)?;
    for k in 1..=steps {
        let k1 = sys.vector_field(&x)?;
        let k2 = sys.vector_field(&axpy(&x, 0.5 * h, &k1))?;
        let k3 = sys.vector_field(&axpy(&x, 0.5 * h, &k2))?;
        let k4 = sys.vector_field(&axpy(&x, h, &k3))?;
        for i in 0..n {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        let t = k as f64 * h;
        let size = norm1(&x);
        if !size.is_finite() || size > cfg.overflow_guard {
            return Err(SimError::Diverged {
                time: t,
                guard: cfg.overflow_guard,
                partial: Box::new(traj),
            });
        }
        record(&mut traj, sys, t, &x)?;
    }
    Ok(traj)
}

/// `count` initial conditions drawn uniformly from `[0, ic_max]ⁿ`.
pub fn sample_initial_conditions(n: usize, count: usize, seed: u64, ic_max: f64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| (0..n).map(|_| rng.gen::<f64>() * ic_max).collect())
        .collect()
}

/// Worker count from [`THREADS_ENV`], if set to a positive integer.
pub fn configured_threads() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

/// Runs `f` on a pool sized by [`THREADS_ENV`], or on the global pool.
pub fn with_worker_pool<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    match configured_threads()
        .and_then(|n| rayon::ThreadPoolBuilder::new().num_threads(n).build().ok())
    {
        Some(pool) => pool.install(f),
        None => f(),
    }
}

/// Integrates from each given initial condition. Results keep input order.
pub fn simulate_from(
    sys: &LureSystem,
    initial: &[Vec<f64>],
    cfg: &SimConfig,
) -> Vec<Result<Trajectory, SimError>> {
    with_worker_pool(|| {
        initial
            .par_iter()
            .map(|x0| integrate(sys, x0, cfg))
            .collect()
    })
}

/// `count` runs from seeded random initial conditions. A diverging run is
/// reported in its slot without stopping the others.
pub fn batch_simulate(
    sys: &LureSystem,
    count: usize,
    cfg: &SimConfig,
) -> Result<Vec<Result<Trajectory, SimError>>, SimError> {
    cfg.validate()?;
    if count == 0 {
        return Err(SimError::InvalidConfig("count must be >= 1".into()));
    }
    let ics = sample_initial_conditions(sys.plant().state_dim(), count, cfg.seed, cfg.ic_max);
    Ok(simulate_from(sys, &ics, cfg))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectorReport {
    pub samples_checked: usize,
    pub violations: usize,
    /// Samples with a negative output component; the sector says nothing there.
    pub skipped_negative: usize,
    /// Smallest signed slack seen, negative when violated. Zero if nothing was checked.
    pub worst_margin: f64,
}

/// Checks `Σ₁y ≤ u ≤ Σ₂y` at every sample with `y ≥ 0`.
pub fn monitor_sector(traj: &Trajectory, bound: &SectorBound, tol: f64) -> SectorReport {
    let mut report = SectorReport {
        samples_checked: 0,
        violations: 0,
        skipped_negative: 0,
        worst_margin: f64::INFINITY,
    };
    for (y, u) in traj.outputs.iter().zip(&traj.inputs) {
        match bound.margin(y, u) {
            Ok(margin) => {
                report.samples_checked += 1;
                if margin < -tol {
                    report.violations += 1;
                }
                report.worst_margin = report.worst_margin.min(margin);
            }
            Err(_) => report.skipped_negative += 1,
        }
    }
    if report.samples_checked == 0 {
        report.worst_margin = 0.0;
    }
    report
}

/// Least-squares decay rate of `ln‖x(t)‖₁`, using samples with
/// `‖x(t)‖₁ ∈ [1e-6, ‖x(0)‖₁]`. Positive means decaying.
pub fn estimate_decay_rate(traj: &Trajectory) -> Result<f64, SimError> {
    if traj.is_empty() {
        return Err(SimError::Estimation("empty trajectory"));
    }
    let n0 = norm1(traj.initial_state());
    if !(n0 > 0.0) {
        return Err(SimError::Estimation("initial state is zero"));
    }
    if norm1(traj.final_state()) >= n0 {
        return Err(SimError::Estimation("trajectory does not converge"));
    }
    let pts: Vec<(f64, f64)> = traj
        .times
        .iter()
        .zip(&traj.states)
        .map(|(t, x)| (*t, norm1(x)))
        .filter(|(_, n)| *n >= 1e-6 && *n <= n0)
        .map(|(t, n)| (t, n.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(SimError::Estimation("fewer than two samples in the fit window"));
    }
    let k = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let ml = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|(t, l)| (t - mt) * (l - ml)).sum();
    let sxx: f64 = pts.iter().map(|(t, _)| (t - mt) * (t - mt)).sum();
    if sxx == 0.0 {
        return Err(SimError::Estimation("degenerate time window"));
    }
    Ok(-sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{DenseMatrix, LinalgConfig};
    use crate::lure::{verify_stability, LtiSystem};
    use crate::nn::{FeedforwardNet, ScalarActivation};

    fn m(rows: &[&[f64]]) -> DenseMatrix {
        DenseMatrix::from_rows(rows).unwrap()
    }

    fn decay_loop() -> LureSystem {
        let plant = LtiSystem::new(m(&[&[-1.0]]), m(&[&[0.0]]), m(&[&[1.0]])).unwrap();
        let net = FeedforwardNet::new(vec![m(&[&[3.0]]), m(&[&[-2.0]])], ScalarActivation::tanh())
            .unwrap();
        LureSystem::new(plant, net).unwrap()
    }

    fn paper_loop() -> LureSystem {
        let plant = LtiSystem::new(
            m(&[&[-5.0, 1.0], &[3.0, -5.0]]),
            m(&[&[0.5], &[1.0]]),
            DenseMatrix::identity(2),
        )
        .unwrap();
        let net = FeedforwardNet::new(
            vec![m(&[&[0.5, 0.3], &[0.2, 0.6]]), m(&[&[1.0, -0.8]])],
            ScalarActivation::tanh(),
        )
        .unwrap();
        LureSystem::new(plant, net).unwrap()
    }

    #[test]
    fn zero_state_stays_zero() {
        let traj = integrate(&paper_loop(), &[0.0, 0.0], &SimConfig::default()).unwrap();
        assert!(traj.states.iter().flatten().all(|&v| v == 0.0));
        assert_eq!(traj.len(), 10_001);
        assert_eq!(traj.times[0], 0.0);
    }

    #[test]
    fn scalar_exponential_matches_closed_form() {
        let traj = integrate(&decay_loop(), &[2.0], &SimConfig::default()).unwrap();
        let err = traj
            .times
            .iter()
            .zip(&traj.states)
            .map(|(t, x)| (x[0] - 2.0 * (-t).exp()).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-8, "max error {err}");
        let rate = estimate_decay_rate(&traj).unwrap();
        assert!((rate - 1.0).abs() < 1e-3, "{rate}");
    }

    #[test]
    fn certified_loop_stays_under_envelope() {
        let sys = paper_loop();
        let cert = verify_stability(&sys, &LinalgConfig::default()).unwrap();
        assert!(cert.is_certified());
        let traj = integrate(&sys, &[1.0, 1.0], &SimConfig::default()).unwrap();
        assert_eq!(traj.positivity_violations(1e-8), 0);
        assert_eq!(traj.envelope_violations(&cert, 1e-6).unwrap(), 0);
        let rate = estimate_decay_rate(&traj).unwrap();
        assert!(rate >= cert.decay.unwrap().epsilon - 1e-3);
    }

    #[test]
    fn batch_is_deterministic_and_converges() {
        let sys = paper_loop();
        let cfg = SimConfig {
            seed: 7,
            ..SimConfig::default()
        };
        let a = batch_simulate(&sys, 5, &cfg).unwrap();
        let b = batch_simulate(&sys, 5, &cfg).unwrap();
        assert_eq!(a, b);
        for run in &a {
            let traj = run.as_ref().unwrap();
            assert!(norm1(traj.final_state()) < 1e-3);
            let rep = monitor_sector(traj, sys.bound(), 1e-9);
            assert_eq!(rep.violations, 0);
        }
        assert!(batch_simulate(&sys, 0, &cfg).is_err());
    }

    #[test]
    fn divergence_is_reported_per_run() {
        let plant = LtiSystem::new(m(&[&[2.0]]), m(&[&[1.0]]), m(&[&[1.0]])).unwrap();
        let net = FeedforwardNet::new(vec![m(&[&[1.0]]), m(&[&[1.0]])], ScalarActivation::relu())
            .unwrap();
        let sys = LureSystem::new(plant, net).unwrap();
        let runs = batch_simulate(&sys, 3, &SimConfig::default()).unwrap();
        let diverged = runs
            .iter()
            .filter(|r| matches!(r, Err(SimError::Diverged { .. })))
            .count();
        assert!(diverged >= 1);
        if let Err(SimError::Diverged { partial, time, .. }) = &runs[0] {
            assert!(!partial.is_empty() && *time > 0.0);
        }
    }

    #[test]
    fn monitor_flags_constructed_violation() {
        let bound = SectorBound::symmetric(m(&[&[1.0]]));
        let traj = Trajectory {
            times: vec![0.0, 1.0, 2.0],
            states: vec![vec![1.0]; 3],
            inputs: vec![vec![0.5], vec![3.0], vec![0.0]],
            outputs: vec![vec![1.0], vec![1.0], vec![-1.0]],
        };
        let rep = monitor_sector(&traj, &bound, 1e-9);
        assert_eq!(rep.samples_checked, 2);
        assert_eq!(rep.violations, 1);
        assert_eq!(rep.skipped_negative, 1);
        assert_eq!(rep.worst_margin, -2.0);

        let zero = Trajectory {
            times: vec![0.0],
            states: vec![vec![0.0]],
            inputs: vec![vec![0.0]],
            outputs: vec![vec![0.0]],
        };
        let rep = monitor_sector(&zero, &bound, 0.0);
        assert_eq!((rep.violations, rep.worst_margin), (0, 0.0));
    }

    #[test]
    fn decay_estimate_needs_motion() {
        let traj = integrate(&paper_loop(), &[0.0, 0.0], &SimConfig::default()).unwrap();
        assert!(matches!(estimate_decay_rate(&traj), Err(SimError::Estimation(_))));
    }

    #[test]
    fn config_and_input_validation() {
        let sys = paper_loop();
        let bad = SimConfig {
            step: 2.0,
            horizon: 1.0,
            ..SimConfig::default()
        };
        assert!(matches!(integrate(&sys, &[1.0, 1.0], &bad), Err(SimError::InvalidConfig(_))));
        assert!(matches!(
            integrate(&sys, &[1.0, -1.0], &SimConfig::default()),
            Err(SimError::NegativeInitialState { index: 1, .. })
        ));
        assert!(matches!(
            integrate(&sys, &[1.0], &SimConfig::default()),
            Err(SimError::StateLength { .. })
        ));
    }

    #[test]
    fn csv_layout() {
        let traj = Trajectory {
            times: vec![0.0, 0.5],
            states: vec![vec![1.0, 2.0], vec![0.1, 0.2]],
            inputs: vec![vec![0.3], vec![1.0 / 3.0]],
            outputs: vec![vec![1.0, 2.0], vec![0.1, 0.2]],
        };
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,x1,x2,u1,y1,y2");
        assert_eq!(lines.len(), 3);
        let third: f64 = lines[2].split(',').nth(3).unwrap().parse().unwrap();
        assert_eq!(third, 1.0 / 3.0);
    }
}
