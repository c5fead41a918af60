//! Stochastic switching mesh, mesh-dependent diffusion schedule and the
//! frozen-coefficient Euler path driven over it.
//!
//! The Euler recursion is the exact law of the frozen-coefficient SDE, so a
//! path is just one Gaussian draw per leg. Each leg `k` covers the half-open
//! interval `(T_{k-1}, T_k]` and carries the diffusion coefficient
//! `σ0 · ∏_{i<k} ΔT_i^n`, kept in log form so long meshes with tiny
//! increments cannot overflow silently.

use crate::distributions::{gaussian_increment, sample_lifetime, LifetimeParams, RngStream};
use crate::error::{Error, Result};

/// Switching times `t = T_0 < T_1 < … < T_{N+1} = T` of one realisation.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeMesh {
    times: Vec<f64>,
    increments: Vec<f64>,
}

impl TimeMesh {
    /// Builds a mesh from explicit lifetimes, accumulating until the horizon is
    /// reached. Lifetimes past the one that reaches `t_end` are ignored.
    pub fn from_lifetimes<I>(t_start: f64, t_end: f64, lifetimes: I) -> Result<Self>
    where
        I: IntoIterator<Item = f64>,
    {
        check_horizon(t_start, t_end)?;
        let mut mesh = Self::empty();
        let mut draws = lifetimes.into_iter();
        mesh.fill(t_start, t_end, || {
            draws
                .next()
                .ok_or_else(|| Error::domain("lifetime sequence ended before reaching the horizon"))
        })?;
        Ok(mesh)
    }

    pub(crate) fn empty() -> Self {
        Self {
            times: Vec::with_capacity(8),
            increments: Vec::with_capacity(8),
        }
    }

    /// Resamples the mesh in place, reusing its buffers.
    pub(crate) fn resample(
        &mut self,
        t_start: f64,
        t_end: f64,
        params: &LifetimeParams,
        rng: &mut RngStream,
    ) {
        let _ = self.fill(t_start, t_end, || {
            Ok::<_, Error>(sample_lifetime(params, rng))
        });
    }

    fn fill<F>(&mut self, t_start: f64, t_end: f64, mut next: F) -> Result<()>
    where
        F: FnMut() -> Result<f64>,
    {
        self.times.clear();
        self.increments.clear();
        self.times.push(t_start);
        let mut now = t_start;
        loop {
            let tau = next()?;
            if !(tau > 0.0) {
                return Err(Error::domain(format!(
                    "lifetimes must be positive, got {tau}"
                )));
            }
            // The increment is stored as drawn; the time is its running sum.
            if tau >= t_end - now || now + tau >= t_end {
                self.increments.push(t_end - now);
                self.times.push(t_end);
                return Ok(());
            }
            now += tau;
            self.increments.push(tau);
            self.times.push(now);
        }
    }

    pub fn t_start(&self) -> f64 {
        self.times[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().expect("mesh has at least two points")
    }

    /// `T_0 … T_{N+1}`.
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// `ΔT_1 … ΔT_{N+1}`; entry `k-1` is the length of leg `k`.
    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// Number of switches `N` strictly inside the horizon.
    pub fn n_switches(&self) -> usize {
        self.increments.len() - 1
    }

    pub fn n_legs(&self) -> usize {
        self.increments.len()
    }
}

fn check_horizon(t_start: f64, t_end: f64) -> Result<()> {
    if !(t_start.is_finite() && t_end.is_finite() && t_start < t_end) {
        return Err(Error::domain(format!(
            "mesh requires t < T, got t = {t_start}, T = {t_end}"
        )));
    }
    Ok(())
}

/// Samples a fresh mesh on `[t, T]`.
pub fn build_mesh(
    t_start: f64,
    t_end: f64,
    params: &LifetimeParams,
    rng: &mut RngStream,
) -> Result<TimeMesh> {
    check_horizon(t_start, t_end)?;
    let mut mesh = TimeMesh::empty();
    mesh.resample(t_start, t_end, params, rng);
    Ok(mesh)
}

/// Mesh-dependent diffusion schedule `σ(θ_{k-1}) = σ0 · ∏_{i<k} ΔT_i^n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaSchedule {
    sigma0: f64,
    exponent: f64,
}

impl SigmaSchedule {
    /// Validated constructor; `n > -1` needs `unsafe_variance`.
    pub fn new(sigma0: f64, exponent: f64, unsafe_variance: bool) -> Result<Self> {
        if !(sigma0.is_finite() && sigma0 > 0.0) {
            return Err(Error::config(format!("sigma0 must be > 0, got {sigma0}")));
        }
        if !exponent.is_finite() {
            return Err(Error::config(format!(
                "sigma exponent n must be finite, got {exponent}"
            )));
        }
        if exponent > -1.0 && !unsafe_variance {
            return Err(Error::config(format!(
                "sigma exponent n = {exponent} violates the finite-variance assumption (n <= -1); \
                 set unsafe_variance = true to override"
            )));
        }
        Ok(Self { sigma0, exponent })
    }

    pub fn sigma0(&self) -> f64 {
        self.sigma0
    }

    pub fn exponent(&self) -> f64 {
        self.exponent
    }

    /// `ln σ` of the leg following an increment of length `dt` on a leg with `ln σ = log_prev`.
    #[inline]
    pub(crate) fn next_log_sigma(&self, log_prev: f64, dt: f64) -> f64 {
        log_prev + self.exponent * dt.ln()
    }

    /// `ln σ` for every leg of `mesh`.
    pub fn log_sigma_legs(&self, mesh: &TimeMesh) -> Vec<f64> {
        let mut out = Vec::with_capacity(mesh.n_legs());
        self.fill_log_sigma(mesh, &mut out);
        out
    }

    pub(crate) fn fill_log_sigma(&self, mesh: &TimeMesh, out: &mut Vec<f64>) {
        out.clear();
        let mut log_sigma = self.sigma0.ln();
        out.push(log_sigma);
        // The final increment never enters a σ.
        let dts = mesh.increments();
        for &dt in &dts[..dts.len() - 1] {
            log_sigma = self.next_log_sigma(log_sigma, dt);
            out.push(log_sigma);
        }
    }
}

/// σ of leg `leg` (1-based, `1..=N+1`).
pub fn sigma_at(schedule: &SigmaSchedule, mesh: &TimeMesh, leg: usize) -> Result<f64> {
    if leg == 0 || leg > mesh.n_legs() {
        return Err(Error::domain(format!(
            "leg index {leg} outside 1..={}",
            mesh.n_legs()
        )));
    }
    let log_sigma = schedule.sigma0.ln()
        + schedule.exponent
            * mesh.increments()[..leg - 1]
                .iter()
                .map(|dt| dt.ln())
                .sum::<f64>();
    let sigma = log_sigma.exp();
    if sigma.is_finite() {
        Ok(sigma)
    } else {
        Err(Error::Overflow("sigma schedule"))
    }
}

/// One realisation of the frozen-coefficient Euler path on a mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSample {
    pub mesh: TimeMesh,
    /// `X̄_{T_0} … X̄_{T_{N+1}}`.
    pub x_values: Vec<f64>,
    /// `ΔW_1 … ΔW_{N+1}`.
    pub dw: Vec<f64>,
    /// `ln σ` per leg.
    pub log_sigma_legs: Vec<f64>,
    /// Antithetic terminal value: the last leg driven by `-ΔW_{N+1}`.
    pub x_hat_terminal: f64,
    /// Control-variate point `X̄_{T_N} + b(T_N) ΔT_{N+1}`.
    pub cv_point: f64,
}

impl PathSample {
    pub(crate) fn empty() -> Self {
        Self {
            mesh: TimeMesh::empty(),
            x_values: Vec::with_capacity(8),
            dw: Vec::with_capacity(8),
            log_sigma_legs: Vec::with_capacity(8),
            x_hat_terminal: 0.0,
            cv_point: 0.0,
        }
    }

    pub fn n_switches(&self) -> usize {
        self.mesh.n_switches()
    }

    pub fn x_terminal(&self) -> f64 {
        *self.x_values.last().expect("path has a terminal value")
    }

    /// σ per leg; entries overflow to `+∞` rather than failing.
    pub fn sigma_legs(&self) -> Vec<f64> {
        self.log_sigma_legs.iter().map(|l| l.exp()).collect()
    }

    /// The same path with the final Brownian increment negated.
    pub fn with_final_increment_flipped(&self) -> Self {
        let mut out = self.clone();
        let last = out.dw.len() - 1;
        out.dw[last] = -out.dw[last];
        let terminal = out.x_values.len() - 1;
        std::mem::swap(&mut out.x_values[terminal], &mut out.x_hat_terminal);
        out
    }
}

/// Simulates the Euler path on `mesh` starting from `x0`.
pub fn evolve_path<B>(
    mesh: &TimeMesh,
    drift: B,
    schedule: &SigmaSchedule,
    x0: f64,
    rng: &mut RngStream,
) -> Result<PathSample>
where
    B: Fn(f64, f64) -> f64,
{
    let dw: Vec<f64> = mesh
        .increments()
        .iter()
        .map(|&dt| gaussian_increment(rng, dt))
        .collect();
    evolve_path_with_increments(mesh, drift, schedule, x0, &dw)
}

/// Euler path on `mesh` driven by prescribed Brownian increments.
pub fn evolve_path_with_increments<B>(
    mesh: &TimeMesh,
    drift: B,
    schedule: &SigmaSchedule,
    x0: f64,
    dw: &[f64],
) -> Result<PathSample>
where
    B: Fn(f64, f64) -> f64,
{
    if dw.len() != mesh.n_legs() {
        return Err(Error::domain(format!(
            "expected {} Brownian increments, got {}",
            mesh.n_legs(),
            dw.len()
        )));
    }
    let mut path = PathSample::empty();
    path.mesh = mesh.clone();
    path.dw.extend_from_slice(dw);
    fill_path(&mut path, &drift, schedule, x0)?;
    Ok(path)
}

/// Recomputes positions, σ legs and the antithetic/control-variate points
/// from the mesh and `path.dw`.
pub(crate) fn fill_path<B>(
    path: &mut PathSample,
    drift: &B,
    schedule: &SigmaSchedule,
    x0: f64,
) -> Result<()>
where
    B: Fn(f64, f64) -> f64,
{
    schedule.fill_log_sigma(&path.mesh, &mut path.log_sigma_legs);
    path.x_values.clear();
    path.x_values.push(x0);
    let times = path.mesh.times();
    let n_legs = path.mesh.n_legs();
    let mut x = x0;
    for (k, &t) in times.iter().enumerate().take(n_legs) {
        let b = drift(t, x);
        if !b.is_finite() {
            return Err(Error::Problem(format!(
                "drift is not finite at (t, x) = ({t}, {x})"
            )));
        }
        let dt = path.mesh.increments()[k];
        let sigma = path.log_sigma_legs[k].exp();
        if !sigma.is_finite() {
            return Err(Error::Overflow("sigma schedule"));
        }
        let deterministic = x + b * dt;
        let shock = sigma * path.dw[k];
        if k + 1 == n_legs {
            path.cv_point = deterministic;
            path.x_hat_terminal = deterministic - shock;
        }
        x = deterministic + shock;
        path.x_values.push(x);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mesh_from_explicit_lifetimes() {
        let mesh = TimeMesh::from_lifetimes(0.0, 1.0, [0.4, 0.3, 0.9]).unwrap();
        assert_eq!(mesh.n_switches(), 2);
        let expected_times = [0.0, 0.4, 0.7, 1.0];
        let expected_dt = [0.4, 0.3, 0.3];
        for (a, b) in mesh.times().iter().zip(expected_times) {
            assert!((a - b).abs() < 1e-15);
        }
        for (a, b) in mesh.increments().iter().zip(expected_dt) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn long_first_lifetime_gives_single_leg() {
        let mesh = TimeMesh::from_lifetimes(0.25, 1.0, [0.75]).unwrap();
        assert_eq!(mesh.n_switches(), 0);
        assert_eq!(mesh.times(), &[0.25, 1.0]);
        let mesh = TimeMesh::from_lifetimes(0.0, 1.0, [3.0, 0.1]).unwrap();
        assert_eq!(mesh.n_switches(), 0);
    }

    #[test]
    fn mesh_rejects_empty_horizon() {
        let p = LifetimeParams::reference();
        let mut rng = RngStream::new(0, 0);
        assert!(build_mesh(1.0, 1.0, &p, &mut rng).is_err());
        assert!(build_mesh(1.0, 0.5, &p, &mut rng).is_err());
        assert!(TimeMesh::from_lifetimes(0.0, 1.0, [0.1, 0.2]).is_err());
    }

    #[test]
    fn sampled_mesh_invariants() {
        let p = LifetimeParams::reference();
        for i in 0..10_000 {
            let mut rng = RngStream::new(3, i);
            let mesh = build_mesh(0.0, 1.0, &p, &mut rng).unwrap();
            let total: f64 = mesh.increments().iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
            assert!(mesh.increments().iter().all(|&d| d > 0.0));
            assert_eq!(mesh.times()[0], 0.0);
            assert_eq!(mesh.t_end(), 1.0);
            assert!(mesh.times().windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn sigma_schedule_values() {
        let s = SigmaSchedule::new(1.0, -1.0, false).unwrap();
        let mesh = TimeMesh::from_lifetimes(0.0, 1.0, [0.5, 0.1, 2.0]).unwrap();
        assert!((sigma_at(&s, &mesh, 1).unwrap() - 1.0).abs() < 1e-15);
        assert!((sigma_at(&s, &mesh, 2).unwrap() - 2.0).abs() < 1e-14);
        assert!((sigma_at(&s, &mesh, 3).unwrap() - 20.0).abs() < 1e-12);
        assert!(sigma_at(&s, &mesh, 0).is_err());
        assert!(sigma_at(&s, &mesh, 4).is_err());
        let legs = s.log_sigma_legs(&mesh);
        assert_eq!(legs.len(), 3);
        assert!((legs[2].exp() - 20.0).abs() < 1e-12);
    }

    #[test]
    fn sigma_overflow_is_reported() {
        let s = SigmaSchedule::new(1.0, -1.0, false).unwrap();
        let mesh = TimeMesh::from_lifetimes(0.0, 1.0, [1e-200, 1e-200, 5.0]).unwrap();
        assert!(matches!(sigma_at(&s, &mesh, 3), Err(Error::Overflow(_))));
    }

    #[test]
    fn sigma_schedule_validation() {
        assert!(SigmaSchedule::new(1.0, -0.5, false).is_err());
        assert!(SigmaSchedule::new(1.0, -0.5, true).is_ok());
        assert!(SigmaSchedule::new(0.0, -1.0, false).is_err());
        assert!(SigmaSchedule::new(1.0, -2.0, false).is_ok());
    }

    #[test]
    fn one_step_path_arithmetic() {
        let mesh = TimeMesh::from_lifetimes(0.0, 1.0, [5.0]).unwrap();
        let s = SigmaSchedule::new(0.1, -1.0, false).unwrap();
        let path = evolve_path_with_increments(&mesh, |_, _| 1.0, &s, 10.0, &[0.2]).unwrap();
        assert!((path.x_terminal() - 11.02).abs() < 1e-12);
        assert!((path.x_hat_terminal - 10.98).abs() < 1e-12);
        assert!((path.cv_point - 11.0).abs() < 1e-12);
    }

    #[test]
    fn two_leg_trace_with_time_drift() {
        // Hand trace: X(0.4) = 0 + 0·0.4 + 1·0.1, σ_2 = 0.4⁻¹, X(1) = 0.1 + 0.4·0.6 + 2.5·(-0.2).
        let mesh = TimeMesh::from_lifetimes(0.0, 1.0, [0.4, 0.9]).unwrap();
        let s = SigmaSchedule::new(1.0, -1.0, false).unwrap();
        let path = evolve_path_with_increments(&mesh, |t, _| t, &s, 0.0, &[0.1, -0.2]).unwrap();
        assert!((path.x_values[1] - 0.1).abs() < 1e-15);
        assert!((path.sigma_legs()[1] - 2.5).abs() < 1e-14);
        assert!((path.x_terminal() - (-0.16)).abs() < 1e-14);
        assert!((path.cv_point - 0.34).abs() < 1e-14);
        assert!((path.x_hat_terminal - 0.84).abs() < 1e-14);
    }

    #[test]
    fn flipping_final_increment_swaps_terminals() {
        let mesh = TimeMesh::from_lifetimes(0.0, 1.0, [0.4, 0.9]).unwrap();
        let s = SigmaSchedule::new(1.0, -1.0, false).unwrap();
        let path = evolve_path_with_increments(&mesh, |t, _| t, &s, 0.0, &[0.1, -0.2]).unwrap();
        let flipped = path.with_final_increment_flipped();
        let direct = evolve_path_with_increments(&mesh, |t, _| t, &s, 0.0, &[0.1, 0.2]).unwrap();
        assert_eq!(flipped.dw, direct.dw);
        assert!((flipped.x_terminal() - direct.x_terminal()).abs() < 1e-15);
        assert!((flipped.x_hat_terminal - direct.x_hat_terminal).abs() < 1e-15);
    }

    #[test]
    fn non_finite_drift_is_a_problem_error() {
        let mesh = TimeMesh::from_lifetimes(0.0, 1.0, [5.0]).unwrap();
        let s = SigmaSchedule::new(1.0, -1.0, false).unwrap();
        let res = evolve_path_with_increments(&mesh, |_, _| f64::NAN, &s, 0.0, &[0.0]);
        assert!(matches!(res, Err(Error::Problem(_))));
    }

    #[test]
    fn replayed_stream_reproduces_path() {
        let p = LifetimeParams::reference();
        let s = SigmaSchedule::new(1.0, -1.0, false).unwrap();
        let run = || {
            let mut rng = RngStream::new(9, 42);
            let mesh = build_mesh(0.0, 1.0, &p, &mut rng).unwrap();
            evolve_path(&mesh, |_, _| 1.0, &s, 0.0, &mut rng).unwrap()
        };
        assert_eq!(run(), run());
    }
}
