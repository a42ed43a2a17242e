//! Over-parameterized linear objective `h(θ,u,v) = ½‖Jθ + u⊙u − v⊙v − y‖²`
//! and its solvers: discrete gradient descent with learning rates `τ` (θ) and
//! `ατ` (u, v), and the gradient-flow limit integrated in the reduced variable
//! `ν(t) = −∫₀ᵗ r`.

use crate::error::{check_len, Error, Result};
use crate::numerics::{norm1, norm2, norm_inf, svd_compact, DenseMatrix, DEFAULT_RANK_TOLERANCE};

/// Optimization triple plus cached residual.
#[derive(Clone, Debug, PartialEq)]
pub struct SopLinearState {
    pub theta: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub residual: Vec<f64>,
    pub iter: usize,
    pub objective: f64,
}

impl SopLinearState {
    /// Builds a state and computes its residual and objective.
    pub fn new(j: &DenseMatrix, y: &[f64], theta: Vec<f64>, u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        let residual = residual(j, &theta, &u, &v, y)?;
        let objective = 0.5 * norm2(&residual).powi(2);
        Ok(Self {
            theta,
            u,
            v,
            residual,
            iter: 0,
            objective,
        })
    }

    /// `θ = 0`, `u = v = γ1`.
    pub fn initial(j: &DenseMatrix, y: &[f64], gamma: f64) -> Result<Self> {
        let n = j.rows();
        Self::new(j, y, vec![0.0; j.cols()], vec![gamma; n], vec![gamma; n])
    }

    /// `s = u⊙u − v⊙v`.
    pub fn s(&self) -> Vec<f64> {
        self.u
            .iter()
            .zip(&self.v)
            .map(|(a, b)| a * a - b * b)
            .collect()
    }

    fn refresh(&mut self, j: &DenseMatrix, y: &[f64]) {
        let jt = j.matvec(&self.theta);
        for i in 0..y.len() {
            self.residual[i] = jt[i] + self.u[i] * self.u[i] - self.v[i] * self.v[i] - y[i];
        }
        self.objective = 0.5 * self.residual.iter().map(|r| r * r).sum::<f64>();
    }

    fn is_finite(&self) -> bool {
        self.objective.is_finite()
            && self.theta.iter().chain(&self.u).chain(&self.v).all(|x| x.is_finite())
    }
}

pub(crate) fn residual(
    j: &DenseMatrix,
    theta: &[f64],
    u: &[f64],
    v: &[f64],
    y: &[f64],
) -> Result<Vec<f64>> {
    let n = j.rows();
    check_len("theta", theta.len(), j.cols())?;
    check_len("u", u.len(), n)?;
    check_len("v", v.len(), n)?;
    check_len("y", y.len(), n)?;
    let jt = j.matvec(theta);
    Ok((0..n)
        .map(|i| jt[i] + u[i] * u[i] - v[i] * v[i] - y[i])
        .collect())
}

/// `½‖Jθ + u⊙u − v⊙v − y‖²`.
pub fn objective(j: &DenseMatrix, theta: &[f64], u: &[f64], v: &[f64], y: &[f64]) -> Result<f64> {
    let r = residual(j, theta, u, v, y)?;
    Ok(0.5 * r.iter().map(|x| x * x).sum::<f64>())
}

#[derive(Clone, Debug, PartialEq)]
pub struct GdConfig {
    /// Initialization scale γ.
    pub gamma: f64,
    /// Learning-rate ratio α (u, v move with step ατ).
    pub alpha: f64,
    /// Step size τ for θ.
    pub tau: f64,
    pub max_iters: usize,
    /// Stop once ‖r‖_∞ falls to this value.
    pub stop_residual: f64,
    /// Objective above this marks the run as diverged.
    pub divergence_cap: f64,
    /// Step halvings allowed over the whole run when the objective increases.
    pub max_halvings: usize,
}

pub const DEFAULT_GAMMA: f64 = 3.354_626_279_025_119e-4; // e⁻⁸
pub const DEFAULT_STOP_RESIDUAL: f64 = 1e-10;
pub const DEFAULT_MAX_ITERS: usize = 1_000_000;

impl GdConfig {
    /// Defaults with `τ = 0.25 / σ_max(J)²`.
    pub fn for_matrix(j: &DenseMatrix, gamma: f64, alpha: f64) -> Result<Self> {
        Ok(Self {
            gamma,
            alpha,
            tau: default_tau(j)?,
            max_iters: DEFAULT_MAX_ITERS,
            stop_residual: DEFAULT_STOP_RESIDUAL,
            divergence_cap: 1e12,
            max_halvings: 20,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameter(what.to_string()));
        if !(self.gamma > 0.0) {
            return bad("gamma must be positive");
        }
        if !(self.alpha >= 0.0) {
            return bad("alpha must be non-negative");
        }
        if !(self.tau > 0.0) {
            return bad("tau must be positive");
        }
        if !(self.stop_residual > 0.0 && self.stop_residual < self.divergence_cap) {
            return bad("need 0 < stop_residual < divergence_cap");
        }
        Ok(())
    }

    pub fn log_interval(&self) -> usize {
        self.max_iters.div_ceil(1000).max(1)
    }
}

/// `0.25 / σ_max(J)²`; 1.0 for the zero matrix.
pub fn default_tau(j: &DenseMatrix) -> Result<f64> {
    let svd = svd_compact(j, DEFAULT_RANK_TOLERANCE)?;
    Ok(match svd.sigma.first() {
        Some(&s) => 0.25 / (s * s),
        None => 1.0,
    })
}

fn step_in_place(state: &mut SopLinearState, j: &DenseMatrix, y: &[f64], tau: f64, alpha: f64) {
    let g_theta = j.matvec_t(&state.residual);
    for (t, g) in state.theta.iter_mut().zip(&g_theta) {
        *t -= tau * g;
    }
    let rate = 2.0 * alpha * tau;
    for i in 0..state.u.len() {
        let r = state.residual[i];
        state.u[i] -= rate * state.u[i] * r;
        state.v[i] += rate * state.v[i] * r;
    }
    state.refresh(j, y);
    state.iter += 1;
}

/// One gradient-descent update (θ, u, v) ← (θ − τJᵀr, u − 2ατ u⊙r, v + 2ατ v⊙r).
pub fn gd_step(
    state: &SopLinearState,
    j: &DenseMatrix,
    y: &[f64],
    cfg: &GdConfig,
) -> Result<SopLinearState> {
    check_len("theta", state.theta.len(), j.cols())?;
    check_len("residual", state.residual.len(), j.rows())?;
    let mut next = state.clone();
    step_in_place(&mut next, j, y, cfg.tau, cfg.alpha);
    if !next.is_finite() {
        return Err(Error::Divergence { iter: next.iter });
    }
    Ok(next)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunStatus {
    Converged,
    IterCap,
    Diverged,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Converged => "converged",
            RunStatus::IterCap => "iter_cap",
            RunStatus::Diverged => "diverged",
        }
    }
}

/// One logged point of a run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub iter: usize,
    pub objective: f64,
    pub residual_inf: f64,
    pub theta_norm: f64,
    pub s_l1: f64,
}

impl TrajectoryRecord {
    fn of(state: &SopLinearState) -> Self {
        Self {
            iter: state.iter,
            objective: state.objective,
            residual_inf: norm_inf(&state.residual),
            theta_norm: norm2(&state.theta),
            s_l1: norm1(&state.s()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct GdOutcome {
    pub state: SopLinearState,
    pub status: RunStatus,
    pub trajectory: Vec<TrajectoryRecord>,
    /// Step size in effect at the end (after any halvings).
    pub tau: f64,
    pub halvings: usize,
}

/// Gradient descent from `θ₀ = 0, u₀ = v₀ = γ1` until `‖r‖_∞ ≤ stop_residual`
/// or `max_iters`. A step that raises the objective is retried with `τ/2`
/// while the halving budget lasts.
pub fn run_gd(j: &DenseMatrix, y: &[f64], cfg: &GdConfig) -> Result<GdOutcome> {
    cfg.validate()?;
    let mut state = SopLinearState::initial(j, y, cfg.gamma)?;
    run_gd_from(j, y, cfg, &mut state)
}

/// [`run_gd`] starting from an arbitrary state.
pub fn run_gd_from(
    j: &DenseMatrix,
    y: &[f64],
    cfg: &GdConfig,
    state: &mut SopLinearState,
) -> Result<GdOutcome> {
    cfg.validate()?;
    let interval = cfg.log_interval();
    let mut trajectory = vec![TrajectoryRecord::of(state)];
    let mut tau = cfg.tau;
    let mut halvings = 0;
    let mut candidate = state.clone();
    let status = loop {
        if norm_inf(&state.residual) <= cfg.stop_residual {
            break RunStatus::Converged;
        }
        if state.iter >= cfg.max_iters {
            break RunStatus::IterCap;
        }
        candidate.clone_from(state);
        step_in_place(&mut candidate, j, y, tau, cfg.alpha);
        // Increases at round-off level are not a step-size problem.
        let slack = 1e-12 * state.objective + f64::MIN_POSITIVE;
        let worse = !candidate.is_finite() || candidate.objective > state.objective + slack;
        if worse && halvings < cfg.max_halvings {
            tau *= 0.5;
            halvings += 1;
            continue;
        }
        if !candidate.is_finite() || candidate.objective > cfg.divergence_cap {
            break RunStatus::Diverged;
        }
        std::mem::swap(state, &mut candidate);
        if state.iter.is_multiple_of(interval) {
            trajectory.push(TrajectoryRecord::of(state));
        }
    };
    if trajectory.last().map(|t| t.iter) != Some(state.iter) {
        trajectory.push(TrajectoryRecord::of(state));
    }
    Ok(GdOutcome {
        state: state.clone(),
        status,
        trajectory,
        tau,
        halvings,
    })
}

/// Settings for the adaptive RK4 integrator of the gradient flow.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowOdeConfig {
    pub initial_step: f64,
    /// Local error tolerance (max-norm, relative to `1 + ‖ν‖_∞`).
    pub tolerance: f64,
    pub min_step: f64,
    pub max_steps: usize,
}

impl Default for FlowOdeConfig {
    fn default() -> Self {
        Self {
            initial_step: 1e-3,
            tolerance: 1e-10,
            min_step: 1e-14,
            max_steps: 50_000_000,
        }
    }
}

struct FlowRhs<'a> {
    gram: DenseMatrix,
    y: &'a [f64],
    gamma: f64,
    alpha: f64,
}

impl FlowRhs<'_> {
    /// `ν̇ = −(JJᵀν + γ²e^{4αν} − γ²e^{−4αν} − y)`.
    fn eval(&self, nu: &[f64], out: &mut [f64]) {
        let g2 = self.gamma * self.gamma;
        let jjt = self.gram.matvec(nu);
        for i in 0..nu.len() {
            let a = 4.0 * self.alpha * nu[i];
            out[i] = -(jjt[i] + g2 * a.exp() - g2 * (-a).exp() - self.y[i]);
        }
    }

    fn rk4(&self, nu: &[f64], h: f64, out: &mut [f64]) {
        let n = nu.len();
        let mut k1 = vec![0.0; n];
        let mut k2 = vec![0.0; n];
        let mut k3 = vec![0.0; n];
        let mut k4 = vec![0.0; n];
        let mut tmp = vec![0.0; n];
        self.eval(nu, &mut k1);
        for i in 0..n {
            tmp[i] = nu[i] + 0.5 * h * k1[i];
        }
        self.eval(&tmp, &mut k2);
        for i in 0..n {
            tmp[i] = nu[i] + 0.5 * h * k2[i];
        }
        self.eval(&tmp, &mut k3);
        for i in 0..n {
            tmp[i] = nu[i] + h * k3[i];
        }
        self.eval(&tmp, &mut k4);
        for i in 0..n {
            out[i] = nu[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
}

/// State on the flow for a given `ν`: `θ = Jᵀν`, `u = γe^{2αν}`, `v = γe^{−2αν}`.
pub fn flow_state_from_nu(
    j: &DenseMatrix,
    y: &[f64],
    gamma: f64,
    alpha: f64,
    nu: &[f64],
) -> Result<SopLinearState> {
    let theta = j.matvec_t(nu);
    let u = nu.iter().map(|&x| gamma * (2.0 * alpha * x).exp()).collect();
    let v = nu.iter().map(|&x| gamma * (-2.0 * alpha * x).exp()).collect();
    SopLinearState::new(j, y, theta, u, v)
}

/// Result of integrating the flow to `t_end`.
#[derive(Clone, Debug)]
pub struct FlowOutcome {
    pub state: SopLinearState,
    pub nu: Vec<f64>,
    pub steps: usize,
}

/// Integrates the gradient flow from `ν(0) = 0` to `t_end` with RK4 and
/// step-doubling error control, then reconstructs (θ, u, v) from `ν`.
/// `state.iter` holds the number of accepted steps.
pub fn run_flow_ode(
    j: &DenseMatrix,
    y: &[f64],
    gamma: f64,
    alpha: f64,
    t_end: f64,
    ode: &FlowOdeConfig,
) -> Result<FlowOutcome> {
    check_len("y", y.len(), j.rows())?;
    if !(gamma > 0.0 && alpha > 0.0) {
        return Err(Error::InvalidParameter(
            "gamma and alpha must be positive".into(),
        ));
    }
    if !(t_end >= 0.0) {
        return Err(Error::InvalidParameter("t_end must be non-negative".into()));
    }
    let rhs = FlowRhs {
        gram: j.matmul(&j.transpose())?,
        y,
        gamma,
        alpha,
    };
    let n = y.len();
    let mut nu = vec![0.0; n];
    let mut t = 0.0;
    let mut h = ode.initial_step.min(t_end.max(f64::MIN_POSITIVE));
    let mut full = vec![0.0; n];
    let mut half = vec![0.0; n];
    let mut twice = vec![0.0; n];
    let mut steps = 0;
    while t < t_end {
        if steps >= ode.max_steps {
            let partial = flow_state_from_nu(j, y, gamma, alpha, &nu)?;
            return Err(Error::StepUnderflow {
                reached_time: t,
                partial: Box::new(partial),
            });
        }
        let h_try = h.min(t_end - t);
        rhs.rk4(&nu, h_try, &mut full);
        rhs.rk4(&nu, 0.5 * h_try, &mut half);
        rhs.rk4(&half, 0.5 * h_try, &mut twice);
        let err = full
            .iter()
            .zip(&twice)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
            / 15.0;
        let scale = 1.0 + norm_inf(&nu);
        let finite = twice.iter().all(|x| x.is_finite());
        if finite && err <= ode.tolerance * scale {
            // Richardson-extrapolated fifth-order update.
            for i in 0..n {
                nu[i] = twice[i] + (twice[i] - full[i]) / 15.0;
            }
            t += h_try;
            steps += 1;
            let grow = if err == 0.0 {
                2.0
            } else {
                (0.9 * (ode.tolerance * scale / err).powf(0.2)).clamp(0.2, 2.0)
            };
            h = h_try * grow;
        } else {
            h = if finite {
                h_try * (0.9 * (ode.tolerance * scale / err).powf(0.2)).clamp(0.1, 0.5)
            } else {
                h_try * 0.25
            };
            if h < ode.min_step {
                let partial = flow_state_from_nu(j, y, gamma, alpha, &nu)?;
                return Err(Error::StepUnderflow {
                    reached_time: t,
                    partial: Box::new(partial),
                });
            }
        }
    }
    let mut state = flow_state_from_nu(j, y, gamma, alpha, &nu)?;
    state.iter = steps;
    Ok(FlowOutcome { state, nu, steps })
}
