//! Fixed-step flow integration: trajectories with dense output, shift maps
//! between times, flow Jacobians (variational or finite-difference), and the
//! autonomous extension on the time-extended chart.

use nalgebra::DMatrix;

use crate::chart::{ChartMap, Point, VectorField};
use crate::error::{Error, Result};

/// Fixed-step integrator settings for the classical RK4 stepper.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntegratorSettings {
    pub step: f64,
    /// When set, a second pass at half step attaches a Richardson endpoint
    /// error estimate to the trajectory.
    pub estimate_error: bool,
}

impl Default for IntegratorSettings {
    fn default() -> Self {
        Self { step: 1e-3, estimate_error: false }
    }
}

impl IntegratorSettings {
    pub fn with_step(step: f64) -> Self {
        Self { step, estimate_error: false }
    }

    pub fn checked(mut self) -> Self {
        self.estimate_error = true;
        self
    }
}

/// Integrated orbit with cubic Hermite dense output between stored knots.
#[derive(Clone, Debug)]
pub struct Trajectory {
    times: Vec<f64>,
    states: Vec<Vec<f64>>,
    derivs: Vec<Vec<f64>>,
    /// Richardson endpoint error estimate when requested.
    pub error_estimate: Option<f64>,
}

impl Trajectory {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    pub fn start_time(&self) -> f64 {
        self.times[0]
    }

    pub fn end_time(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn end_state(&self) -> &[f64] {
        self.states.last().unwrap()
    }

    pub fn dim(&self) -> usize {
        self.states[0].len()
    }

    /// Dense state by cubic Hermite interpolation on the bracketing knots.
    pub fn state_at(&self, t: f64) -> Vec<f64> {
        let n = self.times.len();
        if n == 1 {
            return self.states[0].clone();
        }
        let forward = self.times[n - 1] >= self.times[0];
        // locate bracketing interval (times are strictly monotone)
        let mut lo = 0;
        let mut hi = n - 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            let before = if forward { self.times[mid] <= t } else { self.times[mid] >= t };
            if before {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let (t0, t1) = (self.times[lo], self.times[hi]);
        let h = t1 - t0;
        if h == 0.0 {
            return self.states[lo].clone();
        }
        let s = ((t - t0) / h).clamp(-0.5, 1.5);
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        let mut out = vec![0.0; self.dim()];
        for i in 0..out.len() {
            out[i] = h00 * self.states[lo][i]
                + h10 * h * self.derivs[lo][i]
                + h01 * self.states[hi][i]
                + h11 * h * self.derivs[hi][i];
        }
        out
    }

    pub fn point_at(&self, t: f64) -> Point {
        Point::at_time(self.state_at(t), t)
    }
}

fn rk4_step(f: &dyn Fn(f64, &[f64]) -> Vec<f64>, t: f64, x: &[f64], h: f64) -> Vec<f64> {
    let k1 = f(t, x);
    let mut buf: Vec<f64> = x.iter().zip(&k1).map(|(xi, ki)| xi + 0.5 * h * ki).collect();
    let k2 = f(t + 0.5 * h, &buf);
    for (b, (xi, ki)) in buf.iter_mut().zip(x.iter().zip(&k2)) {
        *b = xi + 0.5 * h * ki;
    }
    let k3 = f(t + 0.5 * h, &buf);
    for (b, (xi, ki)) in buf.iter_mut().zip(x.iter().zip(&k3)) {
        *b = xi + h * ki;
    }
    let k4 = f(t + h, &buf);
    x.iter()
        .enumerate()
        .map(|(i, xi)| xi + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

fn integrate_raw(
    f: &dyn Fn(f64, &[f64]) -> Vec<f64>,
    x0: &[f64],
    t0: f64,
    t1: f64,
    step: f64,
) -> Result<Trajectory> {
    if !(step > 0.0) {
        return Err(Error::Precondition(format!("integrator step must be positive, got {step}")));
    }
    let span = t1 - t0;
    let n_steps = if span == 0.0 { 0 } else { (span.abs() / step).ceil() as usize };
    let h = if n_steps == 0 { 0.0 } else { span / n_steps as f64 };
    let mut times = Vec::with_capacity(n_steps + 1);
    let mut states = Vec::with_capacity(n_steps + 1);
    let mut derivs = Vec::with_capacity(n_steps + 1);
    let mut t = t0;
    let mut x = x0.to_vec();
    times.push(t);
    derivs.push(f(t, &x));
    states.push(x.clone());
    for i in 1..=n_steps {
        x = rk4_step(f, t, &x, h);
        t = t0 + span * (i as f64 / n_steps as f64);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { t_last: times[times.len() - 1] });
        }
        times.push(t);
        derivs.push(f(t, &x));
        states.push(x.clone());
    }
    Ok(Trajectory { times, states, derivs, error_estimate: None })
}

/// Integrate `dx/dt = v(t, x)` from `t0` to `t1` with classical RK4.
///
/// `t1 < t0` integrates backwards. With `estimate_error` set, a half-step
/// pass attaches the Richardson endpoint estimate.
pub fn integrate_flow(
    v: &VectorField,
    x0: &[f64],
    t0: f64,
    t1: f64,
    settings: IntegratorSettings,
) -> Result<Trajectory> {
    if x0.len() != v.dim() {
        return Err(Error::Dimension(format!(
            "initial state has {} entries, field expects {}",
            x0.len(),
            v.dim()
        )));
    }
    let f = |t: f64, x: &[f64]| v.value(t, x);
    let mut traj = integrate_raw(&f, x0, t0, t1, settings.step)?;
    if settings.estimate_error {
        let half = integrate_raw(&f, x0, t0, t1, settings.step / 2.0)?;
        let err: f64 = traj
            .end_state()
            .iter()
            .zip(half.end_state())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        // RK4: halving the step divides the global error by ~16
        traj.error_estimate = Some(err * 16.0 / 15.0);
    }
    Ok(traj)
}

/// How the flow Jacobian is produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JacobianMethod {
    /// Integrate the variational system alongside the orbit.
    Variational,
    /// Symmetric perturbation of the initial state, one column at a time.
    FiniteDifference,
}

/// Jacobian of the shift map `G^{t1}_{t0}` at `x0`.
#[derive(Clone, Debug)]
pub struct FlowJacobian {
    pub matrix: DMatrix<f64>,
    pub method: JacobianMethod,
}

/// Shift map along trajectories between two fixed times.
#[derive(Clone)]
pub struct FlowMap {
    pub field: VectorField,
    pub t0: f64,
    pub t1: f64,
    pub settings: IntegratorSettings,
}

impl FlowMap {
    pub fn new(field: VectorField, t0: f64, t1: f64, settings: IntegratorSettings) -> Self {
        Self { field, t0, t1, settings }
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(integrate_flow(&self.field, x, self.t0, self.t1, self.settings)?.end_state().to_vec())
    }

    /// Endpoint together with the variational Jacobian in one combined solve.
    pub fn apply_with_jacobian(&self, x: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let m = self.field.dim();
        if x.len() != m {
            return Err(Error::Dimension("flow map input dimension mismatch".into()));
        }
        let field = self.field.clone();
        let combined = move |t: f64, z: &[f64]| -> Vec<f64> {
            let x = &z[..m];
            let v = field.value(t, x);
            let dv = field.jacobian_at(t, x);
            let mut out = Vec::with_capacity(m + m * m);
            out.extend_from_slice(&v);
            // W' = Dv W, W stored row-major after the state
            for i in 0..m {
                for j in 0..m {
                    let mut s = 0.0;
                    for k in 0..m {
                        s += dv[(i, k)] * z[m + k * m + j];
                    }
                    out.push(s);
                }
            }
            out
        };
        let mut z0 = vec![0.0; m + m * m];
        z0[..m].copy_from_slice(x);
        for i in 0..m {
            z0[m + i * m + i] = 1.0;
        }
        let traj = integrate_raw(&combined, &z0, self.t0, self.t1, self.settings.step)?;
        let end = traj.end_state();
        let point = end[..m].to_vec();
        let mut jac = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                jac[(i, j)] = end[m + i * m + j];
            }
        }
        Ok((point, jac))
    }

    pub fn jacobian(&self, x: &[f64], method: JacobianMethod) -> Result<FlowJacobian> {
        match method {
            JacobianMethod::Variational => {
                let (_, matrix) = self.apply_with_jacobian(x)?;
                Ok(FlowJacobian { matrix, method })
            }
            JacobianMethod::FiniteDifference => {
                let m = self.field.dim();
                let h = self.field.h_fd();
                let mut matrix = DMatrix::zeros(m, m);
                let mut buf = x.to_vec();
                for j in 0..m {
                    buf[j] = x[j] + h;
                    let plus = self.apply(&buf)?;
                    buf[j] = x[j] - h;
                    let minus = self.apply(&buf)?;
                    buf[j] = x[j];
                    for i in 0..m {
                        matrix[(i, j)] = (plus[i] - minus[i]) / (2.0 * h);
                    }
                }
                Ok(FlowJacobian { matrix, method })
            }
        }
    }

    /// The shift in the opposite direction.
    pub fn inverse(&self) -> FlowMap {
        FlowMap { field: self.field.clone(), t0: self.t1, t1: self.t0, settings: self.settings }
    }

    /// Wrap as a smooth chart map (variational Jacobian).
    pub fn to_chart_map(&self) -> ChartMap {
        let m = self.field.dim();
        let a = self.clone();
        let b = self.clone();
        ChartMap::new(m, m, move |x| a.apply(x).expect("flow map integration failed"))
            .with_jacobian(move |x| {
                b.apply_with_jacobian(x).expect("flow map integration failed").1
            })
    }
}

/// Convenience wrapper around [`FlowMap::jacobian`].
pub fn flow_jacobian(
    v: &VectorField,
    x0: &[f64],
    t0: f64,
    t1: f64,
    settings: IntegratorSettings,
    method: JacobianMethod,
) -> Result<FlowJacobian> {
    FlowMap::new(v.clone(), t0, t1, settings).jacobian(x0, method)
}

/// Autonomous extension on the `(t, x)` chart: first component identically 1.
pub fn extend_to_autonomous(v: &VectorField) -> VectorField {
    let m = v.dim();
    let inner = v.clone();
    let jac_inner = v.clone();
    VectorField::autonomous(m + 1, move |z| {
        let mut out = Vec::with_capacity(m + 1);
        out.push(1.0);
        out.extend(inner.value(z[0], &z[1..]));
        out
    })
    .with_jacobian(move |_t, z| {
        let mut jac = DMatrix::zeros(m + 1, m + 1);
        let spatial = jac_inner.jacobian_at(z[0], &z[1..]);
        let dt = jac_inner.time_partial_at(z[0], &z[1..]);
        for i in 0..m {
            jac[(i + 1, 0)] = dt[i];
            for j in 0..m {
                jac[(i + 1, j + 1)] = spatial[(i, j)];
            }
        }
        jac
    })
}
