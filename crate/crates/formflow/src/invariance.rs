//! Verification engine for invariant forms: pointwise and transported
//! integral checks (absolute, relative-closed, nonautonomous), the transport
//! derivative identity, the 2D first-integral construction, and solving the
//! form-transport Cauchy problem by backward pullback.

use crate::chains::{transport_chain, Chain, QuadratureSpec};
use crate::chart::{central_gradient, ScalarField, VectorField};
use crate::error::{Error, Result};
use crate::flow::{extend_to_autonomous, FlowMap, IntegratorSettings};
use crate::forms::{coeff_count, lie_derivative, DifferentialForm, IndexTable, LieMode};
use crate::quadrature::gauss_legendre_unit;

/// Numerical knobs shared by the drift and residual checks.
#[derive(Clone, Copy, Debug)]
pub struct CheckSettings {
    pub integrator: IntegratorSettings,
    pub quadrature: QuadratureSpec,
    /// Drift tolerance per unit time.
    pub tolerance: f64,
    pub h_fd: f64,
}

impl Default for CheckSettings {
    fn default() -> Self {
        Self {
            integrator: IntegratorSettings::default(),
            quadrature: QuadratureSpec::default(),
            tolerance: 1e-6,
            h_fd: 1e-5,
        }
    }
}

impl CheckSettings {
    /// Absolute drift tolerance over a time span (at least one unit time).
    pub fn drift_tolerance(&self, span: f64) -> f64 {
        self.tolerance * span.abs().max(1.0)
    }
}

/// Time series of a transported integral with its drift verdict.
#[derive(Clone, Debug)]
pub struct DriftSeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub tolerance: f64,
}

impl DriftSeries {
    pub fn new(times: Vec<f64>, values: Vec<f64>, tolerance: f64) -> Self {
        assert_eq!(times.len(), values.len());
        Self { times, values, tolerance }
    }

    /// `values - values[0]`.
    pub fn drift(&self) -> Vec<f64> {
        let base = self.values.first().copied().unwrap_or(0.0);
        self.values.iter().map(|v| v - base).collect()
    }

    pub fn max_drift(&self) -> f64 {
        self.drift().iter().fold(0.0, |acc: f64, d| acc.max(d.abs()))
    }

    pub fn passes(&self) -> bool {
        self.max_drift() <= self.tolerance
    }
}

/// Max / mean of a residual sweep.
#[derive(Clone, Copy, Debug, Default)]
pub struct ResidualStats {
    pub max: f64,
    pub mean: f64,
}

impl ResidualStats {
    pub fn from_values(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let max = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let mean = values.iter().map(|v| v.abs()).sum::<f64>() / values.len() as f64;
        Self { max, mean }
    }
}

/// Assembled result of one verification scenario.
#[derive(Clone, Debug)]
pub struct InvarianceReport {
    pub scenario_id: String,
    pub residuals: ResidualStats,
    pub series: Vec<DriftSeries>,
    pub settings: CheckSettings,
}

/// Max over samples of the coefficient norm of `L_v omega` (Cartan route).
pub fn check_pointwise_invariance(
    v: &VectorField,
    omega: &DifferentialForm,
    samples: &[Vec<f64>],
    t: f64,
) -> Result<ResidualStats> {
    let lie = lie_derivative(v, omega, LieMode::Cartan)?;
    let values: Vec<f64> = samples.iter().map(|x| lie.coeff_norm(t, x)).collect();
    Ok(ResidualStats::from_values(&values))
}

/// Relative invariance: `|| L_v omega - d Omega ||` for a candidate primitive.
pub fn check_pointwise_relative(
    v: &VectorField,
    omega: &DifferentialForm,
    candidate: &DifferentialForm,
    samples: &[Vec<f64>],
    t: f64,
) -> Result<ResidualStats> {
    let lie = lie_derivative(v, omega, LieMode::Cartan)?;
    let diff = lie.sub(&candidate.exterior_derivative()?)?;
    let values: Vec<f64> = samples.iter().map(|x| diff.coeff_norm(t, x)).collect();
    Ok(ResidualStats::from_values(&values))
}

/// Which transport theorem a drift series exercises.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransportKind {
    /// `L_v omega = 0` expected; any submanifold.
    Absolute,
    /// `L_v omega` exact; the chain must be closed.
    RelativeClosed,
    /// `d omega/dt + L_v omega = 0` (or exact on closed chains); the form is
    /// evaluated at the transported time.
    Nonautonomous,
}

/// Integral of `omega` over the flow-transported chain at the given times.
///
/// `times[0]` is the start time; the chain is transported from there.
pub fn check_transport_invariance(
    v: &VectorField,
    omega: &DifferentialForm,
    chain: &Chain,
    times: &[f64],
    kind: TransportKind,
    settings: &CheckSettings,
) -> Result<DriftSeries> {
    if times.is_empty() {
        return Err(Error::Precondition("transport check needs at least one time".into()));
    }
    if kind == TransportKind::RelativeClosed {
        let residual = chain.closedness_residual(&settings.quadrature)?;
        if residual > 1e-8 {
            return Err(Error::Precondition(format!(
                "relative invariance needs a closed chain; boundary pairing = {residual:.3e}"
            )));
        }
    }
    let t0 = times[0];
    let span = times.iter().fold(0.0f64, |a, t| a.max((t - t0).abs()));
    let mut values = Vec::with_capacity(times.len());
    for &t in times {
        let transported = if t == t0 {
            chain.clone()
        } else {
            let flow = FlowMap::new(v.clone(), t0, t, settings.integrator);
            transport_chain(chain, &flow)
        };
        let eval_time = match kind {
            TransportKind::Nonautonomous => t,
            _ => t0,
        };
        values.push(crate::chains::integrate_over_chain(
            omega,
            &transported,
            &settings.quadrature,
            eval_time,
        )?);
    }
    Ok(DriftSeries::new(times.to_vec(), values, settings.drift_tolerance(span)))
}

/// Both sides of the transport derivative identity at one time, plus their gap.
#[derive(Clone, Copy, Debug)]
pub struct TransportDerivative {
    /// Symmetric difference quotient of the transported integral.
    pub lhs: f64,
    /// Integral of `d omega/dt + L_v omega` over the chain.
    pub rhs: f64,
    pub difference: f64,
}

/// Check `d/dt int_{G^t(c)} omega(t) = int_{G^t(c)} (d omega/dt + L_v omega)`
/// at `t`, with the chain anchored at `t` (so the transport map is trivial).
pub fn transport_derivative_check(
    v: &VectorField,
    omega: &DifferentialForm,
    chain: &Chain,
    t: f64,
    dt: f64,
    settings: &CheckSettings,
) -> Result<TransportDerivative> {
    if !(dt > 0.0) {
        return Err(Error::Precondition("transport derivative step must be positive".into()));
    }
    let value_at = |s: f64| -> Result<f64> {
        let transported = if s == t {
            chain.clone()
        } else {
            let flow = FlowMap::new(v.clone(), t, s, settings.integrator);
            transport_chain(chain, &flow)
        };
        crate::chains::integrate_over_chain(omega, &transported, &settings.quadrature, s)
    };
    let lhs = (value_at(t + dt)? - value_at(t - dt)?) / (2.0 * dt);
    let integrand = omega.time_partial_form().add(&lie_derivative(v, omega, LieMode::Cartan)?)?;
    let rhs = crate::chains::integrate_over_chain(&integrand, chain, &settings.quadrature, t)?;
    Ok(TransportDerivative { lhs, rhs, difference: (lhs - rhs).abs() })
}

/// First integral of a planar field from an invariant area form:
/// `f(x) = int_base^x i_v q` along the straight segment, so `df = i_v q`.
///
/// Star-shaped domains about `base` are assumed.
pub fn first_integral_from_area_form(
    v: &VectorField,
    q: &DifferentialForm,
    base: &[f64],
    t: f64,
    precondition_tol: f64,
) -> Result<ScalarField> {
    if v.dim() != 2 || q.dim() != 2 || q.degree() != 2 {
        return Err(Error::Dimension(
            "first-integral construction is specific to a 2-form on a 2D chart".into(),
        ));
    }
    // the construction needs L_v q = 0; check near the base point
    let mut probes = vec![base.to_vec()];
    for (dx, dy) in [(0.3, 0.0), (0.0, 0.3), (-0.2, 0.2), (0.25, -0.15)] {
        probes.push(vec![base[0] + dx, base[1] + dy]);
    }
    let stats = check_pointwise_invariance(v, q, &probes, t)?;
    if stats.max > precondition_tol {
        return Err(Error::Precondition(format!(
            "q is not pointwise invariant near the base point: residual {:.3e}",
            stats.max
        )));
    }
    let nondegenerate = q.coeff_norm(t, base) > 1e-12;
    if !nondegenerate {
        return Err(Error::Degeneracy("area form vanishes at the base point".into()));
    }
    let one_form = q.interior_product(v)?;
    let base = base.to_vec();
    let (nodes, weights) = gauss_legendre_unit(64);
    Ok(ScalarField::autonomous(2, move |x| {
        let dir = [x[0] - base[0], x[1] - base[1]];
        let mut sum = 0.0;
        for (s, w) in nodes.iter().zip(&weights) {
            let p = [base[0] + s * dir[0], base[1] + s * dir[1]];
            let val = one_form.apply(t, &p, &[&dir]).expect("degree-1 application");
            sum += w * val;
        }
        sum
    }))
}

/// Diagnostics for a constructed first integral.
#[derive(Clone, Copy, Debug)]
pub struct FirstIntegralDiagnostics {
    /// `max || grad f - i_v q ||` over samples (FD gradient).
    pub differential_residual: f64,
    /// `max | v . grad f |` over samples.
    pub lie_residual: f64,
}

pub fn first_integral_residuals(
    v: &VectorField,
    q: &DifferentialForm,
    f: &ScalarField,
    samples: &[Vec<f64>],
    t: f64,
) -> Result<FirstIntegralDiagnostics> {
    let one_form = q.interior_product(v)?;
    let mut diff_res = 0.0f64;
    let mut lie_res = 0.0f64;
    for x in samples {
        let grad = central_gradient(|y| f.value(t, y), x, 1e-5);
        let coeffs = one_form.coeffs_at(t, x);
        for (g, c) in grad.iter().zip(&coeffs) {
            diff_res = diff_res.max((g - c).abs());
        }
        let vel = v.value(t, x);
        let lv: f64 = grad.iter().zip(&vel).map(|(g, w)| g * w).sum();
        lie_res = lie_res.max(lv.abs());
    }
    Ok(FirstIntegralDiagnostics { differential_residual: diff_res, lie_residual: lie_res })
}

/// Solve `d omega/dt + L_v omega = 0, omega(t0) = omega_hat` by pulling the
/// datum back along the inverse flow. The returned form is time-dependent;
/// each coefficient evaluation integrates from the queried time back to `t0`.
pub fn solve_form_transport(
    v: &VectorField,
    omega_hat: &DifferentialForm,
    t0: f64,
    settings: IntegratorSettings,
) -> DifferentialForm {
    let m = omega_hat.dim();
    let k = omega_hat.degree();
    let field = v.clone();
    let datum = omega_hat.clone();
    let table = IndexTable::new(m, k);
    let n_out = coeff_count(m, k);
    DifferentialForm::new(m, k, move |t, x| {
        let back = FlowMap::new(field.clone(), t, t0, settings);
        let (y, jac) = back
            .apply_with_jacobian(x)
            .expect("form transport: backward flow integration failed");
        let coeffs = datum.coeffs_at(t0, &y);
        if k == 0 {
            return coeffs;
        }
        let mut out = vec![0.0; n_out];
        for (jpos, cols) in table.tuples().iter().enumerate() {
            let mut sum = 0.0;
            for (ipos, rows) in table.tuples().iter().enumerate() {
                if coeffs[ipos] != 0.0 {
                    let mut det_arg = nalgebra::DMatrix::zeros(rows.len(), cols.len());
                    for (a, &r) in rows.iter().enumerate() {
                        for (b, &c) in cols.iter().enumerate() {
                            det_arg[(a, b)] = jac[(r, c)];
                        }
                    }
                    sum += coeffs[ipos] * det_arg.determinant();
                }
            }
            out[jpos] = sum;
        }
        out
    })
}

/// FD residual of the transport PDE `d omega/dt + L_v omega = 0` at samples.
pub fn form_transport_residual(
    v: &VectorField,
    omega: &DifferentialForm,
    samples: &[Vec<f64>],
    t: f64,
) -> Result<f64> {
    let lie = lie_derivative(v, omega, LieMode::Cartan)?;
    let mut worst = 0.0f64;
    for x in samples {
        let dt = omega.time_partials_at(t, x);
        let lv = lie.coeffs_at(t, x);
        for (a, b) in dt.iter().zip(&lv) {
            worst = worst.max((a + b).abs());
        }
    }
    Ok(worst)
}

/// Embed a (possibly time-dependent) form on the spatial chart into the
/// time-extended chart, with `t` read off coordinate 0.
pub fn spatial_to_extended(omega: &DifferentialForm) -> DifferentialForm {
    let m = omega.dim();
    let k = omega.degree();
    let ext_table = IndexTable::new(m + 1, k);
    let src_table = IndexTable::new(m, k);
    // map each extended tuple to its spatial source position (or None if it
    // contains the dt axis)
    let lookup: Vec<Option<usize>> = ext_table
        .tuples()
        .iter()
        .map(|tuple| {
            if tuple.contains(&0) {
                None
            } else {
                let shifted: Vec<usize> = tuple.iter().map(|i| i - 1).collect();
                src_table.position(&shifted)
            }
        })
        .collect();
    let inner = omega.clone();
    DifferentialForm::autonomous(m + 1, k, move |z| {
        let coeffs = inner.coeffs_at(z[0], &z[1..]);
        lookup.iter().map(|slot| slot.map_or(0.0, |p| coeffs[p])).collect()
    })
}

/// `dt ^ mu` on the extended chart for a spatial form `mu`.
pub fn dt_wedge(mu: &DifferentialForm) -> Result<DifferentialForm> {
    let dt = DifferentialForm::basis(mu.dim() + 1, &[0]);
    dt.wedge(&spatial_to_extended(mu))
}

/// Residual of the mixed-form Lie decomposition on the extended chart:
/// `L_vtilde (mu+ + dt^mu-)` against
/// `d mu+/dt + L_v mu+ + dt ^ (i_{dv/dt} mu+ + d mu-/dt + L_v mu-)`.
pub fn mixed_decomposition_residual(
    v: &VectorField,
    mu_plus: &DifferentialForm,
    mu_minus: &DifferentialForm,
    extended_samples: &[Vec<f64>],
) -> Result<f64> {
    let m = v.dim();
    if mu_plus.dim() != m || mu_minus.dim() != m || mu_plus.degree() != mu_minus.degree() + 1 {
        return Err(Error::Dimension(
            "mixed decomposition expects deg mu+ = deg mu- + 1 on the spatial chart".into(),
        ));
    }
    let v_ext = extend_to_autonomous(v);
    let mu = spatial_to_extended(mu_plus).add(&dt_wedge(mu_minus)?)?;
    let lhs = lie_derivative(&v_ext, &mu, LieMode::Cartan)?;

    // dv/dt as a time-dependent spatial field
    let v2 = v.clone();
    let dv_dt = VectorField::new(m, move |t, x| v2.time_partial_at(t, x));
    let plus_part = mu_plus
        .time_partial_form()
        .add(&lie_derivative(v, mu_plus, LieMode::Cartan)?)?;
    let minus_part = mu_plus
        .interior_product(&dv_dt)?
        .add(&mu_minus.time_partial_form())?
        .add(&lie_derivative(v, mu_minus, LieMode::Cartan)?)?;
    let rhs = spatial_to_extended(&plus_part).add(&dt_wedge(&minus_part)?)?;

    let diff = lhs.sub(&rhs)?;
    Ok(extended_samples.iter().fold(0.0f64, |acc, z| acc.max(diff.coeff_norm(0.0, z))))
}
