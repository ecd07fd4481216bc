//! Hamiltonian structure on canonical charts: the field from `H`, the
//! Poincare-Cartan form, symplecticity and loop-action drift checks, the
//! momentum-sensitivity orthogonality relation for homogeneous Hamiltonians,
//! canonical permutations, energy-level reduction, and Poincare sections.
//!
//! Conventions: phase coordinates are ordered `z = (x^1..x^m, p_1..p_m)` and
//! the symplectic form is `beta = dp_i ^ dx^i`, so the structure matrix is
//! `Omega = [[0, -I], [I, 0]]`.

mod reduction;
mod section;

pub use reduction::{reduce_on_energy_level, reduction_comparison_error, ReducedSystem};
pub use section::{
    beta_restriction_matrix, poincare_return_map, section_symplecticity_residual, ReturnMap,
    SectionSpec,
};

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::chains::Chain;
use crate::chart::{ScalarField, VectorField, DEFAULT_H_FD};
use crate::error::{Error, Result};
use crate::flow::{integrate_flow, FlowMap, IntegratorSettings, JacobianMethod};
use crate::forms::DifferentialForm;
use crate::invariance::{check_transport_invariance, CheckSettings, DriftSeries, TransportKind};

type HamFn = Arc<dyn Fn(f64, &[f64], &[f64]) -> f64 + Send + Sync>;
type HamGradFn = Arc<dyn Fn(f64, &[f64], &[f64]) -> Vec<f64> + Send + Sync>;
type HamScalarFn = Arc<dyn Fn(f64, &[f64], &[f64]) -> f64 + Send + Sync>;

/// Scalar Hamiltonian `H(t, x, p)` with gradient access.
#[derive(Clone)]
pub struct Hamiltonian {
    m: usize,
    eval: HamFn,
    grad_x: Option<HamGradFn>,
    grad_p: Option<HamGradFn>,
    time_partial: Option<HamScalarFn>,
    autonomous: bool,
    homogeneous_in_p: bool,
    h_fd: f64,
}

impl Hamiltonian {
    pub fn new<F>(m: usize, f: F) -> Self
    where
        F: Fn(f64, &[f64], &[f64]) -> f64 + Send + Sync + 'static,
    {
        Self {
            m,
            eval: Arc::new(f),
            grad_x: None,
            grad_p: None,
            time_partial: None,
            autonomous: false,
            homogeneous_in_p: false,
            h_fd: DEFAULT_H_FD,
        }
    }

    pub fn autonomous<F>(m: usize, f: F) -> Self
    where
        F: Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
    {
        let mut h = Self::new(m, move |_t, x, p| f(x, p));
        h.autonomous = true;
        h
    }

    pub fn with_gradients<Gx, Gp>(mut self, gx: Gx, gp: Gp) -> Self
    where
        Gx: Fn(f64, &[f64], &[f64]) -> Vec<f64> + Send + Sync + 'static,
        Gp: Fn(f64, &[f64], &[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        self.grad_x = Some(Arc::new(gx));
        self.grad_p = Some(Arc::new(gp));
        self
    }

    pub fn with_time_partial<G>(mut self, g: G) -> Self
    where
        G: Fn(f64, &[f64], &[f64]) -> f64 + Send + Sync + 'static,
    {
        self.time_partial = Some(Arc::new(g));
        self
    }

    /// Declare positive homogeneity of degree one in the momenta.
    pub fn homogeneous(mut self) -> Self {
        self.homogeneous_in_p = true;
        self
    }

    pub fn with_h_fd(mut self, h: f64) -> Self {
        self.h_fd = h;
        self
    }

    /// Degrees of freedom `m`.
    pub fn dof(&self) -> usize {
        self.m
    }

    pub fn phase_dim(&self) -> usize {
        2 * self.m
    }

    pub fn is_autonomous(&self) -> bool {
        self.autonomous
    }

    pub fn is_homogeneous(&self) -> bool {
        self.homogeneous_in_p
    }

    pub fn h_fd(&self) -> f64 {
        self.h_fd
    }

    pub fn value(&self, t: f64, x: &[f64], p: &[f64]) -> f64 {
        (self.eval)(t, x, p)
    }

    pub fn value_z(&self, t: f64, z: &[f64]) -> f64 {
        (self.eval)(t, &z[..self.m], &z[self.m..])
    }

    pub fn grad_x_at(&self, t: f64, x: &[f64], p: &[f64]) -> Vec<f64> {
        if let Some(g) = &self.grad_x {
            return g(t, x, p);
        }
        let mut out = vec![0.0; self.m];
        let mut buf = x.to_vec();
        for i in 0..self.m {
            buf[i] = x[i] + self.h_fd;
            let plus = (self.eval)(t, &buf, p);
            buf[i] = x[i] - self.h_fd;
            let minus = (self.eval)(t, &buf, p);
            buf[i] = x[i];
            out[i] = (plus - minus) / (2.0 * self.h_fd);
        }
        out
    }

    pub fn grad_p_at(&self, t: f64, x: &[f64], p: &[f64]) -> Vec<f64> {
        if let Some(g) = &self.grad_p {
            return g(t, x, p);
        }
        let mut out = vec![0.0; self.m];
        let mut buf = p.to_vec();
        for i in 0..self.m {
            buf[i] = p[i] + self.h_fd;
            let plus = (self.eval)(t, x, &buf);
            buf[i] = p[i] - self.h_fd;
            let minus = (self.eval)(t, x, &buf);
            buf[i] = p[i];
            out[i] = (plus - minus) / (2.0 * self.h_fd);
        }
        out
    }

    pub fn time_partial_at(&self, t: f64, x: &[f64], p: &[f64]) -> f64 {
        if self.autonomous {
            return 0.0;
        }
        if let Some(g) = &self.time_partial {
            return g(t, x, p);
        }
        ((self.eval)(t + self.h_fd, x, p) - (self.eval)(t - self.h_fd, x, p)) / (2.0 * self.h_fd)
    }

    /// Full phase gradient `(dH/dx, dH/dp)` as one vector.
    pub fn phase_gradient(&self, t: f64, z: &[f64]) -> Vec<f64> {
        let (x, p) = z.split_at(self.m);
        let mut out = self.grad_x_at(t, x, p);
        out.extend(self.grad_p_at(t, x, p));
        out
    }

    /// The Hamiltonian vector field `w = (dH/dp, -dH/dx)` on the phase chart.
    pub fn field(&self) -> VectorField {
        let m = self.m;
        let h = self.clone();
        let mut field = VectorField::new(2 * m, move |t, z| {
            let (x, p) = z.split_at(m);
            let mut out = h.grad_p_at(t, x, p);
            let gx = h.grad_x_at(t, x, p);
            out.extend(gx.into_iter().map(|g| -g));
            out
        });
        if self.grad_x.is_some() && self.grad_p.is_some() {
            // second derivatives by FD over the analytic gradients
            let h = self.clone();
            let step = self.h_fd;
            field = field.with_jacobian(move |t, z| {
                let mut jac = DMatrix::zeros(2 * m, 2 * m);
                let mut buf = z.to_vec();
                for j in 0..2 * m {
                    buf[j] = z[j] + step;
                    let (x, p) = buf.split_at(m);
                    let plus_p = h.grad_p_at(t, x, p);
                    let plus_x = h.grad_x_at(t, x, p);
                    buf[j] = z[j] - step;
                    let (x, p) = buf.split_at(m);
                    let minus_p = h.grad_p_at(t, x, p);
                    let minus_x = h.grad_x_at(t, x, p);
                    buf[j] = z[j];
                    for i in 0..m {
                        jac[(i, j)] = (plus_p[i] - minus_p[i]) / (2.0 * step);
                        jac[(m + i, j)] = -(plus_x[i] - minus_x[i]) / (2.0 * step);
                    }
                }
                jac
            });
        }
        if self.autonomous {
            field.frozen(0.0)
        } else {
            field
        }
    }

    /// Autonomous field on the `(t, x, p)` chart with first component 1.
    pub fn extended_field(&self) -> VectorField {
        crate::flow::extend_to_autonomous(&self.field())
    }

    /// `max |H - p . dH/dp|` over phase samples (Euler identity).
    pub fn euler_identity_residual(&self, t: f64, samples: &[Vec<f64>]) -> f64 {
        samples.iter().fold(0.0f64, |acc, z| {
            let (x, p) = z.split_at(self.m);
            let gp = self.grad_p_at(t, x, p);
            let euler: f64 = p.iter().zip(&gp).map(|(pi, gi)| pi * gi).sum();
            acc.max((self.value(t, x, p) - euler).abs())
        })
    }
}

/// Phase point `(x, p)` with an optional time stamp.
#[derive(Clone, Debug, PartialEq)]
pub struct PhasePoint {
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    pub t: Option<f64>,
}

impl PhasePoint {
    pub fn new(x: Vec<f64>, p: Vec<f64>) -> Self {
        assert_eq!(x.len(), p.len());
        Self { x, p, t: None }
    }

    pub fn dof(&self) -> usize {
        self.x.len()
    }

    pub fn state(&self) -> Vec<f64> {
        let mut z = self.x.clone();
        z.extend_from_slice(&self.p);
        z
    }

    pub fn from_state(z: &[f64]) -> Self {
        let m = z.len() / 2;
        Self { x: z[..m].to_vec(), p: z[m..].to_vec(), t: None }
    }
}

/// Structure matrix of `beta = dp_i ^ dx^i` in `(x, p)` ordering.
pub fn canonical_omega(m: usize) -> DMatrix<f64> {
    let mut omega = DMatrix::zeros(2 * m, 2 * m);
    for i in 0..m {
        omega[(i, m + i)] = -1.0;
        omega[(m + i, i)] = 1.0;
    }
    omega
}

/// The symplectic form `beta = dp_i ^ dx^i` as a constant 2-form.
pub fn canonical_two_form(m: usize) -> DifferentialForm {
    let table = crate::forms::IndexTable::new(2 * m, 2);
    let mut values = vec![0.0; table.len()];
    for i in 0..m {
        // lexicographic tuple (i, m+i) carries dx^i ^ dp_i = -dp_i ^ dx^i
        let pos = table.position(&[i, m + i]).unwrap();
        values[pos] = -1.0;
    }
    DifferentialForm::constant(2 * m, 2, values)
}

/// The action one-form `zeta = p_i dx^i` on the phase chart.
pub fn zeta_form(m: usize) -> DifferentialForm {
    let mut form = DifferentialForm::autonomous(2 * m, 1, move |z| {
        let mut out = vec![0.0; 2 * m];
        out[..m].copy_from_slice(&z[m..]);
        out
    });
    form = form.with_partials(move |_t, _z| {
        let mut rows = vec![vec![0.0; 2 * m]; 2 * m];
        for i in 0..m {
            rows[i][m + i] = 1.0;
        }
        rows
    });
    form
}

/// Poincare-Cartan one-form `alpha = p_i dx^i - H dt` on the `(t, x, p)` chart.
pub fn poincare_cartan_form(hamiltonian: &Hamiltonian) -> DifferentialForm {
    let m = hamiltonian.dof();
    let dim = 2 * m + 1;
    let h = hamiltonian.clone();
    let mut form = DifferentialForm::autonomous(dim, 1, move |z| {
        let mut out = vec![0.0; dim];
        out[0] = -h.value_z(z[0], &z[1..]);
        out[1..=m].copy_from_slice(&z[1 + m..]);
        out
    });
    let h = hamiltonian.clone();
    form = form.with_partials(move |_t, z| {
        let mut rows = vec![vec![0.0; dim]; dim];
        let (x, p) = z[1..].split_at(m);
        let gx = h.grad_x_at(z[0], x, p);
        let gp = h.grad_p_at(z[0], x, p);
        rows[0][0] = -h.time_partial_at(z[0], x, p);
        for j in 0..m {
            rows[0][1 + j] = -gx[j];
            rows[0][1 + m + j] = -gp[j];
            rows[1 + j][1 + m + j] = 1.0;
        }
        rows
    });
    form
}

/// `F = p . dH/dp - H`, the Legendre counterpart scalar on the extended chart.
pub fn legendre_scalar(hamiltonian: &Hamiltonian) -> ScalarField {
    let m = hamiltonian.dof();
    let h = hamiltonian.clone();
    ScalarField::autonomous(2 * m + 1, move |z| {
        let (x, p) = z[1..].split_at(m);
        let gp = h.grad_p_at(z[0], x, p);
        p.iter().zip(&gp).map(|(pi, gi)| pi * gi).sum::<f64>() - h.value(z[0], x, p)
    })
}

/// `max |i_w beta + d_z H|` coefficients over phase samples at time `t`.
pub fn field_identity_residual(hamiltonian: &Hamiltonian, samples: &[Vec<f64>], t: f64) -> Result<f64> {
    let beta = canonical_two_form(hamiltonian.dof());
    let w = hamiltonian.field();
    let contracted = beta.interior_product(&w)?;
    let h2 = hamiltonian.clone();
    let mut worst = 0.0f64;
    for z in samples {
        let c = contracted.coeffs_at(t, z);
        let grad = h2.phase_gradient(t, z);
        for (a, b) in c.iter().zip(&grad) {
            worst = worst.max((a + b).abs());
        }
    }
    Ok(worst)
}

/// Symplecticity diagnostics of the time-`t` shift map at one phase point.
#[derive(Clone, Copy, Debug)]
pub struct SymplecticityReport {
    /// `max | J^T Omega J - Omega |`.
    pub omega_residual: f64,
    /// `| det J - 1 |`.
    pub volume_residual: f64,
}

pub fn symplecticity_residual(
    hamiltonian: &Hamiltonian,
    z0: &PhasePoint,
    t0: f64,
    t1: f64,
    settings: IntegratorSettings,
    method: JacobianMethod,
) -> Result<SymplecticityReport> {
    let m = hamiltonian.dof();
    if z0.dof() != m {
        return Err(Error::Dimension("phase point does not match the Hamiltonian".into()));
    }
    let jac = crate::flow::flow_jacobian(&hamiltonian.field(), &z0.state(), t0, t1, settings, method)?;
    let omega = canonical_omega(m);
    let residual = (jac.matrix.transpose() * &omega * &jac.matrix - &omega).abs().max();
    let volume = (jac.matrix.determinant() - 1.0).abs();
    Ok(SymplecticityReport { omega_residual: residual, volume_residual: volume })
}

/// Which loop-action invariant to track.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LoopMode {
    /// `int p dx` over a closed transported curve in phase space.
    ClosedZeta,
    /// `int alpha` over a closed transported curve in the extended chart.
    ExtendedAlpha,
    /// `int p dx` over an open transported curve; needs `H` homogeneous in `p`.
    HomogeneousOpen,
}

/// Drift of the action integral over a transported curve.
pub fn loop_action_drift(
    hamiltonian: &Hamiltonian,
    curve: &Chain,
    times: &[f64],
    mode: LoopMode,
    settings: &CheckSettings,
) -> Result<DriftSeries> {
    let m = hamiltonian.dof();
    match mode {
        LoopMode::ClosedZeta | LoopMode::HomogeneousOpen => {
            if curve.dim() != Some(2 * m) {
                return Err(Error::Dimension("curve must live on the phase chart".into()));
            }
        }
        LoopMode::ExtendedAlpha => {
            if curve.dim() != Some(2 * m + 1) {
                return Err(Error::Dimension("curve must live on the extended chart".into()));
            }
        }
    }
    match mode {
        LoopMode::ClosedZeta => {
            let residual = curve.closedness_residual(&settings.quadrature)?;
            if residual > 1e-8 {
                return Err(Error::Precondition(format!(
                    "closed-curve action invariant needs a closed curve; pairing = {residual:.3e}"
                )));
            }
            check_transport_invariance(
                &hamiltonian.field(),
                &zeta_form(m),
                curve,
                times,
                TransportKind::Nonautonomous,
                settings,
            )
        }
        LoopMode::ExtendedAlpha => {
            let residual = curve.closedness_residual(&settings.quadrature)?;
            if residual > 1e-8 {
                return Err(Error::Precondition(format!(
                    "extended action invariant needs a closed curve; pairing = {residual:.3e}"
                )));
            }
            check_transport_invariance(
                &hamiltonian.extended_field(),
                &poincare_cartan_form(hamiltonian),
                curve,
                times,
                TransportKind::Absolute,
                settings,
            )
        }
        LoopMode::HomogeneousOpen => {
            if !hamiltonian.is_homogeneous() {
                return Err(Error::Precondition(
                    "open-curve action invariant needs a homogeneous Hamiltonian".into(),
                ));
            }
            // verify the Euler identity on points of the curve
            let mut probes = Vec::new();
            for (_, cube) in curve.terms() {
                for s in [0.0, 0.25, 0.5, 0.75, 1.0] {
                    probes.push(cube.point_at(&[s]));
                }
            }
            let euler = hamiltonian.euler_identity_residual(times[0], &probes);
            if euler > 1e-8 {
                return Err(Error::Precondition(format!(
                    "Euler identity residual {euler:.3e}; Hamiltonian is not homogeneous on the curve"
                )));
            }
            check_transport_invariance(
                &hamiltonian.field(),
                &zeta_form(m),
                curve,
                times,
                TransportKind::Nonautonomous,
                settings,
            )
        }
    }
}

/// Momentum-sensitivity orthogonality for homogeneous Hamiltonians:
/// `max_s | dx^i/dp_s(t) . p_i(t) |` with sensitivities by symmetric FD in
/// the initial momentum.
pub fn gauss_relation_residual(
    hamiltonian: &Hamiltonian,
    x0: &[f64],
    p0: &[f64],
    t: f64,
    settings: IntegratorSettings,
) -> Result<f64> {
    if !hamiltonian.is_homogeneous() {
        return Err(Error::Precondition("Gauss relation needs a homogeneous Hamiltonian".into()));
    }
    let m = hamiltonian.dof();
    let scale = p0.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let h = 1e-5 * scale.max(1.0);
    let norm: f64 = p0.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < 10.0 * h {
        return Err(Error::Precondition(
            "initial momentum too close to the homogeneity singularity p = 0".into(),
        ));
    }
    let field = hamiltonian.field();
    let solve = |p_hat: &[f64]| -> Result<Vec<f64>> {
        let mut z0 = x0.to_vec();
        z0.extend_from_slice(p_hat);
        Ok(integrate_flow(&field, &z0, 0.0, t, settings)?.end_state().to_vec())
    };
    let center = solve(p0)?;
    let p_end = &center[m..];
    let mut worst = 0.0f64;
    let mut buf = p0.to_vec();
    for s in 0..m {
        buf[s] = p0[s] + h;
        let plus = solve(&buf)?;
        buf[s] = p0[s] - h;
        let minus = solve(&buf)?;
        buf[s] = p0[s];
        let mut pairing = 0.0;
        for i in 0..m {
            let sensitivity = (plus[i] - minus[i]) / (2.0 * h);
            pairing += sensitivity * p_end[i];
        }
        worst = worst.max(pairing.abs());
    }
    Ok(worst)
}

/// `max |H(z(t)) - H(z0)|` along the orbit at the stored knots.
pub fn energy_drift(
    hamiltonian: &Hamiltonian,
    z0: &PhasePoint,
    t0: f64,
    t1: f64,
    settings: IntegratorSettings,
) -> Result<f64> {
    if !hamiltonian.is_autonomous() {
        return Err(Error::Precondition("energy drift applies to autonomous Hamiltonians".into()));
    }
    let traj = integrate_flow(&hamiltonian.field(), &z0.state(), t0, t1, settings)?;
    let e0 = hamiltonian.value_z(t0, &z0.state());
    Ok(traj
        .states()
        .iter()
        .fold(0.0f64, |acc, z| acc.max((hamiltonian.value_z(t0, z) - e0).abs())))
}

/// One elementary canonical permutation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PermutationStep {
    /// `X^i = -p_i, P_i = x^i`, other pairs untouched.
    SwapPair(usize),
    /// Exchange conjugate pairs `i` and `j`.
    SwapCoords(usize, usize),
}

/// Composition of elementary canonical permutations; acts linearly on `(x, p)`.
#[derive(Clone, Debug)]
pub struct CanonicalPermutation {
    m: usize,
    steps: Vec<PermutationStep>,
}

impl CanonicalPermutation {
    pub fn identity(m: usize) -> Self {
        Self { m, steps: Vec::new() }
    }

    pub fn new(m: usize, steps: Vec<PermutationStep>) -> Result<Self> {
        for step in &steps {
            match *step {
                PermutationStep::SwapPair(i) if i >= m => {
                    return Err(Error::Dimension(format!("pair index {i} out of range")));
                }
                PermutationStep::SwapCoords(i, j) if i >= m || j >= m => {
                    return Err(Error::Dimension(format!("coordinate swap ({i},{j}) out of range")));
                }
                _ => {}
            }
        }
        Ok(Self { m, steps })
    }

    pub fn dof(&self) -> usize {
        self.m
    }

    pub fn is_identity(&self) -> bool {
        self.steps.is_empty()
    }

    /// Matrix of the forward map `z -> Z`.
    pub fn forward_matrix(&self) -> DMatrix<f64> {
        let n = 2 * self.m;
        let mut mat = DMatrix::identity(n, n);
        for step in &self.steps {
            let mut stepm = DMatrix::identity(n, n);
            match *step {
                PermutationStep::SwapPair(i) => {
                    stepm[(i, i)] = 0.0;
                    stepm[(self.m + i, self.m + i)] = 0.0;
                    stepm[(i, self.m + i)] = -1.0; // X^i = -p_i
                    stepm[(self.m + i, i)] = 1.0; // P_i = x^i
                }
                PermutationStep::SwapCoords(i, j) => {
                    stepm[(i, i)] = 0.0;
                    stepm[(j, j)] = 0.0;
                    stepm[(i, j)] = 1.0;
                    stepm[(j, i)] = 1.0;
                    stepm[(self.m + i, self.m + i)] = 0.0;
                    stepm[(self.m + j, self.m + j)] = 0.0;
                    stepm[(self.m + i, self.m + j)] = 1.0;
                    stepm[(self.m + j, self.m + i)] = 1.0;
                }
            }
            mat = stepm * mat;
        }
        mat
    }

    pub fn inverse_matrix(&self) -> DMatrix<f64> {
        // orthogonal signed permutation: inverse = transpose
        self.forward_matrix().transpose()
    }

    pub fn forward_state(&self, z: &[f64]) -> Vec<f64> {
        let v = nalgebra::DVector::from_column_slice(z);
        (self.forward_matrix() * v).iter().copied().collect()
    }

    pub fn inverse_state(&self, z: &[f64]) -> Vec<f64> {
        let v = nalgebra::DVector::from_column_slice(z);
        (self.inverse_matrix() * v).iter().copied().collect()
    }

    /// Express `H` in the permuted variables: `K(t, Z) = H(t, inverse(Z))`.
    pub fn apply_to_hamiltonian(&self, hamiltonian: &Hamiltonian) -> Hamiltonian {
        let m = self.m;
        let inv = self.inverse_matrix();
        let h = hamiltonian.clone();
        let inv2 = inv.clone();
        let mut out = Hamiltonian::new(m, move |t, x, p| {
            let mut zv = nalgebra::DVector::zeros(2 * m);
            for i in 0..m {
                zv[i] = x[i];
                zv[m + i] = p[i];
            }
            let z = &inv2 * zv;
            h.value(t, z.as_slice().split_at(m).0, z.as_slice().split_at(m).1)
        });
        let h = hamiltonian.clone();
        let gx_inv = inv;
        out = out.with_gradients(
            {
                let h = h.clone();
                let inv = gx_inv.clone();
                move |t, x, p| {
                    let grad = permuted_gradient(&h, &inv, m, t, x, p);
                    grad[..m].to_vec()
                }
            },
            move |t, x, p| {
                let grad = permuted_gradient(&h, &gx_inv, m, t, x, p);
                grad[m..].to_vec()
            },
        );
        out.autonomous = hamiltonian.autonomous;
        out.homogeneous_in_p = false; // pair swaps mix x and p
        out.h_fd = hamiltonian.h_fd;
        out
    }

    pub fn steps(&self) -> &[PermutationStep] {
        &self.steps
    }
}

fn permuted_gradient(
    h: &Hamiltonian,
    inv: &DMatrix<f64>,
    m: usize,
    t: f64,
    x: &[f64],
    p: &[f64],
) -> Vec<f64> {
    let mut zv = nalgebra::DVector::zeros(2 * m);
    for i in 0..m {
        zv[i] = x[i];
        zv[m + i] = p[i];
    }
    let z = inv * zv;
    let grad = h.phase_gradient(t, z.as_slice());
    // grad_Z K = (inverse matrix)^T grad_z H
    let gv = nalgebra::DVector::from_column_slice(&grad);
    (inv.transpose() * gv).iter().copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chains::{circle_clockwise, segment, Chain};
    use approx::assert_abs_diff_eq;

    pub fn oscillator() -> Hamiltonian {
        Hamiltonian::autonomous(1, |x, p| 0.5 * (p[0] * p[0] + x[0] * x[0])).with_gradients(
            |_, x, _| vec![x[0]],
            |_, _, p| vec![p[0]],
        )
    }

    pub fn pendulum() -> Hamiltonian {
        Hamiltonian::autonomous(1, |x, p| 0.5 * p[0] * p[0] - x[0].cos()).with_gradients(
            |_, x, _| vec![x[0].sin()],
            |_, _, p| vec![p[0]],
        )
    }

    #[test]
    fn oscillator_field_components() {
        let w = oscillator().field();
        assert_eq!(w.value(0.0, &[1.0, 2.0]), vec![2.0, -1.0]);
    }

    #[test]
    fn momentum_hamiltonian_field() {
        let h = Hamiltonian::autonomous(1, |_, p| p[0]).with_gradients(
            |_, _, _| vec![0.0],
            |_, _, _| vec![1.0],
        );
        assert_eq!(h.field().value(0.0, &[0.3, 0.7]), vec![1.0, 0.0]);
    }

    #[test]
    fn pendulum_field_identity() {
        let samples = vec![vec![0.5, 0.2], vec![-1.0, 0.8], vec![2.2, -0.4]];
        let r = field_identity_residual(&pendulum(), &samples, 0.0).unwrap();
        assert!(r < 1e-8, "i_w beta + dH residual {r}");
    }

    #[test]
    fn poincare_cartan_zero_hamiltonian() {
        let h = Hamiltonian::autonomous(2, |_, _| 0.0)
            .with_gradients(|_, _, _| vec![0.0; 2], |_, _, _| vec![0.0; 2]);
        let alpha = poincare_cartan_form(&h);
        // alpha = p_i dx^i
        let z = [0.4, 1.0, -2.0, 0.3, 0.9];
        let c = alpha.coeffs_at(0.0, &z);
        assert_eq!(c, vec![0.0, 0.3, 0.9, 0.0, 0.0]);
    }

    #[test]
    fn characteristic_direction_annihilates_dalpha() {
        let h = oscillator();
        let alpha = poincare_cartan_form(&h);
        let dalpha = alpha.exterior_derivative().unwrap();
        let contracted = dalpha.interior_product(&h.extended_field()).unwrap();
        for z in [[0.0, 0.7, 0.2], [1.3, -0.4, 0.9]] {
            let norm = contracted.coeff_norm(0.0, &z);
            assert!(norm < 1e-7, "i_w~ d alpha residual {norm}");
        }
    }

    #[test]
    fn alpha_is_relative_invariant() {
        // L_w~ alpha = d F with F = p dH/dp - H
        let h = oscillator();
        let alpha = poincare_cartan_form(&h);
        let lie = crate::forms::lie_derivative(&h.extended_field(), &alpha, crate::forms::LieMode::Cartan)
            .unwrap();
        let f = legendre_scalar(&h);
        let df = DifferentialForm::from_scalar(&f).exterior_derivative().unwrap();
        let diff = lie.sub(&df).unwrap();
        for z in [[0.0, 0.7, 0.2], [2.0, -0.3, 1.1]] {
            let norm = diff.coeff_norm(0.0, &z);
            assert!(norm < 1e-6, "L alpha - dF residual {norm}");
        }
    }

    #[test]
    fn symplecticity_zero_span_and_oscillator_period() {
        let h = oscillator();
        let z0 = PhasePoint::new(vec![1.0], vec![0.2]);
        let r0 = symplecticity_residual(
            &h,
            &z0,
            0.5,
            0.5,
            IntegratorSettings::with_step(1e-3),
            JacobianMethod::Variational,
        )
        .unwrap();
        assert_eq!(r0.omega_residual, 0.0);
        let r = symplecticity_residual(
            &h,
            &z0,
            0.0,
            2.0 * std::f64::consts::PI,
            IntegratorSettings::with_step(1e-3),
            JacobianMethod::Variational,
        )
        .unwrap();
        assert!(r.omega_residual < 1e-6, "omega residual {}", r.omega_residual);
        assert!(r.volume_residual < 1e-6, "volume residual {}", r.volume_residual);
    }

    #[test]
    fn pendulum_symplecticity_both_jacobian_routes() {
        let h = pendulum();
        let z0 = PhasePoint::new(vec![0.9], vec![0.4]);
        let settings = IntegratorSettings::with_step(1e-3);
        let var = symplecticity_residual(&h, &z0, 0.0, 10.0, settings, JacobianMethod::Variational)
            .unwrap();
        assert!(var.omega_residual < 1e-5, "variational residual {}", var.omega_residual);
        let fd = symplecticity_residual(&h, &z0, 0.0, 10.0, settings, JacobianMethod::FiniteDifference)
            .unwrap();
        assert!(fd.omega_residual < 1e-4, "fd residual {}", fd.omega_residual);
    }

    #[test]
    fn loop_action_constant_on_phase_circle() {
        // clockwise circle of radius r in (x, p): int p dx = pi r^2 > 0
        let h = oscillator();
        let r = 0.8;
        let curve = Chain::from_cube(circle_clockwise(2, vec![0.2, 0.1], r, (0, 1)));
        let settings = CheckSettings {
            quadrature: crate::chains::QuadratureSpec::new(5, 8),
            ..CheckSettings::default()
        };
        let times = [0.0, 1.0, 2.5, 4.0];
        let series = loop_action_drift(&h, &curve, &times, LoopMode::ClosedZeta, &settings).unwrap();
        assert_abs_diff_eq!(series.values[0], std::f64::consts::PI * r * r, epsilon = 1e-9);
        assert!(series.passes(), "zeta drift {}", series.max_drift());
    }

    #[test]
    fn homogeneous_open_curve_action_is_constant() {
        // H = |p| in 1 DOF away from p = 0: straight characteristics keep p
        let h = Hamiltonian::autonomous(1, |_, p| p[0].abs())
            .with_gradients(|_, _, _| vec![0.0], |_, _, p| vec![p[0].signum()])
            .homogeneous();
        let curve = Chain::from_cube(segment(vec![0.0, 1.0], vec![0.5, 1.5]));
        let settings = CheckSettings::default();
        let series =
            loop_action_drift(&h, &curve, &[0.0, 0.7, 1.4], LoopMode::HomogeneousOpen, &settings)
                .unwrap();
        assert!(series.passes(), "open action drift {}", series.max_drift());
    }

    #[test]
    fn open_curve_rejected_in_closed_mode() {
        let h = oscillator();
        let curve = Chain::from_cube(segment(vec![0.0, 1.0], vec![0.5, 1.5]));
        let err = loop_action_drift(
            &h,
            &curve,
            &[0.0, 1.0],
            LoopMode::ClosedZeta,
            &CheckSettings::default(),
        );
        assert!(matches!(err, Err(Error::Precondition(_))));
    }

    #[test]
    fn open_curve_action_drifts_for_generic_hamiltonian() {
        // negative control: pendulum is not homogeneous; drive the open curve
        // through the zeta transport directly and observe drift
        let h = pendulum();
        let curve = Chain::from_cube(segment(vec![0.0, 1.0], vec![0.5, 1.5]));
        let settings = CheckSettings::default();
        let series = check_transport_invariance(
            &h.field(),
            &zeta_form(1),
            &curve,
            &[0.0, 1.0, 2.0],
            TransportKind::Nonautonomous,
            &settings,
        )
        .unwrap();
        assert!(
            series.max_drift() > 10.0 * series.tolerance,
            "expected drift, got {}",
            series.max_drift()
        );
    }

    #[test]
    fn gauss_relation_for_euclidean_norm() {
        let h = Hamiltonian::autonomous(2, |_, p| (p[0] * p[0] + p[1] * p[1]).sqrt())
            .with_gradients(
                |_, _, _| vec![0.0, 0.0],
                |_, _, p| {
                    let n = (p[0] * p[0] + p[1] * p[1]).sqrt();
                    vec![p[0] / n, p[1] / n]
                },
            )
            .homogeneous();
        let r = gauss_relation_residual(
            &h,
            &[0.3, -0.2],
            &[0.8, 0.6],
            1.5,
            IntegratorSettings::with_step(1e-3),
        )
        .unwrap();
        assert!(r < 1e-6, "Gauss relation residual {r}");
        let r0 = gauss_relation_residual(
            &h,
            &[0.3, -0.2],
            &[0.8, 0.6],
            0.0,
            IntegratorSettings::with_step(1e-3),
        )
        .unwrap();
        assert!(r0 < 1e-12, "t = 0 residual {r0}");
    }

    #[test]
    fn energy_is_conserved_on_builtin_systems() {
        let h = pendulum();
        let drift = energy_drift(
            &h,
            &PhasePoint::new(vec![1.2], vec![0.3]),
            0.0,
            5.0,
            IntegratorSettings::with_step(1e-3),
        )
        .unwrap();
        assert!(drift < 5.0 * 1e-6, "energy drift {drift}");
    }

    #[test]
    fn legendre_scalar_matches_lagrangian_for_mechanical_h() {
        // H = p^2/2 + V(x): F = p dH/dp - H = p^2/2 - V = L(x, xdot) along orbits
        let h = pendulum();
        let f = legendre_scalar(&h);
        let traj = integrate_flow(
            &h.field(),
            &[0.7, 0.5],
            0.0,
            3.0,
            IntegratorSettings::with_step(1e-3),
        )
        .unwrap();
        for (i, z) in traj.states().iter().enumerate().step_by(500) {
            let t = traj.times()[i];
            let xdot = z[1]; // dH/dp = p
            let lagrangian = 0.5 * xdot * xdot + z[0].cos();
            let mut ext = vec![t];
            ext.extend_from_slice(z);
            assert_abs_diff_eq!(f.value(0.0, &ext), lagrangian, epsilon = 1e-6);
        }
    }

    #[test]
    fn permutations_are_symplectic_and_invert() {
        let perm = CanonicalPermutation::new(
            3,
            vec![PermutationStep::SwapPair(1), PermutationStep::SwapCoords(0, 2)],
        )
        .unwrap();
        let mat = perm.forward_matrix();
        let omega = canonical_omega(3);
        let residual = (mat.transpose() * &omega * &mat - &omega).abs().max();
        assert!(residual < 1e-14, "permutation symplecticity {residual}");
        let z = vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
        let round = perm.inverse_state(&perm.forward_state(&z));
        for (a, b) in z.iter().zip(&round) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-15);
        }
    }

    #[test]
    fn permuted_hamiltonian_keeps_dynamics() {
        // swapping the conjugate pair of a 1-DOF oscillator maps trajectories
        // onto trajectories of the transformed Hamiltonian
        let h = oscillator();
        let perm =
            CanonicalPermutation::new(1, vec![PermutationStep::SwapPair(0)]).unwrap();
        let k = perm.apply_to_hamiltonian(&h);
        let settings = IntegratorSettings::with_step(1e-3);
        let z0 = vec![0.6, -0.2];
        let hz = integrate_flow(&h.field(), &z0, 0.0, 1.1, settings).unwrap();
        let kz = integrate_flow(&k.field(), &perm.forward_state(&z0), 0.0, 1.1, settings).unwrap();
        let mapped = perm.forward_state(hz.end_state());
        for (a, b) in mapped.iter().zip(kz.end_state()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-8);
        }
    }
}
