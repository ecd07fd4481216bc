//! Poincare sections inside an energy level: crossing detection, the return
//! map with its Jacobian in user-declared section coordinates, and the
//! restricted symplectic form.

use nalgebra::{DMatrix, DVector};

use super::{canonical_omega, Hamiltonian};
use crate::chart::ScalarField;
use crate::error::{Error, Result};
use crate::flow::{integrate_flow, IntegratorSettings};

/// A codimension-2 section `{s = 0} ∩ {H = h}` with a coordinate chart.
///
/// The chart is declared by `coord_axes` (the 2m-2 phase axes that
/// parametrize the section); the remaining two axes are solved from the
/// section and energy constraints by a 2x2 Newton iteration seeded from
/// `seed`.
#[derive(Clone)]
pub struct SectionSpec {
    pub energy: f64,
    pub section_fn: ScalarField,
    /// Required sign of `ds/dt` at accepted crossings.
    pub crossing_sign: f64,
    pub coord_axes: Vec<usize>,
    pub seed: Vec<f64>,
    pub max_return_time: f64,
    pub crossing_tol: f64,
}

impl SectionSpec {
    /// Section defined by one phase coordinate taking a fixed value.
    pub fn coordinate(
        energy: f64,
        axis: usize,
        value: f64,
        crossing_sign: f64,
        coord_axes: Vec<usize>,
        seed: Vec<f64>,
    ) -> Self {
        let dim = seed.len();
        assert!(axis < dim);
        let section_fn = ScalarField::autonomous(dim, move |z| z[axis] - value);
        Self {
            energy,
            section_fn,
            crossing_sign,
            coord_axes,
            seed,
            max_return_time: 50.0,
            crossing_tol: 1e-10,
        }
    }

    pub fn with_max_return_time(mut self, t: f64) -> Self {
        self.max_return_time = t;
        self
    }

    fn phase_dim(&self) -> usize {
        self.seed.len()
    }

    /// The two axes reconstructed from the constraints.
    pub fn solved_axes(&self) -> Vec<usize> {
        (0..self.phase_dim()).filter(|a| !self.coord_axes.contains(a)).collect()
    }

    /// Section-chart coordinates of a phase point.
    pub fn project(&self, z: &[f64]) -> Vec<f64> {
        self.coord_axes.iter().map(|&a| z[a]).collect()
    }

    /// Reconstruct the phase point on `{s = 0, H = h}` with the given chart
    /// coordinates, solving the two remaining axes by Newton from `seed`.
    pub fn embed(&self, hamiltonian: &Hamiltonian, u: &[f64]) -> Result<Vec<f64>> {
        if u.len() != self.coord_axes.len() {
            return Err(Error::Dimension("section coordinate count mismatch".into()));
        }
        let solved = self.solved_axes();
        if solved.len() != 2 {
            return Err(Error::Dimension(
                "section chart must leave exactly two solved axes".into(),
            ));
        }
        let mut z = self.seed.clone();
        for (&a, &v) in self.coord_axes.iter().zip(u) {
            z[a] = v;
        }
        let h_fd = 1e-7;
        for _ in 0..60 {
            let f0 = self.section_fn.value(0.0, &z);
            let f1 = hamiltonian.value_z(0.0, &z) - self.energy;
            if f0.abs() < 1e-13 && f1.abs() < 1e-13 {
                return Ok(z);
            }
            let mut jac = DMatrix::zeros(2, 2);
            for (col, &a) in solved.iter().enumerate() {
                let keep = z[a];
                z[a] = keep + h_fd;
                let f0p = self.section_fn.value(0.0, &z);
                let f1p = hamiltonian.value_z(0.0, &z) - self.energy;
                z[a] = keep - h_fd;
                let f0m = self.section_fn.value(0.0, &z);
                let f1m = hamiltonian.value_z(0.0, &z) - self.energy;
                z[a] = keep;
                jac[(0, col)] = (f0p - f0m) / (2.0 * h_fd);
                jac[(1, col)] = (f1p - f1m) / (2.0 * h_fd);
            }
            let rhs = DVector::from_column_slice(&[f0, f1]);
            let delta = jac
                .clone()
                .lu()
                .solve(&rhs)
                .ok_or_else(|| Error::Newton("singular 2x2 system in section embed".into()))?;
            for (col, &a) in solved.iter().enumerate() {
                z[a] -= delta[col];
            }
        }
        Err(Error::Newton("section embed did not converge".into()))
    }

    /// Tangent frame of the section at `z`: columns `d embed / d u`.
    pub fn tangent_frame(&self, hamiltonian: &Hamiltonian, z: &[f64]) -> Result<DMatrix<f64>> {
        let u0 = self.project(z);
        let n = self.phase_dim();
        let k = u0.len();
        let mut frame = DMatrix::zeros(n, k);
        let h = 1e-5;
        let mut spec = self.clone();
        spec.seed = z.to_vec();
        let mut buf = u0.clone();
        for j in 0..k {
            buf[j] = u0[j] + h;
            let plus = spec.embed(hamiltonian, &buf)?;
            buf[j] = u0[j] - h;
            let minus = spec.embed(hamiltonian, &buf)?;
            buf[j] = u0[j];
            for i in 0..n {
                frame[(i, j)] = (plus[i] - minus[i]) / (2.0 * h);
            }
        }
        Ok(frame)
    }
}

/// Result of one application of the section return map.
#[derive(Clone, Debug)]
pub struct ReturnMap {
    /// Image point on the section.
    pub image: Vec<f64>,
    /// Return time.
    pub tau: f64,
    /// Jacobian of the map in section coordinates.
    pub jacobian: DMatrix<f64>,
}

fn locate_return(
    hamiltonian: &Hamiltonian,
    section: &SectionSpec,
    z0: &[f64],
    settings: IntegratorSettings,
) -> Result<(Vec<f64>, f64)> {
    let field = hamiltonian.field();
    let s0 = section.section_fn.value(0.0, z0);
    if s0.abs() > 1e-8 {
        return Err(Error::Section(format!("start point off the section: s = {s0:.3e}")));
    }
    // transversality at the start
    let w0 = field.value(0.0, z0);
    let grad_s = section.section_fn.gradient_at(0.0, z0);
    let sdot0: f64 = w0.iter().zip(&grad_s).map(|(a, b)| a * b).sum();
    if sdot0.abs() < 1e-8 {
        return Err(Error::Section(format!("tangential start: ds/dt = {sdot0:.3e}")));
    }
    let traj = integrate_flow(&field, z0, 0.0, section.max_return_time, settings)?;
    let times = traj.times();
    let sign = section.crossing_sign;
    let mut prev = s0;
    for w in 1..times.len() {
        let cur = section.section_fn.value(0.0, traj.states()[w]);
        // accepted crossing: s passes through 0 in the requested direction,
        // strictly from the opposite side (skips the departure at t = 0)
        if sign * prev < 0.0 && sign * cur >= 0.0 {
            let (mut lo, mut hi) = (times[w - 1], times[w]);
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                let smid = section.section_fn.value(0.0, &traj.state_at(mid));
                if sign * smid < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo < 1e-15 {
                    break;
                }
            }
            // Newton polish on the dense output
            let mut t_star = 0.5 * (lo + hi);
            for _ in 0..8 {
                let z = traj.state_at(t_star);
                let s = section.section_fn.value(0.0, &z);
                if s.abs() < section.crossing_tol {
                    break;
                }
                let grad = section.section_fn.gradient_at(0.0, &z);
                let w = field.value(0.0, &z);
                let sdot: f64 = grad.iter().zip(&w).map(|(a, b)| a * b).sum();
                if sdot.abs() < 1e-12 {
                    return Err(Error::Section("tangential crossing".into()));
                }
                t_star -= s / sdot;
            }
            let z_star = traj.state_at(t_star);
            let s_star = section.section_fn.value(0.0, &z_star);
            if s_star.abs() > 10.0 * section.crossing_tol {
                return Err(Error::Section(format!(
                    "crossing refinement stalled at |s| = {s_star:.3e}"
                )));
            }
            // transversality at the crossing
            let grad = section.section_fn.gradient_at(0.0, &z_star);
            let wvec = field.value(0.0, &z_star);
            let sdot: f64 = grad.iter().zip(&wvec).map(|(a, b)| a * b).sum();
            if sdot * sign <= 0.0 || sdot.abs() < 1e-8 {
                return Err(Error::Section("crossing fails the transversality check".into()));
            }
            // snap exactly onto the section and the energy level
            let mut spec = section.clone();
            spec.seed = z_star.clone();
            let snapped = spec.embed(hamiltonian, &section.project(&z_star))?;
            return Ok((snapped, t_star));
        }
        prev = cur;
    }
    Err(Error::Escape(section.max_return_time))
}

/// First return map of the section, with its Jacobian in section coordinates
/// by symmetric differences of the full crossing computation.
pub fn poincare_return_map(
    hamiltonian: &Hamiltonian,
    section: &SectionSpec,
    z0: &[f64],
    settings: IntegratorSettings,
) -> Result<ReturnMap> {
    let energy_gap = (hamiltonian.value_z(0.0, z0) - section.energy).abs();
    if energy_gap > 1e-8 {
        return Err(Error::Section(format!("start point off the energy level by {energy_gap:.3e}")));
    }
    let (image, tau) = locate_return(hamiltonian, section, z0, settings)?;
    let u0 = section.project(z0);
    let k = u0.len();
    let h = 1e-4;
    let mut jac = DMatrix::zeros(k, k);
    let mut spec = section.clone();
    spec.seed = z0.to_vec();
    let mut buf = u0.clone();
    for j in 0..k {
        buf[j] = u0[j] + h;
        let zp = spec.embed(hamiltonian, &buf)?;
        let (img_p, _) = locate_return(hamiltonian, section, &zp, settings)?;
        buf[j] = u0[j] - h;
        let zm = spec.embed(hamiltonian, &buf)?;
        let (img_m, _) = locate_return(hamiltonian, section, &zm, settings)?;
        buf[j] = u0[j];
        let up = section.project(&img_p);
        let um = section.project(&img_m);
        for i in 0..k {
            jac[(i, j)] = (up[i] - um[i]) / (2.0 * h);
        }
    }
    Ok(ReturnMap { image, tau, jacobian: jac })
}

/// Matrix of the restricted form `beta|_Y` in the section chart at `z`.
pub fn beta_restriction_matrix(
    hamiltonian: &Hamiltonian,
    section: &SectionSpec,
    z: &[f64],
) -> Result<DMatrix<f64>> {
    let frame = section.tangent_frame(hamiltonian, z)?;
    let omega = canonical_omega(hamiltonian.dof());
    Ok(frame.transpose() * omega * frame)
}

/// `max | J^T B(image) J - B(z0) |` for the return map in section coordinates.
pub fn section_symplecticity_residual(
    hamiltonian: &Hamiltonian,
    section: &SectionSpec,
    z0: &[f64],
    settings: IntegratorSettings,
) -> Result<f64> {
    let rm = poincare_return_map(hamiltonian, section, z0, settings)?;
    let b0 = beta_restriction_matrix(hamiltonian, section, z0)?;
    let b1 = beta_restriction_matrix(hamiltonian, section, &rm.image)?;
    Ok((rm.jacobian.transpose() * b1 * &rm.jacobian - b0).abs().max())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamilton::PhasePoint;
    use approx::assert_abs_diff_eq;

    /// Uncoupled oscillators with frequencies 1 and sqrt(2).
    fn oscillator_pair() -> Hamiltonian {
        Hamiltonian::autonomous(2, |x, p| {
            0.5 * (p[0] * p[0] + x[0] * x[0]) + 0.5 * (p[1] * p[1] + 2.0 * x[1] * x[1])
        })
        .with_gradients(
            |_, x, _| vec![x[0], 2.0 * x[1]],
            |_, _, p| vec![p[0], p[1]],
        )
    }

    fn standard_section(h: f64, seed: Vec<f64>) -> SectionSpec {
        // section {x2 = 0, p2 > 0}; chart (x1, p1) = axes 0, 2
        SectionSpec::coordinate(h, 1, 0.0, 1.0, vec![0, 2], seed)
    }

    fn point_on_section(x1: f64, p1: f64, h: f64) -> Vec<f64> {
        let rest = 2.0 * h - p1 * p1 - x1 * x1;
        assert!(rest > 0.0);
        vec![x1, 0.0, p1, rest.sqrt()]
    }

    #[test]
    fn return_time_is_the_fast_period() {
        let h = oscillator_pair();
        let z0 = point_on_section(0.4, 0.3, 1.0);
        let section = standard_section(1.0, z0.clone());
        let rm = poincare_return_map(&h, &section, &z0, IntegratorSettings::with_step(1e-3))
            .unwrap();
        let expected = 2.0 * std::f64::consts::PI / 2.0f64.sqrt();
        assert_abs_diff_eq!(rm.tau, expected, epsilon = 1e-8);
    }

    #[test]
    fn return_map_is_the_expected_rotation() {
        let h = oscillator_pair();
        let z0 = point_on_section(0.4, 0.3, 1.0);
        let section = standard_section(1.0, z0.clone());
        let rm = poincare_return_map(&h, &section, &z0, IntegratorSettings::with_step(1e-3))
            .unwrap();
        // (x1, p1) rotates by -tau with tau = 2 pi / sqrt(2)
        let tau = 2.0 * std::f64::consts::PI / 2.0f64.sqrt();
        let expect_x = 0.4 * tau.cos() + 0.3 * tau.sin();
        let expect_p = -0.4 * tau.sin() + 0.3 * tau.cos();
        assert_abs_diff_eq!(rm.image[0], expect_x, epsilon = 1e-6);
        assert_abs_diff_eq!(rm.image[2], expect_p, epsilon = 1e-6);
        // Jacobian matches the rotation matrix
        assert_abs_diff_eq!(rm.jacobian[(0, 0)], tau.cos(), epsilon = 1e-6);
        assert_abs_diff_eq!(rm.jacobian[(0, 1)], tau.sin(), epsilon = 1e-6);
        assert_abs_diff_eq!(rm.jacobian[(1, 0)], -tau.sin(), epsilon = 1e-6);
        assert_abs_diff_eq!(rm.jacobian[(1, 1)], tau.cos(), epsilon = 1e-6);
    }

    #[test]
    fn section_return_map_is_symplectic() {
        let h = oscillator_pair();
        let z0 = point_on_section(0.4, 0.3, 1.0);
        let section = standard_section(1.0, z0.clone());
        let r =
            section_symplecticity_residual(&h, &section, &z0, IntegratorSettings::with_step(1e-3))
                .unwrap();
        assert!(r < 1e-5, "section symplecticity residual {r}");
    }

    #[test]
    fn restricted_form_is_nondegenerate() {
        let h = oscillator_pair();
        let z0 = point_on_section(0.4, 0.3, 1.0);
        let section = standard_section(1.0, z0.clone());
        let b = beta_restriction_matrix(&h, &section, &z0).unwrap();
        assert!(b.determinant().abs() > 1e-6, "det beta' = {}", b.determinant());
        // chart (x1, p1) is a conjugate pair: beta' is the canonical 2x2 form
        assert_abs_diff_eq!(b[(0, 1)], -1.0, epsilon = 1e-7);
        assert_abs_diff_eq!(b[(1, 0)], 1.0, epsilon = 1e-7);
    }

    #[test]
    fn off_section_start_is_rejected() {
        let h = oscillator_pair();
        let z0 = vec![0.4, 0.2, 0.3, 1.0];
        let section = standard_section(1.0, point_on_section(0.4, 0.3, 1.0));
        let err = poincare_return_map(&h, &section, &z0, IntegratorSettings::with_step(1e-3));
        assert!(err.is_err());
    }

    #[test]
    fn escape_is_reported_when_no_return() {
        // free motion never comes back to x2 = 0 from p2 > 0
        let h = Hamiltonian::autonomous(2, |_, p| 0.5 * (p[0] * p[0] + p[1] * p[1]))
            .with_gradients(|_, _, _| vec![0.0, 0.0], |_, _, p| p.to_vec());
        let z0 = vec![0.0, 0.0, 0.6, 0.8];
        let section = SectionSpec::coordinate(0.5, 1, 0.0, 1.0, vec![0, 2], z0.clone())
            .with_max_return_time(5.0);
        let err = poincare_return_map(&h, &section, &z0, IntegratorSettings::with_step(1e-3));
        assert!(matches!(err, Err(Error::Escape(_))));
    }

    #[test]
    fn energy_mismatch_is_rejected() {
        let h = oscillator_pair();
        let z0 = point_on_section(0.4, 0.3, 1.0);
        let section = standard_section(1.2, z0.clone());
        let err = poincare_return_map(&h, &section, &z0, IntegratorSettings::with_step(1e-3));
        assert!(matches!(err, Err(Error::Section(_))));
    }

    #[test]
    fn embed_reconstructs_phase_points() {
        let h = oscillator_pair();
        let z0 = point_on_section(0.4, 0.3, 1.0);
        let section = standard_section(1.0, z0.clone());
        let z = section.embed(&h, &[0.1, -0.2]).unwrap();
        assert_abs_diff_eq!(z[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(h.value_z(0.0, &z), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(z[0], 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(z[2], -0.2, epsilon = 1e-15);
        let _ = PhasePoint::from_state(&z);
    }
}
