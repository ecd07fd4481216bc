//! Order reduction of an autonomous Hamiltonian system on an energy level:
//! solve `p_1 = g(x, p_2.., h)` by Newton and use `x^1` as the new time, with
//! reduced Hamiltonian `-g`.

use super::{CanonicalPermutation, Hamiltonian, PermutationStep, PhasePoint};
use crate::chart::VectorField;
use crate::error::{Error, Result};
use crate::flow::{integrate_flow, IntegratorSettings};

const NEWTON_TOL: f64 = 1e-12;
const NEWTON_MAX_ITER: usize = 60;

/// The energy-level reduction of an autonomous Hamiltonian system.
///
/// `x^1` of the (possibly permuted) variables plays the role of time `T`; the
/// remaining pairs `(x^2.., p_2..)` evolve under the reduced Hamiltonian
/// `-g(T, x.., p.., h)`.
#[derive(Clone)]
pub struct ReducedSystem {
    original: Hamiltonian,
    /// Permutation applied to reach `dH/dp_1 != 0`, if any.
    pub permutation: Option<CanonicalPermutation>,
    pub energy: f64,
    p1_seed: f64,
}

impl ReducedSystem {
    /// Newton solve of `H(T, x_rest, p1, p_rest) = h` for `p1`.
    pub fn solve_p1(&self, t_coord: f64, x_rest: &[f64], p_rest: &[f64]) -> Result<f64> {
        let m = self.original.dof();
        let mut x = Vec::with_capacity(m);
        x.push(t_coord);
        x.extend_from_slice(x_rest);
        let mut p = Vec::with_capacity(m);
        p.push(self.p1_seed);
        p.extend_from_slice(p_rest);
        for _ in 0..NEWTON_MAX_ITER {
            let f = self.original.value(0.0, &x, &p) - self.energy;
            if f.abs() < NEWTON_TOL {
                return Ok(p[0]);
            }
            let slope = self.original.grad_p_at(0.0, &x, &p)[0];
            if slope.abs() < 1e-12 {
                return Err(Error::Degeneracy(format!(
                    "dH/dp_1 = {slope:.3e} during the energy-level solve"
                )));
            }
            p[0] -= f / slope;
        }
        Err(Error::Newton("energy-level solve for p_1 did not converge".into()))
    }

    /// The reduced Hamiltonian `-g` on `m - 1` degrees of freedom, with `T`
    /// as its time argument. Gradients come from implicit differentiation.
    pub fn hamiltonian(&self) -> Hamiltonian {
        let m = self.original.dof();
        let inner = self.clone();
        let eval = move |t: f64, xr: &[f64], pr: &[f64]| -> f64 {
            -inner
                .solve_p1(t, xr, pr)
                .expect("reduced Hamiltonian: energy-level solve failed")
        };
        let inner = self.clone();
        let original = self.original.clone();
        let grad_builder = move |t: f64, xr: &[f64], pr: &[f64]| -> (Vec<f64>, Vec<f64>, f64) {
            let g = inner
                .solve_p1(t, xr, pr)
                .expect("reduced Hamiltonian: energy-level solve failed");
            let mut x = Vec::with_capacity(m);
            x.push(t);
            x.extend_from_slice(xr);
            let mut p = Vec::with_capacity(m);
            p.push(g);
            p.extend_from_slice(pr);
            let gx = original.grad_x_at(0.0, &x, &p);
            let gp = original.grad_p_at(0.0, &x, &p);
            // dg/dw = -(dH/dw)/(dH/dp1); reduced Hamiltonian is -g
            let slope = gp[0];
            let grad_x: Vec<f64> = gx[1..].iter().map(|v| v / slope).collect();
            let grad_p: Vec<f64> = gp[1..].iter().map(|v| v / slope).collect();
            let dt = gx[0] / slope;
            (grad_x, grad_p, dt)
        };
        let gb1 = grad_builder.clone();
        let gb2 = grad_builder.clone();
        Hamiltonian::new(m - 1, eval)
            .with_gradients(
                move |t, xr, pr| gb1(t, xr, pr).0,
                move |t, xr, pr| gb2(t, xr, pr).1,
            )
            .with_time_partial(move |t, xr, pr| grad_builder(t, xr, pr).2)
            .with_h_fd(self.original.h_fd())
    }

    /// Vector field of the reduced system in `(x_rest, p_rest)` with time `T`.
    pub fn reduced_field(&self) -> VectorField {
        self.hamiltonian().field()
    }

    /// The Hamiltonian actually reduced (after any permutation).
    pub fn working_hamiltonian(&self) -> &Hamiltonian {
        &self.original
    }
}

/// Reduce an autonomous system on the level `H = h` near a seed point.
///
/// When `|dH/dp_1|` at the seed is not the largest `|dH/dp_j|`, the conjugate
/// pairs 1 and j are exchanged by an exact canonical permutation first.
pub fn reduce_on_energy_level(
    hamiltonian: &Hamiltonian,
    h: f64,
    seed: &PhasePoint,
) -> Result<ReducedSystem> {
    if !hamiltonian.is_autonomous() {
        return Err(Error::Precondition("reduction needs an autonomous Hamiltonian".into()));
    }
    let m = hamiltonian.dof();
    if m < 2 {
        return Err(Error::Precondition("reduction needs at least two degrees of freedom".into()));
    }
    if seed.dof() != m {
        return Err(Error::Dimension("seed does not match the Hamiltonian".into()));
    }
    let level_gap = (hamiltonian.value(0.0, &seed.x, &seed.p) - h).abs();
    if level_gap > 1e-6 {
        return Err(Error::Precondition(format!(
            "seed is off the energy level by {level_gap:.3e}"
        )));
    }
    let gp = hamiltonian.grad_p_at(0.0, &seed.x, &seed.p);
    let best = (0..m).max_by(|&a, &b| gp[a].abs().total_cmp(&gp[b].abs())).unwrap();
    if gp[best].abs() < 1e-10 {
        return Err(Error::Degeneracy(format!(
            "all |dH/dp_j| below 1e-10 at the seed (max {:.3e})",
            gp[best].abs()
        )));
    }
    let (working, permutation, seed_state) = if best == 0 {
        (hamiltonian.clone(), None, seed.state())
    } else {
        let perm = CanonicalPermutation::new(m, vec![PermutationStep::SwapCoords(0, best)])?;
        let transformed = perm.apply_to_hamiltonian(hamiltonian);
        let z = perm.forward_state(&seed.state());
        (transformed, Some(perm), z)
    };
    Ok(ReducedSystem {
        original: working,
        permutation,
        energy: h,
        p1_seed: seed_state[m],
    })
}

/// Sup distance between the reduced trajectory and the full trajectory
/// reparametrized by `x^1`, sampled on `n_samples` points of `[0, t_span]`
/// in the reduced time `T`.
pub fn reduction_comparison_error(
    hamiltonian: &Hamiltonian,
    h: f64,
    seed: &PhasePoint,
    t_span: f64,
    n_samples: usize,
    settings: IntegratorSettings,
) -> Result<f64> {
    let reduced = reduce_on_energy_level(hamiltonian, h, seed)?;
    let m = hamiltonian.dof();
    let seed_state = match &reduced.permutation {
        Some(p) => p.forward_state(&seed.state()),
        None => seed.state(),
    };
    let t0_coord = seed_state[0];
    // reduced initial data: (x_rest, p_rest)
    let mut y0 = seed_state[1..m].to_vec();
    y0.extend_from_slice(&seed_state[m + 1..]);
    let reduced_traj =
        integrate_flow(&reduced.reduced_field(), &y0, t0_coord, t0_coord + t_span, settings)?;

    // full trajectory of the working Hamiltonian, long enough for x^1 to sweep
    // the requested span (dx^1/dt = dH/dp_1 bounded below along the arc)
    let working = reduced.working_hamiltonian();
    let full_field = working.field();
    let mut t_end = t_span;
    let mut full = integrate_flow(&full_field, &seed_state, 0.0, t_end, settings)?;
    let target = t0_coord + t_span;
    let mut guard = 0;
    while full.end_state()[0] < target {
        t_end *= 1.6;
        guard += 1;
        if guard > 12 {
            return Err(Error::Escape(t_end));
        }
        full = integrate_flow(&full_field, &seed_state, 0.0, t_end, settings)?;
    }

    let mut worst = 0.0f64;
    for k in 0..=n_samples {
        let t_red = t0_coord + t_span * (k as f64) / (n_samples as f64);
        // invert x^1(t) = t_red on the full orbit by bisection on the knots
        let t_cross = invert_monotone_coordinate(&full, 0, t_red)?;
        let z = full.state_at(t_cross);
        let y = reduced_traj.state_at(t_red);
        for i in 0..m - 1 {
            worst = worst.max((y[i] - z[1 + i]).abs());
            worst = worst.max((y[m - 1 + i] - z[m + 1 + i]).abs());
        }
    }
    Ok(worst)
}

fn invert_monotone_coordinate(
    traj: &crate::flow::Trajectory,
    coord: usize,
    target: f64,
) -> Result<f64> {
    let times = traj.times();
    let states = traj.states();
    let mut bracket = None;
    for w in 0..times.len() - 1 {
        let (a, b) = (states[w][coord], states[w + 1][coord]);
        if (a - target) * (b - target) <= 0.0 {
            bracket = Some((times[w], times[w + 1]));
            break;
        }
    }
    let (mut lo, mut hi) =
        bracket.ok_or_else(|| Error::Coverage("coordinate target not reached".into()))?;
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        let v = traj.state_at(mid)[coord];
        if (traj.state_at(lo)[coord] - target) * (v - target) <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo < 1e-14 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}
