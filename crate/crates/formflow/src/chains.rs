//! Parametrized singular cubes and chains, quadrature of k-forms over them,
//! the boundary operator, Stokes residuals, and transport by flow maps.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::flow::FlowMap;
use crate::forms::{DifferentialForm, IndexTable};
use crate::quadrature::composite_unit;

type CubeMapFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
type TangentFn = Arc<dyn Fn(&[f64]) -> Vec<Vec<f64>> + Send + Sync>;

/// Smooth map `[0,1]^k -> R^m` with orientation and tangent access.
///
/// Tangent columns default to central differences of the parametrization;
/// maps are expected to extend smoothly a little past the closed cube, which
/// every analytic parametrization used here does.
#[derive(Clone)]
pub struct SingularCube {
    k: usize,
    dim: usize,
    map: CubeMapFn,
    tangents: Option<TangentFn>,
    orientation: i8,
    h_fd: f64,
}

impl SingularCube {
    pub fn new<F>(k: usize, dim: usize, map: F) -> Self
    where
        F: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        Self { k, dim, map: Arc::new(map), tangents: None, orientation: 1, h_fd: 1e-6 }
    }

    /// Zero-cube: a single point.
    pub fn point(coords: Vec<f64>) -> Self {
        let d = coords.len();
        Self::new(0, d, move |_| coords.clone())
    }

    pub fn with_tangents<T>(mut self, t: T) -> Self
    where
        T: Fn(&[f64]) -> Vec<Vec<f64>> + Send + Sync + 'static,
    {
        self.tangents = Some(Arc::new(t));
        self
    }

    pub fn with_orientation(mut self, orientation: i8) -> Self {
        assert!(orientation == 1 || orientation == -1);
        self.orientation = orientation;
        self
    }

    pub fn with_h_fd(mut self, h: f64) -> Self {
        self.h_fd = h;
        self
    }

    pub fn degree(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn orientation(&self) -> i8 {
        self.orientation
    }

    pub fn point_at(&self, s: &[f64]) -> Vec<f64> {
        (self.map)(s)
    }

    /// Tangent columns `d map / d s_j` as an `m x k` matrix.
    pub fn tangent_matrix(&self, s: &[f64]) -> DMatrix<f64> {
        let cols = if let Some(t) = &self.tangents {
            t(s)
        } else {
            let mut cols = Vec::with_capacity(self.k);
            let mut buf = s.to_vec();
            for j in 0..self.k {
                buf[j] = s[j] + self.h_fd;
                let plus = (self.map)(&buf);
                buf[j] = s[j] - self.h_fd;
                let minus = (self.map)(&buf);
                buf[j] = s[j];
                cols.push(
                    plus.iter().zip(&minus).map(|(a, b)| (a - b) / (2.0 * self.h_fd)).collect(),
                );
            }
            cols
        };
        let mut out = DMatrix::zeros(self.dim, self.k);
        for (j, col) in cols.iter().enumerate() {
            for i in 0..self.dim {
                out[(i, j)] = col[i];
            }
        }
        out
    }

    /// The 2k faces with the standard alternating signs, as a chain.
    pub fn boundary(&self) -> Result<Chain> {
        if self.k == 0 {
            return Err(Error::Degree("boundary of a 0-cube".into()));
        }
        let mut terms = Vec::with_capacity(2 * self.k);
        for axis in 0..self.k {
            for side in 0..2usize {
                // sign (-1)^{(axis+1) + side} with 1-based axis
                let sign = if (axis + 1 + side) % 2 == 0 { 1i64 } else { -1i64 };
                let parent_map = self.map.clone();
                let k = self.k;
                let face_map = move |s: &[f64]| -> Vec<f64> {
                    let mut full = Vec::with_capacity(k);
                    full.extend_from_slice(&s[..axis]);
                    full.push(side as f64);
                    full.extend_from_slice(&s[axis..]);
                    parent_map(&full)
                };
                let mut face = SingularCube::new(self.k - 1, self.dim, face_map)
                    .with_orientation(self.orientation)
                    .with_h_fd(self.h_fd);
                if let Some(t) = &self.tangents {
                    let t = t.clone();
                    let k = self.k;
                    face = face.with_tangents(move |s: &[f64]| {
                        let mut full = Vec::with_capacity(k);
                        full.extend_from_slice(&s[..axis]);
                        full.push(side as f64);
                        full.extend_from_slice(&s[axis..]);
                        let cols = t(&full);
                        cols.iter()
                            .enumerate()
                            .filter(|(j, _)| *j != axis)
                            .map(|(_, c)| c.clone())
                            .collect()
                    });
                }
                terms.push((sign, face));
            }
        }
        Ok(Chain { terms })
    }
}

/// Formal integer combination of singular cubes of one degree.
#[derive(Clone)]
pub struct Chain {
    terms: Vec<(i64, SingularCube)>,
}

impl Chain {
    pub fn new(terms: Vec<(i64, SingularCube)>) -> Result<Self> {
        if let Some((_, first)) = terms.first() {
            let (k, dim) = (first.degree(), first.dim());
            for (_, cube) in &terms {
                if cube.degree() != k || cube.dim() != dim {
                    return Err(Error::Degree("chain terms must share degree and chart".into()));
                }
            }
        }
        Ok(Self { terms })
    }

    pub fn from_cube(cube: SingularCube) -> Self {
        Self { terms: vec![(1, cube)] }
    }

    pub fn terms(&self) -> &[(i64, SingularCube)] {
        &self.terms
    }

    pub fn degree(&self) -> Option<usize> {
        self.terms.first().map(|(_, c)| c.degree())
    }

    pub fn dim(&self) -> Option<usize> {
        self.terms.first().map(|(_, c)| c.dim())
    }

    pub fn boundary(&self) -> Result<Chain> {
        let mut terms = Vec::new();
        for (coeff, cube) in &self.terms {
            for (sign, face) in cube.boundary()?.terms {
                terms.push((coeff * sign, face));
            }
        }
        Ok(Chain { terms })
    }

    /// Numerical closedness test: integrate probe forms over the boundary.
    ///
    /// A closed chain pairs to ~0 against any form; we use a deterministic
    /// set of smooth non-symmetric probes.
    pub fn closedness_residual(&self, q: &QuadratureSpec) -> Result<f64> {
        let k = self.degree().ok_or_else(|| Error::Degree("empty chain".into()))?;
        if k == 0 {
            return Err(Error::Degree("closedness of a 0-chain".into()));
        }
        let dim = self.dim().unwrap();
        let boundary = self.boundary()?;
        let n = crate::forms::coeff_count(dim, k - 1);
        let mut worst: f64 = 0.0;
        for probe_id in 0..3usize {
            let probe = DifferentialForm::autonomous(dim, k - 1, move |x| {
                (0..n)
                    .map(|c| {
                        let mut acc = 1.0 + 0.3 * (probe_id as f64 + 1.0) * (c as f64 + 1.0);
                        for (i, xi) in x.iter().enumerate() {
                            acc += ((i + c + probe_id) as f64 * 0.7 + 1.1) * xi
                                + (0.5 * xi + 0.2 * (c as f64)).sin();
                        }
                        acc
                    })
                    .collect()
            });
            let val = integrate_over_chain(&probe, &boundary, q, 0.0)?;
            worst = worst.max(val.abs());
        }
        Ok(worst)
    }
}

/// Composite Gauss-Legendre tensor rule on the parameter cube.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QuadratureSpec {
    pub points_per_axis: usize,
    pub panels_per_axis: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self { points_per_axis: 5, panels_per_axis: 4 }
    }
}

impl QuadratureSpec {
    pub fn new(points_per_axis: usize, panels_per_axis: usize) -> Self {
        assert!(points_per_axis >= 1 && panels_per_axis >= 1);
        Self { points_per_axis, panels_per_axis }
    }

    /// Tensor nodes and weights on `[0,1]^k` in lexicographic node order.
    pub fn tensor_nodes(&self, k: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let (nodes_1d, weights_1d) = composite_unit(self.points_per_axis, self.panels_per_axis);
        let n = nodes_1d.len();
        if k == 0 {
            return (vec![Vec::new()], vec![1.0]);
        }
        let total = n.pow(k as u32);
        let mut nodes = Vec::with_capacity(total);
        let mut weights = Vec::with_capacity(total);
        for flat in 0..total {
            let mut idx = flat;
            let mut node = vec![0.0; k];
            let mut w = 1.0;
            for axis in (0..k).rev() {
                let i = idx % n;
                idx /= n;
                node[axis] = nodes_1d[i];
                w *= weights_1d[i];
            }
            nodes.push(node);
            weights.push(w);
        }
        (nodes, weights)
    }
}

/// Integrate a degree-k form over a k-chain at evaluation time `t`.
///
/// The form is pulled back to each parameter cube through the tangent
/// minors and integrated with the composite tensor rule; summation order is
/// fixed for reproducibility.
pub fn integrate_over_chain(
    omega: &DifferentialForm,
    chain: &Chain,
    q: &QuadratureSpec,
    t: f64,
) -> Result<f64> {
    let Some(k) = chain.degree() else {
        return Ok(0.0);
    };
    if omega.degree() != k {
        return Err(Error::Degree(format!(
            "integrating a degree-{} form over a degree-{} chain",
            omega.degree(),
            k
        )));
    }
    if chain.dim() != Some(omega.dim()) {
        return Err(Error::Dimension("form and chain live on different charts".into()));
    }
    let table = IndexTable::new(omega.dim(), k);
    let (nodes, weights) = q.tensor_nodes(k);
    let mut total = 0.0;
    for (coeff, cube) in chain.terms() {
        if *coeff == 0 {
            continue;
        }
        let mut cube_sum = 0.0;
        if k == 0 {
            let x = cube.point_at(&[]);
            cube_sum = omega.coeffs_at(t, &x)[0];
        } else {
            for (node, w) in nodes.iter().zip(&weights) {
                let x = cube.point_at(node);
                let tangent = cube.tangent_matrix(node);
                let coeffs = omega.coeffs_at(t, &x);
                let cols: Vec<usize> = (0..k).collect();
                let mut value = 0.0;
                for (pos, rows) in table.tuples().iter().enumerate() {
                    if coeffs[pos] != 0.0 {
                        value += coeffs[pos] * minor(&tangent, rows, &cols);
                    }
                }
                cube_sum += w * value;
            }
        }
        total += (*coeff as f64) * (cube.orientation() as f64) * cube_sum;
    }
    Ok(total)
}

fn minor(matrix: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> f64 {
    match rows.len() {
        1 => matrix[(rows[0], cols[0])],
        2 => {
            matrix[(rows[0], cols[0])] * matrix[(rows[1], cols[1])]
                - matrix[(rows[0], cols[1])] * matrix[(rows[1], cols[0])]
        }
        3 => {
            let a = |i: usize, j: usize| matrix[(rows[i], cols[j])];
            a(0, 0) * (a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1))
                - a(0, 1) * (a(1, 0) * a(2, 2) - a(1, 2) * a(2, 0))
                + a(0, 2) * (a(1, 0) * a(2, 1) - a(1, 1) * a(2, 0))
        }
        n => {
            let mut sub = DMatrix::zeros(n, n);
            for (i, &r) in rows.iter().enumerate() {
                for (j, &c) in cols.iter().enumerate() {
                    sub[(i, j)] = matrix[(r, c)];
                }
            }
            sub.determinant()
        }
    }
}

type TransportCache = Arc<Mutex<HashMap<Vec<u64>, (Vec<f64>, DMatrix<f64>)>>>;

fn transported_point_and_jacobian(
    cache: &TransportCache,
    cube: &SingularCube,
    flow: &FlowMap,
    s: &[f64],
) -> (Vec<f64>, DMatrix<f64>) {
    let key: Vec<u64> = s.iter().map(|v| v.to_bits()).collect();
    if let Some(hit) = cache.lock().unwrap().get(&key) {
        return hit.clone();
    }
    let x = cube.point_at(s);
    let (y, jac) = flow
        .apply_with_jacobian(&x)
        .expect("chain transport: flow integration failed at a parameter point");
    let mut guard = cache.lock().unwrap();
    guard.insert(key, (y.clone(), jac.clone()));
    (y, jac)
}

/// Compose a cube with a flow map; tangents chain through the flow Jacobian.
///
/// No resampling happens: the transported cube is an exact parametrization,
/// at the cost of one variational ODE solve per parameter point (cached per
/// point within this cube instance).
pub fn transport_cube(cube: &SingularCube, flow: &FlowMap) -> SingularCube {
    let cache: TransportCache = Arc::new(Mutex::new(HashMap::new()));
    let map_cache = cache.clone();
    let map_cube = cube.clone();
    let map_flow = flow.clone();
    let tan_cache = cache;
    let tan_cube = cube.clone();
    let tan_flow = flow.clone();
    SingularCube::new(cube.degree(), cube.dim(), move |s| {
        transported_point_and_jacobian(&map_cache, &map_cube, &map_flow, s).0
    })
    .with_tangents(move |s| {
        let (_, jac) = transported_point_and_jacobian(&tan_cache, &tan_cube, &tan_flow, s);
        let original = tan_cube.tangent_matrix(s);
        let composed = &jac * original;
        (0..composed.ncols()).map(|j| composed.column(j).iter().copied().collect()).collect()
    })
    .with_orientation(cube.orientation())
    .with_h_fd(1e-6)
}

/// Transport every cube of a chain by the same flow map.
pub fn transport_chain(chain: &Chain, flow: &FlowMap) -> Chain {
    Chain {
        terms: chain
            .terms
            .iter()
            .map(|(c, cube)| (*c, transport_cube(cube, flow)))
            .collect(),
    }
}

/// `| int_{boundary c} omega - int_c d omega |`, a quadrature health check.
pub fn stokes_residual(
    omega: &DifferentialForm,
    cube: &SingularCube,
    q: &QuadratureSpec,
    t: f64,
) -> Result<f64> {
    if cube.degree() == 0 {
        return Err(Error::Degree("Stokes residual needs a cube of degree >= 1".into()));
    }
    if omega.degree() + 1 != cube.degree() {
        return Err(Error::Degree(format!(
            "Stokes residual: form degree {} does not match cube degree {} - 1",
            omega.degree(),
            cube.degree()
        )));
    }
    let boundary_int = integrate_over_chain(omega, &cube.boundary()?, q, t)?;
    let interior_int = integrate_over_chain(
        &omega.exterior_derivative()?,
        &Chain::from_cube(cube.clone()),
        q,
        t,
    )?;
    Ok((boundary_int - interior_int).abs())
}

/// Unit square `[0,1]^2` embedded in the coordinate plane of the first two axes.
pub fn unit_square(dim: usize) -> SingularCube {
    SingularCube::new(2, dim, move |s| {
        let mut x = vec![0.0; dim];
        x[0] = s[0];
        x[1] = s[1];
        x
    })
    .with_tangents(move |_| {
        let mut t0 = vec![0.0; dim];
        let mut t1 = vec![0.0; dim];
        t0[0] = 1.0;
        t1[1] = 1.0;
        vec![t0, t1]
    })
}

/// Circle of radius `r` about `center` in the plane of `axes`, one 1-cube.
pub fn circle(dim: usize, center: Vec<f64>, r: f64, axes: (usize, usize)) -> SingularCube {
    let c2 = center.clone();
    SingularCube::new(1, dim, move |s| {
        let theta = 2.0 * std::f64::consts::PI * s[0];
        let mut x = center.clone();
        x[axes.0] += r * theta.cos();
        x[axes.1] += r * theta.sin();
        x
    })
    .with_tangents(move |s| {
        let theta = 2.0 * std::f64::consts::PI * s[0];
        let mut t = vec![0.0; c2.len()];
        t[axes.0] = -2.0 * std::f64::consts::PI * r * theta.sin();
        t[axes.1] = 2.0 * std::f64::consts::PI * r * theta.cos();
        vec![t]
    })
}

/// Clockwise-parametrized circle (reverses the circulation sign).
pub fn circle_clockwise(dim: usize, center: Vec<f64>, r: f64, axes: (usize, usize)) -> SingularCube {
    let c2 = center.clone();
    SingularCube::new(1, dim, move |s| {
        let theta = 2.0 * std::f64::consts::PI * s[0];
        let mut x = center.clone();
        x[axes.0] += r * theta.cos();
        x[axes.1] -= r * theta.sin();
        x
    })
    .with_tangents(move |s| {
        let theta = 2.0 * std::f64::consts::PI * s[0];
        let mut t = vec![0.0; c2.len()];
        t[axes.0] = -2.0 * std::f64::consts::PI * r * theta.sin();
        t[axes.1] = -2.0 * std::f64::consts::PI * r * theta.cos();
        vec![t]
    })
}

/// Disk of radius `r` about `center` in the plane of `axes` (polar chart).
pub fn disk(dim: usize, center: Vec<f64>, r: f64, axes: (usize, usize)) -> SingularCube {
    SingularCube::new(2, dim, move |s| {
        let rho = r * s[0];
        let theta = 2.0 * std::f64::consts::PI * s[1];
        let mut x = center.clone();
        x[axes.0] += rho * theta.cos();
        x[axes.1] += rho * theta.sin();
        x
    })
}

/// Straight segment between two points as a 1-cube.
pub fn segment(from: Vec<f64>, to: Vec<f64>) -> SingularCube {
    assert_eq!(from.len(), to.len());
    let dim = from.len();
    let f2 = from.clone();
    let t2 = to.clone();
    SingularCube::new(1, dim, move |s| {
        from.iter().zip(&to).map(|(a, b)| a + s[0] * (b - a)).collect()
    })
    .with_tangents(move |_| vec![f2.iter().zip(&t2).map(|(a, b)| b - a).collect()])
}

/// Axis-aligned box `[lo, hi]` as a top-degree cube in its chart.
pub fn axis_box(lo: Vec<f64>, hi: Vec<f64>) -> SingularCube {
    assert_eq!(lo.len(), hi.len());
    let dim = lo.len();
    let l2 = lo.clone();
    let h2 = hi.clone();
    SingularCube::new(dim, dim, move |s| {
        lo.iter().zip(&hi).zip(s).map(|((a, b), si)| a + si * (b - a)).collect()
    })
    .with_tangents(move |_| {
        (0..dim)
            .map(|j| {
                let mut col = vec![0.0; dim];
                col[j] = h2[j] - l2[j];
                col
            })
            .collect()
    })
}

/// Ball in R^3 as a 3-cube in spherical parameters.
pub fn ball3(center: Vec<f64>, r: f64) -> SingularCube {
    assert_eq!(center.len(), 3);
    SingularCube::new(3, 3, move |s| {
        let rho = r * s[0];
        let theta = std::f64::consts::PI * s[1];
        let phi = 2.0 * std::f64::consts::PI * s[2];
        vec![
            center[0] + rho * theta.sin() * phi.cos(),
            center[1] + rho * theta.sin() * phi.sin(),
            center[2] + rho * theta.cos(),
        ]
    })
}
