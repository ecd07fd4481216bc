//! Scalar fields, vector fields and smooth maps on a single coordinate chart.
//!
//! Everything is chart-local: a point is a coordinate vector in R^m, fields are
//! closures over `(t, x)`, and differentiation falls back to central finite
//! differences with step `h_fd` unless analytic partials are attached.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Default central finite-difference step.
pub const DEFAULT_H_FD: f64 = 1e-5;

/// A point of the chart: coordinates plus an optional time stamp.
#[derive(Clone, Debug, PartialEq)]
pub struct Point {
    pub coords: Vec<f64>,
    pub time: Option<f64>,
}

impl Point {
    pub fn new(coords: Vec<f64>) -> Self {
        Self { coords, time: None }
    }

    pub fn at_time(coords: Vec<f64>, time: f64) -> Self {
        Self { coords, time: Some(time) }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn is_finite(&self) -> bool {
        self.coords.iter().all(|c| c.is_finite()) && self.time.map_or(true, f64::is_finite)
    }

    /// Validate against a chart dimension.
    pub fn check_dim(&self, m: usize) -> Result<()> {
        if self.coords.len() != m {
            return Err(Error::Dimension(format!(
                "point has {} coordinates, chart has {}",
                self.coords.len(),
                m
            )));
        }
        if !self.is_finite() {
            return Err(Error::Dimension("point has non-finite entries".into()));
        }
        Ok(())
    }
}

type ScalarFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;
type GradientFn = Arc<dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync>;

/// Scalar function on the chart, optionally time-dependent, with gradient
/// access by analytic closure or central differences.
#[derive(Clone)]
pub struct ScalarField {
    dim: usize,
    eval: ScalarFn,
    gradient: Option<GradientFn>,
    time_dependent: bool,
    h_fd: f64,
}

impl ScalarField {
    pub fn new<F>(dim: usize, f: F) -> Self
    where
        F: Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
    {
        Self { dim, eval: Arc::new(f), gradient: None, time_dependent: true, h_fd: DEFAULT_H_FD }
    }

    /// Time-independent scalar field.
    pub fn autonomous<F>(dim: usize, f: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Self {
            dim,
            eval: Arc::new(move |_t, x| f(x)),
            gradient: None,
            time_dependent: false,
            h_fd: DEFAULT_H_FD,
        }
    }

    pub fn with_gradient<G>(mut self, g: G) -> Self
    where
        G: Fn(f64, &[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        self.gradient = Some(Arc::new(g));
        self
    }

    pub fn with_h_fd(mut self, h: f64) -> Self {
        self.h_fd = h;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn h_fd(&self) -> f64 {
        self.h_fd
    }

    pub fn is_time_dependent(&self) -> bool {
        self.time_dependent
    }

    pub fn value(&self, t: f64, x: &[f64]) -> f64 {
        (self.eval)(t, x)
    }

    /// Spatial gradient; analytic closure when attached, else central FD.
    pub fn gradient_at(&self, t: f64, x: &[f64]) -> Vec<f64> {
        if let Some(g) = &self.gradient {
            return g(t, x);
        }
        central_gradient(|y| (self.eval)(t, y), x, self.h_fd)
    }

    /// Time partial by central FD (zero for autonomous fields).
    pub fn time_partial_at(&self, t: f64, x: &[f64]) -> f64 {
        if !self.time_dependent {
            return 0.0;
        }
        ((self.eval)(t + self.h_fd, x) - (self.eval)(t - self.h_fd, x)) / (2.0 * self.h_fd)
    }
}

type FieldFn = Arc<dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync>;
type FieldJacobianFn = Arc<dyn Fn(f64, &[f64]) -> DMatrix<f64> + Send + Sync>;

/// Vector field `v(t, x)` on the chart; autonomous fields ignore `t`.
#[derive(Clone)]
pub struct VectorField {
    dim: usize,
    eval: FieldFn,
    jacobian: Option<FieldJacobianFn>,
    time_partial: Option<FieldFn>,
    time_dependent: bool,
    h_fd: f64,
}

impl VectorField {
    pub fn new<F>(dim: usize, f: F) -> Self
    where
        F: Fn(f64, &[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        Self {
            dim,
            eval: Arc::new(f),
            jacobian: None,
            time_partial: None,
            time_dependent: true,
            h_fd: DEFAULT_H_FD,
        }
    }

    pub fn autonomous<F>(dim: usize, f: F) -> Self
    where
        F: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        Self {
            dim,
            eval: Arc::new(move |_t, x| f(x)),
            jacobian: None,
            time_partial: None,
            time_dependent: false,
            h_fd: DEFAULT_H_FD,
        }
    }

    /// Constant field.
    pub fn constant(values: Vec<f64>) -> Self {
        let dim = values.len();
        Self::autonomous(dim, move |_| values.clone())
    }

    pub fn zero(dim: usize) -> Self {
        Self::autonomous(dim, move |_| vec![0.0; dim])
    }

    /// Linear field `x -> A x`.
    pub fn linear(matrix: DMatrix<f64>) -> Self {
        let dim = matrix.nrows();
        assert_eq!(dim, matrix.ncols());
        let m2 = matrix.clone();
        Self::autonomous(dim, move |x| {
            let v = nalgebra::DVector::from_column_slice(x);
            (&matrix * v).iter().copied().collect()
        })
        .with_jacobian(move |_, _| m2.clone())
    }

    pub fn with_jacobian<J>(mut self, j: J) -> Self
    where
        J: Fn(f64, &[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.jacobian = Some(Arc::new(j));
        self
    }

    pub fn with_time_partial<G>(mut self, g: G) -> Self
    where
        G: Fn(f64, &[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        self.time_partial = Some(Arc::new(g));
        self
    }

    pub fn with_h_fd(mut self, h: f64) -> Self {
        self.h_fd = h;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn h_fd(&self) -> f64 {
        self.h_fd
    }

    pub fn is_time_dependent(&self) -> bool {
        self.time_dependent
    }

    pub fn value(&self, t: f64, x: &[f64]) -> Vec<f64> {
        (self.eval)(t, x)
    }

    pub fn component(&self, t: f64, x: &[f64], i: usize) -> f64 {
        (self.eval)(t, x)[i]
    }

    /// Jacobian matrix with entries `d v^i / d x^j`.
    pub fn jacobian_at(&self, t: f64, x: &[f64]) -> DMatrix<f64> {
        if let Some(j) = &self.jacobian {
            return j(t, x);
        }
        central_jacobian(|y| (self.eval)(t, y), x, self.dim, self.h_fd)
    }

    /// `dv/dt` component-wise; zero for autonomous fields.
    pub fn time_partial_at(&self, t: f64, x: &[f64]) -> Vec<f64> {
        if !self.time_dependent {
            return vec![0.0; self.dim];
        }
        if let Some(g) = &self.time_partial {
            return g(t, x);
        }
        let h = self.h_fd;
        let plus = (self.eval)(t + h, x);
        let minus = (self.eval)(t - h, x);
        plus.iter().zip(&minus).map(|(a, b)| (a - b) / (2.0 * h)).collect()
    }

    /// Freeze the field at time `t`, producing an autonomous field.
    pub fn frozen(&self, t: f64) -> VectorField {
        let inner = self.clone();
        let mut out = VectorField::autonomous(self.dim, move |x| (inner.eval)(t, x));
        if let Some(j) = &self.jacobian {
            let j = j.clone();
            out = out.with_jacobian(move |_, x| j(t, x));
        }
        out.h_fd = self.h_fd;
        out
    }
}

type MapFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
type MapJacobianFn = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;

/// Smooth map between charts with Jacobian access, as used by pullbacks.
#[derive(Clone)]
pub struct ChartMap {
    dim_in: usize,
    dim_out: usize,
    map: MapFn,
    jacobian: Option<MapJacobianFn>,
    h_fd: f64,
}

impl ChartMap {
    pub fn new<F>(dim_in: usize, dim_out: usize, f: F) -> Self
    where
        F: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        Self { dim_in, dim_out, map: Arc::new(f), jacobian: None, h_fd: DEFAULT_H_FD }
    }

    pub fn identity(dim: usize) -> Self {
        Self::new(dim, dim, |x| x.to_vec())
            .with_jacobian(move |_| DMatrix::identity(dim, dim))
    }

    /// Linear map given by its matrix.
    pub fn linear(matrix: DMatrix<f64>) -> Self {
        let (rows, cols) = (matrix.nrows(), matrix.ncols());
        let m2 = matrix.clone();
        Self::new(cols, rows, move |x| {
            let v = nalgebra::DVector::from_column_slice(x);
            (&matrix * v).iter().copied().collect()
        })
        .with_jacobian(move |_| m2.clone())
    }

    pub fn with_jacobian<J>(mut self, j: J) -> Self
    where
        J: Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.jacobian = Some(Arc::new(j));
        self
    }

    pub fn with_h_fd(mut self, h: f64) -> Self {
        self.h_fd = h;
        self
    }

    pub fn dim_in(&self) -> usize {
        self.dim_in
    }

    pub fn dim_out(&self) -> usize {
        self.dim_out
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (self.map)(x)
    }

    /// `dim_out x dim_in` Jacobian.
    pub fn jacobian_at(&self, x: &[f64]) -> DMatrix<f64> {
        if let Some(j) = &self.jacobian {
            return j(x);
        }
        central_jacobian(|y| (self.map)(y), x, self.dim_out, self.h_fd)
    }

    /// Composition `self . other` (apply `other` first).
    pub fn compose(&self, other: &ChartMap) -> Result<ChartMap> {
        if other.dim_out != self.dim_in {
            return Err(Error::Dimension(format!(
                "cannot compose: inner map lands in R^{}, outer expects R^{}",
                other.dim_out, self.dim_in
            )));
        }
        let f = self.clone();
        let g = other.clone();
        let f2 = self.clone();
        let g2 = other.clone();
        Ok(ChartMap::new(other.dim_in, self.dim_out, move |x| f.apply(&g.apply(x)))
            .with_jacobian(move |x| {
                let mid = g2.apply(x);
                f2.jacobian_at(&mid) * g2.jacobian_at(x)
            }))
    }
}

/// Central-difference gradient of a scalar closure.
pub fn central_gradient<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut grad = vec![0.0; x.len()];
    let mut buf = x.to_vec();
    for i in 0..x.len() {
        buf[i] = x[i] + h;
        let plus = f(&buf);
        buf[i] = x[i] - h;
        let minus = f(&buf);
        buf[i] = x[i];
        grad[i] = (plus - minus) / (2.0 * h);
    }
    grad
}

/// Central-difference Jacobian (`rows x x.len()`) of a vector closure.
pub fn central_jacobian<F: Fn(&[f64]) -> Vec<f64>>(f: F, x: &[f64], rows: usize, h: f64) -> DMatrix<f64> {
    let mut jac = DMatrix::zeros(rows, x.len());
    let mut buf = x.to_vec();
    for j in 0..x.len() {
        buf[j] = x[j] + h;
        let plus = f(&buf);
        buf[j] = x[j] - h;
        let minus = f(&buf);
        buf[j] = x[j];
        for i in 0..rows {
            jac[(i, j)] = (plus[i] - minus[i]) / (2.0 * h);
        }
    }
    jac
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn scalar_gradient_matches_symmetric_quotient() {
        let f = ScalarField::autonomous(2, |x| x[0] * x[0] * x[1] + x[1].sin());
        let g = f.gradient_at(0.0, &[1.5, -0.7]);
        assert_abs_diff_eq!(g[0], 2.0 * 1.5 * -0.7, epsilon = 1e-9);
        assert_abs_diff_eq!(g[1], 1.5f64 * 1.5 + (-0.7f64).cos(), epsilon = 1e-9);
    }

    #[test]
    fn autonomous_field_ignores_time() {
        let v = VectorField::autonomous(2, |x| vec![-x[1], x[0]]);
        assert_eq!(v.value(0.0, &[1.0, 2.0]), v.value(37.0, &[1.0, 2.0]));
        assert_eq!(v.time_partial_at(1.0, &[1.0, 2.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn jacobian_fd_matches_analytic() {
        let v = VectorField::autonomous(2, |x| vec![x[0] * x[1], x[1] * x[1]]);
        let j = v.jacobian_at(0.0, &[2.0, 3.0]);
        assert_abs_diff_eq!(j[(0, 0)], 3.0, epsilon = 1e-9);
        assert_abs_diff_eq!(j[(0, 1)], 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(j[(1, 1)], 6.0, epsilon = 1e-9);
    }

    #[test]
    fn chart_map_composition_chains_jacobians() {
        let a = ChartMap::linear(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]));
        let b = ChartMap::new(2, 2, |x| vec![x[0] * x[0], x[1]]);
        let c = a.compose(&b).unwrap();
        let x = [1.2, 0.4];
        let j = c.jacobian_at(&x);
        // a . b = (x1, -x0^2); Jacobian rows: (0, 1), (-2 x0, 0)
        assert_abs_diff_eq!(j[(0, 1)], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(j[(1, 0)], -2.4, epsilon = 1e-9);
    }

    #[test]
    fn point_dimension_check() {
        let p = Point::new(vec![1.0, 2.0]);
        assert!(p.check_dim(2).is_ok());
        assert!(p.check_dim(3).is_err());
        let q = Point::new(vec![f64::NAN]);
        assert!(q.check_dim(1).is_err());
    }
}
