//! Exterior algebra and calculus on a coordinate chart.
//!
//! A degree-k form is stored as a coefficient closure over the C(m, k)
//! strictly increasing multi-indices in lexicographic order; antisymmetry is
//! implicit. Wedge, exterior derivative, interior product, Lie derivative
//! (Cartan formula and a flow-pullback difference quotient) and pullback all
//! act on this representation.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::chart::{ChartMap, ScalarField, VectorField, DEFAULT_H_FD};
use crate::error::{Error, Result};
use crate::flow::{FlowMap, IntegratorSettings};

/// Strictly increasing tuple of 0-based axis indices.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MultiIndex(pub Vec<usize>);

impl MultiIndex {
    pub fn new(indices: Vec<usize>) -> Result<Self> {
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Degree(format!("multi-index {indices:?} is not strictly increasing")));
        }
        Ok(Self(indices))
    }

    pub fn degree(&self) -> usize {
        self.0.len()
    }
}

/// All increasing k-tuples over `0..m` in lexicographic order.
pub fn multi_indices(m: usize, k: usize) -> Vec<Vec<usize>> {
    if k > m {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(k);
    fn rec(m: usize, k: usize, start: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if current.len() == k {
            out.push(current.clone());
            return;
        }
        for i in start..m {
            current.push(i);
            rec(m, k, i + 1, current, out);
            current.pop();
        }
    }
    rec(m, k, 0, &mut current, &mut out);
    out
}

/// Number of coefficients of a degree-k form in dimension m.
pub fn coeff_count(m: usize, k: usize) -> usize {
    if k > m {
        return 0;
    }
    let mut n: usize = 1;
    for i in 0..k {
        n = n * (m - i) / (i + 1);
    }
    n
}

/// Lookup table from increasing tuples to their lexicographic position.
pub struct IndexTable {
    tuples: Vec<Vec<usize>>,
    positions: HashMap<Vec<usize>, usize>,
}

impl IndexTable {
    pub fn new(m: usize, k: usize) -> Self {
        let tuples = multi_indices(m, k);
        let positions = tuples.iter().cloned().enumerate().map(|(i, t)| (t, i)).collect();
        Self { tuples, positions }
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    pub fn tuples(&self) -> &[Vec<usize>] {
        &self.tuples
    }

    pub fn position(&self, tuple: &[usize]) -> Option<usize> {
        self.positions.get(tuple).copied()
    }
}

/// Merge two disjoint increasing tuples; returns the merged tuple and the
/// parity sign of the shuffle, or `None` when they share an index.
pub fn merge_sign(a: &[usize], b: &[usize]) -> Option<(Vec<usize>, f64)> {
    let mut merged = Vec::with_capacity(a.len() + b.len());
    let mut inversions = 0usize;
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        if a[i] == b[j] {
            return None;
        }
        if a[i] < b[j] {
            merged.push(a[i]);
            i += 1;
        } else {
            // b[j] jumps over the remaining entries of a
            inversions += a.len() - i;
            merged.push(b[j]);
            j += 1;
        }
    }
    merged.extend_from_slice(&a[i..]);
    merged.extend_from_slice(&b[j..]);
    let sign = if inversions % 2 == 0 { 1.0 } else { -1.0 };
    Some((merged, sign))
}

/// Sign for inserting a single index in front of an increasing tuple,
/// i.e. `dx^i ^ dx^J = sign * dx^{sort(i u J)}`; `None` if `i` is in `J`.
pub fn insertion_sign(i: usize, tail: &[usize]) -> Option<(Vec<usize>, f64)> {
    if tail.contains(&i) {
        return None;
    }
    let smaller = tail.iter().filter(|&&j| j < i).count();
    let mut merged = Vec::with_capacity(tail.len() + 1);
    merged.extend_from_slice(&tail[..smaller]);
    merged.push(i);
    merged.extend_from_slice(&tail[smaller..]);
    let sign = if smaller % 2 == 0 { 1.0 } else { -1.0 };
    Some((merged, sign))
}

fn det_rows(matrix: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> f64 {
    let k = rows.len();
    debug_assert_eq!(k, cols.len());
    match k {
        0 => 1.0,
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
        _ => {
            let mut sub = DMatrix::zeros(k, k);
            for (i, &r) in rows.iter().enumerate() {
                for (j, &c) in cols.iter().enumerate() {
                    sub[(i, j)] = matrix[(r, c)];
                }
            }
            sub.determinant()
        }
    }
}

type CoeffFn = Arc<dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync>;
type CoeffPartialsFn = Arc<dyn Fn(f64, &[f64]) -> Vec<Vec<f64>> + Send + Sync>;

/// Differential form of degree k on an m-dimensional chart.
#[derive(Clone)]
pub struct DifferentialForm {
    dim: usize,
    degree: usize,
    coeffs: CoeffFn,
    /// Analytic spatial partials `[coeff][axis]`, else central FD.
    spatial_partials: Option<CoeffPartialsFn>,
    time_dependent: bool,
    h_fd: f64,
}

impl DifferentialForm {
    /// Time-dependent form from a coefficient closure in lexicographic
    /// multi-index order.
    pub fn new<F>(dim: usize, degree: usize, coeffs: F) -> Self
    where
        F: Fn(f64, &[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        assert!(degree <= dim, "degree {degree} exceeds chart dimension {dim}");
        Self {
            dim,
            degree,
            coeffs: Arc::new(coeffs),
            spatial_partials: None,
            time_dependent: true,
            h_fd: DEFAULT_H_FD,
        }
    }

    pub fn autonomous<F>(dim: usize, degree: usize, coeffs: F) -> Self
    where
        F: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        let mut f = Self::new(dim, degree, move |_t, x| coeffs(x));
        f.time_dependent = false;
        f
    }

    /// Constant-coefficient form.
    pub fn constant(dim: usize, degree: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), coeff_count(dim, degree));
        let n_axes = dim;
        let vals = values.clone();
        let mut f = Self::autonomous(dim, degree, move |_| vals.clone());
        let n = values.len();
        f.spatial_partials = Some(Arc::new(move |_, _| vec![vec![0.0; n_axes]; n]));
        f
    }

    /// Basis monomial `dx^{i1} ^ ... ^ dx^{ik}` for strictly increasing axes.
    pub fn basis(dim: usize, axes: &[usize]) -> Self {
        let table = IndexTable::new(dim, axes.len());
        let pos = table.position(axes).expect("axes must be strictly increasing and within the chart");
        let mut values = vec![0.0; table.len()];
        values[pos] = 1.0;
        Self::constant(dim, axes.len(), values)
    }

    /// Degree-0 form wrapping a scalar field.
    pub fn from_scalar(field: &ScalarField) -> Self {
        let f = field.clone();
        let mut form = Self::new(field.dim(), 0, move |t, x| vec![f.value(t, x)]);
        form.time_dependent = field.is_time_dependent();
        let g = field.clone();
        form.spatial_partials = Some(Arc::new(move |t, x| vec![g.gradient_at(t, x)]));
        form.h_fd = field.h_fd();
        form
    }

    pub fn zero(dim: usize, degree: usize) -> Self {
        Self::constant(dim, degree, vec![0.0; coeff_count(dim, degree)])
    }

    pub fn with_partials<P>(mut self, p: P) -> Self
    where
        P: Fn(f64, &[f64]) -> Vec<Vec<f64>> + Send + Sync + 'static,
    {
        self.spatial_partials = Some(Arc::new(p));
        self
    }

    pub fn with_h_fd(mut self, h: f64) -> Self {
        self.h_fd = h;
        self
    }

    pub fn with_time_dependence(mut self, flag: bool) -> Self {
        self.time_dependent = flag;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn h_fd(&self) -> f64 {
        self.h_fd
    }

    pub fn is_time_dependent(&self) -> bool {
        self.time_dependent
    }

    pub fn has_analytic_partials(&self) -> bool {
        self.spatial_partials.is_some()
    }

    /// Coefficient vector in lexicographic multi-index order.
    pub fn coeffs_at(&self, t: f64, x: &[f64]) -> Vec<f64> {
        (self.coeffs)(t, x)
    }

    /// Sup-norm of the coefficient vector.
    pub fn coeff_norm(&self, t: f64, x: &[f64]) -> f64 {
        self.coeffs_at(t, x).iter().fold(0.0, |acc, c| acc.max(c.abs()))
    }

    /// Spatial partials `[coeff][axis]`; analytic when attached, else FD.
    pub fn partials_at(&self, t: f64, x: &[f64]) -> Vec<Vec<f64>> {
        if let Some(p) = &self.spatial_partials {
            return p(t, x);
        }
        let n = coeff_count(self.dim, self.degree);
        let mut out = vec![vec![0.0; self.dim]; n];
        let mut buf = x.to_vec();
        for axis in 0..self.dim {
            buf[axis] = x[axis] + self.h_fd;
            let plus = (self.coeffs)(t, &buf);
            buf[axis] = x[axis] - self.h_fd;
            let minus = (self.coeffs)(t, &buf);
            buf[axis] = x[axis];
            for c in 0..n {
                out[c][axis] = (plus[c] - minus[c]) / (2.0 * self.h_fd);
            }
        }
        out
    }

    /// `d/dt` of the coefficients by central FD; zero when autonomous.
    pub fn time_partials_at(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let n = coeff_count(self.dim, self.degree);
        if !self.time_dependent {
            return vec![0.0; n];
        }
        let h = self.h_fd;
        let plus = (self.coeffs)(t + h, x);
        let minus = (self.coeffs)(t - h, x);
        plus.iter().zip(&minus).map(|(a, b)| (a - b) / (2.0 * h)).collect()
    }

    /// `d omega / dt` as a form of the same degree.
    pub fn time_partial_form(&self) -> Self {
        let inner = self.clone();
        let mut out = Self::new(self.dim, self.degree, move |t, x| inner.time_partials_at(t, x));
        out.time_dependent = self.time_dependent;
        out.h_fd = self.h_fd;
        out
    }

    /// Evaluate the form on k tangent vectors.
    pub fn apply(&self, t: f64, x: &[f64], vectors: &[&[f64]]) -> Result<f64> {
        if vectors.len() != self.degree {
            return Err(Error::Degree(format!(
                "degree-{} form applied to {} vectors",
                self.degree,
                vectors.len()
            )));
        }
        let coeffs = self.coeffs_at(t, x);
        if self.degree == 0 {
            return Ok(coeffs[0]);
        }
        let mut matrix = DMatrix::zeros(self.dim, self.degree);
        for (j, v) in vectors.iter().enumerate() {
            if v.len() != self.dim {
                return Err(Error::Dimension("tangent vector dimension mismatch".into()));
            }
            for i in 0..self.dim {
                matrix[(i, j)] = v[i];
            }
        }
        let table = IndexTable::new(self.dim, self.degree);
        let cols: Vec<usize> = (0..self.degree).collect();
        let mut sum = 0.0;
        for (pos, tuple) in table.tuples().iter().enumerate() {
            if coeffs[pos] != 0.0 {
                sum += coeffs[pos] * det_rows(&matrix, tuple, &cols);
            }
        }
        Ok(sum)
    }

    /// Pointwise linear combination `self + c * other`.
    pub fn add_scaled(&self, other: &DifferentialForm, c: f64) -> Result<DifferentialForm> {
        if self.dim != other.dim || self.degree != other.degree {
            return Err(Error::Dimension("form shapes differ in add".into()));
        }
        let a = self.clone();
        let b = other.clone();
        let mut out = DifferentialForm::new(self.dim, self.degree, move |t, x| {
            let mut u = a.coeffs_at(t, x);
            let v = b.coeffs_at(t, x);
            for (ui, vi) in u.iter_mut().zip(&v) {
                *ui += c * vi;
            }
            u
        });
        out.time_dependent = self.time_dependent || other.time_dependent;
        out.h_fd = self.h_fd;
        if self.spatial_partials.is_some() && other.spatial_partials.is_some() {
            let a = self.clone();
            let b = other.clone();
            out.spatial_partials = Some(Arc::new(move |t, x| {
                let mut u = a.partials_at(t, x);
                let v = b.partials_at(t, x);
                for (ur, vr) in u.iter_mut().zip(&v) {
                    for (ui, vi) in ur.iter_mut().zip(vr) {
                        *ui += c * vi;
                    }
                }
                u
            }));
        }
        Ok(out)
    }

    pub fn add(&self, other: &DifferentialForm) -> Result<DifferentialForm> {
        self.add_scaled(other, 1.0)
    }

    pub fn sub(&self, other: &DifferentialForm) -> Result<DifferentialForm> {
        self.add_scaled(other, -1.0)
    }

    pub fn scale(&self, c: f64) -> DifferentialForm {
        let a = self.clone();
        let mut out = DifferentialForm::new(self.dim, self.degree, move |t, x| {
            a.coeffs_at(t, x).into_iter().map(|v| c * v).collect()
        });
        out.time_dependent = self.time_dependent;
        out.h_fd = self.h_fd;
        if self.spatial_partials.is_some() {
            let a = self.clone();
            out.spatial_partials = Some(Arc::new(move |t, x| {
                a.partials_at(t, x)
                    .into_iter()
                    .map(|row| row.into_iter().map(|v| c * v).collect())
                    .collect()
            }));
        }
        out
    }

    /// Wedge product; coefficients carry the shuffle sign of merged indices.
    pub fn wedge(&self, other: &DifferentialForm) -> Result<DifferentialForm> {
        if self.dim != other.dim {
            return Err(Error::Dimension("wedge of forms on different charts".into()));
        }
        let k = self.degree + other.degree;
        if k > self.dim {
            return Err(Error::Degree(format!(
                "wedge degree {} exceeds chart dimension {}",
                k, self.dim
            )));
        }
        let left = IndexTable::new(self.dim, self.degree);
        let right = IndexTable::new(self.dim, other.degree);
        let result = IndexTable::new(self.dim, k);
        // Precompute the sparse product structure once.
        let mut terms: Vec<(usize, usize, usize, f64)> = Vec::new();
        for (i, a) in left.tuples().iter().enumerate() {
            for (j, b) in right.tuples().iter().enumerate() {
                if let Some((merged, sign)) = merge_sign(a, b) {
                    let pos = result.position(&merged).expect("merged tuple in range");
                    terms.push((pos, i, j, sign));
                }
            }
        }
        let n_out = result.len();
        let a = self.clone();
        let b = other.clone();
        let terms2 = terms.clone();
        let mut out = DifferentialForm::new(self.dim, k, move |t, x| {
            let ca = a.coeffs_at(t, x);
            let cb = b.coeffs_at(t, x);
            let mut out = vec![0.0; n_out];
            for &(pos, i, j, sign) in &terms2 {
                out[pos] += sign * ca[i] * cb[j];
            }
            out
        });
        out.time_dependent = self.time_dependent || other.time_dependent;
        out.h_fd = self.h_fd.min(other.h_fd);
        if self.spatial_partials.is_some() && other.spatial_partials.is_some() {
            let a = self.clone();
            let b = other.clone();
            let dim = self.dim;
            out.spatial_partials = Some(Arc::new(move |t, x| {
                let ca = a.coeffs_at(t, x);
                let cb = b.coeffs_at(t, x);
                let da = a.partials_at(t, x);
                let db = b.partials_at(t, x);
                let mut out = vec![vec![0.0; dim]; n_out];
                for &(pos, i, j, sign) in &terms {
                    for axis in 0..dim {
                        out[pos][axis] += sign * (da[i][axis] * cb[j] + ca[i] * db[j][axis]);
                    }
                }
                out
            }));
        }
        Ok(out)
    }

    /// Exterior derivative; uses analytic partials when attached.
    pub fn exterior_derivative(&self) -> Result<DifferentialForm> {
        if self.degree >= self.dim {
            return Err(Error::Degree(format!(
                "exterior derivative of a degree-{} form on an {}-dimensional chart",
                self.degree, self.dim
            )));
        }
        let source = IndexTable::new(self.dim, self.degree);
        let result = IndexTable::new(self.dim, self.degree + 1);
        // (pos_out, coeff_in, axis, sign)
        let mut terms: Vec<(usize, usize, usize, f64)> = Vec::new();
        for (i, tuple) in source.tuples().iter().enumerate() {
            for axis in 0..self.dim {
                if let Some((merged, sign)) = insertion_sign(axis, tuple) {
                    let pos = result.position(&merged).expect("in range");
                    terms.push((pos, i, axis, sign));
                }
            }
        }
        let n_out = result.len();
        let a = self.clone();
        let mut out = DifferentialForm::new(self.dim, self.degree + 1, move |t, x| {
            let partials = a.partials_at(t, x);
            let mut out = vec![0.0; n_out];
            for &(pos, i, axis, sign) in &terms {
                out[pos] += sign * partials[i][axis];
            }
            out
        });
        out.time_dependent = self.time_dependent;
        out.h_fd = self.h_fd;
        Ok(out)
    }

    /// Interior product `i_v omega` (degree k-1).
    pub fn interior_product(&self, v: &VectorField) -> Result<DifferentialForm> {
        if self.degree == 0 {
            return Err(Error::Degree("interior product of a degree-0 form".into()));
        }
        if v.dim() != self.dim {
            return Err(Error::Dimension("vector field dimension mismatch".into()));
        }
        let source = IndexTable::new(self.dim, self.degree);
        let result = IndexTable::new(self.dim, self.degree - 1);
        // (pos_out, coeff_in, field_component, sign): coefficient of dx^J picks
        // up v^i * omega_{sort(i u J)} * sign for each i not in J.
        let mut terms: Vec<(usize, usize, usize, f64)> = Vec::new();
        for (j, tail) in result.tuples().iter().enumerate() {
            for i in 0..self.dim {
                if let Some((merged, sign)) = insertion_sign(i, tail) {
                    let pos = source.position(&merged).expect("in range");
                    terms.push((j, pos, i, sign));
                }
            }
        }
        let n_out = result.len();
        let a = self.clone();
        let field = v.clone();
        let terms2 = terms.clone();
        let mut out = DifferentialForm::new(self.dim, self.degree - 1, move |t, x| {
            let coeffs = a.coeffs_at(t, x);
            let vals = field.value(t, x);
            let mut out = vec![0.0; n_out];
            for &(jpos, ipos, comp, sign) in &terms2 {
                out[jpos] += sign * vals[comp] * coeffs[ipos];
            }
            out
        });
        out.time_dependent = self.time_dependent || v.is_time_dependent();
        out.h_fd = self.h_fd;
        if self.spatial_partials.is_some() {
            let a = self.clone();
            let field = v.clone();
            let dim = self.dim;
            out.spatial_partials = Some(Arc::new(move |t, x| {
                let coeffs = a.coeffs_at(t, x);
                let dcoeffs = a.partials_at(t, x);
                let vals = field.value(t, x);
                let jac = field.jacobian_at(t, x);
                let mut out = vec![vec![0.0; dim]; n_out];
                for &(jpos, ipos, comp, sign) in &terms {
                    for axis in 0..dim {
                        out[jpos][axis] += sign
                            * (jac[(comp, axis)] * coeffs[ipos] + vals[comp] * dcoeffs[ipos][axis]);
                    }
                }
                out
            }));
        }
        Ok(out)
    }

    /// Pullback under a smooth map into this form's chart.
    pub fn pullback(&self, map: &ChartMap) -> Result<DifferentialForm> {
        if map.dim_out() != self.dim {
            return Err(Error::Dimension(format!(
                "pullback: map lands in R^{}, form lives on R^{}",
                map.dim_out(),
                self.dim
            )));
        }
        if self.degree > map.dim_in() {
            return Err(Error::Degree(format!(
                "pullback of a degree-{} form to an {}-dimensional chart",
                self.degree,
                map.dim_in()
            )));
        }
        let source = IndexTable::new(self.dim, self.degree);
        let target = IndexTable::new(map.dim_in(), self.degree);
        let n_out = target.len();
        let a = self.clone();
        let u = map.clone();
        let degree = self.degree;
        let mut out = DifferentialForm::new(map.dim_in(), degree, move |t, x| {
            let y = u.apply(x);
            let jac = u.jacobian_at(x);
            let coeffs = a.coeffs_at(t, &y);
            let mut out = vec![0.0; n_out];
            if degree == 0 {
                out[0] = coeffs[0];
                return out;
            }
            for (jpos, cols) in target.tuples().iter().enumerate() {
                let mut sum = 0.0;
                for (ipos, rows) in source.tuples().iter().enumerate() {
                    if coeffs[ipos] != 0.0 {
                        sum += coeffs[ipos] * det_rows(&jac, rows, cols);
                    }
                }
                out[jpos] = sum;
            }
            out
        });
        out.time_dependent = self.time_dependent;
        out.h_fd = self.h_fd;
        Ok(out)
    }
}

/// How to compute a Lie derivative.
#[derive(Clone, Copy, Debug)]
pub enum LieMode {
    /// Cartan homotopy formula `d i_v + i_v d` composed exactly.
    Cartan,
    /// Symmetric difference quotient of the flow pullback at parameter 0.
    FlowFd { dt: f64, settings: IntegratorSettings },
}

/// Lie derivative of a form along a field.
///
/// For time-dependent data the field and form are frozen at the evaluation
/// time, matching the convention that `t` is a parameter of the spatial
/// calculus.
pub fn lie_derivative(v: &VectorField, omega: &DifferentialForm, mode: LieMode) -> Result<DifferentialForm> {
    if v.dim() != omega.dim() {
        return Err(Error::Dimension("field and form dimensions differ".into()));
    }
    match mode {
        LieMode::Cartan => lie_derivative_cartan(v, omega),
        LieMode::FlowFd { dt, settings } => Ok(lie_derivative_flow_fd(v, omega, dt, settings)),
    }
}

fn lie_derivative_cartan(v: &VectorField, omega: &DifferentialForm) -> Result<DifferentialForm> {
    let k = omega.degree();
    let m = omega.dim();
    if k == 0 {
        // L_v f = i_v df
        return omega.exterior_derivative()?.interior_product(v);
    }
    let d_iv = omega.interior_product(v)?.exterior_derivative()?;
    if k == m {
        // d omega vanishes in top degree
        return Ok(d_iv);
    }
    let iv_d = omega.exterior_derivative()?.interior_product(v)?;
    d_iv.add(&iv_d)
}

fn lie_derivative_flow_fd(
    v: &VectorField,
    omega: &DifferentialForm,
    dt: f64,
    settings: IntegratorSettings,
) -> DifferentialForm {
    let m = omega.dim();
    let k = omega.degree();
    let field = v.clone();
    let form = omega.clone();
    let table_src = Arc::new(IndexTable::new(m, k));
    let mut out = DifferentialForm::new(m, k, move |t, x| {
        let frozen = field.frozen(t);
        let pull = |tau: f64| -> Vec<f64> {
            let flow = FlowMap::new(frozen.clone(), 0.0, tau, settings);
            let (y, jac) = flow
                .apply_with_jacobian(x)
                .expect("flow_fd Lie derivative: flow integration failed");
            let coeffs = form.coeffs_at(t, &y);
            if k == 0 {
                return coeffs;
            }
            let mut out = vec![0.0; table_src.len()];
            for (jpos, cols) in table_src.tuples().iter().enumerate() {
                let mut sum = 0.0;
                for (ipos, rows) in table_src.tuples().iter().enumerate() {
                    if coeffs[ipos] != 0.0 {
                        sum += coeffs[ipos] * det_rows(&jac, rows, cols);
                    }
                }
                out[jpos] = sum;
            }
            out
        };
        let plus = pull(dt);
        let minus = pull(-dt);
        plus.iter().zip(&minus).map(|(a, b)| (a - b) / (2.0 * dt)).collect()
    });
    out.time_dependent = v.is_time_dependent() || omega.is_time_dependent();
    out
}

/// Lie bracket of vector fields, `[u,v]^i = u^s dv^i/dx^s - v^s du^i/dx^s`.
pub fn field_commutator(u: &VectorField, v: &VectorField) -> Result<VectorField> {
    if u.dim() != v.dim() {
        return Err(Error::Dimension("commutator of fields on different charts".into()));
    }
    let m = u.dim();
    let a = u.clone();
    let b = v.clone();
    let mut out = VectorField::new(m, move |t, x| {
        let ua = a.value(t, x);
        let vb = b.value(t, x);
        let ja = a.jacobian_at(t, x);
        let jb = b.jacobian_at(t, x);
        (0..m)
            .map(|i| {
                let mut s = 0.0;
                for k in 0..m {
                    s += jb[(i, k)] * ua[k] - ja[(i, k)] * vb[k];
                }
                s
            })
            .collect()
    });
    if !u.is_time_dependent() && !v.is_time_dependent() {
        out = out.frozen(0.0);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn basis1(dim: usize, axis: usize) -> DifferentialForm {
        DifferentialForm::basis(dim, &[axis])
    }

    #[test]
    fn wedge_with_self_vanishes() {
        let dx0 = basis1(2, 0);
        let w = dx0.wedge(&dx0).unwrap();
        assert_eq!(w.coeffs_at(0.0, &[0.3, 0.7]), vec![0.0]);
    }

    #[test]
    fn wedge_basis_pairing() {
        let dx0 = basis1(2, 0);
        let dx1 = basis1(2, 1);
        let area = dx0.wedge(&dx1).unwrap();
        let e0 = [1.0, 0.0];
        let e1 = [0.0, 1.0];
        let val = area.apply(0.0, &[5.0, -3.0], &[&e0, &e1]).unwrap();
        assert_abs_diff_eq!(val, 1.0, epsilon = 1e-15);
        let val_swapped = area.apply(0.0, &[5.0, -3.0], &[&e1, &e0]).unwrap();
        assert_abs_diff_eq!(val_swapped, -1.0, epsilon = 1e-15);
    }

    #[test]
    fn wedge_scalar_coefficient() {
        // (x0 dx0) ^ dx1 at (2, 0) has coefficient 2 on (dx0 ^ dx1)
        let omega = DifferentialForm::autonomous(2, 1, |x| vec![x[0], 0.0]);
        let dx1 = basis1(2, 1);
        let w = omega.wedge(&dx1).unwrap();
        assert_abs_diff_eq!(w.coeffs_at(0.0, &[2.0, 0.0])[0], 2.0, epsilon = 1e-15);
    }

    #[test]
    fn wedge_anticommutes_by_degree() {
        let a = DifferentialForm::autonomous(3, 1, |x| vec![x[0], x[1] * x[2], x[2]]);
        let b = DifferentialForm::autonomous(3, 1, |x| vec![x[1], -x[0], 1.0]);
        let ab = a.wedge(&b).unwrap();
        let ba = b.wedge(&a).unwrap();
        let x = [0.3, -1.2, 0.8];
        for (u, v) in ab.coeffs_at(0.0, &x).iter().zip(&ba.coeffs_at(0.0, &x)) {
            assert_abs_diff_eq!(*u, -v, epsilon = 1e-14);
        }
    }

    #[test]
    fn exterior_derivative_linear_coefficient() {
        // d(x0 dx1) = dx0 ^ dx1
        let omega = DifferentialForm::autonomous(2, 1, |x| vec![0.0, x[0]]);
        let d = omega.exterior_derivative().unwrap();
        assert_abs_diff_eq!(d.coeffs_at(0.0, &[0.4, 1.3])[0], 1.0, epsilon = 1e-9);
        // d(x1 dx0) = -dx0 ^ dx1
        let omega = DifferentialForm::autonomous(2, 1, |x| vec![x[1], 0.0]);
        let d = omega.exterior_derivative().unwrap();
        assert_abs_diff_eq!(d.coeffs_at(0.0, &[0.4, 1.3])[0], -1.0, epsilon = 1e-9);
    }

    #[test]
    fn d_squared_vanishes() {
        let f = ScalarField::autonomous(2, |x| x[0] * x[1]);
        let df = DifferentialForm::from_scalar(&f).exterior_derivative().unwrap();
        let ddf = df.exterior_derivative().unwrap();
        let norm = ddf.coeff_norm(0.0, &[0.8, -0.6]);
        assert!(norm < 1e-8, "d(df) norm {norm}");
    }

    #[test]
    fn interior_product_basis_contraction() {
        let area = DifferentialForm::basis(2, &[0, 1]);
        let e0 = VectorField::constant(vec![1.0, 0.0]);
        let contracted = area.interior_product(&e0).unwrap();
        // i_{e0}(dx0 ^ dx1) = dx1
        assert_eq!(contracted.coeffs_at(0.0, &[0.0, 0.0]), vec![0.0, 1.0]);
    }

    #[test]
    fn interior_product_cross_product_bridge() {
        // i_B omega^2_A with A = e1, B = e2 in R^3 gives dx^3 = omega^1_{A x B}
        // (1-based axes of the reference computation; 0-based here).
        let omega2_a = DifferentialForm::constant(3, 2, vec![0.0, 0.0, 1.0]); // dx1^dx2 (axes 1,2)
        let b = VectorField::constant(vec![0.0, 1.0, 0.0]);
        let out = omega2_a.interior_product(&b).unwrap();
        // i_{e1}(dx1 ^ dx2) = dx2 i.e. axis 2 coefficient 1
        assert_eq!(out.coeffs_at(0.0, &[0.0; 3]), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn double_interior_product_vanishes() {
        let omega = DifferentialForm::autonomous(3, 2, |x| vec![x[0] * x[1], x[2], x[0] + x[1]]);
        let v = VectorField::autonomous(3, |x| vec![x[1], -x[0], x[2] * x[0]]);
        let ivv = omega.interior_product(&v).unwrap().interior_product(&v).unwrap();
        let norm = ivv.coeff_norm(0.0, &[0.7, -0.4, 1.1]);
        assert!(norm < 1e-12, "i_v i_v residual {norm}");
    }

    #[test]
    fn interior_product_leibniz_rule() {
        // i_v(a ^ b) = (i_v a) ^ b + (-1)^deg a a ^ (i_v b), algebraically exact
        let a = DifferentialForm::autonomous(3, 1, |x| vec![x[0], x[1] * x[1], -x[2]]);
        let b = DifferentialForm::autonomous(3, 2, |x| vec![x[2], x[0], x[1] + 1.0]);
        let v = VectorField::autonomous(3, |x| vec![x[1], x[2], x[0] * x[1]]);
        let lhs = a.wedge(&b).unwrap().interior_product(&v).unwrap();
        let t1 = a.interior_product(&v).unwrap().wedge(&b).unwrap();
        let t2 = a.wedge(&b.interior_product(&v).unwrap()).unwrap().scale(-1.0);
        let rhs = t1.add(&t2).unwrap();
        let x = [0.9, -0.3, 0.5];
        for (u, w) in lhs.coeffs_at(0.0, &x).iter().zip(&rhs.coeffs_at(0.0, &x)) {
            assert_abs_diff_eq!(*u, *w, epsilon = 1e-13);
        }
    }

    #[test]
    fn lie_derivative_rotation_preserves_area() {
        let v = VectorField::autonomous(2, |x| vec![-x[1], x[0]]);
        let area = DifferentialForm::basis(2, &[0, 1]);
        let l = lie_derivative(&v, &area, LieMode::Cartan).unwrap();
        assert!(l.coeff_norm(0.0, &[1.4, -0.2]) < 1e-9);
    }

    #[test]
    fn lie_derivative_rotation_of_one_form() {
        // v = (-x1, x0), omega = x0 dx1 -> L_v omega = x0 dx0 - x1 dx1
        let v = VectorField::autonomous(2, |x| vec![-x[1], x[0]]);
        let omega = DifferentialForm::autonomous(2, 1, |x| vec![0.0, x[0]]);
        let l = lie_derivative(&v, &omega, LieMode::Cartan).unwrap();
        let x = [0.8, -0.5];
        let c = l.coeffs_at(0.0, &x);
        assert_abs_diff_eq!(c[0], x[0], epsilon = 1e-8);
        assert_abs_diff_eq!(c[1], -x[1], epsilon = 1e-8);
    }

    #[test]
    fn lie_derivative_divergence_formula() {
        // v = (x0, x1): L_v(dx0 ^ dx1) = 2 dx0 ^ dx1
        let v = VectorField::autonomous(2, |x| vec![x[0], x[1]]);
        let area = DifferentialForm::basis(2, &[0, 1]);
        let l = lie_derivative(&v, &area, LieMode::Cartan).unwrap();
        assert_abs_diff_eq!(l.coeffs_at(0.0, &[0.3, 0.9])[0], 2.0, epsilon = 1e-8);
    }

    #[test]
    fn pullback_determinant_scaling() {
        let map = ChartMap::linear(DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]));
        let area = DifferentialForm::basis(2, &[0, 1]);
        let pulled = area.pullback(&map).unwrap();
        assert_abs_diff_eq!(pulled.coeffs_at(0.0, &[0.2, 0.4])[0], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn pullback_identity_is_identity() {
        let omega = DifferentialForm::autonomous(3, 2, |x| vec![x[0], x[1], x[2] * x[2]]);
        let pulled = omega.pullback(&ChartMap::identity(3)).unwrap();
        let x = [0.3, 0.6, -0.2];
        for (u, v) in omega.coeffs_at(0.0, &x).iter().zip(&pulled.coeffs_at(0.0, &x)) {
            assert_abs_diff_eq!(*u, *v, epsilon = 1e-12);
        }
    }

    #[test]
    fn pullback_commutes_with_d_on_scalars() {
        // pullback of df equals d(f o u)
        let u = ChartMap::new(2, 2, |x| vec![x[0] * x[0] - x[1], x[0] + x[1].sin()]);
        let f = ScalarField::autonomous(2, |y| y[0] * y[1] + y[1]);
        let df = DifferentialForm::from_scalar(&f).exterior_derivative().unwrap();
        let pulled_df = df.pullback(&u).unwrap();
        let u2 = u.clone();
        let fu = ScalarField::autonomous(2, move |x| {
            let y = u2.apply(x);
            y[0] * y[1] + y[1]
        });
        let d_fu = DifferentialForm::from_scalar(&fu).exterior_derivative().unwrap();
        let x = [0.4, -0.7];
        for (a, b) in pulled_df.coeffs_at(0.0, &x).iter().zip(&d_fu.coeffs_at(0.0, &x)) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-7);
        }
    }

    #[test]
    fn naturality_d_commutes_with_pullback() {
        let u = ChartMap::new(2, 2, |x| vec![x[0] + 0.3 * x[1] * x[1], x[1] - 0.2 * x[0] * x[0]]);
        let omega = DifferentialForm::autonomous(2, 1, |y| vec![y[1] * y[1], y[0]]);
        let lhs = omega.pullback(&u).unwrap().exterior_derivative().unwrap();
        let rhs = omega.exterior_derivative().unwrap().pullback(&u).unwrap();
        let x = [0.5, 0.2];
        for (a, b) in lhs.coeffs_at(0.0, &x).iter().zip(&rhs.coeffs_at(0.0, &x)) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-6);
        }
    }

    #[test]
    fn lie_derivative_commutes_with_d() {
        let v = VectorField::autonomous(2, |x| vec![x[1] * x[0], -x[0] + x[1] * x[1]])
            .with_jacobian(|_, x| {
                DMatrix::from_row_slice(2, 2, &[x[1], x[0], -1.0, 2.0 * x[1]])
            });
        let omega = DifferentialForm::autonomous(2, 1, |x| vec![x[0] * x[1], x[1]]);
        let lhs = lie_derivative(&v, &omega.exterior_derivative().unwrap(), LieMode::Cartan).unwrap();
        let rhs = lie_derivative(&v, &omega, LieMode::Cartan).unwrap().exterior_derivative().unwrap();
        let x = [0.6, -0.4];
        for (a, b) in lhs.coeffs_at(0.0, &x).iter().zip(&rhs.coeffs_at(0.0, &x)) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-6);
        }
    }

    #[test]
    fn commutator_identity_on_interior_product() {
        // (L_u i_v - i_v L_u) omega = i_{[u,v]} omega
        let u = VectorField::autonomous(2, |x| vec![x[1], x[0] * x[0]]).with_jacobian(|_, x| {
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 2.0 * x[0], 0.0])
        });
        let v = VectorField::autonomous(2, |x| vec![-x[0], x[1] * x[0]]).with_jacobian(|_, x| {
            DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, x[1], x[0]])
        });
        let omega = DifferentialForm::autonomous(2, 2, |x| vec![x[0] + x[1] * x[1]]);
        let l_u_iv = lie_derivative(&u, &omega.interior_product(&v).unwrap(), LieMode::Cartan).unwrap();
        let iv_lu = lie_derivative(&u, &omega, LieMode::Cartan).unwrap().interior_product(&v).unwrap();
        let lhs = l_u_iv.sub(&iv_lu).unwrap();
        let rhs = omega.interior_product(&field_commutator(&u, &v).unwrap()).unwrap();
        let x = [0.7, 0.3];
        for (a, b) in lhs.coeffs_at(0.0, &x).iter().zip(&rhs.coeffs_at(0.0, &x)) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-6);
        }
    }

    #[test]
    fn degree_errors_are_reported() {
        let top = DifferentialForm::basis(2, &[0, 1]);
        assert!(top.wedge(&DifferentialForm::basis(2, &[0])).is_err());
        let f = DifferentialForm::constant(2, 0, vec![1.0]);
        assert!(f.interior_product(&VectorField::zero(2)).is_err());
    }

    #[test]
    fn multi_index_table_is_lexicographic() {
        let t = IndexTable::new(4, 2);
        assert_eq!(t.tuples()[0], vec![0, 1]);
        assert_eq!(t.tuples()[1], vec![0, 2]);
        assert_eq!(t.tuples()[5], vec![2, 3]);
        assert_eq!(t.position(&[1, 3]), Some(4));
        assert_eq!(coeff_count(4, 2), 6);
    }

    #[test]
    fn multi_index_rejects_unsorted() {
        assert!(MultiIndex::new(vec![2, 1]).is_err());
        assert!(MultiIndex::new(vec![0, 1, 1]).is_err());
        assert!(MultiIndex::new(vec![0, 2, 5]).is_ok());
    }
}
