//! Gauss-Legendre rules on [0,1] and composite tensor grids.

/// Nodes and weights of the n-point Gauss-Legendre rule on [0, 1].
///
/// Computed by Newton iteration on the Legendre recurrence; exact for
/// polynomials of degree 2n-1.
pub fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "quadrature order must be positive");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        // Chebyshev-based initial guess for the i-th root of P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        // Map [-1, 1] -> [0, 1]; roots come out in descending order.
        nodes[n - 1 - i] = 0.5 * (x + 1.0);
        weights[n - 1 - i] = 0.5 * w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Composite rule on [0,1]: `panels` equal subintervals, `points` GL nodes each.
pub fn composite_unit(points: usize, panels: usize) -> (Vec<f64>, Vec<f64>) {
    let (base_x, base_w) = gauss_legendre_unit(points);
    let width = 1.0 / panels as f64;
    let mut nodes = Vec::with_capacity(points * panels);
    let mut weights = Vec::with_capacity(points * panels);
    for p in 0..panels {
        let left = p as f64 * width;
        for (x, w) in base_x.iter().zip(&base_w) {
            nodes.push(left + x * width);
            weights.push(w * width);
        }
    }
    (nodes, weights)
}

/// Integrate a scalar function over [a, b] with a composite GL rule.
pub fn integrate_1d<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, points: usize, panels: usize) -> f64 {
    let (nodes, weights) = composite_unit(points, panels);
    let len = b - a;
    let mut sum = 0.0;
    for (x, w) in nodes.iter().zip(&weights) {
        sum += w * len * f(a + x * len);
    }
    sum
}
