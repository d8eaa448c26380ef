//! Lower convex hull of sampled graphs and common-tangent refinement.
//!
//! Both the Maxwell construction on the molar free energy and the convex
//! envelope of the mixing energy reduce to the same two steps: take the lower
//! hull of a dense sample, then polish the bridging segment into an exact
//! double tangent with Newton's method.

/// Indices of the vertices of the lower convex hull of `(x[i], y[i])`.
/// `x` must be strictly increasing. Collinear points are dropped.
pub(crate) fn lower_hull(x: &[f64], y: &[f64]) -> Vec<usize> {
    let mut hull: Vec<usize> = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        while hull.len() >= 2 {
            let a = hull[hull.len() - 2];
            let b = hull[hull.len() - 1];
            let cross = (x[b] - x[a]) * (y[i] - y[a]) - (y[b] - y[a]) * (x[i] - x[a]);
            if cross <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(i);
    }
    hull
}

/// Hull values at every sample point, by linear interpolation between
/// consecutive hull vertices. Vertices keep their sampled value exactly.
pub(crate) fn hull_values(x: &[f64], y: &[f64], hull: &[usize]) -> Vec<f64> {
    let mut out = y.to_vec();
    for w in hull.windows(2) {
        let (a, b) = (w[0], w[1]);
        let slope = (y[b] - y[a]) / (x[b] - x[a]);
        for i in a + 1..b {
            out[i] = y[a] + slope * (x[i] - x[a]);
        }
    }
    out
}

/// A hull edge that skips over samples lying strictly above it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Bridge {
    pub left: usize,
    pub right: usize,
    pub slope: f64,
    /// Largest vertical distance between the samples and the edge.
    pub depth: f64,
}

/// The deepest bridging edge whose departure exceeds `tol`, if any.
pub(crate) fn deepest_bridge(x: &[f64], y: &[f64], hull: &[usize], tol: f64) -> Option<Bridge> {
    let mut best: Option<Bridge> = None;
    for w in hull.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b - a < 2 {
            continue;
        }
        let slope = (y[b] - y[a]) / (x[b] - x[a]);
        let depth = (a + 1..b)
            .map(|i| y[i] - (y[a] + slope * (x[i] - x[a])))
            .fold(0.0, f64::max);
        if depth > tol && best.is_none_or(|bb| depth > bb.depth) {
            best = Some(Bridge {
                left: a,
                right: b,
                slope,
                depth,
            });
        }
    }
    best
}

/// Double tangent of a smooth function: points `left < right` sharing a
/// tangent line of the given slope.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Tangent {
    pub left: f64,
    pub right: f64,
    pub slope: f64,
}

/// Newton iteration for the double tangent of `f`, where `eval(x)` returns
/// `(f, f', f'')`. Solves `f'(x1) = f'(x2)` and `f(x2) - f(x1) = f'(x1)(x2 - x1)`
/// starting from a hull seed, keeping `lo < x1 < x2 < hi`.
pub(crate) fn refine_double_tangent<F>(
    eval: F,
    seed: (f64, f64),
    lo: f64,
    hi: f64,
) -> Option<Tangent>
where
    F: Fn(f64) -> (f64, f64, f64),
{
    let (mut x1, mut x2) = seed;
    let residual = |x1: f64, x2: f64| {
        let (f1, d1, _) = eval(x1);
        let (f2, d2, _) = eval(x2);
        (d1 - d2, f2 - f1 - d1 * (x2 - x1))
    };
    let scale = {
        let (f1, d1, _) = eval(x1);
        let (f2, d2, _) = eval(x2);
        1.0 + f1.abs().max(f2.abs()) + d1.abs().max(d2.abs())
    };
    let norm = |r: (f64, f64)| r.0.abs().max(r.1.abs());
    let mut r = residual(x1, x2);
    for _ in 0..100 {
        if norm(r) <= 1e-15 * scale {
            break;
        }
        let (_, d1, s1) = eval(x1);
        let (_, d2, s2) = eval(x2);
        let j11 = s1;
        let j12 = -s2;
        let j21 = -s1 * (x2 - x1);
        let j22 = d2 - d1;
        let det = j11 * j22 - j12 * j21;
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        let dx1 = (r.0 * j22 - r.1 * j12) / det;
        let dx2 = (j11 * r.1 - j21 * r.0) / det;
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let n1 = x1 - t * dx1;
            let n2 = x2 - t * dx2;
            if n1 > lo && n2 < hi && n1 < n2 {
                let nr = residual(n1, n2);
                if norm(nr) < norm(r) || t < 1e-6 {
                    x1 = n1;
                    x2 = n2;
                    r = nr;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if norm(r) > 1e-9 * scale || !(x1 < x2) {
        return None;
    }
    let (_, d1, _) = eval(x1);
    let (_, d2, _) = eval(x2);
    Some(Tangent {
        left: x1,
        right: x2,
        slope: 0.5 * (d1 + d2),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hull_of_convex_samples_keeps_every_point() {
        let x: Vec<f64> = (0..11).map(|i| i as f64 / 10.0 - 0.5).collect();
        let y: Vec<f64> = x.iter().map(|v| v * v).collect();
        assert_eq!(lower_hull(&x, &y), (0..11).collect::<Vec<_>>());
        assert!(deepest_bridge(&x, &y, &lower_hull(&x, &y), 0.0).is_none());
    }

    #[test]
    fn quartic_double_well_tangent() {
        // (x^2 - 1)^2 has the double tangent y = 0 touching at -1 and 1.
        let f = |x: f64| {
            (
                (x * x - 1.0).powi(2),
                4.0 * x * (x * x - 1.0),
                12.0 * x * x - 4.0,
            )
        };
        let t = refine_double_tangent(f, (-0.95, 1.02), -3.0, 3.0).unwrap();
        assert!((t.left + 1.0).abs() < 1e-10);
        assert!((t.right - 1.0).abs() < 1e-10);
        assert!(t.slope.abs() < 1e-10);
    }

    #[test]
    fn bridge_spans_the_nonconvex_bump() {
        let x: Vec<f64> = (0..401).map(|i| -2.0 + i as f64 * 0.01).collect();
        let y: Vec<f64> = x.iter().map(|v| (v * v - 1.0).powi(2)).collect();
        let h = lower_hull(&x, &y);
        let b = deepest_bridge(&x, &y, &h, 1e-12).unwrap();
        assert!((x[b.left] + 1.0).abs() < 0.011);
        assert!((x[b.right] - 1.0).abs() < 0.011);
        assert!((b.depth - 1.0).abs() < 1e-3);
    }
}
