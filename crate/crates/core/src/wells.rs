//! Logarithmic double well, its kernel-free part, the convex envelope with
//! its flat interval, and the selection functions on the envelope slope.

use serde::{Deserialize, Serialize};

use crate::error::{domain, param, Error, Result};
use crate::hull;
use crate::numeric::{bisect, golden_min};

/// Parameters of the double well: local kernel mass `j` and temperature `kT`
/// (Boltzmann units).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WellParams {
    pub j: f64,
    pub kt: f64,
}

impl WellParams {
    pub fn new(j: f64, kt: f64) -> Result<Self> {
        if !j.is_finite() {
            return Err(param(format!("j must be finite, got {j}")));
        }
        if !(kt >= 0.0) || !kt.is_finite() {
            return Err(param(format!("kT must be finite and >= 0, got {kt}")));
        }
        Ok(Self { j, kt })
    }

    /// Temperature at which the well loses its two minima, `(1 + j)/2`.
    pub fn critical_kt(&self) -> f64 {
        0.5 * (1.0 + self.j)
    }

    /// Positive minimizer of W, or `None` when single-welled.
    pub fn well_point(&self) -> Option<f64> {
        if self.kt >= self.critical_kt() {
            return None;
        }
        if self.kt == 0.0 {
            return Some(1.0);
        }
        let slope = |u: f64| -(1.0 + self.j) * u + self.kt * ((1.0 + u) / (1.0 - u)).ln();
        // W' < 0 just right of 0 and W' -> +inf at 1.
        let hi = 1.0 - f64::EPSILON;
        if slope(hi) <= 0.0 {
            return Some(hi);
        }
        bisect(slope, 1e-300_f64.max(f64::MIN_POSITIVE), hi, 1e-16)
    }
}

/// `(1+u)ln(1+u) + (1-u)ln(1-u)`.
#[inline]
pub(crate) fn entropy(u: f64) -> f64 {
    (1.0 + u) * u.ln_1p() + (1.0 - u) * (-u).ln_1p()
}

#[inline]
pub(crate) fn mixing_unchecked(u: f64, kt: f64) -> f64 {
    if kt == 0.0 {
        -0.5 * u * u
    } else {
        -0.5 * u * u + kt * entropy(u)
    }
}

#[inline]
pub(crate) fn potential_unchecked(u: f64, kt: f64) -> f64 {
    if kt == 0.0 {
        -u
    } else {
        -u + kt * (u.ln_1p() - (-u).ln_1p())
    }
}

#[inline]
pub(crate) fn potential_slope_unchecked(u: f64, kt: f64) -> f64 {
    -1.0 + 2.0 * kt / (1.0 - u * u)
}

fn check_open(u: f64) -> Result<()> {
    if u.abs() < 1.0 {
        Ok(())
    } else {
        Err(domain(format!(
            "order parameter must satisfy |u| < 1, got {u}"
        )))
    }
}

/// The double well `W(u) = -½ j u² - ½ u² + kT[(1+u)ln(1+u) + (1-u)ln(1-u)]`.
pub fn eval_w(u: f64, p: &WellParams) -> Result<f64> {
    check_open(u)?;
    Ok(-0.5 * p.j * u * u + mixing_unchecked(u, p.kt))
}

/// `W'(u)`.
pub fn eval_w_slope(u: f64, p: &WellParams) -> Result<f64> {
    check_open(u)?;
    Ok(-p.j * u + potential_unchecked(u, p.kt))
}

/// Kernel-free part `G(u) = ½ j u² + W(u)`.
pub fn eval_big_g(u: f64, kt: f64) -> Result<f64> {
    check_open(u)?;
    Ok(mixing_unchecked(u, kt))
}

/// Chemical potential `g = G' = -u + kT ln((1+u)/(1-u))`.
pub fn eval_g(u: f64, kt: f64) -> Result<f64> {
    check_open(u)?;
    Ok(potential_unchecked(u, kt))
}

/// `g'(u) = -1 + 2kT/(1 - u²)`.
pub fn eval_g_slope(u: f64, kt: f64) -> Result<f64> {
    check_open(u)?;
    Ok(potential_slope_unchecked(u, kt))
}

/// Interval on which the envelope slope is constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlatInterval {
    pub lower: f64,
    pub upper: f64,
    pub v_star: f64,
}

impl FlatInterval {
    pub fn contains_strictly(&self, u: f64) -> bool {
        u > self.lower && u < self.upper
    }
}

/// Tabulated convex envelope of a sampled function.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeTable {
    pub u_grid: Vec<f64>,
    pub g_values: Vec<f64>,
    pub gstar_values: Vec<f64>,
    pub slope_values: Vec<f64>,
    flat: Option<FlatInterval>,
    /// Temperature when the table was built from the analytic mixing energy.
    analytic_kt: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeOptions {
    pub points: usize,
    /// Distance kept from the logarithmic singularities at ±1.
    pub box_margin: f64,
}

impl Default for EnvelopeOptions {
    fn default() -> Self {
        Self {
            points: 4001,
            box_margin: 1e-6,
        }
    }
}

/// Greatest convex minorant of `values` on `grid` (lower hull of the
/// samples) with the flat interval read off the deepest bridging edge.
pub fn convex_envelope(grid: &[f64], values: &[f64]) -> Result<EnvelopeTable> {
    if grid.len() != values.len() {
        return Err(Error::Shape {
            expected: grid.len(),
            found: values.len(),
        });
    }
    if grid.len() < 3 {
        return Err(Error::Input("envelope needs at least 3 samples".into()));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Input("grid must be strictly increasing".into()));
    }
    if values.iter().chain(grid).any(|v| !v.is_finite()) {
        return Err(Error::Input("grid and values must be finite".into()));
    }
    let h = hull::lower_hull(grid, values);
    let gstar = hull::hull_values(grid, values, &h);
    let n = grid.len();
    let mut slope = vec![0.0; n];
    for i in 0..n {
        slope[i] = match i {
            0 => (gstar[1] - gstar[0]) / (grid[1] - grid[0]),
            _ if i == n - 1 => (gstar[n - 1] - gstar[n - 2]) / (grid[n - 1] - grid[n - 2]),
            _ => (gstar[i + 1] - gstar[i - 1]) / (grid[i + 1] - grid[i - 1]),
        };
    }
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let bridge = hull::deepest_bridge(grid, values, &h, 1e-12 * (1.0 + scale));
    let mut flat = None;
    if let Some(b) = bridge {
        for s in &mut slope[b.left..=b.right] {
            *s = b.slope;
        }
        // Grow the plateau over neighbours whose slope matches within tolerance.
        let tol = 1e-10 * slope.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let (mut lo, mut hi) = (b.left, b.right);
        while lo > 0 && (slope[lo - 1] - b.slope).abs() <= tol {
            lo -= 1;
        }
        while hi + 1 < n && (slope[hi + 1] - b.slope).abs() <= tol {
            hi += 1;
        }
        flat = Some(FlatInterval {
            lower: grid[lo],
            upper: grid[hi],
            v_star: b.slope,
        });
    }
    Ok(EnvelopeTable {
        u_grid: grid.to_vec(),
        g_values: values.to_vec(),
        gstar_values: gstar,
        slope_values: slope,
        flat,
        analytic_kt: None,
    })
}

impl EnvelopeTable {
    /// Envelope of the mixing energy `G` at temperature `kt`, with the flat
    /// interval endpoints polished to the exact double tangent.
    pub fn for_mixing(kt: f64, opts: &EnvelopeOptions) -> Result<Self> {
        if !(kt > 0.0) {
            return Err(param(format!("kT must be positive, got {kt}")));
        }
        if opts.points < 3 || !(opts.box_margin > 0.0 && opts.box_margin < 0.5) {
            return Err(param(
                "envelope grid needs >= 3 points and a margin in (0, 0.5)",
            ));
        }
        let edge = 1.0 - opts.box_margin;
        // Mirror-symmetric grid so that the even G gives an exactly symmetric hull.
        let n = opts.points;
        let mut grid = vec![0.0; n];
        for i in 0..n / 2 + n % 2 {
            let u = -edge + 2.0 * edge * i as f64 / (n - 1) as f64;
            grid[i] = u;
            grid[n - 1 - i] = -u;
        }
        if n % 2 == 1 {
            grid[n / 2] = 0.0;
        }
        let values: Vec<f64> = grid.iter().map(|&u| mixing_unchecked(u, kt)).collect();
        let mut table = convex_envelope(&grid, &values)?;
        table.analytic_kt = Some(kt);
        if let Some(f) = table.flat {
            let eval = |u: f64| {
                (
                    mixing_unchecked(u, kt),
                    potential_unchecked(u, kt),
                    potential_slope_unchecked(u, kt),
                )
            };
            let refined = hull::refine_double_tangent(eval, (f.lower, f.upper), -edge, edge)
                .map(|t| FlatInterval {
                    lower: t.left,
                    upper: t.right,
                    v_star: t.slope,
                })
                .unwrap_or(f);
            table.flat = Some(refined);
            for i in 0..n {
                let u = grid[i];
                if u >= refined.lower && u <= refined.upper {
                    table.gstar_values[i] =
                        mixing_unchecked(refined.lower, kt) + refined.v_star * (u - refined.lower);
                    table.slope_values[i] = refined.v_star;
                } else {
                    table.gstar_values[i] = values[i];
                    table.slope_values[i] = potential_unchecked(u, kt);
                }
            }
        } else {
            for i in 0..n {
                table.slope_values[i] = potential_unchecked(grid[i], kt);
            }
        }
        Ok(table)
    }

    pub fn flat_interval(&self) -> Option<FlatInterval> {
        self.flat
    }

    pub fn analytic_kt(&self) -> Option<f64> {
        self.analytic_kt
    }

    fn span(&self) -> (f64, f64) {
        (self.u_grid[0], self.u_grid[self.u_grid.len() - 1])
    }

    fn locate(&self, u: f64) -> usize {
        let k = self.u_grid.partition_point(|&x| x <= u);
        k.clamp(1, self.u_grid.len() - 1) - 1
    }

    fn interpolate(&self, ys: &[f64], u: f64) -> f64 {
        let i = self.locate(u);
        let (x0, x1) = (self.u_grid[i], self.u_grid[i + 1]);
        ys[i] + (ys[i + 1] - ys[i]) * (u - x0) / (x1 - x0)
    }

    /// Envelope value `G*(u)`.
    pub fn value(&self, u: f64) -> Result<f64> {
        let (lo, hi) = self.span();
        if !(u >= lo && u <= hi) {
            return Err(domain(format!(
                "u = {u} outside the envelope table [{lo}, {hi}]"
            )));
        }
        Ok(self.value_unchecked(u))
    }

    pub(crate) fn value_unchecked(&self, u: f64) -> f64 {
        match (self.analytic_kt, self.flat) {
            (Some(kt), Some(f)) if u >= f.lower && u <= f.upper => {
                mixing_unchecked(f.lower, kt) + f.v_star * (u - f.lower)
            }
            (Some(kt), _) => mixing_unchecked(u, kt),
            (None, _) => self.interpolate(&self.gstar_values, u),
        }
    }

    /// Envelope slope `g*(u)`.
    pub fn slope(&self, u: f64) -> Result<f64> {
        let (lo, hi) = self.span();
        if !(u >= lo && u <= hi) {
            return Err(domain(format!(
                "u = {u} outside the envelope table [{lo}, {hi}]"
            )));
        }
        Ok(match (self.analytic_kt, self.flat) {
            (Some(_), Some(f)) if u >= f.lower && u <= f.upper => f.v_star,
            (Some(kt), _) => potential_unchecked(u, kt),
            (None, _) => self.interpolate(&self.slope_values, u),
        })
    }

    fn slope_range(&self) -> (f64, f64) {
        let (lo, hi) = self.span();
        (self.slope(lo).unwrap(), self.slope(hi).unwrap())
    }

    fn invert(&self, v: f64, pick_upper: bool) -> Result<f64> {
        let (smin, smax) = self.slope_range();
        if !(v >= smin && v <= smax) {
            return Err(domain(format!(
                "v = {v} outside the range [{smin}, {smax}] of g*"
            )));
        }
        if let Some(f) = self.flat {
            if v == f.v_star {
                return Ok(if pick_upper { f.upper } else { f.lower });
            }
        }
        let (lo, hi) = self.span();
        // g* is nondecreasing; the last point with g* < v and the first with g* > v
        // bracket a unique crossing off the plateau.
        let target = |u: f64| self.slope(u).unwrap() - v;
        let (a, b) = match self.flat {
            Some(f) if v < f.v_star => (lo, f.lower),
            Some(f) => (f.upper, hi),
            None => (lo, hi),
        };
        bisect(target, a, b, 1e-15).ok_or_else(|| domain(format!("cannot invert g* at v = {v}")))
    }

    /// Left selection: the inverse of g* off the plateau, `u̲` on it.
    pub fn s_lower(&self, v: f64) -> Result<f64> {
        self.invert(v, false)
    }

    /// Right selection: the inverse of g* off the plateau, `ū` on it.
    pub fn s_upper(&self, v: f64) -> Result<f64> {
        self.invert(v, true)
    }
}

/// Tilt `λ` such that `u ↦ f(u) + λu` has two minima of equal depth on
/// `(lo, hi)`. Minima are located on a dense sample and polished by golden
/// section; the depth difference is monotone in `λ`, so `λ` is bracketed and
/// bisected.
pub fn balance_wells<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64) -> Result<f64> {
    if !(hi > lo) {
        return Err(param("balance_wells needs lo < hi"));
    }
    let n = 4001;
    let grid: Vec<f64> = (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect();
    let depth_gap = |lambda: f64| -> Option<f64> {
        let tilted = |u: f64| f(u) + lambda * u;
        let vals: Vec<f64> = grid.iter().map(|&u| tilted(u)).collect();
        let minima: Vec<usize> = (1..n - 1)
            .filter(|&i| vals[i] < vals[i - 1] && vals[i] <= vals[i + 1])
            .collect();
        if minima.len() != 2 {
            return None;
        }
        let polish = |i: usize| {
            let u = golden_min(tilted, grid[i - 1], grid[i + 1], 1e-13);
            tilted(u)
        };
        Some(polish(minima[0]) - polish(minima[1]))
    };
    let d0 = depth_gap(0.0).ok_or(Error::NoDoubleWell)?;
    if d0 == 0.0 {
        return Ok(0.0);
    }
    // d(λ) decreases with λ (the right well is lowered relative to the left by -λ Δu < 0).
    let dir = if d0 > 0.0 { 1.0 } else { -1.0 };
    let scale = grid.iter().fold(0.0f64, |m, &u| m.max(f(u).abs())) / (hi - lo);
    let mut step = 1e-6 * (1.0 + scale);
    let mut a = 0.0;
    let mut b = None;
    for _ in 0..200 {
        let trial = a + dir * step;
        match depth_gap(trial) {
            Some(d) if d.signum() == d0.signum() && d != 0.0 => {
                a = trial;
                step *= 2.0;
            }
            Some(_) => {
                b = Some(trial);
                break;
            }
            None => step *= 0.5,
        }
        if step < 1e-300 {
            break;
        }
    }
    let b = b.ok_or(Error::NoDoubleWell)?;
    let lambda = bisect(
        |l| depth_gap(l).unwrap_or(f64::NAN),
        a.min(b),
        a.max(b),
        1e-16,
    )
    .ok_or(Error::NoDoubleWell)?;
    Ok(lambda)
}

/// Tilt for the symmetric well of [`eval_w`]; zero whenever it is double-welled.
pub fn balance_symmetric(p: &WellParams) -> Result<f64> {
    if p.well_point().is_none() {
        return Err(Error::NoDoubleWell);
    }
    Ok(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn w_vanishes_at_origin_and_is_even() {
        let p = WellParams::new(0.7, 0.3).unwrap();
        assert_eq!(eval_w(0.0, &p).unwrap(), 0.0);
        for i in 0..50 {
            let u = -0.99 + 0.04 * i as f64;
            assert_eq!(eval_w(u, &p).unwrap(), eval_w(-u, &p).unwrap());
        }
        assert!(eval_w(1.0, &p).is_err());
        assert!(eval_g(-1.0, 0.3).is_err());
    }

    #[test]
    fn w_minimum_solves_fixed_point() {
        let p = WellParams::new(0.0, 0.3).unwrap();
        // Oracle: bisection on u - kT ln((1+u)/(1-u)).
        let root = bisect(
            |u| u - 0.3 * ((1.0 + u) / (1.0 - u)).ln(),
            0.1,
            1.0 - 1e-12,
            1e-15,
        )
        .unwrap();
        let w = p.well_point().unwrap();
        assert_relative_eq!(w, root, epsilon = 1e-12);
        let (l, r) = (eval_w(w - 1e-4, &p).unwrap(), eval_w(w + 1e-4, &p).unwrap());
        let c = eval_w(w, &p).unwrap();
        assert!(c < l && c < r);
        assert_relative_eq!(eval_w(-w, &p).unwrap(), c);
    }

    #[test]
    fn g_is_odd_and_second_derivative_at_zero() {
        assert_eq!(eval_g(0.0, 0.25).unwrap(), 0.0);
        for &kt in &[0.1, 0.5, 0.8] {
            assert_relative_eq!(eval_g_slope(0.0, kt).unwrap(), -1.0 + 2.0 * kt);
            assert_eq!(eval_g(0.4, kt).unwrap(), -eval_g(-0.4, kt).unwrap());
        }
    }

    #[test]
    fn g_has_two_extrema_at_quarter_kt() {
        let n = 100_000;
        let s: Vec<f64> = (1..n)
            .map(|i| eval_g_slope(-1.0 + 2.0 * i as f64 / n as f64, 0.25).unwrap())
            .collect();
        let changes = s
            .windows(2)
            .filter(|w| w[0].signum() != w[1].signum())
            .count();
        assert_eq!(changes, 2);
    }

    #[test]
    fn energy_split_identity() {
        for &(j, kt) in &[(0.0, 0.2), (1.3, 0.7), (-0.4, 0.05)] {
            let p = WellParams::new(j, kt).unwrap();
            for i in 0..41 {
                let u = -0.98 + 0.049 * i as f64;
                let lhs = 0.5 * j * u * u + eval_w(u, &p).unwrap();
                assert_relative_eq!(
                    lhs,
                    eval_big_g(u, kt).unwrap(),
                    epsilon = 1e-15,
                    max_relative = 1e-13
                );
            }
        }
    }

    #[test]
    fn envelope_of_convex_parabola_is_identity() {
        let grid: Vec<f64> = (0..101).map(|i| -1.0 + 0.02 * i as f64).collect();
        let f: Vec<f64> = grid.iter().map(|u| u * u).collect();
        let t = convex_envelope(&grid, &f).unwrap();
        assert_eq!(t.gstar_values, f);
        assert!(t.flat_interval().is_none());
    }

    #[test]
    fn unsorted_grid_is_rejected() {
        let e = convex_envelope(&[0.0, 2.0, 1.0], &[0.0, 0.0, 0.0]);
        assert!(matches!(e, Err(Error::Input(_))));
        assert!(matches!(
            convex_envelope(&[0.0, 1.0], &[0.0, 0.0]),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn quarter_kt_plateau_is_symmetric() {
        let t = EnvelopeTable::for_mixing(0.25, &EnvelopeOptions::default()).unwrap();
        let f = t.flat_interval().unwrap();
        assert!(f.lower < 0.0 && f.upper > 0.0);
        assert!((f.lower + f.upper).abs() < 1e-12);
        assert!(f.v_star.abs() < 1e-12);
        // Oracle: positive root of g(u) = 0.
        let root = bisect(
            |u| -u + 0.25 * ((1.0 + u) / (1.0 - u)).ln(),
            0.5,
            1.0 - 1e-12,
            1e-15,
        )
        .unwrap();
        assert_relative_eq!(f.upper, root, epsilon = 1e-10);
    }

    #[test]
    fn generic_table_plateau_matches_analytic_to_grid_resolution() {
        let grid: Vec<f64> = (0..4001)
            .map(|i| -0.999 + 1.998 * i as f64 / 4000.0)
            .collect();
        let vals: Vec<f64> = grid.iter().map(|&u| mixing_unchecked(u, 0.25)).collect();
        let t = convex_envelope(&grid, &vals).unwrap();
        let f = t.flat_interval().unwrap();
        let exact = EnvelopeTable::for_mixing(0.25, &EnvelopeOptions::default())
            .unwrap()
            .flat_interval()
            .unwrap();
        assert!((f.upper - exact.upper).abs() < 2.0 * 1.998 / 4000.0);
        assert!((f.lower - exact.lower).abs() < 2.0 * 1.998 / 4000.0);
    }

    #[test]
    fn convex_mixing_energy_has_no_plateau() {
        let t = EnvelopeTable::for_mixing(0.6, &EnvelopeOptions::default()).unwrap();
        assert!(t.flat_interval().is_none());
    }

    #[test]
    fn plateau_shrinks_toward_critical_temperature() {
        let widths: Vec<f64> = [0.3, 0.4, 0.45, 0.49, 0.499]
            .iter()
            .map(|&kt| {
                let f = EnvelopeTable::for_mixing(kt, &EnvelopeOptions::default())
                    .unwrap()
                    .flat_interval()
                    .unwrap();
                f.upper - f.lower
            })
            .collect();
        assert!(widths.windows(2).all(|w| w[1] < w[0]));
        assert!(widths[4] < 0.2);
    }

    #[test]
    fn selections_split_on_the_plateau() {
        let t = EnvelopeTable::for_mixing(0.25, &EnvelopeOptions::default()).unwrap();
        let f = t.flat_interval().unwrap();
        assert_eq!(t.s_lower(f.v_star).unwrap(), f.lower);
        assert_eq!(t.s_upper(f.v_star).unwrap(), f.upper);
        for &v in &[-2.5, -0.5, 0.01, 2.0] {
            let (a, b) = (t.s_lower(v).unwrap(), t.s_upper(v).unwrap());
            assert_eq!(a, b);
            assert!((t.slope(a).unwrap() - v).abs() < 1e-10);
        }
        assert!(t.s_lower(1e6).is_err());
    }

    #[test]
    fn symmetric_well_needs_no_tilt() {
        assert_eq!(
            balance_symmetric(&WellParams::new(0.0, 0.25).unwrap()).unwrap(),
            0.0
        );
        assert_eq!(
            balance_symmetric(&WellParams::new(0.0, 0.6).unwrap()),
            Err(Error::NoDoubleWell)
        );
        let p = WellParams::new(0.0, 0.25).unwrap();
        let l = balance_wells(|u| eval_w(u, &p).unwrap(), -0.999, 0.999).unwrap();
        assert!(l.abs() < 1e-12);
    }

    #[test]
    fn tilt_is_cancelled() {
        let p = WellParams::new(0.0, 0.25).unwrap();
        let l = balance_wells(|u| eval_w(u, &p).unwrap() + 0.01 * u, -0.999, 0.999).unwrap();
        assert_relative_eq!(l, -0.01, epsilon = 1e-10);
    }

    #[test]
    fn single_well_is_rejected() {
        assert_eq!(
            balance_wells(|u: f64| u * u, -1.0, 1.0),
            Err(Error::NoDoubleWell)
        );
    }
}
