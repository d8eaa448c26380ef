//! Energy functionals: the nonlocal double-well energy and its convexified
//! version on a grid, the sharp-interface limit with its interface cost, and
//! the elastic-foundation functional with its nonlocal rewriting.

use serde::{Deserialize, Serialize};

use crate::error::{domain, param, Error, Result};
use crate::kernels::{dot, neumann_green, KernelFamily, KernelMatrix, ShortRangeKernel};
use crate::wells::{mixing_unchecked, EnvelopeTable, WellParams};

/// Grid function on `[0, 1]`, one value per cell midpoint `x_i = (i + ½)/n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    values: Vec<f64>,
}

impl Field {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(param("field needs at least one cell"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(domain("field values must be finite"));
        }
        Ok(Self { values })
    }

    pub fn from_fn<F: Fn(f64) -> f64>(n: usize, f: F) -> Result<Self> {
        Self::new((0..n).map(|i| f((i as f64 + 0.5) / n as f64)).collect())
    }

    pub fn constant(n: usize, c: f64) -> Result<Self> {
        Self::new(vec![c; n])
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn h(&self) -> f64 {
        1.0 / self.values.len() as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.h()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// `h Σ u_i`.
    pub fn mass(&self) -> f64 {
        self.h() * self.values.iter().sum::<f64>()
    }

    /// `(h Σ (u_i - v_i)²)^½`.
    pub fn l2_distance(&self, other: &[f64]) -> f64 {
        let h = self.h();
        (h * self
            .values
            .iter()
            .zip(other)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>())
        .sqrt()
    }

    fn check_open(&self) -> Result<()> {
        match self.values.iter().position(|u| !(u.abs() < 1.0)) {
            Some(i) => Err(domain(format!(
                "|u| >= 1 at cell {i} (u = {})",
                self.values[i]
            ))),
            None => Ok(()),
        }
    }
}

/// Piecewise-constant ±1 configuration described by its ordered jumps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BVConfig {
    jumps: Vec<f64>,
    start_sign: i8,
}

impl BVConfig {
    pub fn new(jumps: Vec<f64>, start_sign: i8) -> Result<Self> {
        if start_sign != 1 && start_sign != -1 {
            return Err(param(format!("start sign must be ±1, got {start_sign}")));
        }
        if jumps.iter().any(|&x| !(x > 0.0 && x < 1.0)) {
            return Err(param("jump positions must lie strictly inside (0, 1)"));
        }
        if jumps.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(param("jump positions must be strictly increasing"));
        }
        Ok(Self { jumps, start_sign })
    }

    pub fn jumps(&self) -> &[f64] {
        &self.jumps
    }

    pub fn start_sign(&self) -> i8 {
        self.start_sign
    }

    /// Number of jumps; the total variation is twice this.
    pub fn jump_count(&self) -> usize {
        self.jumps.len()
    }

    /// Segment boundaries `0, x_1, ..., x_k, 1` with the sign on each segment.
    fn segments(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        let k = self.jumps.len();
        (0..=k).map(move |s| {
            let a = if s == 0 { 0.0 } else { self.jumps[s - 1] };
            let b = if s == k { 1.0 } else { self.jumps[s] };
            let sign = if s % 2 == 0 {
                self.start_sign
            } else {
                -self.start_sign
            };
            (a, b, sign as f64)
        })
    }

    pub fn value_at(&self, x: f64) -> f64 {
        let s = self.jumps.partition_point(|&j| j <= x);
        let sign = if s % 2 == 0 {
            self.start_sign
        } else {
            -self.start_sign
        };
        sign as f64
    }

    pub fn mass(&self) -> f64 {
        self.segments().map(|(a, b, s)| s * (b - a)).sum()
    }

    /// Exact cell averages on an `n`-cell grid.
    pub fn cell_averages(&self, n: usize) -> Vec<f64> {
        let h = 1.0 / n as f64;
        let mut out = vec![0.0; n];
        for (a, b, s) in self.segments() {
            let first = ((a / h).floor() as usize).min(n - 1);
            let last = ((b / h).ceil() as usize).min(n);
            for (i, o) in out.iter_mut().enumerate().take(last).skip(first) {
                let lo = a.max(i as f64 * h);
                let hi = b.min((i + 1) as f64 * h);
                if hi > lo {
                    *o += s * (hi - lo) / h;
                }
            }
        }
        out
    }
}

fn check_grid(u: &Field, j: &KernelMatrix) -> Result<()> {
    if u.n() != j.n() {
        return Err(Error::Shape {
            expected: j.n(),
            found: u.n(),
        });
    }
    Ok(())
}

/// `¼ ∫∫ J (u(x) - u(y))² + ∫ W(u)`, with `j(x)` in W taken as the kernel
/// row mass at each cell. The interaction is summed pairwise.
pub fn energy_i(u: &Field, j: &KernelMatrix, kt: f64) -> Result<f64> {
    check_grid(u, j)?;
    u.check_open()?;
    let (n, h) = (u.n(), u.h());
    let v = u.values();
    let mut pair = 0.0;
    for i in 0..n {
        let row = j.row(i);
        let ui = v[i];
        let mut s = 0.0;
        for k in 0..n {
            let d = ui - v[k];
            s += row[k] * d * d;
        }
        pair += s;
    }
    let bulk: f64 = v
        .iter()
        .zip(j.row_mass())
        .map(|(&ui, &ji)| -0.5 * ji * ui * ui + mixing_unchecked(ui, kt))
        .sum();
    Ok(0.25 * h * h * pair + h * bulk)
}

/// The same energy written as `-½ ∫ J[u] u + ∫ G(u)`.
pub fn energy_i_split(u: &Field, j: &KernelMatrix, kt: f64) -> Result<f64> {
    check_grid(u, j)?;
    u.check_open()?;
    Ok(split_unchecked(u.values(), j, kt, &mut vec![0.0; u.n()]))
}

pub(crate) fn split_unchecked(u: &[f64], j: &KernelMatrix, kt: f64, ju: &mut [f64]) -> f64 {
    let h = j.h();
    j.apply_into(u, ju);
    let g: f64 = u.iter().map(|&x| mixing_unchecked(x, kt)).sum();
    -0.5 * h * dot(ju, u) + h * g
}

/// `-½ ∫ J[u] u + ∫ G*(u)`. Never exceeds [`energy_i`] on the same input.
pub fn energy_i_star(u: &Field, j: &KernelMatrix, table: &EnvelopeTable) -> Result<f64> {
    check_grid(u, j)?;
    let h = u.h();
    let mut g = 0.0;
    for &x in u.values() {
        g += table.value(x)?;
    }
    Ok(-0.5 * j.quadratic_form(u.values()) + h * g)
}

/// Sharp-interface energy `c0 k - ¼ ∫∫ Jˡ (u(x) - u(y))²`, exact for the
/// piecewise-constant kernel the matrix defines. Since `u² = 1`, the double
/// integral is `½ ∫ jˡ - ½ ⟨Jˡ ū, ū⟩` with `ū` the cell averages of `u`.
pub fn energy_i0(c: &BVConfig, c0: f64, long: &KernelMatrix) -> f64 {
    let u = c.cell_averages(long.n());
    c0 * c.jump_count() as f64 - (0.5 * long.total_mass() - 0.5 * long.quadratic_form(&u))
}

/// Sharp-interface energy for the Neumann Green's function in closed form:
/// `c0 k + ½ ∫ v'²` with `-v'' = u - m`, `v'(0) = v'(1) = 0`.
pub fn energy_i0_green(c: &BVConfig, c0: f64) -> f64 {
    c0 * c.jump_count() as f64 + 0.5 * green_flux_energy(c)
}

/// `∫₀¹ F²` where `F(x) = ∫₀ˣ (u - m)` is piecewise linear.
fn green_flux_energy(c: &BVConfig) -> f64 {
    let m = c.mass();
    let mut f = 0.0;
    let mut total = 0.0;
    for (a, b, s) in c.segments() {
        let next = f + (s - m) * (b - a);
        total += (b - a) * (f * f + f * next + next * next) / 3.0;
        f = next;
    }
    total
}

/// Gradient of `½ ∫ F²` with respect to each jump position, for moves that
/// preserve the mass: `(u_left - u_right) ∫_{x_i}^1 F`.
pub(crate) fn green_flux_gradient(c: &BVConfig) -> Vec<f64> {
    let m = c.mass();
    // Tail integrals ∫_{x}^1 F accumulated from the right.
    let segs: Vec<(f64, f64, f64)> = c.segments().collect();
    let mut f_at = Vec::with_capacity(segs.len() + 1);
    let mut f = 0.0;
    f_at.push(0.0);
    for &(a, b, s) in &segs {
        f += (s - m) * (b - a);
        f_at.push(f);
    }
    let mut tail = vec![0.0; segs.len() + 1];
    for k in (0..segs.len()).rev() {
        let (a, b, _) = segs[k];
        tail[k] = tail[k + 1] + 0.5 * (b - a) * (f_at[k] + f_at[k + 1]);
    }
    (0..c.jump_count())
        .map(|i| {
            let left = segs[i].2;
            let right = segs[i + 1].2;
            (left - right) * tail[i + 1]
        })
        .collect()
}

/// Which constant multiplies the double integral in the interface-cost
/// problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Prefactor {
    /// `¼ ∫∫ Jˢ (u(x) - u(y))²`, matching the nonlocal energy.
    Quarter,
    /// `∫∫ Jˢ (u(x) - u(y))²`.
    Unit,
}

impl Prefactor {
    pub fn coefficient(self) -> f64 {
        match self {
            Prefactor::Quarter => 0.25,
            Prefactor::Unit => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Prefactor::Quarter => "quarter",
            Prefactor::Unit => "unit",
        }
    }
}

/// Single-interface problem on `[-L, L]` whose optimum defines the interface
/// cost `c0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileProblem {
    pub half_width: f64,
    /// Cells per unit length.
    pub resolution: f64,
    pub kernel: ShortRangeKernel,
    pub well: WellParams,
    pub prefactor: Prefactor,
    pub box_margin: f64,
    pub grad_tol: f64,
    pub max_iter: usize,
}

impl ProfileProblem {
    pub fn new(
        half_width: f64,
        resolution: f64,
        kernel: ShortRangeKernel,
        well: WellParams,
    ) -> Self {
        Self {
            half_width,
            resolution,
            kernel,
            well,
            prefactor: Prefactor::Quarter,
            box_margin: 1e-9,
            grad_tol: 1e-10,
            max_iter: 200_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterfaceProfile {
    pub c0: f64,
    /// Cell midpoints over `[-L, L]`.
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    /// Positive well of W that the profile connects to.
    pub well: f64,
    /// Distance of the outermost free cell from the well.
    pub end_deviation: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl InterfaceProfile {
    pub fn ends_settled(&self) -> bool {
        self.end_deviation <= 1e-6
    }
}

/// Interaction operator of the profile problem on the full symmetric grid.
struct ProfileOperator {
    h: f64,
    /// Toeplitz taps `h · K(d h)`, or empty for the constant kernel.
    taps: Vec<f64>,
    constant: Option<f64>,
    row_mass: Vec<f64>,
}

impl ProfileOperator {
    fn new(k: &ShortRangeKernel, n: usize, h: f64) -> Self {
        match k.family {
            KernelFamily::Constant => Self {
                h,
                taps: Vec::new(),
                constant: Some(k.mass),
                row_mass: vec![k.mass * h * n as f64; n],
            },
            _ => {
                let reach = k.reach().unwrap();
                let r = ((reach / h).ceil() as usize).min(n - 1);
                let taps: Vec<f64> = (0..=r).map(|d| h * k.profile(d as f64 * h)).collect();
                let row_mass = (0..n)
                    .map(|i| {
                        let lo = i.saturating_sub(r);
                        let hi = (i + r).min(n - 1);
                        (lo..=hi).map(|j| taps[i.abs_diff(j)]).sum()
                    })
                    .collect();
                Self {
                    h,
                    taps,
                    constant: None,
                    row_mass,
                }
            }
        }
    }

    /// `(K u)_i = h Σ_j K(x_i - x_j) u_j`.
    fn apply(&self, u: &[f64], out: &mut [f64]) {
        let n = u.len();
        if let Some(c) = self.constant {
            let s = c * self.h * u.iter().sum::<f64>();
            out.iter_mut().for_each(|o| *o = s);
            return;
        }
        let r = self.taps.len() - 1;
        for i in 0..n {
            let lo = i.saturating_sub(r);
            let hi = (i + r).min(n - 1);
            let mut s = 0.0;
            for j in lo..=hi {
                s += self.taps[i.abs_diff(j)] * u[j];
            }
            out[i] = s;
        }
    }
}

/// Minimal energy of a transition between the two wells of W:
/// `inf P ∫∫ Jˢ(x - y)(u(x) - u(y))² + ∫ (W(u) - W_min)` over odd profiles on
/// `[-L, L]`, with a pad of one kernel reach clamped to the wells at each end.
///
/// Solved by spectral projected gradient from a `tanh` profile.
pub fn compute_c0(pp: &ProfileProblem) -> Result<InterfaceProfile> {
    if !(pp.half_width > 0.0 && pp.resolution > 0.0) {
        return Err(param(
            "profile problem needs positive half-width and resolution",
        ));
    }
    if !(pp.box_margin > 0.0 && pp.box_margin < 0.1) {
        return Err(param("box margin must lie in (0, 0.1)"));
    }
    let kt_c = pp.well.critical_kt();
    let well = pp.well.well_point().ok_or(Error::NoInterface {
        kt: pp.well.kt,
        kt_c,
    })?;
    let hi_box = 1.0 - pp.box_margin;
    let well = well.min(hi_box);
    let half = (pp.half_width * pp.resolution).round() as usize;
    if half < 4 {
        return Err(param("profile grid needs at least 4 cells per half"));
    }
    let h = pp.half_width / half as f64;
    let n = 2 * half;
    let pad = match pp.kernel.reach() {
        Some(r) => ((r / h).ceil() as usize).min(half - 2),
        None => 0,
    };
    let free = half - pad;
    let op = ProfileOperator::new(&pp.kernel, n, h);
    let coef = pp.prefactor.coefficient();
    let (j, kt) = (pp.well.j, pp.well.kt);
    let w = |u: f64| -0.5 * j * u * u + mixing_unchecked(u, kt);
    let dw = |u: f64| {
        if kt == 0.0 {
            -(1.0 + j) * u
        } else {
            -(1.0 + j) * u + kt * (u.ln_1p() - (-u).ln_1p())
        }
    };
    let w_min = w(well);

    let mut full = vec![0.0; n];
    let mut ku = vec![0.0; n];
    let assemble = |v: &[f64], full: &mut [f64]| {
        for k in 0..half {
            let val = if k < free { v[k] } else { well };
            full[half + k] = val;
            full[half - 1 - k] = -val;
        }
    };
    // Energy and gradient with respect to the free right-half values.
    let mut eval = |v: &[f64], grad: Option<&mut [f64]>| -> f64 {
        assemble(v, &mut full);
        op.apply(&full, &mut ku);
        let mut e = 0.0;
        for i in 0..n {
            let u = full[i];
            e += 2.0 * coef * (op.row_mass[i] * u * u - ku[i] * u) + (w(u) - w_min);
        }
        if let Some(g) = grad {
            for k in 0..free {
                let i = half + k;
                let u = full[i];
                // Both mirror cells contribute equally; per unit length.
                g[k] = 2.0 * (4.0 * coef * (op.row_mass[i] * u - ku[i]) + dw(u));
            }
        }
        h * e
    };

    let mut v: Vec<f64> = (0..free)
        .map(|k| {
            let x = (k as f64 + 0.5) * h;
            let width = pp
                .kernel
                .reach()
                .map_or(1.0, |r| r.max(h))
                .min(pp.half_width / 4.0);
            (well * (x / width).tanh()).clamp(-hi_box, hi_box)
        })
        .collect();
    let lo_box = -hi_box;
    let project = |x: f64| x.clamp(lo_box, hi_box);
    let mut g = vec![0.0; free];
    let mut e = eval(&v, Some(&mut g));
    let mut history = [e; 10];
    let mut step = 1.0;
    let mut iterations = 0;
    let mut converged = false;
    let mut trial = vec![0.0; free];
    let mut g_new = vec![0.0; free];
    let pg_norm = |v: &[f64], g: &[f64]| {
        v.iter()
            .zip(g)
            .map(|(&x, &gi)| (project(x - gi) - x).abs())
            .fold(0.0, f64::max)
    };
    while iterations < pp.max_iter {
        if pg_norm(&v, &g) <= pp.grad_tol {
            converged = true;
            break;
        }
        iterations += 1;
        let e_ref = history.iter().cloned().fold(f64::MIN, f64::max);
        let mut t = step;
        let mut accepted = false;
        for _ in 0..60 {
            for k in 0..free {
                trial[k] = project(v[k] - t * g[k]);
            }
            let gd: f64 = (0..free).map(|k| g[k] * (trial[k] - v[k])).sum::<f64>() * 2.0 * h;
            let e_new = eval(&trial, Some(&mut g_new));
            if e_new <= e_ref + 1e-4 * gd {
                accepted = true;
                let (mut ss, mut sy) = (0.0, 0.0);
                for k in 0..free {
                    let s = trial[k] - v[k];
                    ss += s * s;
                    sy += s * (g_new[k] - g[k]);
                }
                step = if sy > 0.0 {
                    (ss / sy).clamp(1e-12, 1e6)
                } else {
                    1e3
                };
                v.copy_from_slice(&trial);
                g.copy_from_slice(&g_new);
                e = e_new;
                let slot = iterations % history.len();
                history[slot] = e;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            converged = pg_norm(&v, &g) <= pp.grad_tol * 1e3;
            break;
        }
    }
    assemble(&v, &mut full);
    let end_deviation = if free > 0 {
        (v[free - 1] - well).abs()
    } else {
        0.0
    };
    Ok(InterfaceProfile {
        c0: e,
        x: (0..n)
            .map(|i| -pp.half_width + (i as f64 + 0.5) * h)
            .collect(),
        u: full,
        well,
        end_deviation,
        iterations,
        converged,
    })
}

/// Displacement `w` of the elastic functional at interior nodes `k/n`,
/// `k = 1..n-1`; `w(0) = w(1) = 0` by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct NodalField {
    interior: Vec<f64>,
}

impl NodalField {
    pub fn new(interior: Vec<f64>) -> Result<Self> {
        if interior.len() < 3 {
            return Err(param("nodal field needs at least 3 interior nodes"));
        }
        Ok(Self { interior })
    }

    pub fn from_fn<F: Fn(f64) -> f64>(n: usize, f: F) -> Result<Self> {
        Self::new((1..n).map(|k| f(k as f64 / n as f64)).collect())
    }

    /// Number of cells.
    pub fn n(&self) -> usize {
        self.interior.len() + 1
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n() as f64
    }

    /// Node values including the clamped ends.
    pub fn nodes(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n() + 1);
        v.push(0.0);
        v.extend_from_slice(&self.interior);
        v.push(0.0);
        v
    }

    /// `w'` at cell midpoints.
    pub fn slopes(&self) -> Vec<f64> {
        let nodes = self.nodes();
        let inv = self.n() as f64;
        nodes.windows(2).map(|p| (p[1] - p[0]) * inv).collect()
    }
}

/// Trapezoid sum over nodes `0..=n` with half weights at the ends.
fn trapezoid(h: f64, v: &[f64]) -> f64 {
    let last = v.len() - 1;
    h * (0.5 * (v[0] + v[last]) + v[1..last].iter().sum::<f64>())
}

fn well_sum(values: impl Iterator<Item = f64>, p: &WellParams) -> Result<f64> {
    let mut s = 0.0;
    for x in values {
        if !(x.abs() < 1.0) {
            return Err(domain(format!(
                "|w'| = {} reaches the logarithmic singularity",
                x.abs()
            )));
        }
        s += -0.5 * p.j * x * x + mixing_unchecked(x, p.kt);
    }
    Ok(s)
}

/// `∫ [½ ε² w''² + W(w') + w²]` with second-order differences: central in
/// the interior, one-sided four-point stencils at the ends, trapezoid
/// quadrature for the bending term and midpoint for `W(w')` and `w²`.
pub fn elastic_energy(w: &NodalField, eps: f64, p: &WellParams) -> Result<f64> {
    let n = w.n();
    let h = w.h();
    let nodes = w.nodes();
    let h2 = h * h;
    let mut curv = vec![0.0; n + 1];
    curv[0] = (2.0 * nodes[0] - 5.0 * nodes[1] + 4.0 * nodes[2] - nodes[3]) / h2;
    curv[n] = (2.0 * nodes[n] - 5.0 * nodes[n - 1] + 4.0 * nodes[n - 2] - nodes[n - 3]) / h2;
    for k in 1..n {
        curv[k] = (nodes[k + 1] - 2.0 * nodes[k] + nodes[k - 1]) / h2;
    }
    let bending: Vec<f64> = curv.iter().map(|c| c * c).collect();
    let squares: f64 = nodes
        .windows(2)
        .map(|p| 0.25 * (p[0] + p[1]) * (p[0] + p[1]))
        .sum();
    let bulk = well_sum(w.slopes().into_iter(), p)?;
    Ok(0.5 * eps * eps * trapezoid(h, &bending) + h * bulk + h * squares)
}

/// Nonlocal rewriting of the elastic functional: `u = m - w'` and
/// `∫ [½ ε² u'² + W(m - u)] + ∫∫ G(x, y) u(x) u(y)` with the Neumann Green's
/// function. Returns the recovered field and the nonlocal energy.
pub fn elastic_to_nonlocal(
    w: &NodalField,
    eps: f64,
    p: &WellParams,
    m: f64,
) -> Result<(Field, f64)> {
    let green = neumann_green(w.n())?;
    elastic_to_nonlocal_with(w, eps, p, m, &green)
}

/// As [`elastic_to_nonlocal`] with a prebuilt Green matrix.
pub fn elastic_to_nonlocal_with(
    w: &NodalField,
    eps: f64,
    p: &WellParams,
    m: f64,
    green: &KernelMatrix,
) -> Result<(Field, f64)> {
    let n = w.n();
    if green.n() != n {
        return Err(Error::Shape {
            expected: n,
            found: green.n(),
        });
    }
    let h = w.h();
    let u: Vec<f64> = w.slopes().into_iter().map(|s| m - s).collect();
    let mut grad = vec![0.0; n + 1];
    grad[0] = (-2.0 * u[0] + 3.0 * u[1] - u[2]) / h;
    grad[n] = (2.0 * u[n - 1] - 3.0 * u[n - 2] + u[n - 3]) / h;
    for k in 1..n {
        grad[k] = (u[k] - u[k - 1]) / h;
    }
    let grad2: Vec<f64> = grad.iter().map(|g| g * g).collect();
    let bulk = well_sum(u.iter().map(|&x| m - x), p)?;
    let e = 0.5 * eps * eps * trapezoid(h, &grad2) + h * bulk + green.quadratic_form(&u);
    Ok((Field::new(u)?, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{build_short, neumann_green};
    use crate::wells::EnvelopeOptions;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(rng: &mut ChaCha8Rng, n: usize, amp: f64) -> Field {
        Field::new((0..n).map(|_| rng.gen_range(-amp..amp)).collect()).unwrap()
    }

    #[test]
    fn constant_field_has_only_bulk_energy() {
        let k = ShortRangeKernel::new(KernelFamily::Gaussian, 0.3, 1.0).unwrap();
        let j = build_short(&k, 0.1, 64).unwrap();
        let u = Field::constant(64, 0.4).unwrap();
        let e = energy_i(&u, &j, 0.3).unwrap();
        let expect: f64 = j
            .row_mass()
            .iter()
            .map(|&jj| -0.5 * jj * 0.16 + mixing_unchecked(0.4, 0.3))
            .sum::<f64>()
            / 64.0;
        assert_relative_eq!(e, expect, max_relative = 1e-14);
    }

    #[test]
    fn split_identity_on_random_fields() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let k = ShortRangeKernel::new(KernelFamily::Gaussian, 0.5, 1.0).unwrap();
        let j = build_short(&k, 0.1, 128).unwrap();
        for _ in 0..10 {
            let u = random_field(&mut rng, 128, 0.95);
            let a = energy_i(&u, &j, 0.25).unwrap();
            let b = energy_i_split(&u, &j, 0.25).unwrap();
            assert!(((a - b) / a).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_and_domain_errors() {
        let k = ShortRangeKernel::new(KernelFamily::Box, 0.5, 1.0).unwrap();
        let j = build_short(&k, 0.1, 16).unwrap();
        let u = Field::constant(8, 0.0).unwrap();
        assert!(matches!(energy_i(&u, &j, 0.2), Err(Error::Shape { .. })));
        let mut bad = vec![0.0; 16];
        bad[3] = 1.0;
        assert!(matches!(
            energy_i(&Field::new(bad).unwrap(), &j, 0.2),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn step_interaction_matches_box_overlap() {
        // Oracle: ¼∫∫ J (Δu)² across a ±1 step at ½ for J = (c/ε)·1{|x-y| ≤ a},
        // a = εs, equals 2(c/ε)·a²/2. The support is placed half a cell past a
        // grid separation so no pair sits on the edge.
        let n = 1000;
        let h = 1.0 / n as f64;
        let kcells = 40.0;
        let a = (kcells + 0.5) * h;
        let eps = 0.1;
        let k = ShortRangeKernel::new(KernelFamily::Box, a / eps, 1.0).unwrap();
        let j = build_short(&k, eps, n).unwrap();
        let u = Field::from_fn(n, |x| if x < 0.5 { -(1.0 - 1e-12) } else { 1.0 - 1e-12 }).unwrap();
        let e = energy_i(&u, &j, 0.0).unwrap();
        let bulk: f64 = j
            .row_mass()
            .iter()
            .map(|&jj| -0.5 * jj * u.values()[0].powi(2) + mixing_unchecked(u.values()[0], 0.0))
            .sum::<f64>()
            * h;
        let height = k.profile(0.0) / eps;
        let exact = height * a * a;
        assert_relative_eq!(e - bulk, exact, max_relative = 1e-3);
    }

    #[test]
    fn envelope_energy_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = ShortRangeKernel::new(KernelFamily::Gaussian, 0.5, 1.0).unwrap();
        let j = build_short(&k, 0.1, 64).unwrap();
        let t = EnvelopeTable::for_mixing(0.25, &EnvelopeOptions::default()).unwrap();
        let f = t.flat_interval().unwrap();
        // Inside the plateau somewhere: strict gap.
        let u = random_field(&mut rng, 64, 0.9);
        assert!(u.values().iter().any(|&x| f.contains_strictly(x)));
        assert!(energy_i_star(&u, &j, &t).unwrap() < energy_i(&u, &j, 0.25).unwrap());
        // Outside the plateau: equal up to rounding.
        let out = Field::new(
            u.values()
                .iter()
                .map(|&x| {
                    if x < 0.0 {
                        -0.98 + 0.01 * x
                    } else {
                        0.98 + 0.01 * x
                    }
                })
                .collect(),
        )
        .unwrap();
        let (a, b) = (
            energy_i_star(&out, &j, &t).unwrap(),
            energy_i(&out, &j, 0.25).unwrap(),
        );
        assert!(((a - b) / b).abs() < 1e-12);
        // Convex G: always equal.
        let t6 = EnvelopeTable::for_mixing(0.6, &EnvelopeOptions::default()).unwrap();
        let (a, b) = (
            energy_i_star(&u, &j, &t6).unwrap(),
            energy_i(&u, &j, 0.6).unwrap(),
        );
        assert!(((a - b) / b).abs() < 1e-12);
    }

    #[test]
    fn sharp_limit_values() {
        let c = BVConfig::new(vec![], 1).unwrap();
        assert_eq!(energy_i0_green(&c, 0.7), 0.0);
        let g = neumann_green(64).unwrap();
        assert!(energy_i0(&c, 0.7, &g).abs() < 1e-14);
        let one = BVConfig::new(vec![0.5], -1).unwrap();
        assert_relative_eq!(
            energy_i0_green(&one, 0.3),
            0.3 + 1.0 / 24.0,
            epsilon = 1e-15
        );
        let two = BVConfig::new(vec![0.25, 0.75], -1).unwrap();
        assert_relative_eq!(
            energy_i0_green(&two, 0.6) - energy_i0_green(&two, 0.3),
            0.3 * 2.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn matrix_and_closed_form_sharp_limits_agree() {
        let g = neumann_green(1024).unwrap();
        for c in [
            BVConfig::new(vec![0.5], -1).unwrap(),
            BVConfig::new(vec![0.2, 0.61], 1).unwrap(),
            BVConfig::new(vec![0.1, 0.3337, 0.8], -1).unwrap(),
        ] {
            let a = energy_i0(&c, 0.0, &g);
            let b = energy_i0_green(&c, 0.0);
            assert!(a > 0.0);
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn flux_gradient_matches_finite_difference() {
        // Moves that preserve mass: shift two adjacent jumps together.
        let c = BVConfig::new(vec![0.2, 0.45, 0.7], -1).unwrap();
        let g = green_flux_gradient(&c);
        let dir = [1.0, 1.0, 0.0];
        let d = 1e-6;
        let shift = |t: f64| {
            BVConfig::new(
                c.jumps().iter().zip(dir).map(|(x, s)| x + t * s).collect(),
                -1,
            )
            .unwrap()
        };
        let fd =
            (0.5 * green_flux_energy(&shift(d)) - 0.5 * green_flux_energy(&shift(-d))) / (2.0 * d);
        let an: f64 = g.iter().zip(dir).map(|(a, b)| a * b).sum();
        assert_relative_eq!(fd, an, max_relative = 1e-6);
    }

    #[test]
    fn cell_averages_conserve_mass() {
        let c = BVConfig::new(vec![0.123, 0.5, 0.777], 1).unwrap();
        let avg = c.cell_averages(37);
        let m: f64 = avg.iter().sum::<f64>() / 37.0;
        assert_relative_eq!(m, c.mass(), epsilon = 1e-14);
        assert!(avg.iter().all(|v| v.abs() <= 1.0 + 1e-12));
    }

    #[test]
    fn bv_validation() {
        assert!(BVConfig::new(vec![0.5, 0.4], 1).is_err());
        assert!(BVConfig::new(vec![0.0], 1).is_err());
        assert!(BVConfig::new(vec![0.5], 0).is_err());
        let c = BVConfig::new(vec![0.3], -1).unwrap();
        assert_eq!(c.value_at(0.1), -1.0);
        assert_eq!(c.value_at(0.3), 1.0);
    }

    #[test]
    fn zero_displacement_has_zero_elastic_energy() {
        let p = WellParams::new(0.0, 0.3).unwrap();
        let w = NodalField::from_fn(64, |_| 0.0).unwrap();
        assert_eq!(elastic_energy(&w, 0.1, &p).unwrap(), 0.0);
        let (u, e) = elastic_to_nonlocal(&w, 0.1, &p, 0.2).unwrap();
        assert!(u.values().iter().all(|&x| x == 0.2));
        // W(m - u) = W(0) = 0 and the Green term vanishes on constants.
        assert!(e.abs() < 1e-14);
    }

    #[test]
    fn bending_term_scales_quadratically() {
        let p = WellParams::new(0.0, 0.6).unwrap();
        let w = NodalField::from_fn(128, |x| 0.05 * (3.0 * x).sin() * x * (1.0 - x)).unwrap();
        let e0 = elastic_energy(&w, 0.0, &p).unwrap();
        let e1 = elastic_energy(&w, 0.1, &p).unwrap() - e0;
        let e2 = elastic_energy(&w, 0.2, &p).unwrap() - e0;
        assert_relative_eq!(e2, 4.0 * e1, max_relative = 1e-12);
    }

    #[test]
    fn small_sine_matches_quadratic_expansion() {
        // Oracle: for w = δ sin(πx), ∫½ε²w''² = ε²δ²π⁴/4, ∫W(w') ≈ W''(0)δ²π²/4, ∫w² = δ²/2.
        let (j, kt, eps, d) = (0.2, 0.4, 0.1, 1e-3);
        let p = WellParams::new(j, kt).unwrap();
        let w = NodalField::from_fn(1024, |x| d * (std::f64::consts::PI * x).sin()).unwrap();
        let pi2 = std::f64::consts::PI.powi(2);
        let wpp = -j - 1.0 + 2.0 * kt;
        let expect = eps * eps * d * d * pi2 * pi2 / 4.0 + wpp * d * d * pi2 / 4.0 + d * d / 2.0;
        assert_relative_eq!(
            elastic_energy(&w, eps, &p).unwrap(),
            expect,
            max_relative = 1e-2
        );
    }

    #[test]
    fn steep_displacement_is_a_domain_error() {
        let p = WellParams::new(0.0, 0.3).unwrap();
        let w = NodalField::from_fn(64, |x| 2.0 * x * (1.0 - x)).unwrap();
        assert!(matches!(elastic_energy(&w, 0.1, &p), Err(Error::Domain(_))));
    }

    #[test]
    fn box_kernel_at_zero_temperature_is_a_step() {
        // Oracle: a sharp ±u_w step costs u_w² ∫|z| Jˢ under the ¼ convention.
        let k = ShortRangeKernel::new(KernelFamily::Box, 1.0, 1.0).unwrap();
        let well = WellParams::new(0.0, 0.0).unwrap();
        let mut pp = ProfileProblem::new(6.0, 40.5, k, well);
        pp.resolution = 40.5;
        let prof = compute_c0(&pp).unwrap();
        assert!(prof.converged);
        let uw = 1.0 - pp.box_margin;
        let moment = crate::kernels::first_moment(&k, 2.0).unwrap();
        assert_relative_eq!(prof.c0, uw * uw * moment, max_relative = 1e-3);
        assert!(prof.u.iter().all(|x| (x.abs() - uw).abs() < 1e-9));
    }

    #[test]
    fn interface_cost_decreases_with_temperature() {
        let k = ShortRangeKernel::new(KernelFamily::Gaussian, 1.0, 1.0).unwrap();
        let c = |kt: f64| {
            let pp = ProfileProblem::new(20.0, 8.0, k, WellParams::new(1.0, kt).unwrap());
            let p = compute_c0(&pp).unwrap();
            assert!(p.converged && p.ends_settled(), "kT {kt}: {p:?}");
            p.c0
        };
        assert!(c(0.2) > c(0.3));
        let hot = ProfileProblem::new(20.0, 8.0, k, WellParams::new(1.0, 1.2).unwrap());
        assert!(matches!(compute_c0(&hot), Err(Error::NoInterface { .. })));
    }

    #[test]
    fn interface_cost_converges_in_truncation() {
        let k = ShortRangeKernel::new(KernelFamily::Gaussian, 1.0, 1.0).unwrap();
        let well = WellParams::new(1.0, 0.4).unwrap();
        let a = compute_c0(&ProfileProblem::new(20.0, 8.0, k, well)).unwrap();
        let b = compute_c0(&ProfileProblem::new(40.0, 8.0, k, well)).unwrap();
        assert!(((a.c0 - b.c0) / b.c0).abs() < 1e-6, "{} vs {}", a.c0, b.c0);
    }
}
