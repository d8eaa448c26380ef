//! Constrained local minimization of the discrete nonlocal energy, interface
//! detection, the sharp-interface criterion, the finite-dimensional jump
//! problem, ε-continuation and critical-exponent fits.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::{
    compute_c0, energy_i0, split_unchecked, BVConfig, Field, Prefactor, ProfileProblem,
};
use crate::error::{param, Error, Result};
use crate::kernels::{build_balanced, build_short, KernelFamily, KernelMatrix, ShortRangeKernel};
use crate::numeric::{fit_line, LineFit};
use crate::wells::{potential_slope_unchecked, potential_unchecked, EnvelopeTable, WellParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinimizeOptions {
    pub initial_step: f64,
    pub backtrack: f64,
    pub grad_tol: f64,
    pub max_iter: usize,
    pub box_margin: f64,
    pub seed: u64,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        Self {
            initial_step: 0.1,
            backtrack: 0.5,
            grad_tol: 1e-5,
            max_iter: 20_000,
            box_margin: 1e-9,
            seed: 0,
        }
    }
}

impl MinimizeOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_step > 0.0 && self.grad_tol > 0.0) {
            return Err(param(
                "initial step and gradient tolerance must be positive",
            ));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(param(format!(
                "backtracking factor must lie in (0, 1), got {}",
                self.backtrack
            )));
        }
        if !(self.box_margin > 0.0 && self.box_margin < 0.1) {
            return Err(param(format!(
                "box margin must lie in (0, 0.1), got {}",
                self.box_margin
            )));
        }
        if self.max_iter == 0 {
            return Err(param("max iterations must be positive"));
        }
        Ok(())
    }
}

/// Interfaces found in a field.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct JumpCensus {
    pub count: usize,
    pub locations: Vec<f64>,
    pub widths: Vec<f64>,
    /// Index of the last cell left of each crossing.
    pub cells: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinimizerResult {
    pub field: Field,
    pub energy: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Sup-norm of the projected-gradient step at the final iterate.
    pub pg_norm: f64,
    pub census: JumpCensus,
    /// Energy after every accepted step, starting with the initial field.
    pub trace: Vec<f64>,
}

/// Census level used by the minimizer and continuation.
pub const CENSUS_LEVEL: f64 = 0.9;

/// Euclidean projection onto `{|u_i| ≤ 1 - δ} ∩ {mean(u) = m}` (or the box
/// alone): `clip(v - λ)` with `λ` found by bisection, then the remaining
/// mass defect spread over the unclipped cells.
fn project(v: &mut [f64], bound: f64, mass: Option<f64>) {
    let clip = |x: f64| x.clamp(-bound, bound);
    let Some(m) = mass else {
        v.iter_mut().for_each(|x| *x = clip(*x));
        return;
    };
    let n = v.len() as f64;
    let mean_at = |lam: f64| v.iter().map(|&x| clip(x - lam)).sum::<f64>() / n;
    let (mut lo, mut hi) = (
        v.iter().cloned().fold(f64::INFINITY, f64::min) - 2.0,
        v.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 2.0,
    );
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_at(mid) > m {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-16 * (1.0 + lo.abs()) {
            break;
        }
    }
    let lam = 0.5 * (lo + hi);
    v.iter_mut().for_each(|x| *x = clip(*x - lam));
    for _ in 0..50 {
        let defect = m - v.iter().sum::<f64>() / n;
        if defect.abs() <= 1e-15 {
            break;
        }
        let free = v.iter().filter(|x| x.abs() < bound).count();
        if free == 0 {
            break;
        }
        let shift = defect * n / free as f64;
        v.iter_mut()
            .filter(|x| x.abs() < bound)
            .for_each(|x| *x = clip(*x + shift));
    }
}

struct Problem<'a> {
    j: &'a KernelMatrix,
    kt: f64,
    mass: Option<f64>,
    bound: f64,
}

impl Problem<'_> {
    /// Energy `-½⟨Ju, u⟩ + ∫G(u)` and its L² gradient `g(u) - Ju`, projected
    /// to zero mean under the mass constraint.
    fn eval(&self, u: &[f64], grad: &mut [f64], ju: &mut [f64]) -> f64 {
        let e = split_unchecked(u, self.j, self.kt, ju);
        for i in 0..u.len() {
            grad[i] = potential_unchecked(u[i], self.kt) - ju[i];
        }
        if self.mass.is_some() {
            let mean = grad.iter().sum::<f64>() / grad.len() as f64;
            grad.iter_mut().for_each(|g| *g -= mean);
        }
        e
    }

    fn pg_norm(&self, u: &[f64], grad: &[f64], work: &mut [f64]) -> f64 {
        for i in 0..u.len() {
            work[i] = u[i] - grad[i];
        }
        project(work, self.bound, self.mass);
        u.iter()
            .zip(work.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

struct Descent {
    u: Vec<f64>,
    energy: f64,
    iterations: usize,
    converged: bool,
    pg_norm: f64,
    trace: Vec<f64>,
}

/// Projected gradient with a Barzilai-Borwein trial step and monotone Armijo
/// backtracking.
fn descend(pb: &Problem, mut u: Vec<f64>, opts: &MinimizeOptions) -> Descent {
    let n = u.len();
    let h = 1.0 / n as f64;
    project(&mut u, pb.bound, pb.mass);
    let (mut grad, mut ju, mut work) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut energy = pb.eval(&u, &mut grad, &mut ju);
    let mut trace = vec![energy];
    let (mut trial, mut g_new) = (vec![0.0; n], vec![0.0; n]);
    let mut step = opts.initial_step;
    let mut iterations = 0;
    let mut pg = pb.pg_norm(&u, &grad, &mut work);
    let mut converged = pg <= opts.grad_tol;
    while !converged && iterations < opts.max_iter {
        iterations += 1;
        let mut t = step;
        let mut accepted = None;
        for _ in 0..80 {
            for i in 0..n {
                trial[i] = u[i] - t * grad[i];
            }
            project(&mut trial, pb.bound, pb.mass);
            let decrease: f64 = h * (0..n).map(|i| grad[i] * (u[i] - trial[i])).sum::<f64>();
            if decrease <= 0.0 {
                break;
            }
            let e_new = pb.eval(&trial, &mut g_new, &mut ju);
            if e_new <= energy - 1e-4 * decrease {
                accepted = Some(e_new);
                break;
            }
            t *= opts.backtrack;
        }
        let Some(e_new) = accepted else { break };
        let (mut ss, mut sy) = (0.0, 0.0);
        for i in 0..n {
            let s = trial[i] - u[i];
            ss += s * s;
            sy += s * (g_new[i] - grad[i]);
        }
        step = if sy > 0.0 {
            (ss / sy).clamp(1e-10, 1e10)
        } else {
            opts.initial_step
        };
        std::mem::swap(&mut u, &mut trial);
        std::mem::swap(&mut grad, &mut g_new);
        energy = e_new;
        trace.push(energy);
        pg = pb.pg_norm(&u, &grad, &mut work);
        converged = pg <= opts.grad_tol;
    }
    Descent {
        u,
        energy,
        iterations,
        converged,
        pg_norm: pg,
        trace,
    }
}

/// Local minimizer of `-½⟨Ju, u⟩ + ∫G(u)` (equal to the nonlocal double-well
/// energy with `j` the kernel row mass) over fields with `|u| ≤ 1 - δ` and
/// mean `m`, starting from `init`.
pub fn local_minimize(
    init: &Field,
    j: &KernelMatrix,
    kt: f64,
    m: f64,
    opts: &MinimizeOptions,
) -> Result<MinimizerResult> {
    opts.validate()?;
    if init.n() != j.n() {
        return Err(Error::Shape {
            expected: j.n(),
            found: init.n(),
        });
    }
    if !(kt >= 0.0 && kt.is_finite()) {
        return Err(param(format!("kT must be nonnegative, got {kt}")));
    }
    let bound = 1.0 - opts.box_margin;
    if !(m.abs() < bound) {
        return Err(param(format!(
            "mass {m} is infeasible with box margin {}",
            opts.box_margin
        )));
    }
    if let Some(i) = init.values().iter().position(|u| !(u.abs() < 1.0)) {
        return Err(crate::error::domain(format!(
            "initial field leaves the box at cell {i}"
        )));
    }
    let pb = Problem {
        j,
        kt,
        mass: Some(m),
        bound,
    };
    let d = descend(&pb, init.values().to_vec(), opts);
    let field = Field::new(d.u)?;
    let census = detect_jumps(&field, CENSUS_LEVEL)?;
    Ok(MinimizerResult {
        field,
        energy: d.energy,
        iterations: d.iterations,
        converged: d.converged,
        pg_norm: d.pg_norm,
        census,
        trace: d.trace,
    })
}

/// Zero crossings of `u` flanked on both sides by cells with `|u| ≥ level`
/// before the next crossing. An exact zero run is attributed to its left
/// end. The width of an interface is the distance between the nearest
/// flanking cells, so a sharp step has width `h`.
pub fn detect_jumps(u: &Field, level: f64) -> Result<JumpCensus> {
    if !(level > 0.0 && level < 1.0) {
        return Err(param(format!(
            "census level must lie in (0, 1), got {level}"
        )));
    }
    let v = u.values();
    let h = u.h();
    let nonzero: Vec<usize> = (0..v.len()).filter(|&i| v[i] != 0.0).collect();
    let mut census = JumpCensus::default();
    let crossings: Vec<(usize, usize)> = nonzero
        .windows(2)
        .filter(|w| v[w[0]].signum() != v[w[1]].signum())
        .map(|w| (w[0], w[1]))
        .collect();
    for (c, &(a, b)) in crossings.iter().enumerate() {
        let left_limit = if c == 0 { 0 } else { crossings[c - 1].1 };
        let right_limit = if c + 1 == crossings.len() {
            v.len() - 1
        } else {
            crossings[c + 1].0
        };
        let left = (left_limit..=a).rev().find(|&i| v[i].abs() >= level);
        let right = (b..=right_limit).find(|&i| v[i].abs() >= level);
        let (Some(l), Some(r)) = (left, right) else {
            continue;
        };
        let location = if b == a + 1 {
            let (xa, xb) = (u.x(a), u.x(b));
            xa + (xb - xa) * v[a] / (v[a] - v[b])
        } else {
            u.x(a + 1)
        };
        census.locations.push(location);
        census.widths.push((r - l) as f64 * h);
        census.cells.push(if b == a + 1 { a } else { a + 1 });
    }
    census.count = census.locations.len();
    Ok(census)
}

/// `J(x0, x0)/4 + ½∫∫J - j(x0) - ∫g'(u)`, with `x0` snapped to the nearest
/// cell midpoint.
pub fn criterion_c(j: &KernelMatrix, kt: f64, u: &Field, x0: f64) -> Result<f64> {
    if u.n() != j.n() {
        return Err(Error::Shape {
            expected: j.n(),
            found: u.n(),
        });
    }
    if !(0.0..=1.0).contains(&x0) {
        return Err(param(format!("x0 = {x0} outside [0, 1]")));
    }
    if let Some(i) = u.values().iter().position(|v| !(v.abs() < 1.0)) {
        return Err(crate::error::domain(format!("|u| >= 1 at cell {i}")));
    }
    let i = ((x0 * j.n() as f64) as usize).min(j.n() - 1);
    let slope: f64 = u.h()
        * u.values()
            .iter()
            .map(|&v| potential_slope_unchecked(v, kt))
            .sum::<f64>();
    Ok(j.get(i, i) / 4.0 + 0.5 * j.total_mass() - j.row_mass()[i] - slope)
}

/// Half-width, in cells, of the window excluded around each interface.
pub const INTERFACE_WINDOW: usize = 5;

/// Fraction of cells outside interface windows whose value lies strictly
/// inside the flat interval of the envelope.
pub fn gap_avoidance_check(u: &Field, t: &EnvelopeTable, census: &JumpCensus) -> Result<f64> {
    let flat = t
        .flat_interval()
        .ok_or(Error::NotApplicable("envelope has no flat interval"))?;
    let n = u.n();
    let mut excluded = vec![false; n];
    for &c in &census.cells {
        let lo = (c + 1).saturating_sub(INTERFACE_WINDOW);
        let hi = (c + INTERFACE_WINDOW).min(n - 1);
        excluded[lo..=hi].iter_mut().for_each(|e| *e = true);
    }
    let kept: Vec<f64> = (0..n)
        .filter(|&i| !excluded[i])
        .map(|i| u.values()[i])
        .collect();
    if kept.is_empty() {
        return Ok(0.0);
    }
    Ok(kept.iter().filter(|&&v| flat.contains_strictly(v)).count() as f64 / kept.len() as f64)
}

/// Long-range kernel for the sharp-interface problem.
#[derive(Debug, Clone, Copy)]
pub enum LongRange<'a> {
    /// Neumann Green's function, evaluated in closed form.
    Green,
    /// Tabulated kernel, read as piecewise constant on its cells.
    Matrix(&'a KernelMatrix),
}

impl LongRange<'_> {
    fn energy(&self, c: &BVConfig, c0: f64) -> f64 {
        match self {
            LongRange::Green => crate::energy::energy_i0_green(c, c0),
            LongRange::Matrix(jl) => energy_i0(c, c0, jl),
        }
    }

    /// Derivative of the energy along each jump position. Only its component
    /// tangent to the mass hyperplane is meaningful.
    fn gradient(&self, c: &BVConfig) -> Vec<f64> {
        match self {
            LongRange::Green => crate::energy::green_flux_gradient(c),
            LongRange::Matrix(jl) => {
                let n = jl.n();
                let ju = jl.apply(&c.cell_averages(n));
                c.jumps()
                    .iter()
                    .enumerate()
                    .map(|(i, &x)| {
                        let cell = ((x * n as f64) as usize).min(n - 1);
                        ju[cell] * jump_size(c, i)
                    })
                    .collect()
            }
        }
    }
}

/// `u(x_i-) - u(x_i+)`.
fn jump_size(c: &BVConfig, i: usize) -> f64 {
    let left = if i.is_multiple_of(2) {
        c.start_sign()
    } else {
        -c.start_sign()
    } as f64;
    2.0 * left
}

/// Ordered jumps with a given start sign whose segments of each sign share
/// that sign's total length equally.
pub fn equal_segments(k: usize, start: i8, m: f64) -> Result<BVConfig> {
    let segs = k + 1;
    let first = segs.div_ceil(2);
    let second = segs / 2;
    let (len_start, len_other) = if start > 0 {
        ((1.0 + m) / 2.0, (1.0 - m) / 2.0)
    } else {
        ((1.0 - m) / 2.0, (1.0 + m) / 2.0)
    };
    let mut x = 0.0;
    let mut jumps = Vec::with_capacity(k);
    for s in 0..k {
        x += if s % 2 == 0 {
            len_start / first as f64
        } else {
            len_other / second as f64
        };
        jumps.push(x);
    }
    BVConfig::new(jumps, start)
}

/// Minimizes the sharp-interface energy over `k` ordered jumps with mean `m`,
/// for both start signs, by projected gradient on the mass hyperplane.
pub fn optimize_jump_positions(
    k: usize,
    c0: f64,
    long: LongRange,
    m: f64,
) -> Result<(BVConfig, f64)> {
    if k == 0 {
        return Err(param(
            "at least one jump is required for a mean strictly inside (-1, 1)",
        ));
    }
    if !(m.abs() < 1.0) {
        return Err(param(format!("mean {m} is not attainable with {k} jumps")));
    }
    let mut best: Option<(BVConfig, f64)> = None;
    for start in [-1i8, 1] {
        let c = descend_jumps(equal_segments(k, start, m)?, c0, long)?;
        let e = long.energy(&c, c0);
        if best.as_ref().is_none_or(|(_, b)| e < *b - 1e-15) {
            best = Some((c, e));
        }
    }
    Ok(best.unwrap())
}

fn descend_jumps(mut c: BVConfig, c0: f64, long: LongRange) -> Result<BVConfig> {
    let k = c.jump_count();
    let normal: Vec<f64> = (0..k).map(|i| jump_size(&c, i)).collect();
    let nn: f64 = normal.iter().map(|a| a * a).sum();
    let tangent = |g: Vec<f64>| -> Vec<f64> {
        let dot: f64 = g.iter().zip(&normal).map(|(a, b)| a * b).sum();
        g.iter()
            .zip(&normal)
            .map(|(gi, ai)| gi - ai * dot / nn)
            .collect()
    };
    let mut e = long.energy(&c, c0);
    let mut g = tangent(long.gradient(&c));
    let mut step = 0.1;
    for _ in 0..10_000 {
        let gnorm = g.iter().map(|x| x.abs()).fold(0.0, f64::max);
        if gnorm <= 1e-13 {
            break;
        }
        let mut t = step;
        let mut moved = None;
        for _ in 0..80 {
            let x: Vec<f64> = c.jumps().iter().zip(&g).map(|(x, gi)| x - t * gi).collect();
            if let Ok(trial) = BVConfig::new(x, c.start_sign()) {
                let e_new = long.energy(&trial, c0);
                let g2: f64 = g.iter().map(|v| v * v).sum();
                if e_new <= e - 1e-4 * t * g2 {
                    moved = Some((trial, e_new));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((trial, e_new)) = moved else { break };
        let g_new = tangent(long.gradient(&trial));
        let (mut ss, mut sy) = (0.0, 0.0);
        for i in 0..k {
            let s = trial.jumps()[i] - c.jumps()[i];
            ss += s * s;
            sy += s * (g_new[i] - g[i]);
        }
        step = if sy > 0.0 { ss / sy } else { 0.1 };
        c = trial;
        e = e_new;
        g = g_new;
    }
    Ok(c)
}

/// Interface costs of a short-range kernel under both prefactor conventions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterfaceCosts {
    pub quarter: f64,
    pub unit: f64,
    /// Positive well of W with `j` the line mass of the kernel.
    pub well: f64,
}

impl InterfaceCosts {
    pub fn get(&self, p: Prefactor) -> f64 {
        match p {
            Prefactor::Quarter => self.quarter,
            Prefactor::Unit => self.unit,
        }
    }
}

/// `c0` for the kernel `Jˢ` with `j` its line mass, on a profile domain of
/// `half_width` kernel scales.
pub fn interface_costs(
    short: &ShortRangeKernel,
    kt: f64,
    half_width: f64,
    resolution: f64,
) -> Result<InterfaceCosts> {
    let j = short.line_mass().ok_or(Error::NotApplicable(
        "constant kernel has no finite line mass",
    ))?;
    let well = WellParams::new(j, kt)?;
    let mut pp = ProfileProblem::new(
        half_width * short.scale,
        resolution / short.scale,
        *short,
        well,
    );
    pp.prefactor = Prefactor::Quarter;
    let q = compute_c0(&pp)?;
    pp.prefactor = Prefactor::Unit;
    let u = compute_c0(&pp)?;
    Ok(InterfaceCosts {
        quarter: q.c0,
        unit: u.c0,
        well: q.well,
    })
}

/// Sharp configuration smoothed by linear ramps of width `2ε` and amplitude
/// `amp`; overlapping ramps are clipped to the segment midpoints.
pub fn mollify(c: &BVConfig, eps: f64, amp: f64, n: usize) -> Result<Field> {
    let jumps = c.jumps();
    Field::from_fn(n, |x| {
        let base = c.value_at(x);
        let Some((i, &xj)) = jumps
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - x).abs().total_cmp(&(b.1 - x).abs()))
        else {
            return amp * base;
        };
        let d = x - xj;
        if d.abs() >= eps {
            return amp * base;
        }
        let right = -(jump_size(c, i) / 2.0);
        amp * right * (d / eps)
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuationOutcome {
    pub eps: f64,
    pub result: MinimizerResult,
    /// L² distance of the minimizer from the sharp configuration.
    pub distance: f64,
    /// Energy of the relaxed single-phase state on the same grid.
    pub reference: f64,
    /// `(I_ε(u_ε) - reference) / ε`.
    pub scaled_energy: f64,
    pub limit_quarter: f64,
    pub limit_unit: f64,
    pub failure: Option<String>,
}

impl ContinuationOutcome {
    pub fn gap(&self, p: Prefactor) -> f64 {
        let limit = match p {
            Prefactor::Quarter => self.limit_quarter,
            Prefactor::Unit => self.limit_unit,
        };
        (self.scaled_energy - limit).abs()
    }
}

/// Radius of the L² ball around the sharp configuration within which the
/// continued minimizer must stay.
pub const TRUST_RADIUS: f64 = 0.5;

/// Mollifies `c`, minimizes under `J_ε = Jˢ_ε - ε Jˡ` at mean `c.mass()`,
/// and compares the scaled energy with the sharp-interface energy.
/// Divergence is reported in `failure`.
pub fn continuation(
    c: &BVConfig,
    eps: f64,
    short: &ShortRangeKernel,
    long: &KernelMatrix,
    kt: f64,
    costs: &InterfaceCosts,
    opts: &MinimizeOptions,
) -> Result<ContinuationOutcome> {
    let n = long.n();
    let js = build_short(short, eps, n)?;
    let j = build_balanced(&js, long, eps)?;
    let init = mollify(c, eps, costs.well.min(1.0 - opts.box_margin), n)?;
    let result = local_minimize(&init, &j, kt, c.mass(), opts)?;
    let pb = Problem {
        j: &j,
        kt,
        mass: None,
        bound: 1.0 - opts.box_margin,
    };
    let reference = descend(&pb, vec![costs.well.min(pb.bound); n], opts).energy;
    let sharp = c.cell_averages(n);
    let distance = result.field.l2_distance(&sharp);
    let mut failure = None;
    if !result.converged {
        failure = Some(format!(
            "no convergence after {} iterations",
            result.iterations
        ));
    } else if distance > TRUST_RADIUS {
        failure = Some(format!("left the trust ball (distance {distance:.3})"));
    } else if result.census.count != c.jump_count() {
        failure = Some(format!(
            "jump count changed from {} to {}",
            c.jump_count(),
            result.census.count
        ));
    }
    Ok(ContinuationOutcome {
        eps,
        scaled_energy: (result.energy - reference) / eps,
        reference,
        distance,
        limit_quarter: energy_i0(c, costs.quarter, long),
        limit_unit: energy_i0(c, costs.unit, long),
        result,
        failure,
    })
}

/// Convention under which the gap to the sharp limit decreases strictly
/// along the sweep (ordered by decreasing ε), preferring the smaller final
/// gap when both qualify.
pub fn select_prefactor(sweep: &[ContinuationOutcome]) -> Option<Prefactor> {
    [Prefactor::Quarter, Prefactor::Unit]
        .into_iter()
        .filter(|&p| sweep.windows(2).all(|w| w[1].gap(p) < w[0].gap(p)))
        .min_by(|&a, &b| {
            let last = sweep.last().unwrap();
            last.gap(a).total_cmp(&last.gap(b))
        })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub mu: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub kt_c: f64,
    /// `(kT, c0)` pairs.
    pub points: Vec<(f64, f64)>,
    /// Whether the fit meets the R² ≥ 0.99 quality gate.
    pub accepted: bool,
}

/// Fits `ln c0` against `ln(kT_c - kT)` over the given temperatures, using
/// `template` for everything but `kT` and the kernel family.
pub fn exponent_fit(
    family: KernelFamily,
    kts: &[f64],
    template: &ProfileProblem,
) -> Result<ExponentFit> {
    if kts.len() < 2 {
        return Err(param("exponent fit needs at least two temperatures"));
    }
    let kt_c = template.well.critical_kt();
    for &kt in kts {
        let r = kt / kt_c;
        if !(0.85..=0.995).contains(&r) {
            return Err(param(format!(
                "kT = {kt} is outside [0.85, 0.995] kT_c (kT_c = {kt_c})"
            )));
        }
    }
    let kernel = ShortRangeKernel::new(family, template.kernel.scale, template.kernel.mass)?;
    let c0s: Vec<Result<f64>> = kts
        .par_iter()
        .map(|&kt| {
            let mut pp = *template;
            pp.kernel = kernel;
            pp.well = WellParams::new(template.well.j, kt)?;
            compute_c0(&pp).map(|p| p.c0)
        })
        .collect();
    let mut points = Vec::with_capacity(kts.len());
    for (&kt, c) in kts.iter().zip(c0s) {
        let c0 = c.map_err(|e| Error::ExponentPoint {
            kt,
            source: Box::new(e),
        })?;
        if !(c0 > 0.0) {
            return Err(Error::ExponentPoint {
                kt,
                source: Box::new(Error::Solver(format!("non-positive interface cost {c0}"))),
            });
        }
        points.push((kt, c0));
    }
    let x: Vec<f64> = points.iter().map(|(kt, _)| (kt_c - kt).ln()).collect();
    let y: Vec<f64> = points.iter().map(|(_, c)| c.ln()).collect();
    let LineFit {
        slope,
        intercept,
        r_squared,
    } = fit_line(&x, &y);
    Ok(ExponentFit {
        mu: slope,
        intercept,
        r_squared,
        kt_c,
        points,
        accepted: r_squared >= 0.99,
    })
}

/// `count` temperatures evenly spaced over `[lo, hi]·kT_c`.
pub fn kt_grid(kt_c: f64, lo: f64, hi: f64, count: usize) -> Vec<f64> {
    (0..count)
        .map(|i| kt_c * (lo + (hi - lo) * i as f64 / (count - 1).max(1) as f64))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::energy_i;
    use crate::kernels::neumann_green;
    use crate::wells::EnvelopeOptions;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn projection_is_exact_and_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let mut v: Vec<f64> = (0..257).map(|_| rng.gen_range(-1.5..1.5)).collect();
            let m = rng.gen_range(-0.8..0.8);
            project(&mut v, 0.99, Some(m));
            assert!(v.iter().all(|x| x.abs() <= 0.99));
            assert!((v.iter().sum::<f64>() / 257.0 - m).abs() < 1e-14);
        }
    }

    #[test]
    fn convex_constant_state_is_stationary() {
        // Translation-invariant interaction: every row has the same mass.
        let k = ShortRangeKernel::new(KernelFamily::Constant, 1.0, 1.5).unwrap();
        let j = build_short(&k, 0.1, 128).unwrap();
        let init = Field::constant(128, 0.3).unwrap();
        let r = local_minimize(&init, &j, 0.6, 0.3, &MinimizeOptions::default()).unwrap();
        assert!(r.converged);
        assert!(r.field.values().iter().all(|&u| (u - 0.3).abs() < 1e-9));
        let e = energy_i(&r.field, &j, 0.6).unwrap();
        assert!((r.energy - e).abs() < 1e-12);
    }

    #[test]
    fn descent_is_monotone_and_mass_preserving() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 256;
        let k = ShortRangeKernel::new(KernelFamily::Gaussian, 0.5, 1.0).unwrap();
        let j = build_balanced(
            &build_short(&k, 0.1, n).unwrap(),
            &neumann_green(n).unwrap(),
            0.1,
        )
        .unwrap();
        let init = Field::new((0..n).map(|_| rng.gen_range(-0.5..0.5)).collect()).unwrap();
        let opts = MinimizeOptions {
            max_iter: 3000,
            ..Default::default()
        };
        let r = local_minimize(&init, &j, 0.25, 0.0, &opts).unwrap();
        assert!(r.trace.windows(2).all(|w| w[1] <= w[0]));
        assert!(r.field.mass().abs() < 1e-12);
        assert!(r.census.count >= 1);
    }

    #[test]
    fn infeasible_mass_rejected() {
        let k = ShortRangeKernel::new(KernelFamily::Box, 0.5, 1.0).unwrap();
        let j = build_short(&k, 0.1, 16).unwrap();
        let init = Field::constant(16, 0.0).unwrap();
        assert!(matches!(
            local_minimize(&init, &j, 0.3, 1.0, &MinimizeOptions::default()),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn census_of_square_wave() {
        let u = Field::from_fn(400, |x| {
            if ((x * 6.0) as usize).is_multiple_of(2) {
                1.0 - 1e-9
            } else {
                -1.0 + 1e-9
            }
        })
        .unwrap();
        let c = detect_jumps(&u, 0.9).unwrap();
        assert_eq!(c.count, 5);
        assert!(c.widths.iter().all(|&w| (w - 1.0 / 400.0).abs() < 1e-15));
        for (i, x) in c.locations.iter().enumerate() {
            assert!((x - (i + 1) as f64 / 6.0).abs() < 1.0 / 400.0);
        }
        assert_eq!(
            detect_jumps(&Field::constant(50, 0.2).unwrap(), 0.5)
                .unwrap()
                .count,
            0
        );
        assert!(detect_jumps(&u, 1.0).is_err());
    }

    #[test]
    fn census_of_ramp_matches_band() {
        // Oracle: a linear ramp of half-width s has |u| < level on
        // |x - ½| < level·s, a band of width 2·level·s.
        let n = 1000;
        let s = 0.05;
        let u = Field::from_fn(n, |x| ((x - 0.5) / s).clamp(-1.0, 1.0) * 0.999).unwrap();
        let c = detect_jumps(&u, 0.5).unwrap();
        assert_eq!(c.count, 1);
        let band = 2.0 * 0.5 / 0.999 * s;
        assert!((c.widths[0] - band).abs() <= 2.0 / n as f64);
    }

    #[test]
    fn exact_zero_goes_left() {
        let u = Field::new(vec![-1.0 + 1e-9, -0.95, 0.0, 0.0, 0.95, 1.0 - 1e-9]).unwrap();
        let c = detect_jumps(&u, 0.9).unwrap();
        assert_eq!(c.count, 1);
        assert_eq!(c.cells, vec![2]);
    }

    #[test]
    fn criterion_for_constant_kernel() {
        let j = KernelMatrix::from_fn(64, |_, _| 1.0).unwrap();
        let u = Field::from_fn(64, |x| 0.8 * (x - 0.5)).unwrap();
        let kt = 0.3;
        let int: f64 = u
            .values()
            .iter()
            .map(|&v| potential_slope_unchecked(v, kt))
            .sum::<f64>()
            / 64.0;
        let c = criterion_c(&j, kt, &u, 0.5).unwrap();
        assert!((c - (-0.25 - int)).abs() < 1e-12);
        let j2 = KernelMatrix::from_fn(64, |_, _| 2.0).unwrap();
        let c2 = criterion_c(&j2, kt, &u, 0.5).unwrap();
        assert!(((c2 + int) - 2.0 * (c + int)).abs() < 1e-12);
    }

    #[test]
    fn criterion_near_zero_temperature() {
        // Oracle: g'(u) = -1 + 2kT/(1-u²) ≈ -1 for |u| away from 1 at small kT.
        let j = KernelMatrix::from_fn(64, |_, _| 1.0).unwrap();
        let u = Field::constant(64, 0.5).unwrap();
        let c = criterion_c(&j, 1e-3, &u, 0.25).unwrap();
        let expect = 0.25 + 0.5 - 1.0 - (-1.0 + 2e-3 / 0.75);
        assert!((c - expect).abs() < 1e-12);
    }

    #[test]
    fn gap_check_cases() {
        let t = EnvelopeTable::for_mixing(0.25, &EnvelopeOptions::default()).unwrap();
        let f = t.flat_interval().unwrap();
        let square = Field::from_fn(200, |x| if x < 0.5 { f.lower } else { f.upper }).unwrap();
        let census = detect_jumps(&square, 0.9).unwrap();
        assert_eq!(gap_avoidance_check(&square, &t, &census).unwrap(), 0.0);
        let ramp = Field::from_fn(200, |x| f.lower + (f.upper - f.lower) * x).unwrap();
        let frac = gap_avoidance_check(&ramp, &t, &JumpCensus::default()).unwrap();
        assert!(frac > 0.98);
        let hot = EnvelopeTable::for_mixing(0.6, &EnvelopeOptions::default()).unwrap();
        assert!(matches!(
            gap_avoidance_check(&ramp, &hot, &JumpCensus::default()),
            Err(Error::NotApplicable(_))
        ));
    }

    /// Brute-force minimization over a grid of jump positions satisfying the
    /// mass constraint; the last jump is solved for from the others.
    fn brute_force(k: usize, m: f64, res: f64, centre: Option<&[f64]>, radius: f64) -> Vec<f64> {
        let mut best = (f64::INFINITY, vec![]);
        let mut idx = vec![0usize; k - 1];
        let ranges: Vec<(f64, usize)> = (0..k - 1)
            .map(|i| match centre {
                Some(c) => (c[i] - radius, (2.0 * radius / res).round() as usize),
                None => (res, (1.0 / res).round() as usize - 1),
            })
            .collect();
        loop {
            let mut x: Vec<f64> = (0..k - 1)
                .map(|i| ranges[i].0 + idx[i] as f64 * res)
                .collect();
            // Start sign -1: mass = Σ_i (-1)^(i+1)·2x_i·(-1)... solve for x_k.
            let partial: f64 = x
                .iter()
                .enumerate()
                .map(|(i, &xi)| if i % 2 == 0 { -2.0 * xi } else { 2.0 * xi })
                .sum();
            // mass = -1·(sign flip sum): m = -(1) + Σ a_i x_i with a_i = 2(-1)^i·(-1)... handled by BVConfig.
            let last_coef = if (k - 1).is_multiple_of(2) { -2.0 } else { 2.0 };
            let base = if k.is_multiple_of(2) { -1.0 } else { 1.0 };
            let xk = (m - base - partial) / last_coef;
            x.push(xk);
            if let Ok(c) = BVConfig::new(x.clone(), -1) {
                if (c.mass() - m).abs() < 1e-9 {
                    let e = crate::energy::energy_i0_green(&c, 0.0);
                    if e < best.0 {
                        best = (e, x);
                    }
                }
            }
            let mut d = 0;
            loop {
                if d == k - 1 {
                    return best.1;
                }
                idx[d] += 1;
                if idx[d] <= ranges[d].1 {
                    break;
                }
                idx[d] = 0;
                d += 1;
            }
            if k == 1 {
                return best.1;
            }
        }
    }

    #[test]
    fn single_jump_sits_in_the_middle() {
        let (c, e) = optimize_jump_positions(1, 0.2, LongRange::Green, 0.0).unwrap();
        assert!((c.jumps()[0] - 0.5).abs() < 1e-12);
        assert!((e - (0.2 + 1.0 / 24.0)).abs() < 1e-12);
    }

    #[test]
    fn jumps_are_equally_spaced_and_match_brute_force() {
        for k in 2..=4 {
            let (c, _) = optimize_jump_positions(k, 0.3, LongRange::Green, 0.0).unwrap();
            let x = c.jumps();
            let inner: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
            let period = 1.0 / k as f64;
            assert!(
                inner.iter().all(|g| (g - period).abs() < 1e-6),
                "k={k}: {x:?}"
            );
            assert!((x[0] - 0.5 * period).abs() < 1e-6);
            let coarse = brute_force(k, 0.0, if k <= 3 { 1e-3 } else { 1e-2 }, None, 0.0);
            let fine = if k <= 3 {
                coarse
            } else {
                brute_force(k, 0.0, 1e-3, Some(&coarse), 0.02)
            };
            // Compare in the start-sign -1 representation.
            let ours: Vec<f64> = if c.start_sign() == -1 {
                x.to_vec()
            } else {
                x.iter().rev().map(|v| 1.0 - v).collect()
            };
            for (a, b) in ours.iter().zip(&fine) {
                assert!((a - b).abs() <= 1e-3 + 1e-9, "k={k}: {ours:?} vs {fine:?}");
            }
        }
    }

    #[test]
    fn cost_shift_leaves_positions() {
        let (a, ea) = optimize_jump_positions(3, 0.1, LongRange::Green, 0.2).unwrap();
        let (b, eb) = optimize_jump_positions(3, 0.6, LongRange::Green, 0.2).unwrap();
        for (x, y) in a.jumps().iter().zip(b.jumps()) {
            assert!((x - y).abs() < 1e-9);
        }
        assert!((eb - ea - 1.5).abs() < 1e-12);
        assert!((a.mass() - 0.2).abs() < 1e-12);
        assert!(optimize_jump_positions(0, 0.1, LongRange::Green, 0.0).is_err());
    }

    #[test]
    fn tabulated_green_agrees_with_closed_form() {
        let g = neumann_green(2048).unwrap();
        let (c, _) = optimize_jump_positions(2, 0.3, LongRange::Matrix(&g), 0.0).unwrap();
        assert!(
            (c.jumps()[0] - 0.25).abs() < 2e-3 && (c.jumps()[1] - 0.75).abs() < 2e-3,
            "{:?}",
            c.jumps()
        );
    }

    #[test]
    fn mollifier_shape() {
        let c = BVConfig::new(vec![0.25, 0.75], -1).unwrap();
        let u = mollify(&c, 0.05, 0.9, 1000).unwrap();
        assert!(u.mass().abs() < 1e-12);
        assert_eq!(u.values()[0], -0.9);
        assert_eq!(u.values()[500], 0.9);
        assert!((u.values()[250] - 0.9 * 0.0005 / 0.05).abs() < 1e-12);
    }

    #[test]
    fn exponent_fit_rejects_bad_grids() {
        let k = ShortRangeKernel::new(KernelFamily::Constant, 1.0, 1.0).unwrap();
        let pp = ProfileProblem::new(5.0, 10.0, k, WellParams::new(0.0, 0.3).unwrap());
        assert!(exponent_fit(KernelFamily::Constant, &[0.2, 0.45], &pp).is_err());
        assert!(exponent_fit(KernelFamily::Constant, &[0.45], &pp).is_err());
    }
}
