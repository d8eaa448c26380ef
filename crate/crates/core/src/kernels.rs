//! Interaction kernels on the unit interval: scaled short-range kernels,
//! the Neumann Green's function, and their well-balanced combination.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    Box,
    Gaussian,
    Exponential,
    Constant,
}

impl KernelFamily {
    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::Box => "box",
            KernelFamily::Gaussian => "gaussian",
            KernelFamily::Exponential => "exponential",
            KernelFamily::Constant => "constant",
        }
    }
}

impl std::str::FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "box" => Ok(KernelFamily::Box),
            "gaussian" => Ok(KernelFamily::Gaussian),
            "exponential" => Ok(KernelFamily::Exponential),
            "constant" => Ok(KernelFamily::Constant),
            other => Err(param(format!("unknown kernel family '{other}'"))),
        }
    }
}

/// Nonnegative even kernel on the line.
///
/// `scale` is the half-width for `box`, the standard deviation for
/// `gaussian` and the decay length for `exponential`. `mass` is the integral
/// over the line; for `constant` it is the (unscaled) kernel value itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShortRangeKernel {
    pub family: KernelFamily,
    pub scale: f64,
    pub mass: f64,
}

impl ShortRangeKernel {
    pub fn new(family: KernelFamily, scale: f64, mass: f64) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(param(format!("kernel scale must be positive, got {scale}")));
        }
        if !(mass >= 0.0) || !mass.is_finite() {
            return Err(param(format!(
                "kernel mass must be nonnegative, got {mass}"
            )));
        }
        Ok(Self {
            family,
            scale,
            mass,
        })
    }

    /// Kernel value at separation `z`.
    pub fn profile(&self, z: f64) -> f64 {
        let s = self.scale;
        let z = z.abs();
        match self.family {
            KernelFamily::Box => {
                if z <= s {
                    self.mass / (2.0 * s)
                } else {
                    0.0
                }
            }
            KernelFamily::Gaussian => {
                self.mass / ((2.0 * PI).sqrt() * s) * (-0.5 * z * z / (s * s)).exp()
            }
            KernelFamily::Exponential => self.mass / (2.0 * s) * (-z / s).exp(),
            KernelFamily::Constant => self.mass,
        }
    }

    /// Separation beyond which the kernel is zero to double precision
    /// (relative to its peak), or `None` for the constant kernel.
    pub fn reach(&self) -> Option<f64> {
        let s = self.scale;
        match self.family {
            KernelFamily::Box => Some(s),
            KernelFamily::Gaussian => Some(9.0 * s),
            KernelFamily::Exponential => Some(37.0 * s),
            KernelFamily::Constant => None,
        }
    }

    /// Line integral of the kernel; `None` for the constant kernel.
    pub fn line_mass(&self) -> Option<f64> {
        match self.family {
            KernelFamily::Constant => None,
            _ => Some(self.mass),
        }
    }
}

/// Symmetric kernel sampled at cell midpoints `x_i = (i + ½)/n`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    n: usize,
    h: f64,
    values: Vec<f64>,
    row_mass: Vec<f64>,
}

impl KernelMatrix {
    /// Builds from a symmetric function of the midpoints. Only the upper
    /// triangle is evaluated; the lower one is mirrored.
    pub fn from_fn<F: Fn(f64, f64) -> f64>(n: usize, f: F) -> Result<Self> {
        if n < 2 {
            return Err(param(format!("grid needs at least 2 cells, got {n}")));
        }
        let h = 1.0 / n as f64;
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            let xi = (i as f64 + 0.5) * h;
            for j in i..n {
                let v = f(xi, (j as f64 + 0.5) * h);
                values[i * n + j] = v;
                values[j * n + i] = v;
            }
        }
        Ok(Self::from_values(n, values))
    }

    fn from_values(n: usize, values: Vec<f64>) -> Self {
        let h = 1.0 / n as f64;
        let row_mass = values
            .chunks_exact(n)
            .map(|r| h * r.iter().sum::<f64>())
            .collect();
        Self {
            n,
            h,
            values,
            row_mass,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `j(x_i) = h Σ_j J_ij`.
    pub fn row_mass(&self) -> &[f64] {
        &self.row_mass
    }

    /// `h² Σ_ij J_ij`.
    pub fn total_mass(&self) -> f64 {
        self.h * self.row_mass.iter().sum::<f64>()
    }

    /// Midpoint quadrature of `∫ J(x_i, y) u(y) dy` for every row.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.apply_into(u, &mut out);
        out
    }

    pub fn apply_into(&self, u: &[f64], out: &mut [f64]) {
        debug_assert_eq!(u.len(), self.n);
        for (o, row) in out.iter_mut().zip(self.values.chunks_exact(self.n)) {
            *o = self.h * dot(row, u);
        }
    }

    /// `∫∫ J(x, y) u(x) u(y)` by midpoint quadrature.
    pub fn quadratic_form(&self, u: &[f64]) -> f64 {
        let ju = self.apply(u);
        self.h * dot(&ju, u)
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (i + 1..self.n).all(|j| self.get(i, j) == self.get(j, i)))
    }
}

/// Four-way unrolled dot product; the fixed association order keeps results
/// reproducible across runs.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for k in 0..chunks {
        let i = 4 * k;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// `ε⁻¹ Jˢ((x - y)/ε)` at the midpoints, restricted to the unit square.
/// The constant family ignores `eps`.
pub fn build_short(k: &ShortRangeKernel, eps: f64, n: usize) -> Result<KernelMatrix> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(param(format!("eps must be positive, got {eps}")));
    }
    match k.family {
        KernelFamily::Constant => KernelMatrix::from_fn(n, |_, _| k.mass),
        _ => KernelMatrix::from_fn(n, |x, y| k.profile((x - y) / eps) / eps),
    }
}

/// Closed-form kernel of `(-d²/dx²)⁻¹` on zero-mean functions with zero-flux
/// ends: `(x² + y²)/2 - max(x, y) + 1/3`.
pub fn green_closed_form(x: f64, y: f64) -> f64 {
    0.5 * (x * x + y * y) - x.max(y) + 1.0 / 3.0
}

/// Neumann Green's function at the midpoints, double-centred so that every
/// row (and column) sums to zero on the grid.
pub fn neumann_green(n: usize) -> Result<KernelMatrix> {
    let raw = KernelMatrix::from_fn(n, green_closed_form)?;
    let nf = n as f64;
    let means: Vec<f64> = raw
        .values
        .chunks_exact(n)
        .map(|r| r.iter().sum::<f64>() / nf)
        .collect();
    let grand = means.iter().sum::<f64>() / nf;
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = raw.values[i * n + j] - means[i] - means[j] + grand;
            values[i * n + j] = v;
            values[j * n + i] = v;
        }
    }
    Ok(KernelMatrix::from_values(n, values))
}

/// `short - ε · long`; the short matrix already carries its `ε⁻¹` scaling.
pub fn build_balanced(short: &KernelMatrix, long: &KernelMatrix, eps: f64) -> Result<KernelMatrix> {
    if short.n != long.n {
        return Err(Error::Shape {
            expected: short.n,
            found: long.n,
        });
    }
    if !(eps >= 0.0) {
        return Err(param(format!("eps must be nonnegative, got {eps}")));
    }
    let values = short
        .values
        .iter()
        .zip(&long.values)
        .map(|(s, l)| s - eps * l)
        .collect();
    Ok(KernelMatrix::from_values(short.n, values))
}

/// `∫_{-L}^{L} |z| Jˢ(z) dz` by composite Simpson on `[0, L]`, cut at the
/// edge of the box support.
pub fn first_moment(k: &ShortRangeKernel, truncation: f64) -> Result<f64> {
    if !(truncation > 0.0) {
        return Err(param(format!(
            "truncation must be positive, got {truncation}"
        )));
    }
    if k.family == KernelFamily::Constant {
        return Err(Error::UnboundedMoment("constant"));
    }
    let f = |z: f64| z * k.profile(z);
    let upper = if k.family == KernelFamily::Box {
        truncation.min(k.scale)
    } else {
        truncation
    };
    let breaks = [0.0, upper];
    let mut total = 0.0;
    for w in breaks.windows(2) {
        total += simpson(&f, w[0], w[1], 20_000);
    }
    Ok(2.0 * total)
}

fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, panels: usize) -> f64 {
    let m = 2 * panels;
    let h = (b - a) / m as f64;
    let mut s = f(a) + f(b);
    for i in 1..m {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}
