//! Van der Waals equation of state, molar free energy, critical point and
//! the coexistence pair obtained from the convex envelope of the free energy.

use serde::{Deserialize, Serialize};

use crate::error::{domain, param, Error, Result};
use crate::hull;
use crate::numeric::bisect;

/// Van der Waals parameters. `a = b = 0` is the ideal gas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EosParams {
    /// Attraction parameter (pressure × volume²).
    pub a: f64,
    /// Covolume.
    pub b: f64,
    /// Gas constant.
    pub r: f64,
}

impl EosParams {
    pub fn new(a: f64, b: f64, r: f64) -> Result<Self> {
        if !(a >= 0.0) || !a.is_finite() {
            return Err(param(format!("a must be finite and >= 0, got {a}")));
        }
        if !(b >= 0.0) || !b.is_finite() {
            return Err(param(format!("b must be finite and >= 0, got {b}")));
        }
        if !(r > 0.0) || !r.is_finite() {
            return Err(param(format!("R must be finite and > 0, got {r}")));
        }
        Ok(Self { a, b, r })
    }

    /// Reduced units: the critical point sits at `(V, T, P) = (1, 1, 1)`.
    pub fn reduced() -> Self {
        Self {
            a: 3.0,
            b: 1.0 / 3.0,
            r: 8.0 / 3.0,
        }
    }

    pub fn ideal(r: f64) -> Result<Self> {
        Self::new(0.0, 0.0, r)
    }

    fn pressure_unchecked(&self, v: f64, t: f64) -> f64 {
        self.r * t / (v - self.b) - self.a / (v * v)
    }

    fn dpressure_unchecked(&self, v: f64, t: f64) -> f64 {
        let d = v - self.b;
        -self.r * t / (d * d) + 2.0 * self.a / (v * v * v)
    }

    fn free_energy_unchecked(&self, v: f64, t: f64) -> f64 {
        -self.r * t * (v - self.b).ln() - self.a / v
    }
}

/// `RT/V`.
pub fn ideal_pressure(v: f64, t: f64, p: &EosParams) -> Result<f64> {
    if !(v > 0.0) {
        return Err(domain(format!("volume must be positive, got {v}")));
    }
    if !(t > 0.0) {
        return Err(domain(format!("temperature must be positive, got {t}")));
    }
    Ok(p.r * t / v)
}

/// `RT/(V - b) - a/V²`.
pub fn vdw_pressure(v: f64, t: f64, p: &EosParams) -> Result<f64> {
    check_state(v, t, p)?;
    Ok(p.pressure_unchecked(v, t))
}

/// Molar Helmholtz free energy `-RT ln(V - b) - a/V`, so that `P = -dΨ/dV`.
pub fn vdw_free_energy(v: f64, t: f64, p: &EosParams) -> Result<f64> {
    check_state(v, t, p)?;
    Ok(p.free_energy_unchecked(v, t))
}

fn check_state(v: f64, t: f64, p: &EosParams) -> Result<()> {
    if !(v > p.b) {
        return Err(domain(format!(
            "volume {v} does not exceed the covolume {}",
            p.b
        )));
    }
    if !(v > 0.0) {
        return Err(domain(format!("volume must be positive, got {v}")));
    }
    if !(t > 0.0) {
        return Err(domain(format!("temperature must be positive, got {t}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub v: f64,
    pub t: f64,
    pub p: f64,
}

/// Inflection point of the critical isotherm, `Vc = 3b`, `Tc = 8a/(27Rb)`,
/// `Pc = a/(27b²)`.
pub fn critical_point(p: &EosParams) -> Result<CriticalPoint> {
    if !(p.a > 0.0 && p.b > 0.0) {
        return Err(Error::NoCriticalPoint);
    }
    Ok(CriticalPoint {
        v: 3.0 * p.b,
        t: 8.0 * p.a / (27.0 * p.r * p.b),
        p: p.a / (27.0 * p.b * p.b),
    })
}

/// Two coexisting molar volumes at a common pressure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoexistenceResult {
    /// Liquid molar volume.
    pub v1: f64,
    /// Gas molar volume.
    pub v2: f64,
    pub p_star: f64,
    pub t: f64,
}

impl CoexistenceResult {
    /// `∫_{V1}^{V2} (P(V) - P*) dV` from the closed-form antiderivative of P.
    pub fn equal_area_residual(&self, p: &EosParams) -> f64 {
        let rt = p.r * self.t;
        let integral =
            rt * ((self.v2 - p.b) / (self.v1 - p.b)).ln() + p.a * (1.0 / self.v2 - 1.0 / self.v1);
        integral - self.p_star * (self.v2 - self.v1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaxwellOptions {
    /// Upper end of the volume grid, in units of `b`.
    pub v_max_factor: f64,
    pub grid_points: usize,
}

impl Default for MaxwellOptions {
    fn default() -> Self {
        Self {
            v_max_factor: 50.0,
            grid_points: 20001,
        }
    }
}

pub fn maxwell_construction(t: f64, p: &EosParams) -> Result<CoexistenceResult> {
    maxwell_construction_with(t, p, &MaxwellOptions::default())
}

/// Coexistence pair from the lower convex envelope of `V ↦ Ψ(V)`.
///
/// The envelope is sampled on a log-spaced grid; its bridging edge seeds a
/// Newton solve for the exact common tangent (equal pressure, equal
/// chemical potential). When the gas branch runs off the grid the grid is
/// extended.
pub fn maxwell_construction_with(
    t: f64,
    p: &EosParams,
    opts: &MaxwellOptions,
) -> Result<CoexistenceResult> {
    if !(t > 0.0) {
        return Err(domain(format!("temperature must be positive, got {t}")));
    }
    let crit = critical_point(p)?;
    if t >= crit.t {
        return Err(Error::NoCoexistence { t, tc: crit.t });
    }
    if opts.grid_points < 3 || !(opts.v_max_factor > 3.0) {
        return Err(param("Maxwell grid needs >= 3 points and v_max_factor > 3"));
    }
    let eval = |v: f64| {
        (
            p.free_energy_unchecked(v, t),
            -p.pressure_unchecked(v, t),
            -p.dpressure_unchecked(v, t),
        )
    };
    let lo = p.b * (1.0 + 1e-6);
    let mut v_max = opts.v_max_factor * p.b;
    let mut seed = None;
    for _ in 0..40 {
        let n = opts.grid_points;
        let (l0, l1) = (lo.ln(), v_max.ln());
        let v: Vec<f64> = (0..n)
            .map(|i| (l0 + (l1 - l0) * i as f64 / (n - 1) as f64).exp())
            .collect();
        let psi: Vec<f64> = v.iter().map(|&x| p.free_energy_unchecked(x, t)).collect();
        let h = hull::lower_hull(&v, &psi);
        let scale = psi.iter().fold(0.0f64, |m, y| m.max(y.abs()));
        match hull::deepest_bridge(&v, &psi, &h, 64.0 * f64::EPSILON * scale) {
            Some(b) if b.right == n - 1 => v_max *= 2.0,
            Some(b) => {
                seed = Some((v[b.left], v[b.right]));
                break;
            }
            None => break,
        }
    }
    // Near Tc the bump is below grid resolution; fall back to the
    // square-root law around the critical volume.
    let seed = seed.unwrap_or_else(|| {
        let w = 2.0 * (1.0 - t / crit.t).sqrt();
        (
            crit.v * (1.0 - w).max(1.0 / 3.0 + 1e-9),
            crit.v * (1.0 + 2.0 * w),
        )
    });
    let tangent = hull::refine_double_tangent(eval, seed, p.b, f64::INFINITY)
        .or_else(|| equal_area_bisection(t, p, &crit))
        .ok_or_else(|| Error::Solver(format!("common tangent did not converge at T = {t}")))?;
    Ok(CoexistenceResult {
        v1: tangent.left,
        v2: tangent.right,
        p_star: -tangent.slope,
        t,
    })
}

/// Bracketing fallback: bisection on the pressure between the spinodal
/// pressures until the equal-area residual vanishes.
fn equal_area_bisection(t: f64, p: &EosParams, crit: &CriticalPoint) -> Option<hull::Tangent> {
    let dp = |v: f64| p.dpressure_unchecked(v, t);
    let far = 1e6 * p.b;
    let spin_l = bisect(dp, p.b * (1.0 + 1e-12), crit.v, 1e-15)?;
    let spin_r = bisect(dp, crit.v, far, 1e-15)?;
    let p_lo = p.pressure_unchecked(spin_l, t).max(1e-300);
    let p_hi = p.pressure_unchecked(spin_r, t);
    let roots = |ps: f64| {
        let v1 = bisect(
            |v| p.pressure_unchecked(v, t) - ps,
            p.b * (1.0 + 1e-15),
            spin_l,
            1e-15,
        )?;
        let v2 = bisect(|v| p.pressure_unchecked(v, t) - ps, spin_r, far, 1e-15)?;
        Some((v1, v2))
    };
    let area = |ps: f64| {
        let (v1, v2) = roots(ps)?;
        Some(
            CoexistenceResult {
                v1,
                v2,
                p_star: ps,
                t,
            }
            .equal_area_residual(p),
        )
    };
    let ps = bisect(|ps| area(ps).unwrap_or(f64::NAN), p_lo, p_hi, 1e-15)?;
    let (v1, v2) = roots(ps)?;
    Some(hull::Tangent {
        left: v1,
        right: v2,
        slope: -ps,
    })
}
