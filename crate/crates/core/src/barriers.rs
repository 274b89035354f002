//! Explicit barrier families, their time laws, grid certificates of their
//! differential inequalities and clearance monitors against evolving graphs.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fd::derivatives5;
use crate::graph_flow::GraphFlowState;
use crate::ode::DormandPrince;
use crate::profile::PotentialProfile;
use crate::stationary::{stationarity_residual, PolarProfile, SemiStableData};

/// Certificates pass when the minimum residual is at least this value.
pub const CERT_TOL: f64 = -1e-10;
/// Default certificate grid size per axis.
pub const CERT_GRID: usize = 512;

/// Outcome of a grid certificate of a differential inequality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertReport {
    pub kind: String,
    pub params: BTreeMap<String, f64>,
    pub min_residual: f64,
    /// Grid coordinates of the minimum, in the order of `axes`.
    pub argmin: Vec<f64>,
    pub axes: Vec<String>,
    pub grid: Vec<usize>,
    pub pass: bool,
    /// Minimum on the grid with doubled resolution.
    pub refined_min_residual: Option<f64>,
    pub refined_pass: Option<bool>,
    pub notes: Vec<String>,
}

impl CertReport {
    /// Both resolutions agree on the verdict.
    pub fn stable(&self) -> bool {
        self.refined_pass.is_none_or(|p| p == self.pass)
    }
}

/// Minimum of `eval(i, j)` over an `n0 × n1` grid with its indices.
fn grid_min<F>(n0: usize, n1: usize, eval: F) -> (f64, usize, usize)
where
    F: Fn(usize, usize) -> f64 + Sync,
{
    (0..n0)
        .into_par_iter()
        .map(|i| {
            let mut best = (f64::INFINITY, i, 0);
            for j in 0..n1 {
                let v = eval(i, j);
                if v < best.0 || v.is_nan() {
                    best = (if v.is_nan() { f64::NEG_INFINITY } else { v }, i, j);
                }
            }
            best
        })
        // ties go to the smaller index so the result does not depend on scheduling
        .reduce(
            || (f64::INFINITY, usize::MAX, usize::MAX),
            |a, b| {
                if b.0 < a.0 || (b.0 == a.0 && (b.1, b.2) < (a.1, a.2)) {
                    b
                } else {
                    a
                }
            },
        )
}

// ---------------------------------------------------------------------------
// Traveling hyperbolas

/// Which of the two printed forms of the rate constant to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateVariant {
    /// Denominator `a(a² − b∞²)(2a² − b∞²)²`.
    OuterSquared,
    /// Denominator `a(a² − b∞²)²(2a² − b∞²)`.
    InnerSquared,
}

impl RateVariant {
    pub const ALL: [RateVariant; 2] = [RateVariant::OuterSquared, RateVariant::InnerSquared];

    pub fn name(self) -> &'static str {
        match self {
            RateVariant::OuterSquared => "outer_squared",
            RateVariant::InnerSquared => "inner_squared",
        }
    }
}

/// `x = g_t(y) = sqrt(m y² + b²)` with `m = (a² − b²)/(a² − b∞²)` and
/// `ḃ = −C1 (b − b∞) b³`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperbolaBarrier {
    pub n: u32,
    pub a: f64,
    pub k: f64,
    pub b_inf: f64,
    pub b0: f64,
    pub c1: f64,
    pub c0: f64,
    pub variant: RateVariant,
}

/// `(b∞² + 2b² log(b − b∞) + 2b∞ b − 2b² log b) / (2 b∞³ b²)`, the antiderivative
/// of `1/((b − b∞) b³)` up to sign.
pub fn hyperbola_potential(b: f64, b_inf: f64) -> f64 {
    (b_inf * b_inf + 2.0 * b * b * (b - b_inf).ln() + 2.0 * b_inf * b - 2.0 * b * b * b.ln())
        / (2.0 * b_inf.powi(3) * b * b)
}

impl HyperbolaBarrier {
    pub fn new(n: u32, a: f64, k: f64, b_inf: f64, b0: f64, variant: RateVariant) -> Result<Self> {
        if !(1.0 < b_inf && b_inf < b0 && b0 < a) {
            return Err(invalid(
                "hyperbola",
                format!("need 1 < b_inf < b0 < a, got b_inf = {b_inf}, b0 = {b0}, a = {a}"),
            ));
        }
        if !(k > 0.0) {
            return Err(invalid("k", "must be positive"));
        }
        let (a2, bi2) = (a * a, b_inf * b_inf);
        let denom = match variant {
            RateVariant::OuterSquared => a * (a2 - bi2) * (2.0 * a2 - bi2).powi(2),
            RateVariant::InnerSquared => a * (a2 - bi2).powi(2) * (2.0 * a2 - bi2),
        };
        let c1 = k * b_inf * (b_inf - 1.0) * (a2 - b0 * b0) / denom;
        Ok(Self {
            n,
            a,
            k,
            b_inf,
            b0,
            c1,
            c0: hyperbola_potential(b0, b_inf),
            variant,
        })
    }

    /// Standard family for radius `r`: `b∞ = r`, `b0 = 5r`, `a = 6r`.
    pub fn standard(n: u32, r: f64, k: f64, variant: RateVariant) -> Result<Self> {
        Self::new(n, 6.0 * r, k, r, 5.0 * r, variant)
    }

    pub fn rate(&self, b: f64) -> f64 {
        -self.c1 * (b - self.b_inf) * b.powi(3)
    }

    pub fn m(&self, b: f64) -> f64 {
        (self.a * self.a - b * b) / (self.a * self.a - self.b_inf * self.b_inf)
    }

    /// Half-height `sqrt(a² − b∞²)` of the domain in `y`.
    pub fn y_extent(&self) -> f64 {
        (self.a * self.a - self.b_inf * self.b_inf).sqrt()
    }

    pub fn g(&self, b: f64, y: f64) -> f64 {
        (self.m(b) * y * y + b * b).sqrt()
    }

    fn solver() -> DormandPrince {
        DormandPrince::with_tolerances(1e-13, 1e-15)
    }

    /// `b(t)` by adaptive integration from `b(0) = b0`.
    pub fn solve_b_ivp(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(invalid("t", "must be nonnegative"));
        }
        let y = Self::solver().integrate(|_, y: &[f64; 1]| [self.rate(y[0])], 0.0, [self.b0], t)?;
        Ok(y[0])
    }

    /// `b` at each of the nondecreasing times `ts`.
    pub fn b_at_times(&self, ts: &[f64]) -> Result<Vec<f64>> {
        let solver = Self::solver();
        let mut out = Vec::with_capacity(ts.len());
        let (mut t, mut b) = (0.0, self.b0);
        for &tn in ts {
            if tn < t {
                return Err(invalid("ts", "times must be nondecreasing"));
            }
            b = solver.integrate(|_, y: &[f64; 1]| [self.rate(y[0])], t, [b], tn)?[0];
            t = tn;
            out.push(b);
        }
        Ok(out)
    }

    /// Integrates the law from `b` over a time interval of length `dt`.
    pub fn advance_b(&self, b: f64, dt: f64) -> Result<f64> {
        Ok(Self::solver().integrate(|_, y: &[f64; 1]| [self.rate(y[0])], 0.0, [b], dt)?[0])
    }

    /// `|(−C1 t + C0) − F(b)|` for the implicit relation of the IVP.
    pub fn closed_form_residual(&self, t: f64, b: f64) -> f64 {
        ((-self.c1 * t + self.c0) - hyperbola_potential(b, self.b_inf)).abs()
    }

    /// Time at which `b` reaches `target`, from the closed form.
    pub fn hitting_time(&self, target: f64) -> f64 {
        (self.c0 - hyperbola_potential(target, self.b_inf)) / self.c1
    }

    /// Time at which `b` reaches `target`, from adaptive integration with event location.
    pub fn rk_hitting_time(&self, target: f64) -> Result<f64> {
        let t_guess = self.hitting_time(target);
        let hit = Self::solver().integrate_to_event(
            |_, y: &[f64; 1]| [self.rate(y[0])],
            0.0,
            [self.b0],
            4.0 * t_guess.max(1.0),
            |_, y| y[0] - target,
        )?;
        hit.map(|h| h.t)
            .ok_or_else(|| Error::Integration(format!("b did not reach {target}")))
    }

    /// `ġ − u″(g)(g″/(1+g′²) + (n−1)(y g′ − g)/(y² + g²))` at `(b, y)`.
    pub fn residual(&self, profile: &PotentialProfile, b: f64, y: f64) -> f64 {
        let m = self.m(b);
        let g = self.g(b, y);
        let gp = m * y / g;
        let gpp = m * b * b / g.powi(3);
        let span = self.a * self.a - self.b_inf * self.b_inf;
        let gdot = b * self.rate(b) * (span - y * y) / (g * span);
        let mm = (self.n - 1) as f64;
        let op = gpp / (1.0 + gp * gp) + mm * (y * gp - g) / (y * y + g * g);
        gdot - profile.eval(g) * op
    }
}

/// Certifies the subsolution inequality of `hb` on a `(t, y)` grid over
/// `[0, t_max] × [−Y, Y]`, with one doubling.
pub fn verify_hyperbola_subsolution(
    hb: &HyperbolaBarrier,
    profile: &PotentialProfile,
    t_max: f64,
    grid: usize,
) -> Result<CertReport> {
    if (profile.a - hb.a).abs() > 1e-12 {
        return Err(invalid("profile", "profile endpoint differs from a"));
    }
    let run = |n: usize| -> Result<(f64, f64, f64)> {
        let ts: Vec<f64> = (0..n).map(|i| t_max * i as f64 / (n - 1) as f64).collect();
        let bs = hb.b_at_times(&ts)?;
        let yext = hb.y_extent();
        let ys: Vec<f64> = (0..n)
            .map(|j| -yext + 2.0 * yext * j as f64 / (n - 1) as f64)
            .collect();
        let (v, i, j) = grid_min(n, n, |i, j| hb.residual(profile, bs[i], ys[j]));
        Ok((v, ts[i], ys[j]))
    };
    let (v, t_at, y_at) = run(grid)?;
    let (v2, _, _) = run(2 * grid)?;
    let mut params = BTreeMap::new();
    params.insert("n".into(), hb.n as f64);
    params.insert("a".into(), hb.a);
    params.insert("k".into(), hb.k);
    params.insert("b_inf".into(), hb.b_inf);
    params.insert("b0".into(), hb.b0);
    params.insert("C1".into(), hb.c1);
    params.insert("t_max".into(), t_max);
    Ok(CertReport {
        kind: format!("hyperbola_{}", hb.variant.name()),
        params,
        min_residual: v,
        argmin: vec![t_at, y_at],
        axes: vec!["t".into(), "y".into()],
        grid: vec![grid, grid],
        pass: v >= CERT_TOL,
        refined_min_residual: Some(v2),
        refined_pass: Some(v2 >= CERT_TOL),
        notes: Vec::new(),
    })
}

/// Largest `κ` with `κ(a − 1)²/4 < r`, scaled by `fraction`.
pub fn capped_kappa(a: f64, r: f64, fraction: f64) -> f64 {
    fraction * 4.0 * r / (a - 1.0).powi(2)
}

/// Hitting time of `b = 2r` for the standard family at radius `r` with the
/// quadratic profile `κ = capped_kappa(6r, r, fraction)`.
pub fn standard_hitting_time(n: u32, r: f64, fraction: f64, variant: RateVariant) -> Result<f64> {
    let k = capped_kappa(6.0 * r, r, fraction);
    Ok(HyperbolaBarrier::standard(n, r, k, variant)?.hitting_time(2.0 * r))
}

/// Searches for the smallest `r` in `[r_lo, r_hi]` with `T(r) < r/4` by doubling
/// followed by bisection. Reports the best ratio `T/(r/4)` seen if none exists.
pub fn minimal_radius(
    n: u32,
    fraction: f64,
    variant: RateVariant,
    r_lo: f64,
    r_hi: f64,
) -> Result<f64> {
    let ratio =
        |r: f64| -> Result<f64> { Ok(standard_hitting_time(n, r, fraction, variant)? / (r / 4.0)) };
    let mut r = r_lo;
    let mut prev = r_lo;
    let mut best = (f64::INFINITY, r_lo);
    loop {
        let q = ratio(r)?;
        if q < best.0 {
            best = (q, r);
        }
        if q < 1.0 {
            break;
        }
        if r >= r_hi {
            return Err(Error::Infeasible(format!(
                "T(R) >= R/4 for every R in [{r_lo}, {r_hi}]; smallest ratio T/(R/4) = {:.4e} at R = {}",
                best.0, best.1
            )));
        }
        prev = r;
        r = (2.0 * r).min(r_hi);
    }
    if r == r_lo {
        return Ok(r);
    }
    let (mut lo, mut hi) = (prev, r);
    while hi - lo > 1e-6 * hi {
        let mid = 0.5 * (lo + hi);
        if ratio(mid)? < 1.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Smallest horizontal clearance `g_t(f_i) − x_i` over nodes with `|f_i| ≤ Y`;
/// `+∞` when no node lies in the barrier's height range.
pub fn hyperbola_clearance(hb: &HyperbolaBarrier, b: f64, xs: &[f64], f: &[f64]) -> f64 {
    let yext = hb.y_extent();
    xs.iter()
        .zip(f)
        .filter(|(_, &y)| y.abs() <= yext)
        .map(|(&x, &y)| hb.g(b, y) - x)
        .fold(f64::INFINITY, f64::min)
}

// ---------------------------------------------------------------------------
// Shrinking circles

/// Circle of radius `sqrt(R² − 4Rt)` centered at `(3R, y0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CircleBarrier {
    pub r_big: f64,
    pub y0: f64,
}

impl CircleBarrier {
    pub fn new(r_big: f64, y0: f64) -> Result<Self> {
        if !(r_big > 1.0) {
            return Err(invalid("R", "need R > 1"));
        }
        Ok(Self { r_big, y0 })
    }

    pub fn lifetime(&self) -> f64 {
        self.r_big / 4.0
    }

    pub fn center(&self) -> [f64; 2] {
        [3.0 * self.r_big, self.y0]
    }

    pub fn radius(&self, t: f64) -> Result<f64> {
        if !(t < self.lifetime()) {
            return Err(Error::BarrierExpired {
                t,
                lifetime: self.lifetime(),
            });
        }
        Ok((self.r_big * self.r_big - 4.0 * self.r_big * t).sqrt())
    }

    /// Scaled supersolution residual `2R − u″ − u″(n−1)(x(x − 3R) − ϕw)/(x² + ϕ²)`
    /// at the lower-semicircle point above `x = 3R + r cos α`, where
    /// `w = r sin α` and `ϕ = y0 − w`. It has the sign of
    /// `ϕ̇ − u″(ϕ″/(1+ϕ′²) + (n−1)(xϕ′ − ϕ)/(x² + ϕ²))`.
    pub fn scaled_residual(&self, profile: &PotentialProfile, n: u32, r: f64, alpha: f64) -> f64 {
        let c = 3.0 * self.r_big;
        let x = c + r * alpha.cos();
        let w = r * alpha.sin();
        let phi = self.y0 - w;
        let u = profile.eval(x);
        let mm = (n - 1) as f64;
        2.0 * self.r_big - u - u * mm * (x * (x - c) - phi * w) / (x * x + phi * phi)
    }
}

/// `min_i (|(x_i, f_i) − center| − radius(t))`; positive means the graph avoids the disk.
pub fn circle_boundary_gap(cb: &CircleBarrier, state: &GraphFlowState) -> Result<f64> {
    let r = cb.radius(state.t)?;
    Ok(circle_gap_points(cb, r, state.xs(), &state.f))
}

pub fn circle_gap_points(cb: &CircleBarrier, r: f64, xs: &[f64], f: &[f64]) -> f64 {
    let c = cb.center();
    xs.iter()
        .zip(f)
        .map(|(&x, &y)| (x - c[0]).hypot(y - c[1]) - r)
        .fold(f64::INFINITY, f64::min)
}

fn circle_min(
    cb: &CircleBarrier,
    profile: &PotentialProfile,
    n: u32,
    grid: usize,
) -> (f64, f64, f64) {
    let life = cb.lifetime();
    let ts: Vec<f64> = (0..grid).map(|i| life * i as f64 / grid as f64).collect();
    let als: Vec<f64> = (0..grid)
        .map(|j| PI * j as f64 / (grid - 1) as f64)
        .collect();
    let (v, i, j) = grid_min(grid, grid, |i, j| {
        let r = (cb.r_big * cb.r_big - 4.0 * cb.r_big * ts[i]).sqrt();
        cb.scaled_residual(profile, n, r, als[j])
    });
    let r = (cb.r_big * cb.r_big - 4.0 * cb.r_big * ts[i]).sqrt();
    (v, ts[i], 3.0 * cb.r_big + r * als[j].cos())
}

/// Certifies the supersolution inequality of the shrinking circle on `(t, α)` grids
/// over `[0, R/4) × [0, π]`. If `cb.y0` fails, the largest passing `y0` below it is
/// located by bisection and recorded in `params["admissible_y0"]`.
pub fn verify_circle_pde_inequality(
    cb: &CircleBarrier,
    profile: &PotentialProfile,
    n: u32,
    grid: usize,
) -> Result<CertReport> {
    if let Some(cap) = profile.r_cap {
        if cap > cb.r_big * (1.0 + 1e-12) {
            return Err(invalid("profile", "cap on u'' exceeds R"));
        }
    } else if !(profile.max_value() < cb.r_big) {
        return Err(invalid("profile", "u'' must stay below R"));
    }
    let strict = |v: f64| v > 0.0;
    let (v, t_at, x_at) = circle_min(cb, profile, n, grid);
    let (v2, _, _) = circle_min(cb, profile, n, 2 * grid);
    let mut params = BTreeMap::new();
    params.insert("R".into(), cb.r_big);
    params.insert("y0".into(), cb.y0);
    params.insert("n".into(), n as f64);
    let mut notes = Vec::new();
    let pass = strict(v);
    if !pass {
        let passes = |y0: f64| strict(circle_min(&CircleBarrier { y0, ..*cb }, profile, n, grid).0);
        let mut step = cb.r_big;
        let mut lo = cb.y0 - step;
        let mut found = false;
        for _ in 0..40 {
            if passes(lo) {
                found = true;
                break;
            }
            step *= 2.0;
            lo = cb.y0 - step;
        }
        if found {
            let mut hi = lo + step / 2.0;
            if step == cb.r_big {
                hi = cb.y0;
            }
            while hi - lo > 1e-3 * cb.r_big {
                let mid = 0.5 * (lo + hi);
                if passes(mid) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            params.insert("admissible_y0".into(), lo);
        } else {
            notes.push("no admissible y0 found".into());
        }
    }
    Ok(CertReport {
        kind: "circle".into(),
        params,
        min_residual: v,
        argmin: vec![t_at, x_at],
        axes: vec!["t".into(), "x".into()],
        grid: vec![grid, grid],
        pass,
        refined_min_residual: Some(v2),
        refined_pass: Some(strict(v2)),
        notes,
    })
}

// ---------------------------------------------------------------------------
// Polar interpolants

/// Constants of the interpolation law `ḃ = 2(1 + 1/C(b))⁻¹ (C1/(C2 C3)) b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarConstants {
    /// `min b·E` over the constant grid.
    pub c1: f64,
    /// `sup b²(r∞ x + r a)/(a² r² r∞²)/B²`.
    pub c2: f64,
    /// `−(min_{x ≥ a − ε} D/u″ + min D)` with `D = r∞ x − r a`.
    pub c3: f64,
    /// Linear lower constant `k′` with `u″ ≥ k′(x − 1)` on `[1, a − ε]`.
    pub k_lin: f64,
    pub eps: f64,
}

/// `1/r_b² = (b/r∞² + cos²θ/a²)/(1 + b)` between the vertical line `x = a`
/// (`b = 0`) and the stationary curve (`b → ∞`).
#[derive(Debug, Clone)]
pub struct PolarInterpolant {
    pub r_inf: PolarProfile,
    pub a: f64,
    pub theta_min: f64,
    pub theta0: f64,
    pub theta_max: f64,
    pub b0: f64,
    pub profile: PotentialProfile,
    pub constants: PolarConstants,
}

/// Values of the interpolant and its angular structure at one `(θ, b)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarPoint {
    pub r: f64,
    pub r_inf: f64,
    /// `r′/r`.
    pub rho: f64,
    /// `(2r′² − r r″ + r²)/(r′² + r²) + (n − 1)`.
    pub e: f64,
    /// `∂r/∂b`.
    pub dr_db: f64,
    pub a_coef: f64,
    pub b_coef: f64,
}

impl PolarInterpolant {
    pub fn n(&self) -> u32 {
        self.r_inf.n
    }

    pub fn r(&self, theta: f64, b: f64) -> f64 {
        let ri = self.r_inf.r(theta);
        let c = theta.cos();
        let bb = b / (ri * ri) + c * c / (self.a * self.a);
        ((1.0 + b) / bb).sqrt()
    }

    /// Exact algebra: with `A = b r∞′/r∞³ + sin 2θ/(2a²)` and `B = b/r∞² + cos²θ/a²`,
    /// `r′/r = A/B` and `E = n − (A′B + 2A²)/(B² + A²)`.
    pub fn point(&self, theta: f64, b: f64) -> PolarPoint {
        let n = self.n() as f64;
        let a2 = self.a * self.a;
        let ri = self.r_inf.r(theta);
        let rho_i = self.r_inf.rho(theta);
        let ri2 = ri * ri;
        let c = theta.cos();
        let a_coef = b * rho_i / ri2 + (2.0 * theta).sin() / (2.0 * a2);
        let b_coef = b / ri2 + c * c / a2;
        let a_prime =
            b * (n * (1.0 + rho_i * rho_i) - 2.0 * rho_i * rho_i) / ri2 + (2.0 * theta).cos() / a2;
        let rho = a_coef / b_coef;
        let e =
            n - (a_prime * b_coef + 2.0 * a_coef * a_coef) / (b_coef * b_coef + a_coef * a_coef);
        let r = ((1.0 + b) / b_coef).sqrt();
        // s = 1/r² = B/(1 + b), ∂s/∂b = (1/r∞² − s)/(1 + b), ∂r/∂b = −r³ ∂s/∂b / 2
        let ds = (1.0 / ri2 - 1.0 / (r * r)) / (1.0 + b);
        PolarPoint {
            r,
            r_inf: ri,
            rho,
            e,
            dr_db: -0.5 * r.powi(3) * ds,
            a_coef,
            b_coef,
        }
    }

    /// `C(b) = k′(sqrt((1 + b)/(b + 1/a)) − 1)`.
    pub fn c_of_b(&self, b: f64) -> f64 {
        self.constants.k_lin * (((1.0 + b) / (b + 1.0 / self.a)).sqrt() - 1.0)
    }

    /// `ḃ` from the interpolation law.
    pub fn b_rate(&self, b: f64) -> f64 {
        let k = &self.constants;
        let cb = self.c_of_b(b);
        2.0 / (1.0 + 1.0 / cb) * k.c1 / (k.c2 * k.c3) * b
    }

    /// Integrates the law from `b` over a time interval of length `dt`.
    pub fn advance_b(&self, b: f64, dt: f64) -> Result<f64> {
        let solver = DormandPrince::with_tolerances(1e-12, 1e-14);
        Ok(solver.integrate(|_, y: &[f64; 1]| [self.b_rate(y[0])], 0.0, [b], dt)?[0])
    }

    /// `b(t)` at the nondecreasing times `ts`, starting from `b0`.
    pub fn b_at_times(&self, ts: &[f64]) -> Result<Vec<f64>> {
        let solver = DormandPrince::with_tolerances(1e-12, 1e-14);
        let mut out = Vec::with_capacity(ts.len());
        let (mut t, mut b) = (0.0, self.b0);
        for &tn in ts {
            if tn < t {
                return Err(invalid("ts", "times must be nondecreasing"));
            }
            b = solver.integrate(|_, y: &[f64; 1]| [self.b_rate(y[0])], t, [b], tn)?[0];
            t = tn;
            out.push(b);
        }
        Ok(out)
    }

    /// `(1/u″(x_b)) r ṙ + E` with `ṙ = ∂r/∂b · ḃ`.
    pub fn subsolution_lhs(&self, theta: f64, b: f64) -> f64 {
        let pt = self.point(theta, b);
        let x = pt.r * theta.cos();
        let u = self.profile.eval(x);
        pt.r * pt.dr_db * self.b_rate(b) / u + pt.e
    }

    /// Interior angles of a uniform grid on `[θ_min, θ_max]` (the end angles are 0/0).
    pub fn interior_angles(&self, m: usize) -> Vec<f64> {
        (1..=m)
            .map(|j| self.theta_min + (self.theta_max - self.theta_min) * j as f64 / (m + 1) as f64)
            .collect()
    }

    /// Points `(x, y)` of `γ_b` on the upper branch `[θ0, θ_max]`.
    pub fn curve_points(&self, b: f64, m: usize) -> Vec<[f64; 2]> {
        (0..=m)
            .map(|j| {
                let t = self.theta0 + (self.theta_max - self.theta0) * j as f64 / m as f64;
                let r = self.r(t, b);
                [r * t.cos(), r * t.sin()]
            })
            .collect()
    }

    /// Least-squares exponent `p` in `LHS ≈ C b^{−p}` along `θ` for `b ∈ [b_lo, b_hi]`.
    pub fn decay_exponent(&self, theta: f64, b_lo: f64, b_hi: f64) -> f64 {
        let bs: Vec<f64> = (0..=32)
            .map(|i| b_lo * (b_hi / b_lo).powf(i as f64 / 32.0))
            .collect();
        let lx: Vec<f64> = bs.iter().map(|b| b.ln()).collect();
        let ly: Vec<f64> = bs
            .iter()
            .map(|&b| self.subsolution_lhs(theta, b).ln())
            .collect();
        -crate::graph_flow::least_squares_slope(&lx, &ly)
    }
}

/// Geometric grid of `m` values on `[lo, hi]`.
fn geometric(lo: f64, hi: f64, m: usize) -> Vec<f64> {
    (0..m)
        .map(|i| lo * (hi / lo).powf(i as f64 / (m - 1) as f64))
        .collect()
}

/// Upper end of the `b` range used for constants and certificates.
pub const B_RANGE_DECADES: f64 = 6.0;

/// Estimates the law constants by grid extrema over interior angles and
/// `b ∈ [b_lo, b_lo·10⁶]`.
pub fn estimate_polar_constants(
    r_inf: &PolarProfile,
    theta_range: (f64, f64),
    a: f64,
    profile: &PotentialProfile,
    b_lo: f64,
    grid: usize,
) -> Result<PolarConstants> {
    let shell = PolarInterpolant {
        r_inf: *r_inf,
        a,
        theta_min: theta_range.0,
        theta0: theta_range.0,
        theta_max: theta_range.1,
        b0: b_lo,
        profile: profile.clone(),
        constants: PolarConstants {
            c1: 1.0,
            c2: 1.0,
            c3: 1.0,
            k_lin: 1.0,
            eps: profile.eps,
        },
    };
    let ths = shell.interior_angles(grid);
    let bs = geometric(b_lo, b_lo * 10f64.powf(B_RANGE_DECADES), grid);
    let eps = profile.eps;
    let stats: Vec<(f64, f64, f64, f64)> = bs
        .par_iter()
        .map(|&b| {
            let mut c1 = f64::INFINITY;
            let mut c2 = 0.0f64;
            let mut d_u = f64::INFINITY;
            let mut d_min = f64::INFINITY;
            for &t in &ths {
                let pt = shell.point(t, b);
                c1 = c1.min(b * pt.e);
                let x = pt.r * t.cos();
                let sum = pt.r_inf * x + pt.r * a;
                c2 = c2.max(
                    b * b * sum
                        / (a * a * pt.r * pt.r * pt.r_inf * pt.r_inf)
                        / (pt.b_coef * pt.b_coef),
                );
                let d = pt.r_inf * x - pt.r * a;
                d_min = d_min.min(d);
                if x >= a - eps {
                    let u = profile.eval(x);
                    if u > 0.0 {
                        d_u = d_u.min(d / u);
                    }
                }
            }
            (c1, c2, d_u, d_min)
        })
        .collect();
    let c1 = stats.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
    let c2 = stats.iter().map(|s| s.1).fold(0.0, f64::max);
    let du = stats.iter().map(|s| s.2).fold(f64::INFINITY, f64::min);
    let dm = stats.iter().map(|s| s.3).fold(f64::INFINITY, f64::min);
    let c3 = -(if du.is_finite() { du } else { 0.0 } + dm);
    if !(c1 > 0.0 && c2 > 0.0 && c3 > 0.0) {
        return Err(Error::Domain(format!(
            "degenerate interpolation constants C1 = {c1}, C2 = {c2}, C3 = {c3}"
        )));
    }
    Ok(PolarConstants {
        c1,
        c2,
        c3,
        k_lin: profile.linear_lower_constant(),
        eps,
    })
}

/// Builds the interpolant for the semi-stable data, after checking the window
/// condition and the stationarity residual of the traced curves.
pub fn build_polar_interpolant(
    data: &SemiStableData,
    profile: &PotentialProfile,
    b0: f64,
) -> Result<PolarInterpolant> {
    if !(b0 > 0.0) {
        return Err(invalid("b0", "must be positive"));
    }
    if (profile.a - data.kd.a).abs() > 1e-12 {
        return Err(invalid("profile", "profile endpoint differs from a"));
    }
    let bad = data.window_violations(2000);
    if !bad.is_empty() {
        return Err(Error::HypothesisViolation { theta: bad });
    }
    for curve in [&data.upper, &data.lower] {
        let res = stationarity_residual(curve, 800)?;
        if !(res < 1e-6) {
            return Err(Error::Domain(format!(
                "stationarity residual {res:e} exceeds 1e-6"
            )));
        }
    }
    let constants = estimate_polar_constants(
        &data.r_inf,
        (data.theta_min, data.theta_max),
        data.kd.a,
        profile,
        b0,
        256,
    )?;
    Ok(PolarInterpolant {
        r_inf: data.r_inf,
        a: data.kd.a,
        theta_min: data.theta_min,
        theta0: data.theta0,
        theta_max: data.theta_max,
        b0,
        profile: profile.clone(),
        constants,
    })
}

fn polar_min(pi: &PolarInterpolant, grid: usize) -> (f64, f64, f64) {
    let bs = geometric(pi.b0, pi.b0 * 10f64.powf(B_RANGE_DECADES), grid);
    let ths = pi.interior_angles(grid);
    let (v, i, j) = grid_min(grid, grid, |i, j| pi.subsolution_lhs(ths[j], bs[i]));
    (v, bs[i], ths[j])
}

/// Certifies `(1/u″) r ṙ + E ≥ 0` over `b ∈ [b0, b0·10⁶]` (geometric) and
/// interior angles of `[θ_min, θ_max]`, with one doubling.
pub fn verify_polar_subsolution(pi: &PolarInterpolant, grid: usize) -> CertReport {
    let (v, b_at, t_at) = polar_min(pi, grid);
    let (v2, _, _) = polar_min(pi, 2 * grid);
    let k = &pi.constants;
    let mut params = BTreeMap::new();
    params.insert("n".into(), pi.n() as f64);
    params.insert("a".into(), pi.a);
    params.insert("b0".into(), pi.b0);
    params.insert("C1".into(), k.c1);
    params.insert("C2".into(), k.c2);
    params.insert("C3".into(), k.c3);
    params.insert("k_lin".into(), k.k_lin);
    params.insert("eps".into(), k.eps);
    CertReport {
        kind: "polar".into(),
        params,
        min_residual: v,
        argmin: vec![b_at, t_at],
        axes: vec!["b".into(), "theta".into()],
        grid: vec![grid, grid],
        pass: v >= CERT_TOL,
        refined_min_residual: Some(v2),
        refined_pass: Some(v2 >= CERT_TOL),
        notes: Vec::new(),
    }
}

/// Outcome of the search for the smallest certified starting parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BMinSearch {
    pub b_min: f64,
    pub report: CertReport,
    /// Largest failing candidate below `b_min` with its minimum residual, if any.
    pub witness: Option<(f64, f64)>,
}

/// Certifies each candidate (increasing) and returns the smallest that passes.
pub fn find_b_min(
    data: &SemiStableData,
    profile: &PotentialProfile,
    candidates: &[f64],
    grid: usize,
) -> Result<BMinSearch> {
    let mut witness = None;
    for &b in candidates {
        let pi = build_polar_interpolant(data, profile, b)?;
        let rep = verify_polar_subsolution(&pi, grid);
        if rep.pass && rep.stable() {
            return Ok(BMinSearch {
                b_min: b,
                report: rep,
                witness,
            });
        }
        witness = Some((b, rep.min_residual));
    }
    Err(Error::Infeasible(
        "no candidate b passes the polar certificate".into(),
    ))
}

/// `E` at `(θ, b)` from five-point differences of sampled `r_b` (an independent
/// route to [`PolarInterpolant::point`]).
pub fn polar_e_by_differences(pi: &PolarInterpolant, theta: f64, b: f64, h: f64) -> f64 {
    let th: Vec<f64> = (-2..=2).map(|k| theta + k as f64 * h).collect();
    let r: Vec<f64> = th.iter().map(|&t| pi.r(t, b)).collect();
    let (d1, d2) = derivatives5(&th, &r);
    let (rr, r1, r2) = (r[2], d1[2], d2[2]);
    (2.0 * r1 * r1 - rr * r2 + rr * rr) / (r1 * r1 + rr * rr) + (pi.n() - 1) as f64
}

/// Smallest `r_b(θ) − |(x_i, f_i)|` over nodes whose angle lies in `[θ0, θ_max]`.
pub fn polar_clearance(pi: &PolarInterpolant, b: f64, xs: &[f64], f: &[f64]) -> f64 {
    xs.iter()
        .zip(f)
        .filter_map(|(&x, &y)| {
            let t = y.atan2(x);
            (t >= pi.theta0 && t <= pi.theta_max).then(|| pi.r(t, b) - x.hypot(y))
        })
        .fold(f64::INFINITY, f64::min)
}

/// Smallest `f∞(x_i) − f_i` over interior nodes.
pub fn stationary_clearance(data: &SemiStableData, xs: &[f64], f: &[f64]) -> f64 {
    let n = xs.len();
    (1..n - 1)
        .filter_map(|i| data.f_inf(xs[i]).map(|fi| fi - f[i]))
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stationary::construct_semistable;

    #[test]
    fn potential_reference_values() {
        let r = 3.0;
        let f5 = hyperbola_potential(5.0 * r, r);
        assert!((f5 - (11.0 / 50.0 + (0.8f64).ln()) / r.powi(3)).abs() < 1e-15);
        let f2 = hyperbola_potential(2.0 * r, r);
        assert!((f2 - (5.0 / 8.0 - 2f64.ln()) / r.powi(3)).abs() < 1e-15);
    }

    #[test]
    fn potential_is_an_antiderivative() {
        let (bi, b) = (2.0, 3.7);
        let h = 1e-5;
        let d = (hyperbola_potential(b + h, bi) - hyperbola_potential(b - h, bi)) / (2.0 * h);
        assert!((d - 1.0 / ((b - bi) * b.powi(3))).abs() < 1e-8);
    }

    #[test]
    fn hyperbola_rejects_bad_order() {
        assert!(HyperbolaBarrier::new(3, 12.0, 0.1, 2.0, 12.0, RateVariant::OuterSquared).is_err());
        assert!(HyperbolaBarrier::new(3, 12.0, 0.1, 0.5, 10.0, RateVariant::OuterSquared).is_err());
    }

    #[test]
    fn edge_of_hyperbola_domain_has_no_time_term() {
        let hb = HyperbolaBarrier::standard(3, 2.0, 0.1, RateVariant::OuterSquared).unwrap();
        let y = hb.y_extent();
        assert!((hb.g(7.0, y) - hb.a).abs() < 1e-12);
    }

    #[test]
    fn circle_expires() {
        let cb = CircleBarrier::new(2.0, -5.0).unwrap();
        assert!(cb.radius(0.49).is_ok());
        assert!(matches!(cb.radius(0.5), Err(Error::BarrierExpired { .. })));
    }

    #[test]
    fn circle_without_xi_term_only_needs_the_cap() {
        let prof = PotentialProfile::quadratic_on(12.0, capped_kappa(12.0, 2.0, 0.9)).unwrap();
        let cb = CircleBarrier::new(2.0, 0.0).unwrap();
        let rep = verify_circle_pde_inequality(&cb, &prof, 1, 64).unwrap();
        assert!(rep.pass);
        assert!((rep.min_residual - (4.0 - prof.max_value())).abs() < 1e-2);
    }

    #[test]
    fn interpolant_limits() {
        let d = construct_semistable(3, 10.0, None).unwrap();
        let prof = PotentialProfile::quadratic(&d.kd, 1.0).unwrap();
        let pi = build_polar_interpolant(&d, &prof, 1.0).unwrap();
        for t in pi.interior_angles(7) {
            assert!((pi.r(t, 0.0) - d.kd.a / t.cos()).abs() < 1e-12);
            assert!((pi.r(t, 1e12) - d.r_inf.r(t)).abs() < 1e-9);
            assert!((pi.point(t, 0.0).e - 2.0).abs() < 1e-9);
            assert!(pi.point(t, 1e12).e.abs() < 1e-6);
        }
    }

    #[test]
    fn interpolant_algebra_matches_differences() {
        let d = construct_semistable(3, 10.0, None).unwrap();
        let prof = PotentialProfile::quadratic(&d.kd, 1.0).unwrap();
        let pi = build_polar_interpolant(&d, &prof, 1.0).unwrap();
        for b in [0.3, 2.0, 50.0] {
            for t in pi.interior_angles(5) {
                let exact = pi.point(t, b).e;
                let fd = polar_e_by_differences(&pi, t, b, 1e-4);
                assert!(
                    (exact - fd).abs() < 1e-5 * (1.0 + exact.abs()),
                    "{b} {t} {exact} {fd}"
                );
                let h = 1e-6 * b;
                let drdb = (pi.r(t, b + h) - pi.r(t, b - h)) / (2.0 * h);
                assert!((pi.point(t, b).dr_db - drdb).abs() < 1e-6 * drdb.abs().max(1e-12));
            }
        }
    }
}
