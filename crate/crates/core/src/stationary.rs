//! Stationary solutions as level curves of `h(z) = Im(e^{−iθ̂}zⁿ)` and the
//! semi-stable class with vertical tangency at `(1, q)`.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fd::derivatives5;
use crate::geometry::KahlerData;

/// `h(x, y) = Im(e^{−iθ̂}(x + iy)ⁿ)` with its gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelFunction {
    pub n: u32,
    pub theta_hat: f64,
    rot: Complex64,
}

impl LevelFunction {
    pub fn new(n: u32, theta_hat: f64) -> Self {
        Self {
            n,
            theta_hat,
            rot: Complex64::from_polar(1.0, -theta_hat),
        }
    }

    pub fn value(&self, z: [f64; 2]) -> f64 {
        (self.rot * Complex64::new(z[0], z[1]).powi(self.n as i32)).im
    }

    pub fn grad(&self, z: [f64; 2]) -> [f64; 2] {
        let w = self.rot * Complex64::new(z[0], z[1]).powi(self.n as i32 - 1) * self.n as f64;
        [w.im, w.re]
    }
}

/// Why a trace stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceEnd {
    RightWall,
    LeftWall,
    MaxLength,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceOptions {
    pub ds: f64,
    /// Start in the direction with increasing `y` (ties broken by increasing `x`).
    pub upward: bool,
    pub max_length: f64,
}

impl Default for TraceOptions {
    fn default() -> Self {
        Self {
            ds: 1e-4,
            upward: true,
            max_length: 1e3,
        }
    }
}

/// Samples of a level curve at uniform arc-length spacing (the last step may be shorter).
#[derive(Debug, Clone, PartialEq)]
pub struct LevelCurve {
    pub n: u32,
    pub theta_hat: f64,
    pub level: f64,
    pub a: f64,
    pub points: Vec<[f64; 2]>,
    /// Unit tangents from the direction field at each sample.
    pub tangents: Vec<[f64; 2]>,
    pub s: Vec<f64>,
    pub end: TraceEnd,
    pub vertical_at_start: bool,
}

fn unit_field(h: &LevelFunction, z: [f64; 2], sign: f64) -> Result<[f64; 2]> {
    let g = h.grad(z);
    let nrm = g[0].hypot(g[1]);
    if !(nrm >= 1e-12) {
        return Err(Error::CriticalPoint { x: z[0], y: z[1] });
    }
    Ok([-sign * g[1] / nrm, sign * g[0] / nrm])
}

fn rk4_arc(h: &LevelFunction, z: [f64; 2], ds: f64, sign: f64) -> Result<[f64; 2]> {
    let add = |z: [f64; 2], k: [f64; 2], c: f64| [z[0] + c * k[0], z[1] + c * k[1]];
    let k1 = unit_field(h, z, sign)?;
    let k2 = unit_field(h, add(z, k1, 0.5 * ds), sign)?;
    let k3 = unit_field(h, add(z, k2, 0.5 * ds), sign)?;
    let k4 = unit_field(h, add(z, k3, ds), sign)?;
    Ok([
        z[0] + ds / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        z[1] + ds / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
    ])
}

/// Newton correction along the gradient back onto `h = c`.
fn project(h: &LevelFunction, mut z: [f64; 2], c: f64) -> [f64; 2] {
    for _ in 0..3 {
        let g = h.grad(z);
        let g2 = g[0] * g[0] + g[1] * g[1];
        let d = (h.value(z) - c) / g2;
        z = [z[0] - d * g[0], z[1] - d * g[1]];
        if d.abs() * g2.sqrt() < 1e-15 * z[0].hypot(z[1]) {
            break;
        }
    }
    z
}

/// Newton solve of `h(x_fixed, y) = c` for `y`.
fn solve_on_vertical(h: &LevelFunction, x: f64, mut y: f64, c: f64) -> f64 {
    for _ in 0..50 {
        let z = [x, y];
        let dy = (h.value(z) - c) / h.grad(z)[1];
        y -= dy;
        if dy.abs() <= 1e-16 * y.abs().max(1.0) {
            break;
        }
    }
    y
}

/// Traces the level set of `h` through `start` inside the strip `1 ≤ x ≤ a`
/// by an arc-length RK4 integration with projection after every step.
pub fn trace_level_curve(
    n: u32,
    a: f64,
    theta_hat: f64,
    start: [f64; 2],
    opts: &TraceOptions,
) -> Result<LevelCurve> {
    if !(opts.ds > 0.0) {
        return Err(invalid("ds", "must be positive"));
    }
    let h = LevelFunction::new(n, theta_hat);
    let c = h.value(start);
    let t0 = unit_field(&h, start, 1.0)?;
    let flip = if opts.upward {
        t0[1] < 0.0 || (t0[1] == 0.0 && t0[0] < 0.0)
    } else {
        t0[1] > 0.0 || (t0[1] == 0.0 && t0[0] > 0.0)
    };
    let sign = if flip { -1.0 } else { 1.0 };
    let mut points = vec![start];
    let mut tangents = vec![unit_field(&h, start, sign)?];
    let mut s = vec![0.0];
    let vertical_at_start = tangents[0][0].abs() < 1e-9;
    let end;
    loop {
        let z = *points.last().unwrap();
        let s_now = *s.last().unwrap();
        if s_now >= opts.max_length {
            end = TraceEnd::MaxLength;
            break;
        }
        let next = project(&h, rk4_arc(&h, z, opts.ds, sign)?, c);
        let wall = if next[0] > a {
            Some(a)
        } else if next[0] < 1.0 - 1e-12 && points.len() > 1 {
            Some(1.0)
        } else {
            None
        };
        if let Some(w) = wall {
            // shorten the last step so that it lands on the wall
            let (mut lo, mut hi) = (0.0, opts.ds);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                let zm = project(&h, rk4_arc(&h, z, mid, sign)?, c);
                if (zm[0] - w) * (z[0] - w) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo < 1e-15 {
                    break;
                }
            }
            let zl = project(&h, rk4_arc(&h, z, hi, sign)?, c);
            let y = solve_on_vertical(&h, w, zl[1], c);
            let zend = [w, y];
            let step = (zend[0] - z[0]).hypot(zend[1] - z[1]);
            points.push(zend);
            tangents.push(unit_field(&h, zend, sign)?);
            s.push(s_now + step);
            end = if w == a {
                TraceEnd::RightWall
            } else {
                TraceEnd::LeftWall
            };
            break;
        }
        points.push(next);
        tangents.push(unit_field(&h, next, sign)?);
        s.push(s_now + opts.ds);
    }
    Ok(LevelCurve {
        n,
        theta_hat,
        level: c,
        a,
        points,
        tangents,
        s,
        end,
        vertical_at_start,
    })
}

impl LevelCurve {
    pub fn level_function(&self) -> LevelFunction {
        LevelFunction::new(self.n, self.theta_hat)
    }

    pub fn start(&self) -> [f64; 2] {
        self.points[0]
    }

    pub fn end_point(&self) -> [f64; 2] {
        *self.points.last().unwrap()
    }

    /// Largest `|h − c|` over the samples.
    pub fn max_level_drift(&self) -> f64 {
        let h = self.level_function();
        self.points
            .iter()
            .map(|&z| (h.value(z) - self.level).abs())
            .fold(0.0, f64::max)
    }

    /// Cubic Hermite position and derivative on segment `k` at local parameter `tau ∈ [0, 1]`.
    fn hermite(&self, k: usize, tau: f64) -> ([f64; 2], [f64; 2]) {
        let ds = self.s[k + 1] - self.s[k];
        let (p0, p1) = (self.points[k], self.points[k + 1]);
        let (m0, m1) = (self.tangents[k], self.tangents[k + 1]);
        let t2 = tau * tau;
        let t3 = t2 * tau;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + tau;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        let d00 = (6.0 * t2 - 6.0 * tau) / ds;
        let d10 = 3.0 * t2 - 4.0 * tau + 1.0;
        let d01 = -d00;
        let d11 = 3.0 * t2 - 2.0 * tau;
        let mut p = [0.0; 2];
        let mut d = [0.0; 2];
        for c in 0..2 {
            p[c] = h00 * p0[c] + h10 * ds * m0[c] + h01 * p1[c] + h11 * ds * m1[c];
            d[c] = d00 * p0[c] + d10 * m0[c] + d01 * p1[c] + d11 * m1[c];
        }
        (p, d)
    }

    /// Point where the monotone scalar `key` along the curve equals `target`.
    fn locate_by<K: Fn([f64; 2]) -> f64>(&self, key: K, target: f64) -> Option<[f64; 2]> {
        let vals: Vec<f64> = self.points.iter().map(|&p| key(p)).collect();
        let increasing = vals[vals.len() - 1] >= vals[0];
        let k = (0..vals.len() - 1).find(|&k| {
            let (u, v) = (vals[k], vals[k + 1]);
            if increasing {
                u <= target && target <= v
            } else {
                v <= target && target <= u
            }
        })?;
        let (mut lo, mut hi) = (0.0, 1.0);
        let g0 = vals[k] - target;
        if g0 == 0.0 {
            return Some(self.points[k]);
        }
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            let g = key(self.hermite(k, mid).0) - target;
            if g == 0.0 {
                return Some(self.hermite(k, mid).0);
            }
            if (g > 0.0) == (g0 > 0.0) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some(self.hermite(k, 0.5 * (lo + hi)).0)
    }

    /// `y` at abscissa `x` (the curve must be monotone in `x`).
    pub fn y_at_x(&self, x: f64) -> Option<f64> {
        self.locate_by(|p| p[0], x).map(|p| p[1])
    }

    /// Polar radius at angle `theta` (the curve must be monotone in angle).
    pub fn r_at_angle(&self, theta: f64) -> Option<f64> {
        self.locate_by(|p| p[1].atan2(p[0]), theta)
            .map(|p| p[0].hypot(p[1]))
    }

    pub fn angle_range(&self) -> (f64, f64) {
        let a0 = self.points[0][1].atan2(self.points[0][0]);
        let p = self.end_point();
        let a1 = p[1].atan2(p[0]);
        (a0.min(a1), a0.max(a1))
    }

    /// Simpson quadrature of `∫ n zⁿ⁻¹ dz` along the samples, with midpoints
    /// from the Hermite interpolant and tangents from the direction field.
    pub fn class_quadrature(&self) -> Complex64 {
        let h = self.level_function();
        let nn = self.n as i32;
        let sign = {
            let g = h.grad(self.points[0]);
            let t = [-g[1], g[0]];
            if t[0] * self.tangents[0][0] + t[1] * self.tangents[0][1] >= 0.0 {
                1.0
            } else {
                -1.0
            }
        };
        let integrand = |z: [f64; 2], t: [f64; 2]| {
            Complex64::new(z[0], z[1]).powi(nn - 1) * Complex64::new(t[0], t[1]) * self.n as f64
        };
        let mut acc = Complex64::new(0.0, 0.0);
        for k in 0..self.points.len() - 1 {
            let ds = self.s[k + 1] - self.s[k];
            let zm = self.hermite(k, 0.5).0;
            let tm = unit_field(&h, zm, sign).unwrap_or([0.0, 0.0]);
            acc += (integrand(self.points[k], self.tangents[k])
                + integrand(zm, tm) * 4.0
                + integrand(self.points[k + 1], self.tangents[k + 1]))
                * (ds / 6.0);
        }
        acc
    }

    /// Largest normalized residual of `Im(e^{−iθ̂}(1 + if/x)ⁿ⁻¹(1 + if′)) = 0` after
    /// resampling the curve as a graph `f(x)` on `[x_lo, x_hi]`.
    ///
    /// The grid is graded as `x = x_lo + (x_hi − x_lo)σ²` so that a vertical start
    /// is resolved; the residual is divided by `|1 + if/x|ⁿ⁻¹|1 + if′|`.
    pub fn graph_residual(&self, m: usize) -> Result<f64> {
        let (x_lo, x_hi) = (self.start()[0], self.end_point()[0]);
        if !(x_hi > x_lo) {
            return Err(Error::Domain(
                "curve is not a graph over an interval".into(),
            ));
        }
        let sig: Vec<f64> = (0..=m).map(|j| j as f64 / m as f64).collect();
        let xs: Vec<f64> = sig.iter().map(|s| x_lo + (x_hi - x_lo) * s * s).collect();
        let mut ys = Vec::with_capacity(xs.len());
        for &x in &xs {
            ys.push(
                self.y_at_x(x)
                    .ok_or_else(|| Error::Domain(format!("x = {x} outside the traced range")))?,
            );
        }
        let (dyds, _) = derivatives5(&sig, &ys);
        let rot = Complex64::from_polar(1.0, -self.theta_hat);
        let mut worst = 0.0f64;
        for j in 1..=m {
            let dxds = 2.0 * (x_hi - x_lo) * sig[j];
            let fp = dyds[j] / dxds;
            let w = Complex64::new(1.0, ys[j] / xs[j]).powi(self.n as i32 - 1);
            let v = rot * w * Complex64::new(1.0, fp);
            worst = worst.max(v.im.abs() / (v.norm()));
        }
        Ok(worst)
    }

    /// `(θ, r)` samples on a uniform angle grid of `m + 1` points inside the traced range.
    pub fn polar_samples(&self, m: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let (lo, hi) = self.angle_range();
        let th: Vec<f64> = (0..=m)
            .map(|j| lo + (hi - lo) * j as f64 / m as f64)
            .collect();
        let mut r = Vec::with_capacity(th.len());
        for &t in &th {
            r.push(
                self.r_at_angle(t)
                    .ok_or_else(|| Error::Domain(format!("angle {t} outside the traced range")))?,
            );
        }
        Ok((th, r))
    }
}

/// `max_θ |(2r′² − rr″ + r²)/(r′² + r²) + (n − 1)|` from five-point differences of
/// the polar samples of `curve`. The value does not depend on the diffusion profile.
pub fn stationarity_residual(curve: &LevelCurve, m: usize) -> Result<f64> {
    let (th, r) = curve.polar_samples(m)?;
    Ok(polar_residual(curve.n, &th, &r))
}

pub fn polar_residual(n: u32, th: &[f64], r: &[f64]) -> f64 {
    let (d1, d2) = derivatives5(th, r);
    let m = (n - 1) as f64;
    (0..th.len())
        .map(|j| {
            let (rr, r1, r2) = (r[j], d1[j], d2[j]);
            ((2.0 * r1 * r1 - rr * r2 + rr * rr) / (r1 * r1 + rr * rr) + m).abs()
        })
        .fold(0.0, f64::max)
}

/// Polar form `r(θ) = (c / sin(nθ − θ̂))^{1/n}` of a level curve of `h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarProfile {
    pub n: u32,
    pub theta_hat: f64,
    pub level: f64,
}

impl PolarProfile {
    fn phi(&self, theta: f64) -> f64 {
        self.n as f64 * theta - self.theta_hat
    }

    pub fn defined_at(&self, theta: f64) -> bool {
        self.level / self.phi(theta).sin() > 0.0
    }

    pub fn r(&self, theta: f64) -> f64 {
        (self.level / self.phi(theta).sin()).powf(1.0 / self.n as f64)
    }

    /// `r′/r`.
    pub fn rho(&self, theta: f64) -> f64 {
        -1.0 / self.phi(theta).tan()
    }

    pub fn r1(&self, theta: f64) -> f64 {
        self.r(theta) * self.rho(theta)
    }

    /// `r″`, from `r″/r = n(1 + ρ²) + ρ²`.
    pub fn r2(&self, theta: f64) -> f64 {
        let rho = self.rho(theta);
        self.r(theta) * (self.n as f64 * (1.0 + rho * rho) + rho * rho)
    }

    pub fn x(&self, theta: f64) -> f64 {
        self.r(theta) * theta.cos()
    }

    pub fn y(&self, theta: f64) -> f64 {
        self.r(theta) * theta.sin()
    }

    /// Whether `r′ ≥ 0` and `r′/r ≤ 2 tan θ` at `theta`.
    pub fn window_holds(&self, theta: f64) -> bool {
        let rho = self.rho(theta);
        rho >= 0.0 && rho <= 2.0 * theta.tan()
    }
}

/// Semi-stable class with its stationary curve through `(1, q)`.
#[derive(Debug, Clone)]
pub struct SemiStableData {
    pub kd: KahlerData,
    pub theta_hat: f64,
    pub theta0: f64,
    pub theta_min: f64,
    pub theta_max: f64,
    pub r_inf: PolarProfile,
    /// Branch from `(1, q)` up to `(a, p)`: the graph of the stationary `f_∞`.
    pub upper: LevelCurve,
    /// Branch from `(1, q)` down to the wall `x = a`.
    pub lower: LevelCurve,
    pub largest_a_gap: f64,
}

/// Serializable summary of [`SemiStableData`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemiStableSummary {
    pub n: u32,
    pub a: f64,
    pub p: f64,
    pub q: f64,
    pub theta_hat: f64,
    pub level: f64,
    pub theta0: f64,
    pub theta_min: f64,
    pub theta_max: f64,
    pub largest_a_gap: f64,
}

impl SemiStableData {
    pub fn summary(&self) -> SemiStableSummary {
        SemiStableSummary {
            n: self.kd.n,
            a: self.kd.a,
            p: self.kd.p,
            q: self.kd.q,
            theta_hat: self.theta_hat,
            level: self.r_inf.level,
            theta0: self.theta0,
            theta_min: self.theta_min,
            theta_max: self.theta_max,
            largest_a_gap: self.largest_a_gap,
        }
    }

    /// `f_∞(x)` on `(1, a]` from the traced upper branch.
    pub fn f_inf(&self, x: f64) -> Option<f64> {
        self.upper.y_at_x(x)
    }

    /// Angles in `[θ_min, θ_max]` where the window condition fails, on `m + 1` samples.
    pub fn window_violations(&self, m: usize) -> Vec<f64> {
        (0..=m)
            .map(|j| self.theta_min + (self.theta_max - self.theta_min) * j as f64 / m as f64)
            .filter(|&t| !self.r_inf.window_holds(t))
            .collect()
    }

    /// `|Re(e^{−iθ̂}(1 + iq)ⁿ⁻¹)|`: zero exactly when the level curve is vertical at `(1, q)`.
    pub fn tangency_defect(&self) -> f64 {
        let z = Complex64::from_polar(1.0, -self.theta_hat)
            * Complex64::new(1.0, self.kd.q).powi(self.kd.n as i32 - 1);
        z.re.abs() / z.norm()
    }
}

fn wrap_angle(t: f64) -> f64 {
    let mut t = t % (2.0 * PI);
    if t <= -PI {
        t += 2.0 * PI;
    } else if t > PI {
        t -= 2.0 * PI;
    }
    t
}

fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> f64 {
    let flo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (f(mid) > 0.0) == (flo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-16 * hi.abs().max(1.0) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Walks from `theta0` in direction `dir` while the window condition holds and `x`
/// increases; returns the angle where either first fails.
fn window_edge(prof: &PolarProfile, theta0: f64, dir: f64) -> f64 {
    let ok = |t: f64| {
        prof.defined_at(t) && prof.window_holds(t) && {
            // x increases away from θ0: dx/dθ = r cos θ (ρ − tan θ) has sign dir
            let dx = prof.rho(t) - t.tan();
            dir * dx >= 0.0
        }
    };
    let h = 1e-5;
    let mut t = theta0 + dir * h;
    if !ok(t) {
        return theta0;
    }
    loop {
        let nt = t + dir * h;
        if !ok(nt) || (nt - theta0).abs() > FRAC_PI_2 {
            return bisect(|u| if ok(u) { 1.0 } else { -1.0 }, t, nt);
        }
        t = nt;
    }
}

/// Largest `a − 1` for which the window holds on both sides of `θ0`.
pub fn largest_admissible_gap(prof: &PolarProfile, theta0: f64) -> f64 {
    let hi = window_edge(prof, theta0, 1.0);
    let lo = window_edge(prof, theta0, -1.0);
    prof.x(hi).min(prof.x(lo)) - 1.0
}

/// Builds the semi-stable data for dimension `n` and boundary value `q`.
///
/// With `a_gap = None` the gap starts at 0.1 and is halved until the window
/// condition certifies.
pub fn construct_semistable(n: u32, q: f64, a_gap: Option<f64>) -> Result<SemiStableData> {
    construct_semistable_with(n, q, a_gap, &TraceOptions::default())
}

pub fn construct_semistable_with(
    n: u32,
    q: f64,
    a_gap: Option<f64>,
    trace: &TraceOptions,
) -> Result<SemiStableData> {
    if n < 3 {
        return Err(invalid("n", format!("need n >= 3, got {n}")));
    }
    if !(q > 0.0) || !q.is_finite() {
        return Err(invalid("q", format!("need q > 0, got {q}")));
    }
    let theta_hat = wrap_angle((n as f64 - 1.0) * q.atan() + FRAC_PI_2);
    let hfun = LevelFunction::new(n, theta_hat);
    let level = hfun.value([1.0, q]);
    let prof = PolarProfile {
        n,
        theta_hat,
        level,
    };
    let theta0 = q.atan();
    if !prof.defined_at(theta0) {
        return Err(Error::Domain("start point off the polar chart".into()));
    }
    // local minimum of x at θ0
    let rho0 = prof.rho(theta0);
    let x2 = theta0.cos() / prof.r(theta0)
        * (-2.0 * prof.r1(theta0).powi(2) + prof.r(theta0) * prof.r2(theta0)
            - prof.r(theta0).powi(2));
    if (rho0 - theta0.tan()).abs() > 1e-8 * theta0.tan() || !(x2 > 0.0) {
        return Err(Error::Domain(format!(
            "x has no local minimum at theta0 (r'/r = {rho0}, x'' = {x2})"
        )));
    }
    let largest = largest_admissible_gap(&prof, theta0);
    let gap = match a_gap {
        Some(g) => {
            if !(g > 0.0) {
                return Err(invalid("a_gap", "must be positive"));
            }
            if g > largest {
                return Err(Error::WindowFailure {
                    requested: g,
                    largest,
                });
            }
            g
        }
        None => {
            let mut g = 0.1;
            while g > largest {
                g *= 0.5;
                if g < 1e-8 {
                    return Err(Error::WindowFailure {
                        requested: g,
                        largest,
                    });
                }
            }
            g
        }
    };
    let a = 1.0 + gap;
    let hi_edge = window_edge(&prof, theta0, 1.0);
    let lo_edge = window_edge(&prof, theta0, -1.0);
    let theta_max = bisect(|t| prof.x(t) - a, theta0, hi_edge);
    let theta_min = bisect(|t| prof.x(t) - a, lo_edge, theta0);

    let mut up = *trace;
    up.upward = true;
    let upper = trace_level_curve(n, a, theta_hat, [1.0, q], &up)?;
    let mut down = *trace;
    down.upward = false;
    let lower = trace_level_curve(n, a, theta_hat, [1.0, q], &down)?;
    if upper.end != TraceEnd::RightWall || lower.end != TraceEnd::RightWall {
        return Err(Error::Domain(
            "level curve does not reach x = a on both sides".into(),
        ));
    }
    let p = upper.end_point()[1];
    if (p - prof.y(theta_max)).abs() > 1e-8 * p.abs().max(1.0) {
        return Err(Error::Integration(format!(
            "traced endpoint {p} disagrees with the polar form {}",
            prof.y(theta_max)
        )));
    }
    let kd = KahlerData::new(n, a, p, q)?;
    let data = SemiStableData {
        kd,
        theta_hat,
        theta0,
        theta_min,
        theta_max,
        r_inf: prof,
        upper,
        lower,
        largest_a_gap: largest,
    };
    let bad = data.window_violations(2000);
    if !bad.is_empty() {
        return Err(Error::HypothesisViolation { theta: bad });
    }
    Ok(data)
}

/// Smallest `q` (on a grid of spacing `step` below `q_hi`) for which
/// [`construct_semistable`] succeeds with the given gap.
pub fn smallest_admissible_q(n: u32, a_gap: f64, q_hi: f64, step: f64) -> Option<f64> {
    let ok = |q: f64| {
        let prof_q = {
            let th = wrap_angle((n as f64 - 1.0) * q.atan() + FRAC_PI_2);
            let level = LevelFunction::new(n, th).value([1.0, q]);
            PolarProfile {
                n,
                theta_hat: th,
                level,
            }
        };
        largest_admissible_gap(&prof_q, q.atan()) >= a_gap
    };
    if !ok(q_hi) {
        return None;
    }
    let mut q = q_hi;
    while q - step > 0.0 && ok(q - step) {
        q -= step;
    }
    Some(q)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_level_curve_is_a_hyperbola() {
        let q = 2.0;
        let c = trace_level_curve(2, 3.0, FRAC_PI_2, [1.0, q], &TraceOptions::default()).unwrap();
        assert_eq!(c.end, TraceEnd::RightWall);
        for p in &c.points {
            let exact = (q * q - 1.0 + p[0] * p[0]).sqrt();
            assert!((p[1] - exact).abs() < 1e-8, "{p:?}");
        }
        assert!(c.max_level_drift() < 1e-10);
    }

    #[test]
    fn linear_level_curves_are_lines() {
        let th = 0.4;
        let c = trace_level_curve(1, 2.0, th, [1.0, 0.5], &TraceOptions::default()).unwrap();
        // Im(e^{−iθ̂} z) = y cos θ̂ − x sin θ̂ is constant
        let lvl = 0.5 * th.cos() - th.sin();
        for p in &c.points {
            assert!((p[1] * th.cos() - p[0] * th.sin() - lvl).abs() < 1e-12);
        }
    }

    #[test]
    fn circle_is_not_stationary() {
        let th: Vec<f64> = (0..50).map(|j| 0.1 + 0.01 * j as f64).collect();
        let r = vec![2.0; th.len()];
        let v = polar_residual(3, &th, &r);
        assert!((v - 3.0).abs() < 1e-9, "{v}");
    }

    #[test]
    fn analytic_polar_profile_is_stationary() {
        let prof = PolarProfile {
            n: 3,
            theta_hat: 4.5,
            level: -101.0,
        };
        for t in [1.40, 1.45, 1.47] {
            let (r, r1, r2) = (prof.r(t), prof.r1(t), prof.r2(t));
            let e = (2.0 * r1 * r1 - r * r2 + r * r) / (r1 * r1 + r * r) + 2.0;
            assert!(e.abs() < 1e-12);
        }
    }

    #[test]
    fn semistable_reference_case() {
        let d = construct_semistable(3, 10.0, None).unwrap();
        assert!((d.kd.a - 1.05).abs() < 1e-15);
        assert!(d.tangency_defect() < 1e-10);
        assert!(
            (d.largest_a_gap - 0.0856).abs() < 2e-3,
            "{}",
            d.largest_a_gap
        );
        let rho0 = d.r_inf.rho(d.theta0);
        assert!((rho0 - d.theta0.tan()).abs() < 1e-9 && rho0 < 2.0 * d.theta0.tan());
        assert!(matches!(
            construct_semistable(3, 10.0, Some(0.2)),
            Err(Error::WindowFailure { .. })
        ));
    }
}
