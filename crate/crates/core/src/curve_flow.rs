//! Parametric curve solver for `γ̇ = u″(γ)(κ + (n−1)ξ)N` and the rotated-graph
//! solver for `x = h(y)`.

use std::sync::Arc;

use crate::error::{invalid, Error, Result};
use crate::geometry::KahlerData;
use crate::graph_flow::{nodal_slopes, reduced_bracket, stable_dt_for, Grid, Rk4Work, StepConfig};
use crate::interp::{cumulative_length, MonotoneCubic};
use crate::profile::PotentialProfile;

/// Signed curvature and the angular rate `ξ = d/ds arg γ` at interior node `i`.
///
/// `κ` is the Menger curvature (positive when the curve turns left); `ξ` uses
/// three-point arc-length differences on the nonuniform chord parametrization.
pub fn curvature_and_xi(pts: &[[f64; 2]], i: usize) -> Result<(f64, f64)> {
    if i == 0 || i + 1 >= pts.len() {
        return Err(Error::DegenerateStencil { index: i });
    }
    let (p0, p1, p2) = (pts[i - 1], pts[i], pts[i + 1]);
    let d0 = [p1[0] - p0[0], p1[1] - p0[1]];
    let d1 = [p2[0] - p1[0], p2[1] - p1[1]];
    let h0 = d0[0].hypot(d0[1]);
    let h1 = d1[0].hypot(d1[1]);
    let h2 = (p2[0] - p0[0]).hypot(p2[1] - p0[1]);
    if !(h0 > 0.0 && h1 > 0.0 && h2 > 0.0) {
        return Err(Error::DegenerateStencil { index: i });
    }
    let cross = d0[0] * d1[1] - d0[1] * d1[0];
    let kappa = 2.0 * cross / (h0 * h1 * h2);
    let t = tangent(p0, p1, p2, h0, h1);
    let (x, y) = (p1[0], p1[1]);
    let xi = (x * t[1] - y * t[0]) / (x * x + y * y);
    Ok((kappa, xi))
}

/// Unit tangent from the second-order nonuniform difference.
fn tangent(p0: [f64; 2], p1: [f64; 2], p2: [f64; 2], h0: f64, h1: f64) -> [f64; 2] {
    let c0 = -h1 / (h0 * (h0 + h1));
    let c1 = (h1 - h0) / (h0 * h1);
    let c2 = h0 / (h1 * (h0 + h1));
    let tx = c0 * p0[0] + c1 * p1[0] + c2 * p2[0];
    let ty = c0 * p0[1] + c1 * p1[1] + c2 * p2[1];
    let nrm = tx.hypot(ty);
    [tx / nrm, ty / nrm]
}

/// Shared data of a curve evolution.
#[derive(Debug, Clone)]
pub struct CurveProblem {
    pub kd: KahlerData,
    pub profile: PotentialProfile,
    /// Target node spacing for resampling.
    pub spacing: f64,
    pub c_cfl: f64,
    pub umax: f64,
}

impl CurveProblem {
    pub fn new(kd: KahlerData, profile: PotentialProfile, spacing: f64) -> Result<Arc<Self>> {
        if !(spacing > 0.0) {
            return Err(invalid("spacing", "must be positive"));
        }
        let umax = profile.max_value();
        Ok(Arc::new(Self {
            kd,
            profile,
            spacing,
            c_cfl: 0.2,
            umax,
        }))
    }
}

/// Open polyline with fixed endpoints evolving by the curve flow.
#[derive(Debug, Clone)]
pub struct CurveState {
    pub problem: Arc<CurveProblem>,
    pub pts: Vec<[f64; 2]>,
    pub t: f64,
    pub closed: bool,
}

impl CurveState {
    pub fn new(problem: Arc<CurveProblem>, pts: Vec<[f64; 2]>) -> Result<Self> {
        if pts.len() < 3 {
            return Err(invalid("pts", "need at least three points"));
        }
        let s = Self {
            problem,
            pts,
            t: 0.0,
            closed: false,
        };
        s.audit()?;
        Ok(s)
    }

    /// Samples the graph of `f` at `n` equally spaced abscissae on `[1, a]`.
    pub fn from_graph(
        problem: Arc<CurveProblem>,
        n: usize,
        f: impl Fn(f64) -> f64,
    ) -> Result<Self> {
        let grid = Grid::uniform(1.0, problem.kd.a, n)?;
        let pts = grid.xs.iter().map(|&x| [x, f(x)]).collect();
        Self::new(problem, pts)
    }

    pub fn min_spacing(&self) -> f64 {
        self.pts
            .windows(2)
            .map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]))
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest stable step for the current spacing.
    pub fn cfl(&self) -> f64 {
        let h = self.min_spacing();
        let umax = self.problem.umax;
        if umax > 0.0 {
            self.problem.c_cfl * h * h / umax
        } else {
            f64::INFINITY
        }
    }

    /// Velocity `u″(κ + (n−1)ξ)N` at every node; zero at the endpoints.
    pub fn velocity(&self) -> Result<Vec<[f64; 2]>> {
        velocity(&self.problem, &self.pts)
    }

    /// Checks simplicity and that interior nodes stay off the walls `x = 1`, `x = a`.
    pub fn audit(&self) -> Result<()> {
        let a = self.problem.kd.a;
        let n = self.pts.len();
        for (i, p) in self.pts.iter().enumerate().take(n - 1).skip(1) {
            if !p[0].is_finite() || !p[1].is_finite() {
                return Err(Error::NonFinite { t: self.t, x: p[0] });
            }
            if p[0] <= 1.0 {
                return Err(Error::WallContact {
                    index: i,
                    wall: 1.0,
                });
            }
            if p[0] >= a {
                return Err(Error::WallContact { index: i, wall: a });
            }
        }
        if let Some((i, j)) = first_self_intersection(&self.pts) {
            return Err(Error::SelfIntersection {
                first: i,
                second: j,
            });
        }
        Ok(())
    }

    /// Advances by `dt` with RK4 in the normal direction, then redistributes the
    /// nodes uniformly in arc length.
    pub fn step(&mut self, dt: f64) -> Result<()> {
        let limit = self.cfl();
        if dt > limit {
            return Err(Error::CflViolation { dt, limit });
        }
        let pb = Arc::clone(&self.problem);
        let n = self.pts.len();
        let add = |base: &[[f64; 2]], k: &[[f64; 2]], c: f64| -> Vec<[f64; 2]> {
            base.iter()
                .zip(k)
                .map(|(p, v)| [p[0] + c * v[0], p[1] + c * v[1]])
                .collect()
        };
        let k1 = velocity(&pb, &self.pts)?;
        let k2 = velocity(&pb, &add(&self.pts, &k1, 0.5 * dt))?;
        let k3 = velocity(&pb, &add(&self.pts, &k2, 0.5 * dt))?;
        let k4 = velocity(&pb, &add(&self.pts, &k3, dt))?;
        for i in 1..n - 1 {
            for c in 0..2 {
                self.pts[i][c] +=
                    dt / 6.0 * (k1[i][c] + 2.0 * k2[i][c] + 2.0 * k3[i][c] + k4[i][c]);
            }
        }
        self.t += dt;
        self.audit()?;
        self.redistribute()?;
        Ok(())
    }

    /// Steps at the stability limit until `t` reaches `t_target` exactly.
    pub fn advance_to(&mut self, t_target: f64) -> Result<()> {
        while self.t < t_target {
            let dt = (t_target - self.t).min(self.cfl());
            self.step(dt)?;
            if t_target - self.t <= 1e-14 * t_target.abs().max(1.0) {
                self.t = t_target;
            }
        }
        Ok(())
    }

    /// Resamples at equal arc length with a monotone cubic through `x(s)` and `y(s)`;
    /// the node count keeps the spacing near the target.
    pub fn redistribute(&mut self) -> Result<()> {
        let s = cumulative_length(&self.pts);
        let len = *s.last().unwrap();
        let target = self.problem.spacing;
        let mut m = self.pts.len() - 1;
        let mean = len / m as f64;
        if mean < 0.5 * target || mean > 2.0 * target {
            m = ((len / target).round() as usize).max(2);
        }
        let xs: Vec<f64> = self.pts.iter().map(|p| p[0]).collect();
        let ys: Vec<f64> = self.pts.iter().map(|p| p[1]).collect();
        let ix = MonotoneCubic::new(s.clone(), xs)?;
        let iy = MonotoneCubic::new(s, ys)?;
        let first = self.pts[0];
        let last = *self.pts.last().unwrap();
        let mut out = Vec::with_capacity(m + 1);
        out.push(first);
        for j in 1..m {
            let sj = len * j as f64 / m as f64;
            out.push([ix.eval(sj), iy.eval(sj)]);
        }
        out.push(last);
        self.pts = out;
        Ok(())
    }

    /// Signed area between the polyline and the chord joining its endpoints.
    pub fn enclosed_area(&self) -> f64 {
        let mut acc = 0.0;
        let n = self.pts.len();
        for i in 0..n {
            let p = self.pts[i];
            let q = self.pts[(i + 1) % n];
            acc += p[0] * q[1] - q[0] * p[1];
        }
        0.5 * acc
    }
}

fn velocity(pb: &CurveProblem, pts: &[[f64; 2]]) -> Result<Vec<[f64; 2]>> {
    let n = pts.len();
    let m = pb.kd.m();
    let mut v = vec![[0.0; 2]; n];
    for i in 1..n - 1 {
        let (kappa, xi) = curvature_and_xi(pts, i)?;
        let p0 = pts[i - 1];
        let p1 = pts[i];
        let p2 = pts[i + 1];
        let h0 = (p1[0] - p0[0]).hypot(p1[1] - p0[1]);
        let h1 = (p2[0] - p1[0]).hypot(p2[1] - p1[1]);
        let t = tangent(p0, p1, p2, h0, h1);
        let speed = pb.profile.eval(p1[0]) * (kappa + m * xi);
        v[i] = [-t[1] * speed, t[0] * speed];
    }
    Ok(v)
}

fn segments_cross(p1: [f64; 2], p2: [f64; 2], q1: [f64; 2], q2: [f64; 2]) -> bool {
    let orient = |a: [f64; 2], b: [f64; 2], c: [f64; 2]| {
        (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    };
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

/// Sweep over segments sorted by their left end; returns the first crossing pair.
pub fn first_self_intersection(pts: &[[f64; 2]]) -> Option<(usize, usize)> {
    let nseg = pts.len().saturating_sub(1);
    let mut order: Vec<usize> = (0..nseg).collect();
    let xmin = |i: usize| pts[i][0].min(pts[i + 1][0]);
    let xmax = |i: usize| pts[i][0].max(pts[i + 1][0]);
    order.sort_by(|&i, &j| xmin(i).total_cmp(&xmin(j)));
    for (k, &i) in order.iter().enumerate() {
        let right = xmax(i);
        for &j in &order[k + 1..] {
            if xmin(j) > right {
                break;
            }
            if i.abs_diff(j) <= 1 {
                continue;
            }
            if segments_cross(pts[i], pts[i + 1], pts[j], pts[j + 1]) {
                return Some((i.min(j), i.max(j)));
            }
        }
    }
    None
}

/// Graph `x = h(y)` on a uniform `y` grid evolving by
/// `ḣ = u″(h)(h″/(1+h′²) + (n−1)(yh′ − h)/(y² + h²))`.
#[derive(Debug, Clone)]
pub struct RotatedGraphState {
    pub kd: KahlerData,
    pub profile: Arc<PotentialProfile>,
    pub grid: Grid,
    pub h: Vec<f64>,
    pub t: f64,
    pub step_config: StepConfig,
    work: Rk4Work,
}

fn rotated_rhs(
    kd: &KahlerData,
    prof: &PotentialProfile,
    ys: &[f64],
    dy: f64,
    h: &[f64],
    out: &mut [f64],
) {
    let n = h.len();
    let m = kd.m();
    out[0] = 0.0;
    out[n - 1] = 0.0;
    for i in 1..n - 1 {
        let hp = (h[i + 1] - h[i - 1]) / (2.0 * dy);
        let hpp = (h[i + 1] - 2.0 * h[i] + h[i - 1]) / (dy * dy);
        out[i] = prof.eval(h[i]) * reduced_bracket(ys[i], h[i], hp, hpp, m);
    }
}

impl RotatedGraphState {
    /// Samples `h` on `n` nodes of `[y_lo, y_hi]`; endpoint values stay fixed.
    pub fn from_fn(
        kd: KahlerData,
        profile: Arc<PotentialProfile>,
        y_lo: f64,
        y_hi: f64,
        n: usize,
        h0: impl Fn(f64) -> f64,
    ) -> Result<Self> {
        let grid = Grid::uniform(y_lo, y_hi, n)?;
        let h: Vec<f64> = grid.xs.iter().map(|&y| h0(y)).collect();
        let a = kd.a;
        if let Some(i) = h
            .iter()
            .position(|&v| !(v >= 1.0 - 1e-12 && v <= a + 1e-12))
        {
            return Err(Error::Domain(format!(
                "h(y = {}) = {} leaves [1, a]",
                grid.xs[i], h[i]
            )));
        }
        Ok(Self {
            kd,
            profile,
            work: Rk4Work::new(n),
            grid,
            h,
            t: 0.0,
            step_config: StepConfig::default(),
        })
    }

    pub fn ys(&self) -> &[f64] {
        &self.grid.xs
    }

    pub fn evaluate_rhs(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.h.len()];
        rotated_rhs(
            &self.kd,
            &self.profile,
            &self.grid.xs,
            self.grid.dx,
            &self.h,
            &mut out,
        );
        out
    }

    pub fn slopes(&self) -> Vec<f64> {
        nodal_slopes(&self.h, self.grid.dx)
    }

    pub fn stable_dt(&self) -> f64 {
        let w: Vec<f64> = self.h.iter().map(|&v| self.profile.eval(v)).collect();
        stable_dt_for(
            &self.grid.xs,
            &self.h,
            &w,
            self.grid.dx,
            self.kd.m(),
            &self.step_config,
        )
    }

    pub fn step(&mut self, dt_max: f64) -> Result<f64> {
        let dt = dt_max.min(self.stable_dt());
        let (lo, hi) = (self.h[0], *self.h.last().unwrap());
        let (kd, prof) = (self.kd, Arc::clone(&self.profile));
        let ys = self.grid.xs.clone();
        let dy = self.grid.dx;
        self.work.step(
            &mut self.h,
            dt,
            |v, out| rotated_rhs(&kd, &prof, &ys, dy, v, out),
            |v| {
                let n = v.len();
                v[0] = lo;
                v[n - 1] = hi;
            },
        );
        self.t += dt;
        if let Some(i) = self.h.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                t: self.t,
                x: self.grid.xs[i],
            });
        }
        Ok(dt)
    }

    pub fn advance_to(&mut self, t_target: f64) -> Result<()> {
        while self.t < t_target {
            self.step(t_target - self.t)?;
            if t_target - self.t <= 1e-14 * t_target.abs().max(1.0) {
                self.t = t_target;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn circle_curvature() {
        let rho = 2.5;
        let c = [4.0, -1.0];
        for d in [0.1, 0.05, 0.025] {
            let pts: Vec<[f64; 2]> = (0..3)
                .map(|k| {
                    let th = 0.3 + d * k as f64;
                    [c[0] + rho * th.cos(), c[1] + rho * th.sin()]
                })
                .collect();
            let (k, _) = curvature_and_xi(&pts, 1).unwrap();
            assert!((k - 1.0 / rho).abs() < 1e-12);
        }
    }

    #[test]
    fn ray_has_no_angular_rate() {
        let pts = vec![[1.0, 2.0], [1.5, 3.0], [2.2, 4.4]];
        let (k, xi) = curvature_and_xi(&pts, 1).unwrap();
        assert!(k.abs() < 1e-14 && xi.abs() < 1e-14);
    }

    #[test]
    fn graph_sample_matches_closed_forms() {
        let f = |x: f64| x * x;
        let mut errs = Vec::new();
        for h in [0.02, 0.01, 0.005, 0.0025] {
            let x = 1.3;
            let pts = vec![[x - h, f(x - h)], [x, f(x)], [x + h, f(x + h)]];
            let (k, xi) = curvature_and_xi(&pts, 1).unwrap();
            let fp: f64 = 2.0 * x;
            let k_exact = 2.0 / (1.0 + fp * fp).powf(1.5);
            let xi_exact = (x * fp - f(x)) / ((x * x + f(x) * f(x)) * (1.0 + fp * fp).sqrt());
            errs.push((k - k_exact).abs() + (xi - xi_exact).abs());
        }
        for w in errs.windows(2) {
            assert!((w[0] / w[1]).log2() > 1.9, "{errs:?}");
        }
    }

    #[test]
    fn coincident_points_are_degenerate() {
        let pts = vec![[1.0, 1.0], [1.0, 1.0], [2.0, 2.0]];
        assert!(matches!(
            curvature_and_xi(&pts, 1),
            Err(Error::DegenerateStencil { .. })
        ));
    }

    #[test]
    fn detects_crossing() {
        let pts = vec![[0.0, 0.0], [2.0, 0.0], [2.0, 1.0], [1.0, -1.0]];
        assert_eq!(first_self_intersection(&pts), Some((0, 2)));
        let pts = vec![[0.0, 0.0], [1.0, 0.0], [2.0, 1.0], [3.0, 1.0]];
        assert_eq!(first_self_intersection(&pts), None);
    }

    #[test]
    fn ray_segment_does_not_move() {
        let kd = KahlerData::new(3, 3.0, 6.0, 2.0).unwrap();
        let prof = PotentialProfile::quadratic(&kd, 1.0).unwrap();
        let pb = CurveProblem::new(kd, prof, 0.05).unwrap();
        let mut c = CurveState::from_graph(pb, 41, |x| 2.0 * x).unwrap();
        for v in c.velocity().unwrap() {
            assert!(v[0].abs() < 1e-12 && v[1].abs() < 1e-12);
        }
        let dt = 0.5 * c.cfl();
        c.step(dt).unwrap();
        for p in &c.pts {
            assert!((p[1] - 2.0 * p[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn rotated_line_through_origin_is_stationary() {
        let kd = KahlerData::new(3, 3.0, 0.0, 0.0).unwrap();
        let prof = Arc::new(PotentialProfile::quadratic(&kd, 1.0).unwrap());
        let s = RotatedGraphState::from_fn(kd, prof, 2.0, 5.0, 101, |y| 0.5 * y).unwrap();
        assert!(s.evaluate_rhs().iter().all(|v| v.abs() < 1e-12));
    }
}
