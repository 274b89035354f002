//! Adaptive Dormand–Prince 5(4) integrator for small fixed-size systems.

use crate::error::{Error, Result};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// error coefficients: b - b*
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

#[derive(Debug, Clone, Copy)]
pub struct DormandPrince {
    pub rtol: f64,
    pub atol: f64,
    pub h_init: f64,
    pub h_max: f64,
    pub max_steps: usize,
}

impl Default for DormandPrince {
    fn default() -> Self {
        Self {
            rtol: 1e-12,
            atol: 1e-14,
            h_init: 1e-3,
            h_max: f64::INFINITY,
            max_steps: 10_000_000,
        }
    }
}

/// One accepted step of an integration.
#[derive(Debug, Clone, Copy)]
pub struct Accepted<const D: usize> {
    pub t: f64,
    pub y: [f64; D],
}

fn axpy<const D: usize>(y: &[f64; D], h: f64, terms: &[(f64, &[f64; D])]) -> [f64; D] {
    let mut out = *y;
    for (c, k) in terms {
        for i in 0..D {
            out[i] += h * c * k[i];
        }
    }
    out
}

impl DormandPrince {
    pub fn with_tolerances(rtol: f64, atol: f64) -> Self {
        Self {
            rtol,
            atol,
            ..Self::default()
        }
    }

    /// Single Dormand–Prince step; returns the fifth-order solution and the
    /// scaled error norm (accept when <= 1).
    pub fn attempt<const D: usize, F>(&self, f: &F, t: f64, y: &[f64; D], h: f64) -> ([f64; D], f64)
    where
        F: Fn(f64, &[f64; D]) -> [f64; D],
    {
        let k1 = f(t, y);
        let k2 = f(t + C2 * h, &axpy(y, h, &[(A21, &k1)]));
        let k3 = f(t + C3 * h, &axpy(y, h, &[(A31, &k1), (A32, &k2)]));
        let k4 = f(
            t + C4 * h,
            &axpy(y, h, &[(A41, &k1), (A42, &k2), (A43, &k3)]),
        );
        let k5 = f(
            t + C5 * h,
            &axpy(y, h, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
        );
        let k6 = f(
            t + h,
            &axpy(
                y,
                h,
                &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
            ),
        );
        let y5 = axpy(
            y,
            h,
            &[(B1, &k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)],
        );
        let k7 = f(t + h, &y5);
        let mut err = 0.0f64;
        for i in 0..D {
            let e =
                h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sc = self.atol + self.rtol * y[i].abs().max(y5[i].abs());
            err = err.max((e / sc).abs());
        }
        (y5, err)
    }

    fn next_h(&self, h: f64, err: f64) -> f64 {
        let fac = if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        (h * fac).min(self.h_max)
    }

    /// Integrates from `t0` to `t1`, calling `on_step` after every accepted step.
    pub fn integrate_with<const D: usize, F, G>(
        &self,
        f: F,
        t0: f64,
        y0: [f64; D],
        t1: f64,
        mut on_step: G,
    ) -> Result<[f64; D]>
    where
        F: Fn(f64, &[f64; D]) -> [f64; D],
        G: FnMut(Accepted<D>),
    {
        if t1 == t0 {
            return Ok(y0);
        }
        let dir = (t1 - t0).signum();
        let mut t = t0;
        let mut y = y0;
        let mut h = self.h_init.min((t1 - t0).abs()).min(self.h_max);
        for _ in 0..self.max_steps {
            let last = (t + dir * h - t1) * dir >= 0.0;
            let h_try = if last { (t1 - t).abs() } else { h };
            let (y_new, err) = self.attempt(&f, t, &y, dir * h_try);
            if !err.is_finite() {
                h *= 0.1;
                if h < 1e-300 {
                    return Err(Error::Integration("step size underflow".into()));
                }
                continue;
            }
            if err <= 1.0 {
                t = if last { t1 } else { t + dir * h_try };
                y = y_new;
                on_step(Accepted { t, y });
                if last {
                    return Ok(y);
                }
            }
            h = self.next_h(h_try, err);
        }
        Err(Error::Integration(
            "maximum number of steps exceeded".into(),
        ))
    }

    pub fn integrate<const D: usize, F>(
        &self,
        f: F,
        t0: f64,
        y0: [f64; D],
        t1: f64,
    ) -> Result<[f64; D]>
    where
        F: Fn(f64, &[f64; D]) -> [f64; D],
    {
        self.integrate_with(f, t0, y0, t1, |_| {})
    }

    /// Integrates forward until `event(t, y)` changes sign, then locates the
    /// crossing by secant iteration on the length of the final step.
    pub fn integrate_to_event<const D: usize, F, E>(
        &self,
        f: F,
        t0: f64,
        y0: [f64; D],
        t_max: f64,
        event: E,
    ) -> Result<Option<Accepted<D>>>
    where
        F: Fn(f64, &[f64; D]) -> [f64; D],
        E: Fn(f64, &[f64; D]) -> f64,
    {
        let mut t = t0;
        let mut y = y0;
        let mut g = event(t, &y);
        if g == 0.0 {
            return Ok(Some(Accepted { t, y }));
        }
        let mut h = self.h_init.min(t_max - t0).min(self.h_max);
        for _ in 0..self.max_steps {
            if t >= t_max {
                return Ok(None);
            }
            let h_try = h.min(t_max - t);
            let (y_new, err) = self.attempt(&f, t, &y, h_try);
            if !err.is_finite() {
                h *= 0.1;
                continue;
            }
            if err <= 1.0 {
                let g_new = event(t + h_try, &y_new);
                if g_new == 0.0 || g_new.signum() != g.signum() {
                    return Ok(Some(self.locate(&f, &event, t, &y, g, h_try, g_new)));
                }
                t += h_try;
                y = y_new;
                g = g_new;
            }
            h = self.next_h(h_try, err);
        }
        Err(Error::Integration(
            "maximum number of steps exceeded".into(),
        ))
    }

    #[allow(clippy::too_many_arguments)]
    fn locate<const D: usize, F, E>(
        &self,
        f: &F,
        event: &E,
        t: f64,
        y: &[f64; D],
        g0: f64,
        h1: f64,
        g1: f64,
    ) -> Accepted<D>
    where
        F: Fn(f64, &[f64; D]) -> [f64; D],
        E: Fn(f64, &[f64; D]) -> f64,
    {
        // Illinois-modified regula falsi on the step length; every trial is a
        // fresh single step from (t, y), which is accurate because h <= h1.
        let (mut a, mut ga) = (0.0, g0);
        let (mut b, mut gb) = (h1, g1);
        let mut best = Accepted {
            t: t + h1,
            y: self.attempt(f, t, y, h1).0,
        };
        let mut side = 0i8;
        for _ in 0..100 {
            let c = (a * gb - b * ga) / (gb - ga);
            let (yc, _) = self.attempt(f, t, y, c);
            let gc = event(t + c, &yc);
            best = Accepted { t: t + c, y: yc };
            if gc == 0.0 || (b - a).abs() <= 4.0 * f64::EPSILON * (t.abs() + h1.abs()) {
                break;
            }
            if gc.signum() == gb.signum() {
                b = c;
                gb = gc;
                if side == -1 {
                    ga *= 0.5;
                }
                side = -1;
            } else {
                a = c;
                ga = gc;
                if side == 1 {
                    gb *= 0.5;
                }
                side = 1;
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay_is_accurate() {
        let dp = DormandPrince::default();
        let y = dp
            .integrate(|_, y: &[f64; 1]| [-y[0]], 0.0, [1.0], 5.0)
            .unwrap();
        assert!((y[0] - (-5.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn harmonic_oscillator_event() {
        let dp = DormandPrince::default();
        let hit = dp
            .integrate_to_event(
                |_, y: &[f64; 2]| [y[1], -y[0]],
                0.0,
                [1.0, 0.0],
                10.0,
                |_, y| y[0],
            )
            .unwrap()
            .unwrap();
        assert!((hit.t - std::f64::consts::FRAC_PI_2).abs() < 1e-10);
    }
}
