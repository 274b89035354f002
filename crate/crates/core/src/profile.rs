//! Diffusion weight `u″(x)` on `[1, a]` with its structural bounds.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::KahlerData;
use crate::interp::MonotoneCubic;

/// Number of points on the audit grid.
pub const AUDIT_POINTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub enum ProfileShape {
    /// `κ(x − 1)(a − x)`.
    Quadratic { kappa: f64 },
    /// Sampled table interpolated by a monotone cubic.
    Table(MonotoneCubic),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PotentialProfile {
    pub a: f64,
    pub shape: ProfileShape,
    /// Constant in `u″(x) ≥ k(x − 1)(a − x)`.
    pub k: f64,
    /// Strict uniform upper bound, if one is imposed.
    pub r_cap: Option<f64>,
    /// Split point: the linear lower bound is only required on `[1, a − eps]`.
    pub eps: f64,
}

/// Summary of a profile audit on the uniform check grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileAudit {
    pub points: usize,
    pub max_value: f64,
    pub min_ratio_quadratic: f64,
    pub min_ratio_linear: f64,
}

impl PotentialProfile {
    /// Canonical profile `κ(x − 1)(a − x)` with `k = κ` and a cap just above its maximum.
    pub fn quadratic(kd: &KahlerData, kappa: f64) -> Result<Self> {
        Self::quadratic_on(kd.a, kappa)
    }

    pub fn quadratic_on(a: f64, kappa: f64) -> Result<Self> {
        if !(a > 1.0) || !a.is_finite() {
            return Err(invalid("a", format!("need a > 1, got {a}")));
        }
        if !(kappa > 0.0) || !kappa.is_finite() {
            return Err(invalid("kappa", format!("need kappa > 0, got {kappa}")));
        }
        let peak = kappa * (a - 1.0).powi(2) / 4.0;
        Ok(Self {
            a,
            shape: ProfileShape::Quadratic { kappa },
            k: kappa,
            r_cap: Some(peak * (1.0 + 1e-9) + 1e-12),
            eps: 0.1 * (a - 1.0),
        })
    }

    /// Profile given by samples `(x_i, u″_i)`; the nodes must start at 1 and end at `a`.
    pub fn from_table(a: f64, xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.first().is_none_or(|&x| (x - 1.0).abs() > 1e-12)
            || xs.last().is_none_or(|&x| (x - a).abs() > 1e-12)
        {
            return Err(invalid("profile", "table must span exactly [1, a]"));
        }
        let interp = MonotoneCubic::new(xs, ys)?;
        let mut prof = Self {
            a,
            shape: ProfileShape::Table(interp),
            k: 0.0,
            r_cap: None,
            eps: 0.1 * (a - 1.0),
        };
        let audit = prof.sample_audit();
        prof.k = audit.min_ratio_quadratic;
        prof.audit()?;
        Ok(prof)
    }

    /// Loads a headerless or headed two-column CSV `(x, u″)`.
    pub fn from_csv(a: f64, path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_path(path)?;
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() < 2 {
                return Err(Error::Config(format!(
                    "{}: expected two columns",
                    path.display()
                )));
            }
            let (Ok(x), Ok(y)) = (rec[0].parse::<f64>(), rec[1].parse::<f64>()) else {
                if xs.is_empty() {
                    continue;
                }
                return Err(Error::Config(format!(
                    "{}: unparsable row {:?}",
                    path.display(),
                    rec
                )));
            };
            xs.push(x);
            ys.push(y);
        }
        Self::from_table(a, xs, ys)
    }

    pub fn with_r_cap(mut self, r_cap: f64) -> Result<Self> {
        self.r_cap = Some(r_cap);
        self.audit()?;
        Ok(self)
    }

    pub fn with_eps(mut self, eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps < self.a - 1.0) {
            return Err(invalid("eps", format!("need 0 < eps < a - 1, got {eps}")));
        }
        self.eps = eps;
        Ok(self)
    }

    /// `u″(x)`; zero outside the open interval `(1, a)`.
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        if x <= 1.0 || x >= self.a {
            return 0.0;
        }
        match &self.shape {
            ProfileShape::Quadratic { kappa } => kappa * (x - 1.0) * (self.a - x),
            ProfileShape::Table(p) => p.eval(x).max(0.0),
        }
    }

    fn audit_grid(&self) -> impl Iterator<Item = f64> + '_ {
        let h = (self.a - 1.0) / (AUDIT_POINTS - 1) as f64;
        (0..AUDIT_POINTS).map(move |i| {
            if i + 1 == AUDIT_POINTS {
                self.a
            } else {
                1.0 + i as f64 * h
            }
        })
    }

    fn sample_audit(&self) -> ProfileAudit {
        let mut max_value = 0.0f64;
        let mut min_q = f64::INFINITY;
        let mut min_l = f64::INFINITY;
        for x in self.audit_grid() {
            let u = self.eval(x);
            max_value = max_value.max(u);
            if x > 1.0 && x < self.a {
                min_q = min_q.min(u / ((x - 1.0) * (self.a - x)));
                if x <= self.a - self.eps {
                    min_l = min_l.min(u / (x - 1.0));
                }
            }
        }
        ProfileAudit {
            points: AUDIT_POINTS,
            max_value,
            min_ratio_quadratic: min_q,
            min_ratio_linear: min_l,
        }
    }

    /// Checks vanishing at the endpoints, positivity, the quadratic lower bound
    /// and the optional cap on the audit grid.
    pub fn audit(&self) -> Result<ProfileAudit> {
        if let ProfileShape::Table(p) = &self.shape {
            let v = p.values();
            if v[0].abs() > 1e-12 || v[v.len() - 1].abs() > 1e-12 {
                return Err(Error::ProfileAudit(
                    "u'' must vanish at x = 1 and x = a".into(),
                ));
            }
        }
        let au = self.sample_audit();
        for x in self.audit_grid() {
            if x > 1.0 && x < self.a && !(self.eval(x) > 0.0) {
                return Err(Error::ProfileAudit(format!("u'' not positive at x = {x}")));
            }
        }
        if au.min_ratio_quadratic < self.k * (1.0 - 1e-12) {
            return Err(Error::ProfileAudit(format!(
                "u'' >= k(x-1)(a-x) fails: ratio {} < k = {}",
                au.min_ratio_quadratic, self.k
            )));
        }
        if let Some(r) = self.r_cap {
            if !(au.max_value < r) {
                return Err(Error::ProfileAudit(format!(
                    "u'' < R fails: max {} >= R = {r}",
                    au.max_value
                )));
            }
        }
        Ok(au)
    }

    /// Largest `k′` with `u″(x) ≥ k′(x − 1)` on `[1, a − eps]` (audit-grid estimate,
    /// exact for the quadratic shape).
    pub fn linear_lower_constant(&self) -> f64 {
        match &self.shape {
            ProfileShape::Quadratic { kappa } => kappa * self.eps,
            ProfileShape::Table(_) => self.sample_audit().min_ratio_linear,
        }
    }

    /// Maximum of `u″` over `[1, a]`.
    pub fn max_value(&self) -> f64 {
        match &self.shape {
            ProfileShape::Quadratic { kappa } => kappa * (self.a - 1.0).powi(2) / 4.0,
            ProfileShape::Table(_) => self.sample_audit().max_value,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_profile_values() {
        let p = PotentialProfile::quadratic_on(2.0, 1.0).unwrap();
        assert_eq!(p.eval(1.5), 0.25);
        assert_eq!(p.eval(1.0), 0.0);
        assert_eq!(p.eval(2.0), 0.0);
        p.audit().unwrap();
    }

    #[test]
    fn quadratic_under_cap() {
        let r = 8.0;
        let a = 6.0 * r;
        let kappa = 0.9 * 4.0 * r / (a - 1.0f64).powi(2);
        let p = PotentialProfile::quadratic_on(a, kappa)
            .unwrap()
            .with_r_cap(r)
            .unwrap();
        assert!(p.max_value() < r);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(PotentialProfile::quadratic_on(2.0, 0.0).is_err());
        assert!(PotentialProfile::quadratic_on(1.0, 1.0).is_err());
        let p = PotentialProfile::quadratic_on(3.0, 1.0).unwrap();
        assert!(p.with_r_cap(0.5).is_err());
    }

    #[test]
    fn table_profile_matches_quadratic() {
        let a = 3.0;
        let xs: Vec<f64> = (0..=200)
            .map(|i| 1.0 + (a - 1.0) * i as f64 / 200.0)
            .collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * (x - 1.0) * (a - x)).collect();
        let p = PotentialProfile::from_table(a, xs, ys).unwrap();
        assert!((p.eval(2.0) - 2.0).abs() < 1e-6);
        assert!((p.k - 2.0).abs() < 1e-2);
        assert!((p.linear_lower_constant() - 2.0 * p.eps).abs() < 1e-2);
    }

    #[test]
    fn table_must_vanish_at_ends() {
        let xs = vec![1.0, 1.5, 2.0];
        let ys = vec![0.1, 0.3, 0.0];
        assert!(PotentialProfile::from_table(2.0, xs, ys).is_err());
    }
}
