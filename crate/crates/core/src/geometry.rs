//! Class data on the blowup of projective space, eigenvalues and phase of the
//! reduced endomorphism, the lifted target angle and the central charges.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Default tolerance used when comparing central-charge arguments.
pub const STABILITY_TOL: f64 = 1e-9;

/// The classes `[ω] = aH − E` and `[α] = pH − qE` in complex dimension `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KahlerData {
    pub n: u32,
    pub a: f64,
    pub p: f64,
    pub q: f64,
}

impl KahlerData {
    pub fn new(n: u32, a: f64, p: f64, q: f64) -> Result<Self> {
        if n < 1 {
            return Err(invalid("n", "dimension must be positive"));
        }
        if !(a.is_finite() && a > 1.0) {
            return Err(invalid("a", format!("need a > 1, got {a}")));
        }
        if !p.is_finite() || !q.is_finite() {
            return Err(invalid("p", "boundary values must be finite"));
        }
        Ok(Self { n, a, p, q })
    }

    /// Multiplicity of the eigenvalue `f/x`.
    pub fn m(&self) -> f64 {
        (self.n - 1) as f64
    }

    /// Threshold `(n − 2)π/2` of the supercritical phase regime.
    pub fn supercritical_floor(&self) -> f64 {
        (self.n as f64 - 2.0) * std::f64::consts::FRAC_PI_2
    }
}

/// Eigenvalues of `ω⁻¹α` at a point of the graph: `f/x` repeated `n − 1` times, then `f′`.
pub fn eigenvalues(x: f64, f: f64, fp: f64, n: u32) -> Vec<f64> {
    let mut ev = vec![f / x; n.saturating_sub(1) as usize];
    ev.push(fp);
    ev
}

/// Lagrangian angle `Θ = (n − 1)·arctan(f/x) + arctan(f′)`.
pub fn phase(x: f64, f: f64, fp: f64, n: u32) -> f64 {
    (n as f64 - 1.0) * (f / x).atan() + fp.atan()
}

/// Per-node phase data over a graph.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseField {
    pub theta_hat: f64,
    pub theta: Vec<f64>,
    /// `(f/x, f′)` at each node; the first entry has multiplicity `n − 1`.
    pub lambda_sheet: Vec<(f64, f64)>,
}

impl PhaseField {
    pub fn from_graph(kd: &KahlerData, xs: &[f64], f: &[f64], fp: &[f64]) -> Self {
        let theta = xs
            .iter()
            .zip(f)
            .zip(fp)
            .map(|((&x, &f), &fp)| phase(x, f, fp, kd.n))
            .collect();
        let lambda_sheet = xs
            .iter()
            .zip(f)
            .zip(fp)
            .map(|((&x, &f), &fp)| (f / x, fp))
            .collect();
        Self {
            theta_hat: lifted_angle(kd).unwrap_or(f64::NAN),
            theta,
            lambda_sheet,
        }
    }
}

/// `(a + ip)ⁿ − (1 + iq)ⁿ`, the integral of `n zⁿ⁻¹ dz` along any graph from `(1,q)` to `(a,p)`.
pub fn class_integral(kd: &KahlerData) -> Complex64 {
    let n = kd.n as i32;
    Complex64::new(kd.a, kd.p).powi(n) - Complex64::new(1.0, kd.q).powi(n)
}

/// Principal argument of `(a + ip)ⁿ − (1 + iq)ⁿ`.
pub fn lifted_angle(kd: &KahlerData) -> Result<f64> {
    let z = class_integral(kd);
    if z.norm() <= 1e-300 {
        return Err(Error::DegenerateClass(
            "(a + ip)^n equals (1 + iq)^n; the target angle is undefined".into(),
        ));
    }
    Ok(z.arg())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Subvariety {
    X,
    E,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CentralCharge {
    pub subvariety: Subvariety,
    pub value: Complex64,
    pub argument: f64,
}

fn factorial(k: u32) -> f64 {
    (1..=k).map(f64::from).product()
}

/// Degree-`dim V` part of `−∫_V e^{−iω+α}` for `V ∈ {X, E}`.
pub fn central_charge(kd: &KahlerData, v: Subvariety) -> Result<CentralCharge> {
    let n = kd.n;
    let value = match v {
        Subvariety::X => {
            let top = Complex64::new(kd.p, -kd.a).powi(n as i32)
                - Complex64::new(kd.q, -1.0).powi(n as i32);
            -top / factorial(n)
        }
        Subvariety::E => -Complex64::new(kd.q, -1.0).powi(n as i32 - 1) / factorial(n - 1),
    };
    if value.norm() <= 1e-300 {
        return Err(Error::DegenerateClass(format!(
            "central charge of {v:?} vanishes"
        )));
    }
    Ok(CentralCharge {
        subvariety: v,
        value,
        argument: value.arg(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stability {
    Stable,
    Semistable,
    Unstable,
}

/// Serialized classification record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityRecord {
    pub n: u32,
    pub a: f64,
    pub p: f64,
    pub q: f64,
    #[serde(rename = "argZX")]
    pub arg_zx: f64,
    #[serde(rename = "argZE")]
    pub arg_ze: f64,
    pub class: Stability,
}

/// Compares `arg Z_E` against `arg Z_X` with tolerance `tol`.
pub fn check_stability(kd: &KahlerData, tol: f64) -> Result<StabilityRecord> {
    let zx = central_charge(kd, Subvariety::X)?;
    let ze = central_charge(kd, Subvariety::E)?;
    if !(zx.argument > 0.0 && zx.argument < std::f64::consts::PI) {
        return Err(Error::Regime(format!(
            "arg Z_X = {} lies outside (0, pi)",
            zx.argument
        )));
    }
    let diff = ze.argument - zx.argument;
    let class = if diff > tol {
        Stability::Stable
    } else if diff.abs() <= tol {
        Stability::Semistable
    } else {
        Stability::Unstable
    };
    Ok(StabilityRecord {
        n: kd.n,
        a: kd.a,
        p: kd.p,
        q: kd.q,
        arg_zx: zx.argument,
        arg_ze: ze.argument,
        class,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn eigenvalues_of_line_through_origin_coincide() {
        let c = 0.7;
        let ev = eigenvalues(2.0, 2.0 * c, c, 4);
        assert_eq!(ev.len(), 4);
        assert!(ev.iter().all(|&e| (e - c).abs() < 1e-15));
        assert_eq!(eigenvalues(1.5, 2.25, 3.0, 3), vec![1.5, 1.5, 3.0]);
    }

    #[test]
    fn phase_matches_arctan_sum() {
        let ev = eigenvalues(1.3, -0.4, 2.2, 5);
        let s: f64 = ev.iter().map(|e| e.atan()).sum();
        assert!((phase(1.3, -0.4, 2.2, 5) - s).abs() < 1e-15);
        assert_eq!(phase(1.0, 0.0, 0.0, 5), 0.0);
        let t80 = 80f64.to_radians().tan();
        let t15 = 15f64.to_radians().tan();
        let th = phase(1.0, t80, t15, 3);
        assert!((th - 175f64.to_radians()).abs() < 1e-12);
        assert!(th > FRAC_PI_2);
    }

    #[test]
    fn small_dimension_central_charges() {
        let kd = KahlerData::new(2, 3.0, 1.0, 0.0).unwrap();
        let ze = central_charge(&kd, Subvariety::E).unwrap();
        assert!((ze.value - Complex64::new(0.0, 1.0)).norm() < 1e-15);
        assert!((ze.argument - FRAC_PI_2).abs() < 1e-15);

        let kd = KahlerData::new(3, 3.0, 1.0, 1.0).unwrap();
        let ze = central_charge(&kd, Subvariety::E).unwrap();
        // (1 − i)² = −2i, so −(−2i)/2 = i
        assert!((ze.value - Complex64::new(0.0, 1.0)).norm() < 1e-15);

        let kd = KahlerData::new(1, 2.5, 4.0, -1.0).unwrap();
        let zx = central_charge(&kd, Subvariety::X).unwrap();
        let expect = -(Complex64::new(4.0, -2.5) - Complex64::new(-1.0, -1.0));
        assert!((zx.value - expect).norm() < 1e-14);
    }

    #[test]
    fn lifted_angle_low_dimension() {
        let kd = KahlerData::new(1, 3.0, 5.0, 1.0).unwrap();
        assert!((lifted_angle(&kd).unwrap() - (4.0f64).atan2(2.0)).abs() < 1e-15);
        let kd = KahlerData::new(2, 2.0, 0.0, 0.0).unwrap();
        assert_eq!(lifted_angle(&kd).unwrap(), 0.0);
    }

    #[test]
    fn degenerate_class_is_rejected() {
        // 2 + i = i·(1 − 2i), so both fourth powers agree
        let w = Complex64::new(1.0, -2.0) * Complex64::new(0.0, 1.0);
        let kd = KahlerData::new(4, w.re, w.im, -2.0).unwrap();
        assert!(matches!(lifted_angle(&kd), Err(Error::DegenerateClass(_))));
    }

    #[test]
    fn stability_regimes() {
        let kd = KahlerData::new(3, 2.0, 10.0, 0.1).unwrap();
        let rec = check_stability(&kd, STABILITY_TOL).unwrap();
        assert!(rec.arg_zx > 0.0 && rec.arg_zx < PI);
        let json = serde_json::to_string(&rec).unwrap();
        assert!(json.contains("\"argZX\""));
    }
}
