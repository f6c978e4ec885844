//! Closed-form singular solutions of the Stokes problem on the sector-prism
//! domain, their analytic gradients, and the data functions of the two
//! benchmark cases.
//!
//! The velocity is `O(r^lambda)` near the concave edge, where the singular
//! exponent `lambda` is the smallest positive root of
//! `sin(lambda * omega) = -lambda * sin(omega)` in `(1/2, pi/omega)`.

use nalgebra::{Matrix3, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Singular exponent of the edge singularity at opening angle `omega`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SingularExponent {
    pub lambda: f64,
    pub omega: f64,
}

impl SingularExponent {
    /// Defining residual `sin(lambda * omega) + lambda * sin(omega)`.
    pub fn residual(&self) -> f64 {
        (self.lambda * self.omega).sin() + self.lambda * self.omega.sin()
    }
}

/// Finds the smallest root of `sin(lambda * omega) + lambda * sin(omega) = 0`
/// in `(1/2, pi/omega)` by a scan for the first sign change followed by
/// bisection and a Newton polish.
pub fn solve_lambda(omega: f64) -> Result<SingularExponent> {
    let pi = std::f64::consts::PI;
    if !(omega > pi && omega < TWO_PI) {
        return Err(Error::InvalidConfig(format!(
            "omega = {} not in (pi, 2*pi)",
            omega
        )));
    }
    let g = |lam: f64| (lam * omega).sin() + lam * omega.sin();
    let lo0 = 0.5;
    let hi0 = pi / omega;

    // First sign change on a fine scan locates the smallest root.
    let n = 4000;
    let step = (hi0 - lo0) / n as f64;
    let mut lo = lo0;
    let mut glo = g(lo);
    let mut bracket = None;
    for i in 1..=n {
        let hi = lo0 + i as f64 * step;
        let ghi = g(hi);
        if glo == 0.0 {
            bracket = Some((lo, lo));
            break;
        }
        if glo * ghi < 0.0 {
            bracket = Some((lo, hi));
            break;
        }
        lo = hi;
        glo = ghi;
    }
    let (mut a, mut b) = bracket.ok_or_else(|| {
        Error::RootFindingFailed(format!(
            "no sign change of the exponent equation for omega = {}",
            omega
        ))
    })?;

    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid == a || mid == b {
            break;
        }
        if g(a) * g(mid) <= 0.0 {
            b = mid;
        } else {
            a = mid;
        }
    }
    let mut lambda = 0.5 * (a + b);
    // Newton polish; the derivative is bounded away from zero at a simple root.
    for _ in 0..4 {
        let d = omega * (lambda * omega).cos() + omega.sin();
        if d.abs() > 1e-14 {
            lambda -= g(lambda) / d;
        }
    }

    let exponent = SingularExponent { lambda, omega };
    if exponent.residual().abs() > 1e-12 {
        return Err(Error::RootFindingFailed(format!(
            "residual {} above 1e-12",
            exponent.residual()
        )));
    }
    if !(lambda > 0.5 && lambda < pi / omega) {
        return Err(Error::RootFindingFailed(format!(
            "root {} outside (1/2, pi/omega)",
            lambda
        )));
    }
    Ok(exponent)
}

/// The two benchmark problems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExampleKind {
    /// Fixed exact solution; the data picks up the viscosity.
    Example1,
    /// Fixed data `f0 + grad(phi_i)`; the velocity scales with `1/nu`.
    Example2,
}

/// Gradient-field perturbation of the second example.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PhiVariant {
    /// `phi_1 = 0`.
    Phi1,
    /// `phi_2 = 10 r^lambda Phi(phi)`.
    Phi2,
}

/// Exact solution, gradient, pressure and data at one point.
#[derive(Debug, Clone)]
pub struct FieldSample {
    pub velocity: Vector3<f64>,
    /// Jacobian, `grad[(k, l)] = d u_k / d x_l`.
    pub velocity_gradient: Matrix3<f64>,
    pub pressure: f64,
    pub data_f: Vector3<f64>,
}

/// One fully parameterised benchmark case.
#[derive(Debug, Clone)]
pub struct ExactCase {
    pub kind: ExampleKind,
    pub nu: f64,
    pub exponent: SingularExponent,
    pub phi_variant: PhiVariant,
    flip_pressure_angular: bool,
}

/// Angular factors of the singular solution and their derivatives at one angle.
struct Angular {
    a1: f64,
    a1_d: f64,
    a2: f64,
    a2_d: f64,
    phi_big: f64,
    phi_big_d: f64,
}

impl ExactCase {
    pub fn example1(nu: f64, omega: f64) -> Result<Self> {
        Self::new(ExampleKind::Example1, nu, omega, PhiVariant::Phi1)
    }

    pub fn example2(nu: f64, omega: f64, phi_variant: PhiVariant) -> Result<Self> {
        Self::new(ExampleKind::Example2, nu, omega, phi_variant)
    }

    fn new(kind: ExampleKind, nu: f64, omega: f64, phi_variant: PhiVariant) -> Result<Self> {
        if !(nu > 0.0) {
            return Err(Error::InvalidConfig(format!("nu = {} must be positive", nu)));
        }
        Ok(Self {
            kind,
            nu,
            exponent: solve_lambda(omega)?,
            phi_variant,
            flip_pressure_angular: false,
        })
    }

    /// Test hook: negates the angular factor of the pressure (and of the data
    /// derived from it), breaking momentum consistency on purpose.
    #[doc(hidden)]
    pub fn with_flipped_pressure_angular(mut self) -> Self {
        self.flip_pressure_angular = true;
        self
    }

    /// Cylindrical coordinates of a point, rejecting the singular edge `r = 0`
    /// and angles outside the sector (up to roundoff slack).
    fn cylindrical(&self, p: &Point3<f64>) -> Result<(f64, f64, f64)> {
        let r = p.x.hypot(p.y);
        if r == 0.0 {
            return Err(Error::EvaluationOutsideDomain(
                "evaluation exactly on the singular edge r = 0".into(),
            ));
        }
        let omega = self.exponent.omega;
        let mut phi = p.y.atan2(p.x);
        if phi < 0.0 {
            phi += TWO_PI;
        }
        if phi > omega {
            if phi - omega <= 1e-12 {
                phi = omega;
            } else if TWO_PI - phi <= 1e-12 {
                phi = 0.0;
            } else {
                return Err(Error::EvaluationOutsideDomain(format!(
                    "phi = {} outside [0, {}]",
                    phi, omega
                )));
            }
        }
        Ok((r, phi, p.z))
    }

    fn angular(&self, phi: f64) -> Angular {
        let lam = self.exponent.lambda;
        let omega = self.exponent.omega;
        let psi1 = lam * omega + (1.0 - lam) * phi;
        let psi2 = (lam - 1.0) * phi;

        let a1 = -lam * phi.sin() * psi1.cos()
            + lam * (omega - phi).sin() * psi2.cos()
            + (lam * (omega - phi)).sin();
        let a1_d = -lam * phi.cos() * psi1.cos() + lam * (1.0 - lam) * phi.sin() * psi1.sin()
            - lam * (omega - phi).cos() * psi2.cos()
            - lam * (lam - 1.0) * (omega - phi).sin() * psi2.sin()
            - lam * (lam * (omega - phi)).cos();

        let a2 = (lam * phi).sin()
            - lam * phi.sin() * psi1.sin()
            - lam * (omega - phi).sin() * psi2.sin();
        let a2_d = lam * (lam * phi).cos()
            - lam * phi.cos() * psi1.sin()
            - lam * (1.0 - lam) * phi.sin() * psi1.cos()
            + lam * (omega - phi).cos() * psi2.sin()
            - lam * (lam - 1.0) * (omega - phi).sin() * psi2.cos();

        let sign = if self.flip_pressure_angular { -1.0 } else { 1.0 };
        let phi_big = sign
            * 2.0
            * lam
            * ((omega + (lam - 1.0) * phi).sin() - (lam * omega - (lam - 1.0) * phi).sin());
        let phi_big_d = sign
            * 2.0
            * lam
            * (lam - 1.0)
            * ((omega + (lam - 1.0) * phi).cos() + (lam * omega - (lam - 1.0) * phi).cos());

        Angular {
            a1,
            a1_d,
            a2,
            a2_d,
            phi_big,
            phi_big_d,
        }
    }

    /// Velocity of the first example (the fixed singular field); the second
    /// example scales it by `1/nu`.
    fn base_velocity(&self, r: f64, phi: f64, z: f64) -> Vector3<f64> {
        let lam = self.exponent.lambda;
        let beta = std::f64::consts::PI / self.exponent.omega;
        let ang = self.angular(phi);
        Vector3::new(
            z * r.powf(lam) * ang.a1,
            z * r.powf(lam) * ang.a2,
            r.powf(beta) * (beta * phi).sin(),
        )
    }

    fn base_gradient(&self, r: f64, phi: f64, z: f64) -> Matrix3<f64> {
        let lam = self.exponent.lambda;
        let beta = std::f64::consts::PI / self.exponent.omega;
        let ang = self.angular(phi);
        let (sin_p, cos_p) = phi.sin_cos();
        let r_lam1 = r.powf(lam - 1.0);

        // d/dx [r^a g(phi)] = r^(a-1) (a g cos - g' sin), d/dy analogous.
        let row = |g: f64, g_d: f64| {
            (
                z * r_lam1 * (lam * g * cos_p - g_d * sin_p),
                z * r_lam1 * (lam * g * sin_p + g_d * cos_p),
                r.powf(lam) * g,
            )
        };
        let (u1x, u1y, u1z) = row(ang.a1, ang.a1_d);
        let (u2x, u2y, u2z) = row(ang.a2, ang.a2_d);
        let r_b1 = beta * r.powf(beta - 1.0);
        Matrix3::new(
            u1x,
            u1y,
            u1z,
            u2x,
            u2y,
            u2z,
            r_b1 * ((beta - 1.0) * phi).sin(),
            r_b1 * ((beta - 1.0) * phi).cos(),
            0.0,
        )
    }

    pub fn velocity(&self, p: &Point3<f64>) -> Result<Vector3<f64>> {
        let (r, phi, z) = self.cylindrical(p)?;
        let u = self.base_velocity(r, phi, z);
        Ok(match self.kind {
            ExampleKind::Example1 => u,
            ExampleKind::Example2 => u / self.nu,
        })
    }

    pub fn velocity_gradient(&self, p: &Point3<f64>) -> Result<Matrix3<f64>> {
        let (r, phi, z) = self.cylindrical(p)?;
        let g = self.base_gradient(r, phi, z);
        Ok(match self.kind {
            ExampleKind::Example1 => g,
            ExampleKind::Example2 => g / self.nu,
        })
    }

    pub fn pressure(&self, p: &Point3<f64>) -> Result<f64> {
        let (r, phi, z) = self.cylindrical(p)?;
        let lam = self.exponent.lambda;
        let ang = self.angular(phi);
        let base = z * r.powf(lam - 1.0) * ang.phi_big;
        Ok(match self.kind {
            ExampleKind::Example1 => base,
            ExampleKind::Example2 => base + self.phi_value_at(r, phi),
        })
    }

    /// Momentum data `f = -nu Laplace(u) + grad(p)`.
    pub fn data_f(&self, p: &Point3<f64>) -> Result<Vector3<f64>> {
        let (r, phi, z) = self.cylindrical(p)?;
        let lam = self.exponent.lambda;
        let omega = self.exponent.omega;
        let ang = self.angular(phi);
        let f3 = r.powf(lam - 1.0) * ang.phi_big;
        match self.kind {
            ExampleKind::Example1 => {
                let sign = if self.flip_pressure_angular { -1.0 } else { 1.0 };
                let factor = 2.0 * lam * (lam - 1.0) * z * r.powf(lam - 2.0);
                let s1 = (lam * omega - (lam - 2.0) * phi).sin() - (omega + (lam - 2.0) * phi).sin();
                let s2 = (lam * omega - (lam - 2.0) * phi).cos() + (omega + (lam - 2.0) * phi).cos();
                Ok(Vector3::new(
                    sign * (self.nu - 1.0) * factor * s1,
                    sign * (1.0 - self.nu) * factor * s2,
                    f3,
                ))
            }
            ExampleKind::Example2 => Ok(Vector3::new(0.0, 0.0, f3) + self.phi_gradient_at(r, phi)),
        }
    }

    fn phi_value_at(&self, r: f64, phi: f64) -> f64 {
        match self.phi_variant {
            PhiVariant::Phi1 => 0.0,
            PhiVariant::Phi2 => 10.0 * r.powf(self.exponent.lambda) * self.angular(phi).phi_big,
        }
    }

    fn phi_gradient_at(&self, r: f64, phi: f64) -> Vector3<f64> {
        match self.phi_variant {
            PhiVariant::Phi1 => Vector3::zeros(),
            PhiVariant::Phi2 => {
                let lam = self.exponent.lambda;
                let ang = self.angular(phi);
                let (sin_p, cos_p) = phi.sin_cos();
                let c = 10.0 * r.powf(lam - 1.0);
                Vector3::new(
                    c * (lam * ang.phi_big * cos_p - ang.phi_big_d * sin_p),
                    c * (lam * ang.phi_big * sin_p + ang.phi_big_d * cos_p),
                    0.0,
                )
            }
        }
    }

    /// Value of the perturbation potential `phi_i`.
    pub fn phi_value(&self, p: &Point3<f64>) -> Result<f64> {
        let (r, phi, _) = self.cylindrical(p)?;
        Ok(self.phi_value_at(r, phi))
    }

    /// Cartesian gradient of the perturbation potential `phi_i`; zero for `phi_1`.
    pub fn phi_gradient(&self, p: &Point3<f64>) -> Result<Vector3<f64>> {
        let (r, phi, _) = self.cylindrical(p)?;
        Ok(self.phi_gradient_at(r, phi))
    }

    pub fn eval(&self, p: &Point3<f64>) -> Result<FieldSample> {
        Ok(FieldSample {
            velocity: self.velocity(p)?,
            velocity_gradient: self.velocity_gradient(p)?,
            pressure: self.pressure(p)?,
            data_f: self.data_f(p)?,
        })
    }
}
