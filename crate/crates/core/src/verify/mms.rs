//! Manufactured solutions: closed-form fields plus the source terms that make
//! them exact solutions of the forced system
//!
//! ```text
//! ∂t b(u)          − ∇·(a(θ)∇u)                 = f_u
//! ∂t (b(u) w)      − ∇·(b D_w(u) ∇w + w a(θ)∇u) = f_w
//! ∂t ((b(u)+ϱ) θ)  − ∇·(λ(θ,u) ∇θ + θ a(θ)∇u)   = f_θ
//! ```

use std::f64::consts::PI;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::constitutive::CoefficientSet;
use crate::stepper::Forcing;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("unknown manufactured case `{0}` (known: const, linear, sinsin, poly)")]
pub struct UnknownCase(pub String);

/// Value and first/second derivatives of a scalar field at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet {
    pub v: f64,
    pub dt: f64,
    pub grad: [f64; 2],
    pub lap: f64,
}

impl Jet {
    fn dot(&self, other: &Jet) -> f64 {
        self.grad[0] * other.grad[0] + self.grad[1] * other.grad[1]
    }
}

/// Catalog of closed-form space–time profiles on `[0,lx]×[0,ly]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Profile {
    Constant(f64),
    /// `c + gx·x + gy·y`, steady.
    Linear { c: f64, gx: f64, gy: f64 },
    /// `c + amp·e^{−t}·sin(πx/lx)·sin(πy/ly)`
    SinSin { c: f64, amp: f64, lx: f64, ly: f64 },
    /// `c + amp·(1+t)·16·ξ(1−ξ)·η(1−η)` with `ξ = x/lx`, `η = y/ly`.
    Poly { c: f64, amp: f64, lx: f64, ly: f64 },
}

impl Profile {
    pub fn value(&self, x: f64, y: f64, t: f64) -> f64 {
        self.jet(x, y, t).v
    }

    pub fn jet(&self, x: f64, y: f64, t: f64) -> Jet {
        match *self {
            Profile::Constant(c) => Jet {
                v: c,
                dt: 0.0,
                grad: [0.0; 2],
                lap: 0.0,
            },
            Profile::Linear { c, gx, gy } => Jet {
                v: c + gx * x + gy * y,
                dt: 0.0,
                grad: [gx, gy],
                lap: 0.0,
            },
            Profile::SinSin { c, amp, lx, ly } => {
                let (kx, ky) = (PI / lx, PI / ly);
                let (sx, cx) = (kx * x).sin_cos();
                let (sy, cy) = (ky * y).sin_cos();
                let e = amp * (-t).exp();
                Jet {
                    v: c + e * sx * sy,
                    dt: -e * sx * sy,
                    grad: [e * kx * cx * sy, e * ky * sx * cy],
                    lap: -e * (kx * kx + ky * ky) * sx * sy,
                }
            }
            Profile::Poly { c, amp, lx, ly } => {
                let (xi, eta) = (x / lx, y / ly);
                let p = xi * (1.0 - xi);
                let q = eta * (1.0 - eta);
                let s = 16.0 * amp;
                let time = 1.0 + t;
                Jet {
                    v: c + s * time * p * q,
                    dt: s * p * q,
                    grad: [s * time * (1.0 - 2.0 * xi) / lx * q, s * time * p * (1.0 - 2.0 * eta) / ly],
                    lap: s * time * (-2.0 / (lx * lx) * q - 2.0 / (ly * ly) * p),
                }
            }
        }
    }
}

/// Field levels and amplitudes used by [`build_mms_case`]: `(base, amplitude)`
/// for `u`, `w`, `θ`.
pub const CATALOG_LEVELS: [(f64, f64); 3] = [(-1.0, 0.5), (0.5, 0.3), (0.5, 0.4)];

#[derive(Debug, Clone, PartialEq)]
pub struct ManufacturedCase {
    pub id: String,
    pub fields: [Profile; 3],
    pub coefficients: CoefficientSet,
}

impl fmt::Display for ManufacturedCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.id)
    }
}

/// Builds one of the catalog cases on `[0,lx]×[0,ly]`.
pub fn build_mms_case(id: &str, cs: CoefficientSet, lx: f64, ly: f64) -> Result<ManufacturedCase, UnknownCase> {
    let make = |&(c, amp): &(f64, f64)| -> Result<Profile, UnknownCase> {
        Ok(match id {
            "const" => Profile::Constant(c),
            "linear" => Profile::Linear {
                c,
                gx: amp / lx,
                gy: 0.5 * amp / ly,
            },
            "sinsin" => Profile::SinSin { c, amp, lx, ly },
            "poly" => Profile::Poly { c, amp, lx, ly },
            other => return Err(UnknownCase(other.to_string())),
        })
    };
    let fields = [
        make(&CATALOG_LEVELS[0])?,
        make(&CATALOG_LEVELS[1])?,
        make(&CATALOG_LEVELS[2])?,
    ];
    Ok(ManufacturedCase::new(id, fields, cs))
}

impl ManufacturedCase {
    pub fn new(id: impl Into<String>, fields: [Profile; 3], coefficients: CoefficientSet) -> Self {
        ManufacturedCase {
            id: id.into(),
            fields,
            coefficients,
        }
    }

    pub fn exact(&self, x: f64, y: f64, t: f64) -> [f64; 3] {
        self.fields.map(|p| p.value(x, y, t))
    }

    /// Sources obtained by applying the strong operators analytically.
    pub fn sources(&self, x: f64, y: f64, t: f64) -> [f64; 3] {
        let cs = &self.coefficients;
        let [u, w, th] = self.fields.map(|p| p.jet(x, y, t));
        let b = cs.b(u.v);
        let bp = cs.b_prime(u.v);
        let a = cs.a(th.v);
        let ap = cs.a_prime(th.v);
        let d = cs.dw(u.v);
        let dp = cs.dw_prime(u.v);
        let lam = cs.lambda(th.v, u.v);
        let (lt, lu) = cs.lambda_partials(th.v, u.v);

        // q = a(θ)∇u and its divergence
        let div_q = ap * th.dot(&u) + a * u.lap;
        let f_u = bp * u.dt - div_q;

        let dt_bw = bp * u.dt * w.v + b * w.dt;
        let div_diff_w = (bp * d + b * dp) * u.dot(&w) + b * d * w.lap;
        let div_conv_w = a * u.dot(&w) + w.v * div_q;
        let f_w = dt_bw - div_diff_w - div_conv_w;

        let dt_cth = bp * u.dt * th.v + (b + cs.rho) * th.dt;
        let div_diff_th = lt * th.dot(&th) + lu * u.dot(&th) + lam * th.lap;
        let div_conv_th = a * u.dot(&th) + th.v * div_q;
        let f_th = dt_cth - div_diff_th - div_conv_th;

        [f_u, f_w, f_th]
    }

    /// Strong operators applied by centred finite differences of the closed-form
    /// fields with step `h`, independently of [`Self::sources`].
    pub fn operators_fd(&self, x: f64, y: f64, t: f64, h: f64) -> [f64; 3] {
        let cs = &self.coefficients;
        let val = |x: f64, y: f64, t: f64| self.exact(x, y, t);
        let grad = |k: usize, x: f64, y: f64| -> [f64; 2] {
            [
                (val(x + h, y, t)[k] - val(x - h, y, t)[k]) / (2.0 * h),
                (val(x, y + h, t)[k] - val(x, y - h, t)[k]) / (2.0 * h),
            ]
        };
        // Total flux F_k(x,y) whose divergence enters equation k.
        let flux = |k: usize, x: f64, y: f64| -> [f64; 2] {
            let [u, w, th] = val(x, y, t);
            let gu = grad(0, x, y);
            let q = [cs.a(th) * gu[0], cs.a(th) * gu[1]];
            match k {
                0 => q,
                1 => {
                    let gw = grad(1, x, y);
                    let kappa = cs.b(u) * cs.dw(u);
                    [kappa * gw[0] + w * q[0], kappa * gw[1] + w * q[1]]
                }
                _ => {
                    let gt = grad(2, x, y);
                    let kappa = cs.lambda(th, u);
                    [kappa * gt[0] + th * q[0], kappa * gt[1] + th * q[1]]
                }
            }
        };
        let density = |k: usize, t: f64| -> f64 {
            let [u, w, th] = val(x, y, t);
            let b = cs.b(u);
            match k {
                0 => b,
                1 => b * w,
                _ => (b + cs.rho) * th,
            }
        };
        let mut out = [0.0; 3];
        for (k, o) in out.iter_mut().enumerate() {
            let dt = (density(k, t + h) - density(k, t - h)) / (2.0 * h);
            let div = (flux(k, x + h, y)[0] - flux(k, x - h, y)[0]) / (2.0 * h)
                + (flux(k, x, y + h)[1] - flux(k, x, y - h)[1]) / (2.0 * h);
            *o = dt - div;
        }
        out
    }

    /// Largest `|analytic source − finite-difference operator| / (1 + |source|)`
    /// over `samples` random points of `[0,lx]×[0,ly]×[0,t_end]`, per field.
    pub fn source_residual(&self, samples: usize, lx: f64, ly: f64, t_end: f64, h: f64, seed: u64) -> [f64; 3] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = [0.0f64; 3];
        for _ in 0..samples {
            let x = rng.gen::<f64>() * lx;
            let y = rng.gen::<f64>() * ly;
            let t = rng.gen::<f64>() * t_end;
            let s = self.sources(x, y, t);
            let fd = self.operators_fd(x, y, t, h);
            for k in 0..3 {
                worst[k] = worst[k].max((s[k] - fd[k]).abs() / (1.0 + s[k].abs()));
            }
        }
        worst
    }
}

impl Forcing for ManufacturedCase {
    fn source(&self, x: f64, y: f64, t: f64) -> [f64; 3] {
        self.sources(x, y, t)
    }

    fn dirichlet(&self, x: f64, y: f64, t: f64) -> Option<[f64; 3]> {
        Some(self.exact(x, y, t))
    }
}
