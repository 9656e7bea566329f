//! Constitutive laws: the moisture-content function `b`, the mobility `a`,
//! the solute dispersion `D_w`, the thermal conductivity `λ`, and the
//! Legendre-type energy density `B` built from `b`.
//!
//! Every coefficient is drawn from a small catalog of parametrised families
//! ([`Family`]). A [`CoefficientSet`] binds one family per coefficient plus the
//! constants `b2` (upper bound of `b`) and `rho` (constant heat capacity).
//! Construction only parses; [`validate_assumptions`] checks positivity,
//! boundedness and monotonicity on a sampled probe interval.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConstitutiveError {
    #[error("unknown family `{0}`")]
    UnknownFamily(String),
    #[error("family `{family}`: missing parameter `{param}`")]
    MissingParameter { family: String, param: String },
    #[error("family `{family}`: unknown parameter `{param}`")]
    UnknownParameter { family: String, param: String },
    #[error("family `{family}`: parameter `{param}` = `{value}` is not a finite number")]
    BadParameter {
        family: String,
        param: String,
        value: String,
    },
    #[error("family `{family}`: {reason}")]
    InvalidParameter { family: String, reason: String },
    #[error("missing coefficient `{0}`")]
    MissingCoefficient(String),
    #[error("{name} must be positive, got {value}")]
    NonPositiveConstant { name: &'static str, value: f64 },
    #[error("adaptive quadrature did not converge on [{lo}, {hi}]")]
    QuadratureDiverged { lo: f64, hi: f64 },
}

/// A parametrised scalar law `f: ℝ → ℝ` (or, for [`Family::Affine`] used as
/// `λ`, an affine law in two arguments).
#[derive(Debug, Clone, PartialEq)]
pub enum Family {
    /// `f(z) = value`
    Constant { value: f64 },
    /// `f(z) = clamp(offset + slope·z, lo, hi)`; the derivative is reported as
    /// zero at the two kinks.
    LinearClamped {
        slope: f64,
        offset: f64,
        lo: f64,
        hi: f64,
    },
    /// `f(z) = lo + (hi − lo) / (1 + exp(−k (z − z0)))`
    Logistic { lo: f64, hi: f64, k: f64, z0: f64 },
    /// van Genuchten-style rational decay,
    /// `f(z) = kmin + (kmax − kmin) / (1 + (alpha |z|)^n)` with `n > 1`.
    VanGenuchten {
        kmin: f64,
        kmax: f64,
        alpha: f64,
        n: f64,
    },
    /// `f(θ, u) = c0 + ct·θ + cu·u`. As a one-argument law the `u` term is dropped.
    Affine { c0: f64, ct: f64, cu: f64 },
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Family {
    pub fn tag(&self) -> &'static str {
        match self {
            Family::Constant { .. } => "constant",
            Family::LinearClamped { .. } => "linear-clamped",
            Family::Logistic { .. } => "logistic",
            Family::VanGenuchten { .. } => "vg",
            Family::Affine { .. } => "affine",
        }
    }

    /// Parses `tag key=value key=value ...`.
    pub fn parse(text: &str) -> Result<Family, ConstitutiveError> {
        let mut words = text.split_whitespace();
        let tag = words.next().unwrap_or("");
        let mut params = BTreeMap::new();
        for word in words {
            let (k, v) = word.split_once('=').ok_or_else(|| ConstitutiveError::BadParameter {
                family: tag.to_string(),
                param: word.to_string(),
                value: String::new(),
            })?;
            let value: f64 = v.parse().ok().filter(|x: &f64| x.is_finite()).ok_or_else(|| {
                ConstitutiveError::BadParameter {
                    family: tag.to_string(),
                    param: k.to_string(),
                    value: v.to_string(),
                }
            })?;
            params.insert(k.to_string(), value);
        }
        let mut p = Params { tag, params };
        let family = match tag {
            "constant" => Family::Constant {
                value: p.required("value")?,
            },
            "linear-clamped" => {
                let fam = Family::LinearClamped {
                    slope: p.required("slope")?,
                    offset: p.optional("offset", 0.0),
                    lo: p.required("lo")?,
                    hi: p.required("hi")?,
                };
                if let Family::LinearClamped { lo, hi, .. } = fam {
                    if lo > hi {
                        return Err(p.invalid("lo must not exceed hi"));
                    }
                }
                fam
            }
            "logistic" => Family::Logistic {
                lo: p.required("lo")?,
                hi: p.required("hi")?,
                k: {
                    let k = p.optional("k", 1.0);
                    if k <= 0.0 {
                        return Err(p.invalid("k must be positive"));
                    }
                    k
                },
                z0: p.optional("z0", 0.0),
            },
            "vg" => {
                let n = p.required("n")?;
                if n <= 1.0 {
                    return Err(p.invalid("n must exceed 1 (the law must be C¹)"));
                }
                let alpha = p.required("alpha")?;
                if alpha <= 0.0 {
                    return Err(p.invalid("alpha must be positive"));
                }
                Family::VanGenuchten {
                    kmin: p.optional("kmin", 0.0),
                    kmax: p.required("kmax")?,
                    alpha,
                    n,
                }
            }
            "affine" => Family::Affine {
                c0: p.required("c0")?,
                ct: p.optional("ct", 0.0),
                cu: p.optional("cu", 0.0),
            },
            other => return Err(ConstitutiveError::UnknownFamily(other.to_string())),
        };
        p.finish()?;
        Ok(family)
    }

    pub fn eval(&self, z: f64) -> f64 {
        match *self {
            Family::Constant { value } => value,
            Family::LinearClamped {
                slope,
                offset,
                lo,
                hi,
            } => (offset + slope * z).clamp(lo, hi),
            Family::Logistic { lo, hi, k, z0 } => lo + (hi - lo) * sigmoid(k * (z - z0)),
            Family::VanGenuchten {
                kmin,
                kmax,
                alpha,
                n,
            } => kmin + (kmax - kmin) / (1.0 + (alpha * z.abs()).powf(n)),
            Family::Affine { c0, ct, .. } => c0 + ct * z,
        }
    }

    pub fn derivative(&self, z: f64) -> f64 {
        match *self {
            Family::Constant { .. } => 0.0,
            Family::LinearClamped {
                slope,
                offset,
                lo,
                hi,
            } => {
                let v = offset + slope * z;
                if v > lo && v < hi {
                    slope
                } else {
                    0.0
                }
            }
            Family::Logistic { lo, hi, k, z0 } => {
                let s = sigmoid(k * (z - z0));
                let c = sigmoid(-k * (z - z0));
                (hi - lo) * k * s * c
            }
            Family::VanGenuchten {
                kmin,
                kmax,
                alpha,
                n,
            } => {
                if z == 0.0 {
                    return 0.0;
                }
                let r = (alpha * z.abs()).powf(n);
                let denom = 1.0 + r;
                -(kmax - kmin) * n * r / z / (denom * denom)
            }
            Family::Affine { ct, .. } => ct,
        }
    }

    /// `f(z2) − f(z1)`, evaluated without cancellation in saturated tails.
    pub fn increment(&self, z1: f64, z2: f64) -> f64 {
        match *self {
            Family::Logistic { lo, hi, k, z0 } => {
                let x1 = k * (z1 - z0);
                let x2 = k * (z2 - z0);
                let ds = if x1 >= 0.0 && x2 >= 0.0 {
                    sigmoid(-x1) - sigmoid(-x2)
                } else {
                    sigmoid(x2) - sigmoid(x1)
                };
                (hi - lo) * ds
            }
            _ => self.eval(z2) - self.eval(z1),
        }
    }

    /// Closed-form `∫_lo^hi f`, when the family has one.
    pub fn integral(&self, lo: f64, hi: f64) -> Option<f64> {
        match *self {
            Family::Constant { value } => Some(value * (hi - lo)),
            Family::LinearClamped {
                slope,
                offset,
                lo: vmin,
                hi: vmax,
            } => {
                if slope == 0.0 {
                    return Some(offset.clamp(vmin, vmax) * (hi - lo));
                }
                // f is linear between its two kinks and constant outside.
                let (k1, k2) = {
                    let a = (vmin - offset) / slope;
                    let b = (vmax - offset) / slope;
                    (a.min(b), a.max(b))
                };
                let (sign, a, b) = if lo <= hi { (1.0, lo, hi) } else { (-1.0, hi, lo) };
                let mut cuts = vec![a];
                for k in [k1, k2] {
                    if k > a && k < b {
                        cuts.push(k);
                    }
                }
                cuts.push(b);
                let total: f64 = cuts
                    .windows(2)
                    .map(|w| 0.5 * (self.eval(w[0]) + self.eval(w[1])) * (w[1] - w[0]))
                    .sum();
                Some(sign * total)
            }
            Family::Logistic { lo: l, hi: h, k, z0 } => Some(
                l * (hi - lo) + (h - l) / k * (softplus(k * (hi - z0)) - softplus(k * (lo - z0))),
            ),
            Family::Affine { c0, ct, .. } => Some(c0 * (hi - lo) + 0.5 * ct * (hi * hi - lo * lo)),
            Family::VanGenuchten { .. } => None,
        }
    }

    /// Largest value of the law over ℝ, when finite.
    pub fn supremum(&self) -> Option<f64> {
        match *self {
            Family::Constant { value } => Some(value),
            Family::LinearClamped { slope, offset, lo, hi } => {
                if slope == 0.0 {
                    Some(offset.clamp(lo, hi))
                } else {
                    Some(hi)
                }
            }
            Family::Logistic { lo, hi, .. } => Some(lo.max(hi)),
            Family::VanGenuchten { kmin, kmax, .. } => Some(kmin.max(kmax)),
            Family::Affine { ct, cu, c0 } => (ct == 0.0 && cu == 0.0).then_some(c0),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Family::Constant { value } => write!(f, "constant value={value}"),
            Family::LinearClamped {
                slope,
                offset,
                lo,
                hi,
            } => write!(f, "linear-clamped slope={slope} offset={offset} lo={lo} hi={hi}"),
            Family::Logistic { lo, hi, k, z0 } => write!(f, "logistic lo={lo} hi={hi} k={k} z0={z0}"),
            Family::VanGenuchten {
                kmin,
                kmax,
                alpha,
                n,
            } => write!(f, "vg kmin={kmin} kmax={kmax} alpha={alpha} n={n}"),
            Family::Affine { c0, ct, cu } => write!(f, "affine c0={c0} ct={ct} cu={cu}"),
        }
    }
}

struct Params<'a> {
    tag: &'a str,
    params: BTreeMap<String, f64>,
}

impl Params<'_> {
    fn required(&mut self, name: &str) -> Result<f64, ConstitutiveError> {
        self.params
            .remove(name)
            .ok_or_else(|| ConstitutiveError::MissingParameter {
                family: self.tag.to_string(),
                param: name.to_string(),
            })
    }

    fn optional(&mut self, name: &str, default: f64) -> f64 {
        self.params.remove(name).unwrap_or(default)
    }

    fn invalid(&self, reason: &str) -> ConstitutiveError {
        ConstitutiveError::InvalidParameter {
            family: self.tag.to_string(),
            reason: reason.to_string(),
        }
    }

    fn finish(self) -> Result<(), ConstitutiveError> {
        match self.params.into_keys().next() {
            Some(param) => Err(ConstitutiveError::UnknownParameter {
                family: self.tag.to_string(),
                param,
            }),
            None => Ok(()),
        }
    }
}

/// The full set of constitutive laws of the coupled system. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSet {
    pub b: Family,
    pub a: Family,
    pub dw: Family,
    pub lambda: Family,
    pub b2: f64,
    pub rho: f64,
}

impl CoefficientSet {
    /// Builds a set directly. `b2` defaults to the supremum of `b`.
    pub fn new(
        b: Family,
        a: Family,
        dw: Family,
        lambda: Family,
        b2: Option<f64>,
        rho: f64,
    ) -> Result<Self, ConstitutiveError> {
        let b2 = match b2 {
            Some(v) => v,
            None => b.supremum().unwrap_or(f64::INFINITY),
        };
        if !(b2 > 0.0) {
            return Err(ConstitutiveError::NonPositiveConstant { name: "b2", value: b2 });
        }
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(ConstitutiveError::NonPositiveConstant { name: "rho", value: rho });
        }
        Ok(CoefficientSet {
            b,
            a,
            dw,
            lambda,
            b2,
            rho,
        })
    }

    /// Builds a set from `key → "family params"` pairs with keys `b`, `a`,
    /// `dw`, `lambda`, `rho` and optionally `b2`.
    pub fn from_section<'a, I>(entries: I) -> Result<Self, ConstitutiveError>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let map: BTreeMap<&str, &str> = entries.into_iter().collect();
        let family = |key: &str| -> Result<Family, ConstitutiveError> {
            let text = map
                .get(key)
                .ok_or_else(|| ConstitutiveError::MissingCoefficient(key.to_string()))?;
            Family::parse(text)
        };
        let scalar = |key: &'static str| -> Result<Option<f64>, ConstitutiveError> {
            match map.get(key) {
                None => Ok(None),
                Some(text) => text
                    .trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .map(Some)
                    .ok_or_else(|| ConstitutiveError::BadParameter {
                        family: key.to_string(),
                        param: key.to_string(),
                        value: text.to_string(),
                    }),
            }
        };
        let rho = scalar("rho")?.ok_or_else(|| ConstitutiveError::MissingCoefficient("rho".into()))?;
        CoefficientSet::new(
            family("b")?,
            family("a")?,
            family("dw")?,
            family("lambda")?,
            scalar("b2")?,
            rho,
        )
    }

    #[inline]
    pub fn b(&self, z: f64) -> f64 {
        self.b.eval(z)
    }

    /// `b(z2) − b(z1)` without cancellation in saturated tails.
    pub fn b_increment(&self, z1: f64, z2: f64) -> f64 {
        self.b.increment(z1, z2)
    }

    #[inline]
    pub fn b_prime(&self, z: f64) -> f64 {
        self.b.derivative(z)
    }

    /// Hydraulic mobility, a function of temperature.
    #[inline]
    pub fn a(&self, theta: f64) -> f64 {
        self.a.eval(theta)
    }

    #[inline]
    pub fn a_prime(&self, theta: f64) -> f64 {
        self.a.derivative(theta)
    }

    #[inline]
    pub fn dw(&self, u: f64) -> f64 {
        self.dw.eval(u)
    }

    #[inline]
    pub fn dw_prime(&self, u: f64) -> f64 {
        self.dw.derivative(u)
    }

    #[inline]
    pub fn lambda(&self, theta: f64, u: f64) -> f64 {
        match self.lambda {
            Family::Affine { c0, ct, cu } => c0 + ct * theta + cu * u,
            ref f => f.eval(theta),
        }
    }

    /// Partial derivatives `(∂λ/∂θ, ∂λ/∂u)`.
    pub fn lambda_partials(&self, theta: f64, _u: f64) -> (f64, f64) {
        match self.lambda {
            Family::Affine { ct, cu, .. } => (ct, cu),
            ref f => (f.derivative(theta), 0.0),
        }
    }

    /// `∫_lo^hi b`, closed form when available, adaptive quadrature otherwise.
    pub fn b_integral(&self, lo: f64, hi: f64) -> Result<f64, ConstitutiveError> {
        match self.b.integral(lo, hi) {
            Some(v) => Ok(v),
            None => adaptive_quadrature(|s| self.b(s), lo, hi, 1e-10),
        }
    }

    /// The Legendre transform `B(z) = ∫_0^z (b(z) − b(s)) ds`.
    pub fn legendre(&self, z: f64) -> Result<f64, ConstitutiveError> {
        self.legendre_centered(z, 0.0)
    }

    /// `B_g(z) = ∫_g^z (b(z) − b(s)) ds`, the energy density re-centred at the
    /// Dirichlet level `g`. Nonnegative for nondecreasing `b`.
    pub fn legendre_centered(&self, z: f64, g: f64) -> Result<f64, ConstitutiveError> {
        if z == g {
            return Ok(0.0);
        }
        match self.b.integral(g, z) {
            Some(int) => Ok(self.b(z) * (z - g) - int),
            None => legendre_by_quadrature(self, z, g),
        }
    }
}

/// `B_g(z)` by adaptive Gauss–Kronrod quadrature of `b(z) − b(s)` over `[g, z]`.
pub fn legendre_by_quadrature(cs: &CoefficientSet, z: f64, g: f64) -> Result<f64, ConstitutiveError> {
    let bz = cs.b(z);
    adaptive_quadrature(|s| bz - cs.b(s), g, z, 1e-10)
}

const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const GK_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
// Gauss weights for the 7-point rule, at Kronrod nodes 1, 3, 5, 7.
const G7_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = GK_WEIGHTS[7] * fc;
    let mut gauss = G7_WEIGHTS[3] * fc;
    for i in 0..7 {
        let dx = h * GK_NODES[i];
        let pair = f(c - dx) + f(c + dx);
        kronrod += GK_WEIGHTS[i] * pair;
        if i % 2 == 1 {
            gauss += G7_WEIGHTS[i / 2] * pair;
        }
    }
    (kronrod * h, (kronrod - gauss).abs() * h.abs())
}

/// Adaptive 7/15-point Gauss–Kronrod integration of `f` over `[a, b]` to the
/// given relative tolerance, bisecting at most 40 levels deep.
pub fn adaptive_quadrature<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    rel_tol: f64,
) -> Result<f64, ConstitutiveError> {
    const MAX_DEPTH: u32 = 40;
    if a == b {
        return Ok(0.0);
    }
    let (whole, _) = gk15(&f, a, b);
    let scale = whole.abs().max(f64::MIN_POSITIVE);
    let width = (b - a).abs();
    let mut total = 0.0;
    let mut stack = vec![(a, b, 0u32)];
    while let Some((lo, hi, depth)) = stack.pop() {
        let (value, err) = gk15(&f, lo, hi);
        let share = rel_tol * scale * (hi - lo).abs() / width;
        if err <= share.max(4.0 * f64::EPSILON * value.abs()) {
            total += value;
        } else if depth >= MAX_DEPTH || !value.is_finite() {
            return Err(ConstitutiveError::QuadratureDiverged { lo: a, hi: b });
        } else {
            let mid = 0.5 * (lo + hi);
            stack.push((lo, mid, depth + 1));
            stack.push((mid, hi, depth + 1));
        }
    }
    Ok(total)
}

/// Sampling domain for [`validate_assumptions`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probe {
    pub lo: f64,
    pub hi: f64,
    pub samples: usize,
}

impl Probe {
    pub fn new(lo: f64, hi: f64, samples: usize) -> Self {
        Probe { lo, hi, samples }
    }

    fn points(&self) -> impl Iterator<Item = f64> + '_ {
        let n = self.samples.max(2);
        let step = (self.hi - self.lo) / (n - 1) as f64;
        (0..n).map(move |i| if i + 1 == n { self.hi } else { self.lo + step * i as f64 })
    }
}

impl Default for Probe {
    fn default() -> Self {
        Probe::new(-50.0, 50.0, 10_000)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClauseResult {
    /// Group the clause belongs to: `storage`, `mobility`, `energy` or `data`.
    pub group: &'static str,
    pub name: &'static str,
    pub passed: bool,
    /// First offending sample, when the clause failed.
    pub witness: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub clauses: Vec<ClauseResult>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.clauses.iter().all(|c| c.passed)
    }

    pub fn failed_clauses(&self) -> impl Iterator<Item = &ClauseResult> {
        self.clauses.iter().filter(|c| !c.passed)
    }

    pub fn clause(&self, name: &str) -> Option<&ClauseResult> {
        self.clauses.iter().find(|c| c.name == name)
    }

    /// Appends the initial-data clause: every nodal value finite.
    pub fn check_initial_data(&mut self, fields: &[(&str, &[f64])]) {
        let witness = fields.iter().find_map(|(name, values)| {
            values
                .iter()
                .position(|v| !v.is_finite())
                .map(|i| format!("{name}[{i}] = {}", values[i]))
        });
        self.clauses.push(ClauseResult {
            group: "data",
            name: "initial-data-bounded",
            passed: witness.is_none(),
            witness,
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.clauses {
            let status = if c.passed { "PASS" } else { "FAIL" };
            write!(f, "[{status}] {:<8} {}", c.group, c.name)?;
            if let Some(w) = &c.witness {
                write!(f, "  ({w})")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

fn clause(
    group: &'static str,
    name: &'static str,
    witness: Option<String>,
) -> ClauseResult {
    ClauseResult {
        group,
        name,
        passed: witness.is_none(),
        witness,
    }
}

/// Checks the structural assumptions on the coefficient laws over a sampled
/// probe interval. Failures are report entries, never errors.
pub fn validate_assumptions(cs: &CoefficientSet, probe: Probe) -> ValidationReport {
    let zs: Vec<f64> = probe.points().collect();
    let mut report = ValidationReport::default();

    let first = |pred: &dyn Fn(f64) -> Option<String>| zs.iter().find_map(|&z| pred(z));

    report.clauses.push(clause(
        "storage",
        "b-positive-bounded",
        first(&|z| {
            let v = cs.b(z);
            (!(v > 0.0 && v <= cs.b2)).then(|| format!("b({z}) = {v}, b2 = {}", cs.b2))
        }),
    ));
    report.clauses.push(clause(
        "storage",
        "b-strictly-monotone",
        zs.windows(2).find_map(|w| {
            let db = cs.b.increment(w[0], w[1]);
            (!(db * (w[1] - w[0]) > 0.0))
                .then(|| format!("b({}) − b({}) = {db}", w[1], w[0]))
        }),
    ));
    report.clauses.push(clause(
        "mobility",
        "a-positive",
        first(&|z| {
            let v = cs.a(z);
            (!(v > 0.0)).then(|| format!("a({z}) = {v}"))
        }),
    ));
    report.clauses.push(clause(
        "mobility",
        "dw-positive",
        first(&|z| {
            let v = cs.dw(z);
            (!(v > 0.0)).then(|| format!("D_w({z}) = {v}"))
        }),
    ));
    // λ is probed on a tensor grid, coarser in the second argument.
    let coarse = Probe::new(probe.lo, probe.hi, probe.samples.clamp(2, 101));
    let us: Vec<f64> = coarse.points().collect();
    report.clauses.push(clause(
        "mobility",
        "lambda-positive",
        zs.iter().find_map(|&th| {
            us.iter().find_map(|&u| {
                let v = cs.lambda(th, u);
                (!(v > 0.0)).then(|| format!("lambda({th}, {u}) = {v}"))
            })
        }),
    ));

    let b0 = cs.b(0.0);
    let legendre: Vec<Result<f64, ConstitutiveError>> = zs.iter().map(|&z| cs.legendre(z)).collect();
    let slack = |z: f64| 1e-12 * (1.0 + (cs.b(z) * z).abs());
    report.clauses.push(clause(
        "energy",
        "B-nonnegative",
        zs.iter().zip(&legendre).find_map(|(&z, bz)| match bz {
            Ok(v) if *v >= -slack(z) => None,
            Ok(v) => Some(format!("B({z}) = {v}")),
            Err(e) => Some(format!("B({z}): {e}")),
        }),
    ));
    report.clauses.push(clause(
        "energy",
        "B-upper-bound",
        zs.iter().zip(&legendre).find_map(|(&z, bz)| match bz {
            Ok(v) => {
                let bound = (cs.b(z) - b0) * z;
                (*v > bound + slack(z)).then(|| format!("B({z}) = {v} > (b(z) − b(0))·z = {bound}"))
            }
            Err(e) => Some(format!("B({z}): {e}")),
        }),
    ));
    let n = zs.len();
    report.clauses.push(clause(
        "energy",
        "B-supporting-line",
        (0..n).find_map(|i| {
            let (r, s) = (zs[i], zs[n - 1 - i]);
            match (&legendre[i], &legendre[n - 1 - i]) {
                (Ok(br), Ok(bs)) => {
                    let rhs = (cs.b(s) - cs.b(r)) * r;
                    (bs - br < rhs - slack(r) - slack(s))
                        .then(|| format!("B({s}) − B({r}) = {} < {rhs}", bs - br))
                }
                _ => Some(format!("B unavailable at {r} or {s}")),
            }
        }),
    ));
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn set(b: &str) -> CoefficientSet {
        CoefficientSet::new(
            Family::parse(b).unwrap(),
            Family::parse("constant value=1").unwrap(),
            Family::parse("vg kmin=0.1 kmax=1 alpha=0.5 n=2").unwrap(),
            Family::parse("affine c0=1 ct=0.01").unwrap(),
            None,
            1.0,
        )
        .unwrap()
    }

    fn logistic() -> CoefficientSet {
        set("logistic lo=0.05 hi=0.40")
    }

    fn identity_b() -> CoefficientSet {
        set("linear-clamped slope=1 offset=0 lo=-1e30 hi=1e30")
    }

    #[test]
    fn logistic_formula_and_bound() {
        let cs = logistic();
        assert_eq!(cs.b2, 0.40);
        assert_abs_diff_eq!(cs.b(0.0), 0.225, epsilon = 1e-15);
        let z: f64 = 1.3;
        assert_abs_diff_eq!(cs.b(z), 0.05 + 0.35 / (1.0 + (-z).exp()), epsilon = 1e-15);
    }

    #[test]
    fn constant_family_and_b2() {
        let cs = CoefficientSet::from_section([
            ("b", "constant value=0.3"),
            ("a", "constant value=1"),
            ("dw", "constant value=1"),
            ("lambda", "constant value=1"),
            ("b2", "0.3"),
            ("rho", "1"),
        ])
        .unwrap();
        assert_eq!(cs.b(-7.0), 0.3);
        assert_eq!(cs.a(123.0), 1.0);
    }

    #[test]
    fn parse_errors() {
        assert_eq!(
            Family::parse("unknownfam x=1"),
            Err(ConstitutiveError::UnknownFamily("unknownfam".into()))
        );
        assert!(matches!(
            Family::parse("logistic lo=0.1"),
            Err(ConstitutiveError::MissingParameter { .. })
        ));
        assert!(matches!(
            Family::parse("logistic lo=0.1 hi=abc"),
            Err(ConstitutiveError::BadParameter { .. })
        ));
        assert!(matches!(
            Family::parse("constant value=1 extra=2"),
            Err(ConstitutiveError::UnknownParameter { .. })
        ));
        assert!(matches!(
            Family::parse("vg kmax=1 alpha=1 n=1"),
            Err(ConstitutiveError::InvalidParameter { .. })
        ));
        let bad_rho = CoefficientSet::new(
            Family::Constant { value: 1.0 },
            Family::Constant { value: 1.0 },
            Family::Constant { value: 1.0 },
            Family::Constant { value: 1.0 },
            None,
            0.0,
        );
        assert!(matches!(bad_rho, Err(ConstitutiveError::NonPositiveConstant { name: "rho", .. })));
        let bad_b2 = CoefficientSet::new(
            Family::Constant { value: -1.0 },
            Family::Constant { value: 1.0 },
            Family::Constant { value: 1.0 },
            Family::Constant { value: 1.0 },
            None,
            1.0,
        );
        assert!(matches!(bad_b2, Err(ConstitutiveError::NonPositiveConstant { name: "b2", .. })));
    }

    #[test]
    fn display_round_trips_through_parse() {
        for text in [
            "constant value=0.5",
            "linear-clamped slope=0.1 offset=0.2 lo=0.01 hi=0.4",
            "logistic lo=0.05 hi=0.4 k=2 z0=-1",
            "vg kmin=0 kmax=5 alpha=0.5 n=2",
            "affine c0=60 ct=0.2 cu=0",
        ] {
            let fam = Family::parse(text).unwrap();
            assert_eq!(Family::parse(&fam.to_string()).unwrap(), fam);
        }
    }

    #[test]
    fn legendre_of_identity_is_half_square() {
        let cs = identity_b();
        assert_abs_diff_eq!(cs.legendre(2.0).unwrap(), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(cs.legendre(-3.0).unwrap(), 4.5, epsilon = 1e-12);
        assert_eq!(cs.legendre(0.0).unwrap(), 0.0);
        assert_eq!(logistic().legendre(0.0).unwrap(), 0.0);
    }

    #[test]
    fn legendre_logistic_matches_trapezoid_oracle() {
        let cs = logistic();
        let z = 1.0;
        let n = 1_000_000;
        let h = z / n as f64;
        let bz = cs.b(z);
        let g = |s: f64| bz - 0.05 - 0.35 / (1.0 + (-s).exp());
        let mut trap = 0.5 * (g(0.0) + g(z));
        for i in 1..n {
            trap += g(i as f64 * h);
        }
        trap *= h;
        let closed = cs.legendre(z).unwrap();
        let quad = legendre_by_quadrature(&cs, z, 0.0).unwrap();
        assert_abs_diff_eq!(closed, trap, epsilon = 1e-11);
        assert_abs_diff_eq!(quad, closed, epsilon = 1e-13);
    }

    #[test]
    fn quadrature_fallback_for_rational_b() {
        let cs = set("vg kmin=0.1 kmax=0.5 alpha=1 n=2");
        // b(s) = 0.1 + 0.4/(1+s²) has antiderivative 0.1 s + 0.4 atan(s).
        let z: f64 = 2.5;
        let exact = cs.b(z) * z - (0.1 * z + 0.4 * z.atan());
        assert_abs_diff_eq!(cs.legendre(z).unwrap(), exact, epsilon = 1e-12);
    }

    #[test]
    fn clamped_integral_matches_quadrature_across_kinks() {
        let fam = Family::parse("linear-clamped slope=0.5 offset=0.2 lo=0.1 hi=0.6").unwrap();
        for (a, b) in [(-3.0, 4.0), (4.0, -3.0), (0.0, 0.3), (-5.0, -1.0)] {
            let exact = fam.integral(a, b).unwrap();
            let quad = adaptive_quadrature(|s| fam.eval(s), a, b, 1e-12).unwrap();
            assert_abs_diff_eq!(exact, quad, epsilon = 1e-10);
        }
    }

    #[test]
    fn derivatives_match_central_differences() {
        let families = [
            "logistic lo=0.05 hi=0.4 k=1.7 z0=0.3",
            "vg kmin=0.1 kmax=5 alpha=0.5 n=2.5",
            "linear-clamped slope=0.3 offset=0.2 lo=0.01 hi=0.5",
            "affine c0=1 ct=0.3",
            "constant value=2",
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = 1e-5;
        for text in families {
            let f = Family::parse(text).unwrap();
            for _ in 0..100 {
                let z: f64 = rng.gen_range(-5.0..5.0);
                if let Family::LinearClamped { .. } = f {
                    // skip samples within a step of a kink
                    if (0.2 + 0.3 * z - 0.01).abs() < 1e-3 || (0.2 + 0.3 * z - 0.5).abs() < 1e-3 {
                        continue;
                    }
                }
                let fd = (f.eval(z + h) - f.eval(z - h)) / (2.0 * h);
                assert!(
                    (fd - f.derivative(z)).abs() <= 1e-6,
                    "{text} at {z}: fd {fd} vs {}",
                    f.derivative(z)
                );
            }
        }
    }

    #[test]
    fn logistic_increment_resolves_saturated_tail() {
        let f = Family::parse("logistic lo=0.05 hi=0.4").unwrap();
        assert_eq!(f.eval(49.99), f.eval(50.0));
        assert!(f.increment(49.99, 50.0) > 0.0);
        assert!(f.increment(-50.0, -49.99) > 0.0);
    }

    #[test]
    fn validator_accepts_logistic() {
        let report = validate_assumptions(&logistic(), Probe::new(-10.0, 10.0, 1000));
        assert!(report.passed(), "{report}");
    }

    #[test]
    fn validator_rejects_constant_b() {
        let report = validate_assumptions(&set("constant value=0.3"), Probe::new(-10.0, 10.0, 100));
        assert!(!report.passed());
        let names: Vec<_> = report.failed_clauses().map(|c| c.name).collect();
        assert_eq!(names, ["b-strictly-monotone"]);
    }

    #[test]
    fn validator_rejects_sign_changing_lambda() {
        let mut cs = logistic();
        cs.lambda = Family::Affine { c0: 0.0, ct: 1.0, cu: 0.0 };
        let report = validate_assumptions(&cs, Probe::new(-1.0, 1.0, 11));
        let names: Vec<_> = report.failed_clauses().map(|c| c.name).collect();
        assert_eq!(names, ["lambda-positive"]);
    }

    #[test]
    fn validator_flags_b_above_b2() {
        let mut cs = logistic();
        cs.b2 = 0.3;
        let report = validate_assumptions(&cs, Probe::new(-10.0, 10.0, 100));
        assert!(!report.clause("b-positive-bounded").unwrap().passed);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn legendre_supporting_line(r in -20.0f64..20.0, s in -20.0f64..20.0) {
                let cs = logistic();
                let lhs = cs.legendre(s).unwrap() - cs.legendre(r).unwrap();
                let rhs = (cs.b(s) - cs.b(r)) * r;
                prop_assert!(lhs >= rhs - 1e-12);
            }

            #[test]
            fn legendre_nonnegative_and_grows_along_rays(z in -30.0f64..30.0, g in -3.0f64..1.0) {
                let cs = logistic();
                let b1 = cs.legendre_centered(z, g).unwrap();
                let b2 = cs.legendre_centered(g + 1.1 * (z - g), g).unwrap();
                prop_assert!(b1 >= -1e-13);
                prop_assert!(b2 >= b1 - 1e-13);
            }
        }
    }
}
