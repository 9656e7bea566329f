//! The `key = value` configuration dialect and its typed view.
//!
//! ```text
//! # comment
//! [time]
//! tau = 0.01 ; t_end = 1
//! ```
//!
//! Several pairs may share a line when separated by `;`. Numeric values are
//! arithmetic expressions (`1/100`, `2*pi`). Every error carries the line it
//! refers to.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::constitutive::{CoefficientSet, Family};
use crate::linalg::KrylovSettings;
use crate::mesh::{generate_rect_mesh, read_mesh, Marker, Mesh, SideMarkers};
use crate::simulation::AuditSettings;
use crate::stepper::{BoundaryValues, Field, Scenario, SolverSettings};

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl ConfigError {
    fn at(line: usize, message: impl Into<String>) -> Self {
        ConfigError {
            line: Some(line),
            message: message.into(),
        }
    }

    fn general(message: impl Into<String>) -> Self {
        ConfigError {
            line: None,
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "{} (line {l})", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

const SECTIONS: &[(&str, &[&str])] = &[
    ("mesh", &["file", "nx", "ny", "lx", "ly", "dirichlet"]),
    ("coefficients", &["b", "a", "dw", "lambda", "rho", "b2"]),
    ("time", &["tau", "t_end"]),
    ("boundary", &["u", "w", "theta"]),
    ("initial", &["u", "w", "theta"]),
    (
        "solver",
        &["newton_tol", "newton_max_iter", "line_search_floor", "linear_tol", "linear_max_iter", "upwind"],
    ),
    ("output", &["snapshot_every", "check_invariants", "overshoot_tol_u", "overshoot_tol"]),
    (
        "mms",
        &["case", "t_end", "spatial_n", "spatial_c", "temporal_n", "temporal_steps", "oracle_tol"],
    ),
];

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub value: String,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Section {
    pub line: usize,
    pub entries: BTreeMap<String, Entry>,
}

/// Raw sections of a parsed file. Paths in values resolve against `base_dir`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Config {
    pub sections: BTreeMap<String, Section>,
    pub base_dir: PathBuf,
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<Config, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::general(format!("cannot read {}: {e}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_config_str(&text, base)
}

pub fn parse_config_str(text: &str, base_dir: impl Into<PathBuf>) -> Result<Config, ConfigError> {
    let mut config = Config {
        sections: BTreeMap::new(),
        base_dir: base_dir.into(),
    };
    let mut current: Option<String> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| ConfigError::at(line, format!("malformed section header `{content}`")))?
                .trim();
            if !SECTIONS.iter().any(|(s, _)| *s == name) {
                return Err(ConfigError::at(line, format!("unknown section [{name}]")));
            }
            if let Some(prev) = config.sections.get(name) {
                return Err(ConfigError::at(
                    line,
                    format!("section [{name}] repeated (first at line {})", prev.line),
                ));
            }
            config.sections.insert(
                name.to_string(),
                Section {
                    line,
                    entries: BTreeMap::new(),
                },
            );
            current = Some(name.to_string());
            continue;
        }
        let section_name = current
            .as_ref()
            .ok_or_else(|| ConfigError::at(line, "key outside of any section"))?;
        let allowed = SECTIONS.iter().find(|(s, _)| s == section_name).expect("known section").1;
        let section = config.sections.get_mut(section_name).expect("section exists");
        for pair in content.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| ConfigError::at(line, format!("expected `key = value`, got `{pair}`")))?;
            let key = key.trim();
            let value = value.trim();
            if !allowed.contains(&key) {
                return Err(ConfigError::at(line, format!("unknown key `{key}` in [{section_name}]")));
            }
            if value.is_empty() {
                return Err(ConfigError::at(line, format!("empty value for `{key}`")));
            }
            if let Some(prev) = section.entries.get(key) {
                return Err(ConfigError::at(
                    line,
                    format!("duplicate key `{key}` in [{section_name}] (lines {} and {line})", prev.line),
                ));
            }
            section.entries.insert(
                key.to_string(),
                Entry {
                    value: value.to_string(),
                    line,
                },
            );
        }
    }
    Ok(config)
}

/// Typed, line-aware access to one section.
struct View<'c> {
    name: &'c str,
    section: Option<&'c Section>,
}

impl<'c> View<'c> {
    fn entry(&self, key: &str) -> Option<&'c Entry> {
        self.section.and_then(|s| s.entries.get(key))
    }

    fn require(&self, key: &str) -> Result<&'c Entry, ConfigError> {
        match self.section {
            None => Err(ConfigError::general(format!("missing section [{}]", self.name))),
            Some(s) => s
                .entries
                .get(key)
                .ok_or_else(|| ConfigError::at(s.line, format!("missing key `{key}` in [{}]", self.name))),
        }
    }

    fn number(entry: &Entry, key: &str) -> Result<f64, ConfigError> {
        let v = meval::eval_str(&entry.value)
            .map_err(|_| ConfigError::at(entry.line, format!("expected a number for `{key}`, got `{}`", entry.value)))?;
        if !v.is_finite() {
            return Err(ConfigError::at(entry.line, format!("`{key}` must be finite")));
        }
        Ok(v)
    }

    fn f64_opt(&self, key: &str) -> Result<Option<(f64, usize)>, ConfigError> {
        self.entry(key).map(|e| Self::number(e, key).map(|v| (v, e.line))).transpose()
    }

    fn f64_req(&self, key: &str) -> Result<(f64, usize), ConfigError> {
        let e = self.require(key)?;
        Ok((Self::number(e, key)?, e.line))
    }

    fn positive(&self, key: &str, default: Option<f64>) -> Result<f64, ConfigError> {
        let got = match default {
            Some(d) => self.f64_opt(key)?.unwrap_or((d, 0)),
            None => self.f64_req(key)?,
        };
        if got.0 <= 0.0 {
            return Err(ConfigError::at(got.1, format!("{key} must be positive")));
        }
        Ok(got.0)
    }

    fn unit_interval(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        match self.f64_opt(key)? {
            None => Ok(default),
            Some((v, _)) if v > 0.0 && v < 1.0 => Ok(v),
            Some((_, line)) => Err(ConfigError::at(line, format!("{key} must lie in (0, 1)"))),
        }
    }

    fn count(&self, key: &str, default: Option<usize>) -> Result<usize, ConfigError> {
        let entry = match (self.entry(key), default) {
            (Some(e), _) => e,
            (None, Some(d)) => return Ok(d),
            (None, None) => self.require(key)?,
        };
        entry
            .value
            .parse::<usize>()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| ConfigError::at(entry.line, format!("{key} must be a positive integer")))
    }

    fn counts(&self, key: &str, default: &[usize]) -> Result<Vec<usize>, ConfigError> {
        let Some(entry) = self.entry(key) else {
            return Ok(default.to_vec());
        };
        entry
            .value
            .split(',')
            .map(|s| s.trim().parse::<usize>().ok().filter(|&n| n >= 1))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| ConfigError::at(entry.line, format!("{key} must be a comma-separated list of positive integers")))
    }

    fn boolean(&self, key: &str, default: bool) -> Result<bool, ConfigError> {
        match self.entry(key) {
            None => Ok(default),
            Some(e) => match e.value.as_str() {
                "true" | "yes" | "on" => Ok(true),
                "false" | "no" | "off" => Ok(false),
                other => Err(ConfigError::at(e.line, format!("expected true or false for `{key}`, got `{other}`"))),
            },
        }
    }
}

/// What a run does with failed audits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CheckMode {
    Off,
    Report,
    #[default]
    Strict,
}

impl std::str::FromStr for CheckMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "off" => Ok(CheckMode::Off),
            "report" => Ok(CheckMode::Report),
            "strict" => Ok(CheckMode::Strict),
            other => Err(format!("expected off, report or strict, got `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MeshSpec {
    Rect {
        nx: usize,
        ny: usize,
        lx: f64,
        ly: f64,
        markers: SideMarkers,
    },
    File(PathBuf),
}

impl MeshSpec {
    pub fn build(&self) -> Result<Mesh, ConfigError> {
        match self {
            MeshSpec::Rect { nx, ny, lx, ly, markers } => {
                generate_rect_mesh(*nx, *ny, *lx, *ly, *markers).map_err(|e| ConfigError::general(e.to_string()))
            }
            MeshSpec::File(p) => read_mesh(p).map_err(|e| ConfigError::general(format!("{}: {e}", p.display()))),
        }
    }
}

/// Initial data: an expression in `x` and `y`, or a file of nodal values.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialField {
    Expr { text: String, line: usize },
    File { path: PathBuf, line: usize },
}

impl InitialField {
    pub fn sample(&self, mesh: &Mesh) -> Result<Vec<f64>, ConfigError> {
        match self {
            InitialField::Expr { text, line } => {
                let expr: meval::Expr = text
                    .parse()
                    .map_err(|e| ConfigError::at(*line, format!("cannot parse expression `{text}`: {e}")))?;
                let f = expr
                    .bind2("x", "y")
                    .map_err(|e| ConfigError::at(*line, format!("expression `{text}`: {e}")))?;
                let values: Vec<f64> = mesh.nodes().iter().map(|&[x, y]| f(x, y)).collect();
                if let Some(i) = values.iter().position(|v| !v.is_finite()) {
                    return Err(ConfigError::at(*line, format!("expression `{text}` is not finite at node {i}")));
                }
                Ok(values)
            }
            InitialField::File { path, line } => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| ConfigError::at(*line, format!("cannot read {}: {e}", path.display())))?;
                let values = text
                    .lines()
                    .map(|l| l.split('#').next().unwrap_or("").trim())
                    .filter(|l| !l.is_empty())
                    .map(|l| l.parse::<f64>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| ConfigError::at(*line, format!("{}: {e}", path.display())))?;
                if values.len() != mesh.node_count() {
                    return Err(ConfigError::at(
                        *line,
                        format!("{} holds {} values, mesh has {} nodes", path.display(), values.len(), mesh.node_count()),
                    ));
                }
                Ok(values)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputSpec {
    pub snapshot_every: Option<usize>,
    pub check: CheckMode,
    pub audit: AuditSettings,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmsSpec {
    pub case: String,
    pub t_end: f64,
    pub spatial_n: Vec<usize>,
    /// `τ ≈ spatial_c·h²` in the spatial sweep.
    pub spatial_c: f64,
    pub temporal_n: usize,
    pub temporal_steps: Vec<usize>,
    pub oracle_tol: f64,
}

impl Default for MmsSpec {
    fn default() -> Self {
        MmsSpec {
            case: "sinsin".into(),
            t_end: 1.0,
            spatial_n: vec![8, 16, 32],
            spatial_c: 1.0,
            temporal_n: 64,
            temporal_steps: vec![10, 20, 40],
            oracle_tol: 1e-8,
        }
    }
}

/// Fully typed scenario description; [`ScenarioSpec::build`] samples it on its mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub mesh: MeshSpec,
    pub coefficients: CoefficientSet,
    pub tau: f64,
    pub t_end: f64,
    pub boundary: BoundaryValues,
    pub initial: [InitialField; 3],
    pub solver: SolverSettings,
    pub output: OutputSpec,
}

impl ScenarioSpec {
    pub fn build(&self) -> Result<Scenario, ConfigError> {
        let mesh = self.mesh.build()?;
        let mut initial = [Vec::new(), Vec::new(), Vec::new()];
        for f in Field::ALL {
            initial[f.index()] = self.initial[f.index()].sample(&mesh)?;
        }
        let sc = Scenario::new(
            Arc::new(mesh),
            self.coefficients.clone(),
            self.tau,
            self.t_end,
            self.boundary,
            initial,
        )
        .map_err(|e| ConfigError::general(e.to_string()))?;
        Ok(sc.with_solver(self.solver))
    }

    /// Same scenario on an `nx × ny` structured grid with step `tau`.
    pub fn refined(&self, nx: usize, ny: usize, tau: f64) -> Result<ScenarioSpec, ConfigError> {
        let MeshSpec::Rect { lx, ly, markers, .. } = self.mesh else {
            return Err(ConfigError::general("refinement needs a generated rectangular mesh"));
        };
        let mut out = self.clone();
        out.mesh = MeshSpec::Rect { nx, ny, lx, ly, markers };
        out.tau = tau;
        Ok(out)
    }
}

impl Config {
    fn view<'c>(&'c self, name: &'c str) -> View<'c> {
        View {
            name,
            section: self.sections.get(name),
        }
    }

    pub fn has_section(&self, name: &str) -> bool {
        self.sections.contains_key(name)
    }

    fn resolve(&self, p: &str) -> PathBuf {
        let path = Path::new(p);
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn coefficients(&self) -> Result<CoefficientSet, ConfigError> {
        let v = self.view("coefficients");
        let family = |key: &str| -> Result<Family, ConfigError> {
            let e = v.require(key)?;
            Family::parse(&e.value).map_err(|err| ConfigError::at(e.line, format!("`{key}`: {err}")))
        };
        let (b, a, dw, lambda) = (family("b")?, family("a")?, family("dw")?, family("lambda")?);
        let rho = v.positive("rho", None)?;
        let b2 = match v.f64_opt("b2")? {
            Some((x, line)) if x <= 0.0 => return Err(ConfigError::at(line, "b2 must be positive")),
            Some((x, _)) => Some(x),
            None => None,
        };
        CoefficientSet::new(b, a, dw, lambda, b2, rho).map_err(|e| ConfigError::general(e.to_string()))
    }

    pub fn mesh_spec(&self) -> Result<MeshSpec, ConfigError> {
        let v = self.view("mesh");
        if let Some(e) = v.entry("file") {
            for other in ["nx", "ny", "lx", "ly", "dirichlet"] {
                if let Some(o) = v.entry(other) {
                    return Err(ConfigError::at(o.line, format!("`{other}` conflicts with `file` (line {})", e.line)));
                }
            }
            return Ok(MeshSpec::File(self.resolve(&e.value)));
        }
        let nx = v.count("nx", None)?;
        let ny = v.count("ny", Some(nx))?;
        let lx = v.positive("lx", Some(1.0))?;
        let ly = v.positive("ly", Some(1.0))?;
        let mut markers = SideMarkers::all(Marker::Neumann);
        if let Some(e) = v.entry("dirichlet") {
            for side in e.value.split(',').map(str::trim) {
                match side {
                    "left" => markers.left = Marker::Dirichlet,
                    "right" => markers.right = Marker::Dirichlet,
                    "bottom" => markers.bottom = Marker::Dirichlet,
                    "top" => markers.top = Marker::Dirichlet,
                    "all" => markers = SideMarkers::all(Marker::Dirichlet),
                    "none" => {}
                    other => return Err(ConfigError::at(e.line, format!("unknown side `{other}`"))),
                }
            }
        }
        Ok(MeshSpec::Rect { nx, ny, lx, ly, markers })
    }

    pub fn solver_settings(&self) -> Result<SolverSettings, ConfigError> {
        let v = self.view("solver");
        let d = SolverSettings::default();
        Ok(SolverSettings {
            newton_tol: v.unit_interval("newton_tol", d.newton_tol)?,
            newton_max_iter: v.count("newton_max_iter", Some(d.newton_max_iter))?,
            line_search_floor: v.unit_interval("line_search_floor", d.line_search_floor)?,
            krylov: KrylovSettings {
                rel_tol: v.unit_interval("linear_tol", d.krylov.rel_tol)?,
                max_iter: match v.entry("linear_max_iter") {
                    None => None,
                    Some(_) => Some(v.count("linear_max_iter", None)?),
                },
            },
            upwind: v.boolean("upwind", d.upwind)?,
        })
    }

    pub fn output_spec(&self) -> Result<OutputSpec, ConfigError> {
        let v = self.view("output");
        let d = AuditSettings::default();
        let check = match v.entry("check_invariants") {
            None => CheckMode::default(),
            Some(e) => e.value.parse().map_err(|m: String| ConfigError::at(e.line, m))?,
        };
        let snapshot_every = match v.entry("snapshot_every") {
            None => None,
            Some(_) => Some(v.count("snapshot_every", None)?),
        };
        Ok(OutputSpec {
            snapshot_every,
            check,
            audit: AuditSettings {
                overshoot_tol_u: v.positive("overshoot_tol_u", Some(d.overshoot_tol_u))?,
                overshoot_tol_transport: v.positive("overshoot_tol", Some(d.overshoot_tol_transport))?,
            },
        })
    }

    pub fn scenario_spec(&self) -> Result<ScenarioSpec, ConfigError> {
        let time = self.view("time");
        let tau = time.positive("tau", None)?;
        let (t_end, line) = time.f64_req("t_end")?;
        if t_end < 0.0 {
            return Err(ConfigError::at(line, "t_end must be nonnegative"));
        }
        let ratio = t_end / tau;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
            return Err(ConfigError::at(line, "t_end must be an integer multiple of tau"));
        }
        let bnd = self.view("boundary");
        let boundary = BoundaryValues {
            u: bnd.f64_req("u")?.0,
            w: bnd.f64_req("w")?.0,
            theta: bnd.f64_req("theta")?.0,
        };
        let init = self.view("initial");
        let field = |key: &str| -> Result<InitialField, ConfigError> {
            let e = init.require(key)?;
            Ok(match e.value.strip_prefix('@') {
                Some(p) => InitialField::File {
                    path: self.resolve(p.trim()),
                    line: e.line,
                },
                None => InitialField::Expr {
                    text: e.value.clone(),
                    line: e.line,
                },
            })
        };
        Ok(ScenarioSpec {
            mesh: self.mesh_spec()?,
            coefficients: self.coefficients()?,
            tau,
            t_end,
            boundary,
            initial: [field("u")?, field("w")?, field("theta")?],
            solver: self.solver_settings()?,
            output: self.output_spec()?,
        })
    }

    pub fn mms_spec(&self) -> Result<MmsSpec, ConfigError> {
        let v = self.view("mms");
        let d = MmsSpec::default();
        Ok(MmsSpec {
            case: v.entry("case").map_or(d.case, |e| e.value.clone()),
            t_end: v.positive("t_end", Some(d.t_end))?,
            spatial_n: v.counts("spatial_n", &d.spatial_n)?,
            spatial_c: v.positive("spatial_c", Some(d.spatial_c))?,
            temporal_n: v.count("temporal_n", Some(d.temporal_n))?,
            temporal_steps: v.counts("temporal_steps", &d.temporal_steps)?,
            oracle_tol: v.unit_interval("oracle_tol", d.oracle_tol)?,
        })
    }
}
