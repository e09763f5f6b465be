//! Run configuration: a flat INI-like document with `[section]` headers and
//! `key = value` lines. `#` starts a comment. Every violation is collected
//! before reporting, so a broken file is fixed in one pass.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::fmt;

use conefrac::cones::{min_smoothing_index, ConeProfile};
use conefrac::ProblemParams;

use crate::expr::{parse_expression, Bindings, Expr, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Eig,
    Hardy,
    Frequency,
    SolveExt,
    SmoothCone,
    Scan,
}

impl TaskKind {
    pub const ALL: [TaskKind; 6] = [
        TaskKind::Eig,
        TaskKind::Hardy,
        TaskKind::Frequency,
        TaskKind::SolveExt,
        TaskKind::SmoothCone,
        TaskKind::Scan,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Eig => "eig",
            TaskKind::Hardy => "hardy",
            TaskKind::Frequency => "frequency",
            TaskKind::SolveExt => "solve-ext",
            TaskKind::SmoothCone => "smooth-cone",
            TaskKind::Scan => "scan",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        TaskKind::ALL.into_iter().find(|t| t.name() == s)
    }

    fn keys(self) -> &'static [&'static str] {
        match self {
            TaskKind::Eig => &["count"],
            TaskKind::Hardy => &["richardson"],
            TaskKind::Scan => &["arcs", "richardson", "margin"],
            TaskKind::Frequency => &[
                "field", "modes", "eig_count", "r0", "radii", "taus", "beta_radii", "lid_mode", "tol", "max_iter",
            ],
            TaskKind::SolveExt => &["lid_mode", "eig_count", "tol", "max_iter"],
            TaskKind::SmoothCone => &["n", "samples"],
        }
    }

    /// Whether the task needs λ below the Hardy constant of the cap.
    pub fn needs_admissible_lambda(self) -> bool {
        matches!(self, TaskKind::Eig | TaskKind::Frequency | TaskKind::SolveExt)
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One violation, located by section and key or by line.
#[derive(Debug, Clone, PartialEq)]
pub struct Issue {
    pub location: String,
    pub message: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigErrors(pub Vec<Issue>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} configuration error(s):", self.0.len())?;
        for issue in &self.0 {
            writeln!(f, "  {issue}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConeSpec {
    Half,
    Full,
    Planar { g_plus: f64, g_minus: f64 },
}

impl ConeSpec {
    pub fn profile(&self) -> conefrac::Result<ConeProfile> {
        match *self {
            ConeSpec::Half => Ok(ConeProfile::half_plane()),
            ConeSpec::Full => Ok(ConeProfile::full_plane()),
            ConeSpec::Planar { g_plus, g_minus } => ConeProfile::planar(g_plus, g_minus),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            ConeSpec::Half => "preset half".into(),
            ConeSpec::Full => "preset full".into(),
            ConeSpec::Planar { g_plus, g_minus } => format!("g_plus = {g_plus}, g_minus = {g_minus}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshConfig {
    pub nt: usize,
    pub ntheta: usize,
    pub grading: f64,
    pub nr: usize,
    pub rmin: f64,
}

impl Default for MeshConfig {
    fn default() -> Self {
        Self {
            nt: 96,
            ntheta: 192,
            grading: 1.5,
            nr: 32,
            rmin: 1e-3,
        }
    }
}

impl MeshConfig {
    /// Level L: 12·2^L × 24·2^L sphere cells and 8·2^L radial cells.
    pub fn at_level(&self, level: u32) -> Self {
        let f = 1usize << level;
        Self {
            nt: 12 * f,
            ntheta: 24 * f,
            nr: 8 * f,
            ..*self
        }
    }
}

/// An expression with its source text.
#[derive(Debug, Clone, PartialEq)]
pub struct Source {
    pub text: String,
    pub expr: Expr,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FieldSource {
    Manufactured(Vec<(usize, f64)>),
    Solve,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveSettings {
    /// eigenfunction used as lid data when no lid expression is given
    pub lid_mode: usize,
    pub eig_count: usize,
    pub tol: f64,
    pub max_iter: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TaskConfig {
    Eig {
        count: usize,
    },
    Hardy {
        richardson: bool,
    },
    Scan {
        arcs: Vec<f64>,
        richardson: bool,
        margin: f64,
    },
    Frequency {
        field: FieldSource,
        solve: SolveSettings,
        r0: f64,
        radii: usize,
        taus: Vec<f64>,
        beta_radii: Vec<f64>,
    },
    SolveExt {
        solve: SolveSettings,
    },
    SmoothCone {
        n: usize,
        samples: usize,
    },
}

impl TaskConfig {
    pub fn kind(&self) -> TaskKind {
        match self {
            TaskConfig::Eig { .. } => TaskKind::Eig,
            TaskConfig::Hardy { .. } => TaskKind::Hardy,
            TaskConfig::Scan { .. } => TaskKind::Scan,
            TaskConfig::Frequency { .. } => TaskKind::Frequency,
            TaskConfig::SolveExt { .. } => TaskKind::SolveExt,
            TaskConfig::SmoothCone { .. } => TaskKind::SmoothCone,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub params: ProblemParams,
    pub cone: ConeSpec,
    pub mesh: MeshConfig,
    pub task: TaskConfig,
    pub h: Source,
    pub lid: Option<Source>,
}

const SECTIONS: [&str; 5] = ["params", "cone", "mesh", "task", "expressions"];
const PARAMS_KEYS: [&str; 4] = ["dim", "s", "lambda", "p"];
const CONE_KEYS: [&str; 3] = ["preset", "g_plus", "g_minus"];
const MESH_KEYS: [&str; 5] = ["nt", "ntheta", "grading", "nr", "rmin"];
const EXPRESSION_KEYS: [&str; 2] = ["h", "lid"];
pub const H_VARS: [Var; 4] = [Var::X1, Var::X2, Var::R, Var::Theta];
pub const LID_VARS: [Var; 5] = [Var::Theta, Var::T, Var::X1, Var::X2, Var::R];

fn edit_distance(a: &str, b: &str) -> usize {
    let b: Vec<char> = b.chars().collect();
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, ca) in a.chars().enumerate() {
        let mut prev = row[0];
        row[0] = i + 1;
        for j in 0..b.len() {
            let cur = row[j + 1];
            row[j + 1] = (prev + usize::from(ca != b[j])).min(row[j] + 1).min(cur + 1);
            prev = cur;
        }
    }
    row[b.len()]
}

pub fn suggestion(name: &str, known: &[&str]) -> String {
    let best = known
        .iter()
        .map(|k| (edit_distance(name, k), *k))
        .min();
    match best {
        Some((d, k)) if d <= 2 => format!("; did you mean '{k}'?"),
        _ => format!("; known: {}", known.join(", ")),
    }
}

/// Split at commas outside parentheses.
fn split_list(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, c) in text.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                out.push(text[start..i].trim());
                start = i + 1;
            }
            _ => {}
        }
    }
    out.push(text[start..].trim());
    out
}

struct Entry {
    value: String,
    line: usize,
    used: bool,
}

/// Raw sections; tracks which keys were consumed.
struct Document {
    sections: BTreeMap<String, BTreeMap<String, Entry>>,
    issues: Vec<Issue>,
}

impl Document {
    fn parse(text: &str) -> Self {
        let mut sections: BTreeMap<String, BTreeMap<String, Entry>> = BTreeMap::new();
        let mut issues = Vec::new();
        let mut current: Option<String> = None;
        for (k, raw) in text.lines().enumerate() {
            let line_no = k + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let Some(name) = rest.strip_suffix(']') else {
                    issues.push(Issue {
                        location: format!("line {line_no}"),
                        message: format!("malformed section header '{line}'"),
                    });
                    continue;
                };
                let name = name.trim().to_string();
                if !SECTIONS.contains(&name.as_str()) {
                    issues.push(Issue {
                        location: format!("line {line_no}"),
                        message: format!("unknown section [{name}]{}", suggestion(&name, &SECTIONS)),
                    });
                }
                sections.entry(name.clone()).or_default();
                current = Some(name);
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                issues.push(Issue {
                    location: format!("line {line_no}"),
                    message: format!("expected 'key = value', found '{line}'"),
                });
                continue;
            };
            let Some(section) = current.clone() else {
                issues.push(Issue {
                    location: format!("line {line_no}"),
                    message: "key outside of any [section]".into(),
                });
                continue;
            };
            let key = key.trim().to_string();
            let entries = sections.entry(section.clone()).or_default();
            if entries.contains_key(&key) {
                issues.push(Issue {
                    location: format!("line {line_no}"),
                    message: format!("duplicate key '{key}' in [{section}]"),
                });
                continue;
            }
            entries.insert(
                key,
                Entry {
                    value: value.trim().to_string(),
                    line: line_no,
                    used: false,
                },
            );
        }
        Self { sections, issues }
    }

    fn take(&mut self, section: &str, key: &str) -> Option<(String, usize)> {
        let e = self.sections.get_mut(section)?.get_mut(key)?;
        e.used = true;
        Some((e.value.clone(), e.line))
    }

    fn issue(&mut self, section: &str, key: &str, message: String) {
        self.issues.push(Issue {
            location: format!("[{section}] {key}"),
            message,
        });
    }

    fn real(&mut self, section: &str, key: &str) -> Option<f64> {
        let (text, _) = self.take(section, key)?;
        match parse_expression(&text, &[]) {
            Ok(e) => match e.constant() {
                Some(v) => Some(v),
                None => {
                    self.issue(section, key, format!("'{text}' is not a finite number"));
                    None
                }
            },
            Err(err) => {
                self.issue(section, key, format!("'{text}' is not a number: {err}"));
                None
            }
        }
    }

    fn integer(&mut self, section: &str, key: &str) -> Option<usize> {
        let (text, _) = self.take(section, key)?;
        match text.parse::<usize>() {
            Ok(v) => Some(v),
            Err(_) => {
                self.issue(section, key, format!("'{text}' is not a non-negative integer"));
                None
            }
        }
    }

    fn boolean(&mut self, section: &str, key: &str) -> Option<bool> {
        let (text, _) = self.take(section, key)?;
        match text.to_ascii_lowercase().as_str() {
            "true" | "yes" | "on" | "1" => Some(true),
            "false" | "no" | "off" | "0" => Some(false),
            _ => {
                self.issue(section, key, format!("'{text}' is not a boolean (true/false)"));
                None
            }
        }
    }

    fn real_list(&mut self, section: &str, key: &str) -> Option<Vec<f64>> {
        let (text, _) = self.take(section, key)?;
        let mut out = Vec::new();
        for item in split_list(&text) {
            match parse_expression(item, &[]).ok().and_then(|e| e.constant()) {
                Some(v) => out.push(v),
                None => {
                    self.issue(section, key, format!("list item '{item}' is not a number"));
                    return None;
                }
            }
        }
        Some(out)
    }

    fn expression(&mut self, key: &str, vars: &[Var]) -> Option<Source> {
        let (text, _) = self.take("expressions", key)?;
        match parse_expression(&text, vars) {
            Ok(expr) => Some(Source { text, expr }),
            Err(err) => {
                self.issue("expressions", key, format!("cannot parse '{text}': {err}"));
                None
            }
        }
    }

    fn check(&mut self, ok: bool, section: &str, key: &str, message: impl FnOnce() -> String) {
        if !ok {
            let m = message();
            self.issue(section, key, m);
        }
    }

    fn report_unused(&mut self, task_keys: &[&str]) {
        let mut found = Vec::new();
        for (section, entries) in &self.sections {
            let known: Vec<&str> = match section.as_str() {
                "params" => PARAMS_KEYS.to_vec(),
                "cone" => CONE_KEYS.to_vec(),
                "mesh" => MESH_KEYS.to_vec(),
                "expressions" => EXPRESSION_KEYS.to_vec(),
                "task" => std::iter::once("name").chain(task_keys.iter().copied()).collect(),
                _ => continue,
            };
            for (key, e) in entries {
                if !e.used {
                    found.push(Issue {
                        location: format!("line {}", e.line),
                        message: format!("unknown key '{key}' in [{section}]{}", suggestion(key, &known)),
                    });
                }
            }
        }
        self.issues.extend(found);
    }
}

/// Parse and validate. The task comes from the command line, from
/// `[task] name`, or both when they agree.
pub fn parse_config(text: &str, task: Option<TaskKind>) -> Result<RunConfig, ConfigErrors> {
    let mut doc = Document::parse(text);
    let kind = match (task, doc.take("task", "name")) {
        (Some(t), None) => Some(t),
        (None, Some((name, _))) => {
            let k = TaskKind::from_name(&name);
            if k.is_none() {
                let names: Vec<&str> = TaskKind::ALL.iter().map(|t| t.name()).collect();
                doc.issue("task", "name", format!("unknown task '{name}'{}", suggestion(&name, &names)));
            }
            k
        }
        (Some(t), Some((name, _))) => {
            if name != t.name() {
                doc.issue("task", "name", format!("config names task '{name}' but '{t}' was requested"));
            }
            Some(t)
        }
        (None, None) => {
            doc.issue("task", "name", "no task given".into());
            None
        }
    };

    let dim = doc.integer("params", "dim").unwrap_or(2);
    doc.check(dim == 2, "params", "dim", || format!("only N = 2 is supported, got {dim}"));
    let s = doc.real("params", "s");
    if s.is_none() && !doc.issues.iter().any(|i| i.location == "[params] s") {
        doc.issue("params", "s", "missing required key".into());
    }
    let lambda = doc.real("params", "lambda").unwrap_or(0.0);
    let p = doc.real("params", "p");
    if let Some(p) = p {
        doc.check(p > 1.0, "params", "p", || format!("p must exceed 1, got {p}"));
    }
    let params = s.and_then(|s| match ProblemParams::new(2, s, lambda, p) {
        Ok(params) => Some(params),
        Err(e) => {
            doc.issue("params", "s", e.to_string());
            None
        }
    });

    let preset = doc.take("cone", "preset");
    let g_plus = doc.real("cone", "g_plus");
    let g_minus = doc.real("cone", "g_minus");
    let cone = match (preset, g_plus, g_minus) {
        (Some((name, _)), None, None) => match name.as_str() {
            "half" => Some(ConeSpec::Half),
            "full" => Some(ConeSpec::Full),
            other => {
                doc.issue("cone", "preset", format!("unknown preset '{other}'{}", suggestion(other, &["half", "full"])));
                None
            }
        },
        (None, Some(g_plus), Some(g_minus)) => match ConeProfile::planar(g_plus, g_minus) {
            Ok(_) => Some(ConeSpec::Planar { g_plus, g_minus }),
            Err(e) => {
                doc.issue("cone", "g_plus", e.to_string());
                None
            }
        },
        (Some(_), _, _) => {
            doc.issue("cone", "preset", "give either a preset or g_plus/g_minus, not both".into());
            None
        }
        (None, None, None) => {
            doc.issue("cone", "preset", "missing cone: give preset = half|full or g_plus and g_minus".into());
            None
        }
        (None, _, _) => {
            doc.issue("cone", "g_plus", "g_plus and g_minus must be given together".into());
            None
        }
    };

    let defaults = MeshConfig::default();
    let mesh = MeshConfig {
        nt: doc.integer("mesh", "nt").unwrap_or(defaults.nt),
        ntheta: doc.integer("mesh", "ntheta").unwrap_or(defaults.ntheta),
        grading: doc.real("mesh", "grading").unwrap_or(defaults.grading),
        nr: doc.integer("mesh", "nr").unwrap_or(defaults.nr),
        rmin: doc.real("mesh", "rmin").unwrap_or(defaults.rmin),
    };
    doc.check(mesh.nt >= 4, "mesh", "nt", || format!("need at least 4 cells, got {}", mesh.nt));
    doc.check(mesh.ntheta >= 4, "mesh", "ntheta", || format!("need at least 4 cells, got {}", mesh.ntheta));
    doc.check(mesh.grading >= 1.0, "mesh", "grading", || format!("grading must be ≥ 1, got {}", mesh.grading));
    doc.check(mesh.nr >= 2, "mesh", "nr", || format!("need at least 2 radial cells, got {}", mesh.nr));
    doc.check(mesh.rmin > 0.0 && mesh.rmin < 1.0, "mesh", "rmin", || {
        format!("rmin must lie in (0, 1), got {}", mesh.rmin)
    });

    let h = doc.expression("h", &H_VARS).or_else(|| {
        if doc.issues.iter().any(|i| i.location == "[expressions] h") {
            None
        } else {
            Some(Source {
                text: "0".into(),
                expr: Expr::Num(0.0),
            })
        }
    });
    if let Some(h) = &h {
        if let Some(msg) = first_evaluation_failure(&h.expr) {
            doc.issue("expressions", "h", format!("h must be finite on the closed unit disk: {msg}"));
        }
    }
    let lid = doc.expression("lid", &LID_VARS);

    let task_cfg = kind.and_then(|k| parse_task(&mut doc, k));
    if let (Some(TaskConfig::SmoothCone { n, .. }), Some(cone)) = (&task_cfg, &cone) {
        if let Ok(profile) = cone.profile() {
            let n0 = min_smoothing_index(&profile);
            doc.check(*n >= n0, "task", "n", || format!("n must be at least ⌈6M⌉ = {n0}, got {n}"));
        }
    }
    doc.report_unused(kind.map(TaskKind::keys).unwrap_or(&[]));

    if !doc.issues.is_empty() {
        return Err(ConfigErrors(doc.issues));
    }
    Ok(RunConfig {
        params: params.expect("validated"),
        cone: cone.expect("validated"),
        mesh,
        task: task_cfg.expect("validated"),
        h: h.expect("validated"),
        lid,
    })
}

/// Evaluate h on a polar grid of the closed unit disk; the first failure.
fn first_evaluation_failure(e: &Expr) -> Option<String> {
    if !e.uses_variables() {
        return e.evaluate(&Bindings::default()).err().map(|err| err.to_string());
    }
    for i in 0..=20 {
        let r = i as f64 / 20.0;
        for j in 0..48 {
            let th = TAU * j as f64 / 48.0;
            if let Err(err) = e.evaluate(&Bindings::planar([r * th.cos(), r * th.sin()])) {
                return Some(err.to_string());
            }
        }
    }
    None
}

fn parse_task(doc: &mut Document, kind: TaskKind) -> Option<TaskConfig> {
    let before = doc.issues.len();
    let solve = |doc: &mut Document| {
        let s = SolveSettings {
            lid_mode: doc.integer("task", "lid_mode").unwrap_or(1),
            eig_count: doc.integer("task", "eig_count").unwrap_or(6),
            tol: doc.real("task", "tol").unwrap_or(1e-10),
            max_iter: doc.integer("task", "max_iter").unwrap_or(500),
        };
        doc.check(s.eig_count >= 1 && s.eig_count <= 200, "task", "eig_count", || {
            format!("eig_count must lie in [1, 200], got {}", s.eig_count)
        });
        doc.check(s.lid_mode >= 1 && s.lid_mode <= s.eig_count, "task", "lid_mode", || {
            format!("lid_mode must lie in [1, eig_count = {}], got {}", s.eig_count, s.lid_mode)
        });
        doc.check(s.tol > 0.0 && s.tol < 1.0, "task", "tol", || format!("tol must lie in (0, 1), got {}", s.tol));
        doc.check(s.max_iter >= 1, "task", "max_iter", || "max_iter must be positive".into());
        s
    };
    let cfg = match kind {
        TaskKind::Eig => {
            let count = doc.integer("task", "count").unwrap_or(15);
            doc.check((1..=200).contains(&count), "task", "count", || format!("count must lie in [1, 200], got {count}"));
            TaskConfig::Eig { count }
        }
        TaskKind::Hardy => TaskConfig::Hardy {
            richardson: doc.boolean("task", "richardson").unwrap_or(true),
        },
        TaskKind::Scan => {
            let arcs = doc
                .real_list("task", "arcs")
                .unwrap_or_else(|| vec![TAU / 4.0, TAU / 2.0, 0.75 * TAU, TAU]);
            let ok = !arcs.is_empty()
                && arcs.iter().all(|&a| a > 0.0 && a <= TAU * (1.0 + 1e-12))
                && arcs.windows(2).all(|w| w[1] > w[0]);
            doc.check(ok, "task", "arcs", || "arc lengths must be strictly increasing within (0, 2π]".into());
            let margin = doc.real("task", "margin").unwrap_or(1e-4);
            doc.check(margin >= 0.0, "task", "margin", || "margin must be non-negative".into());
            TaskConfig::Scan {
                arcs,
                richardson: doc.boolean("task", "richardson").unwrap_or(true),
                margin,
            }
        }
        TaskKind::Frequency => {
            let field = match doc.take("task", "field").map(|v| v.0) {
                None => None,
                Some(v) if v == "manufactured" => None,
                Some(v) if v == "solve" => Some(FieldSource::Solve),
                Some(v) => {
                    doc.issue("task", "field", format!("unknown field '{v}'{}", suggestion(&v, &["manufactured", "solve"])));
                    Some(FieldSource::Solve)
                }
            };
            let modes = doc.take("task", "modes").map(|v| v.0);
            let solve = solve(doc);
            let field = match field {
                Some(f) => {
                    if modes.is_some() {
                        doc.issue("task", "modes", "modes apply to manufactured fields only".into());
                    }
                    f
                }
                None => {
                    let text = modes.unwrap_or_else(|| "1:1".into());
                    let mut pairs = Vec::new();
                    for item in split_list(&text) {
                        let parsed = item.split_once(':').and_then(|(j, b)| {
                            Some((j.trim().parse::<usize>().ok()?, parse_expression(b.trim(), &[]).ok()?.constant()?))
                        });
                        match parsed {
                            Some((j, b)) if j >= 1 && j <= solve.eig_count => pairs.push((j, b)),
                            Some((j, _)) => doc.issue(
                                "task",
                                "modes",
                                format!("mode {j} outside [1, eig_count = {}]", solve.eig_count),
                            ),
                            None => doc.issue("task", "modes", format!("'{item}' is not of the form j:beta")),
                        }
                    }
                    if pairs.is_empty() {
                        doc.issue("task", "modes", "at least one mode is required".into());
                    }
                    FieldSource::Manufactured(pairs)
                }
            };
            let r0 = doc.real("task", "r0").unwrap_or(conefrac::almgren::DEFAULT_R0);
            doc.check(r0 > 0.0 && r0 < 1.0, "task", "r0", || format!("r0 must lie in (0, 1), got {r0}"));
            let radii = doc.integer("task", "radii").unwrap_or(conefrac::almgren::DEFAULT_RADII);
            doc.check(radii >= 4, "task", "radii", || format!("need at least 4 radii, got {radii}"));
            let taus = doc.real_list("task", "taus").unwrap_or_else(|| vec![0.5, 0.25, 0.125, 0.01]);
            doc.check(taus.iter().all(|&t| t > 0.0 && t <= 1.0), "task", "taus", || "blow-up radii must lie in (0, 1]".into());
            let beta_radii = doc.real_list("task", "beta_radii").unwrap_or_else(|| vec![0.3, 0.5, 0.7]);
            doc.check(beta_radii.iter().all(|&t| t > 0.0 && t < 1.0), "task", "beta_radii", || {
                "beta radii must lie in (0, 1)".into()
            });
            TaskConfig::Frequency {
                field,
                solve,
                r0,
                radii,
                taus,
                beta_radii,
            }
        }
        TaskKind::SolveExt => TaskConfig::SolveExt { solve: solve(doc) },
        TaskKind::SmoothCone => {
            let n = doc.integer("task", "n").unwrap_or(12);
            let samples = doc.integer("task", "samples").unwrap_or(1000);
            doc.check(n >= 1, "task", "n", || "n must be positive".into());
            doc.check(samples >= 1, "task", "samples", || "samples must be positive".into());
            TaskConfig::SmoothCone { n, samples }
        }
    };
    (doc.issues.len() == before).then_some(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_eig_config_fills_defaults() {
        let cfg = parse_config("[params]\ns = 0.5\n[cone]\npreset = half\n", Some(TaskKind::Eig)).unwrap();
        assert_eq!(cfg.cone, ConeSpec::Half);
        assert_eq!(cfg.mesh, MeshConfig::default());
        assert_eq!(cfg.task, TaskConfig::Eig { count: 15 });
        assert_eq!(cfg.params.lambda(), 0.0);
        assert_eq!(cfg.h.expr.constant(), Some(0.0));
        assert!(cfg.lid.is_none());
    }

    #[test]
    fn all_violations_are_reported() {
        let text = "[params]\ns = 1.5\nlamda = 0.1\n[cone]\npreset = half\n[mesh]\nntheta = 2\n[expressions]\nh = sin(\n";
        let err = parse_config(text, Some(TaskKind::Eig)).unwrap_err();
        let all = err.to_string();
        assert!(err.0.len() >= 4, "{all}");
        assert!(all.contains("did you mean 'lambda'"), "{all}");
        assert!(all.contains("position 4"), "{all}");
        assert!(all.contains("ntheta"), "{all}");
        assert!(all.contains("s must lie in (0,1)"), "{all}");
    }

    #[test]
    fn task_names_must_agree() {
        let text = "[params]\ns = 0.5\n[cone]\npreset = full\n[task]\nname = hardy\n";
        assert!(parse_config(text, Some(TaskKind::Eig)).is_err());
        let cfg = parse_config(text, None).unwrap();
        assert_eq!(cfg.task.kind(), TaskKind::Hardy);
        assert!(parse_config("[params]\ns = 0.5\n[cone]\npreset = full\n", None).is_err());
    }

    #[test]
    fn lists_and_expressions() {
        let text = "[params]\ns = 0.5\n[cone]\ng_plus = 1\ng_minus = 1\n[task]\narcs = pi/2, pow(2, 1)*pi/2\n";
        let cfg = parse_config(text, Some(TaskKind::Scan)).unwrap();
        let TaskConfig::Scan { arcs, .. } = cfg.task else { panic!() };
        assert_eq!(arcs.len(), 2);
        assert!((arcs[1] - std::f64::consts::PI).abs() < 1e-15);
        let bad = "[params]\ns = 0.5\n[cone]\npreset = half\n[expressions]\nh = 1/x1\n";
        let err = parse_config(bad, Some(TaskKind::SolveExt)).unwrap_err();
        assert!(err.to_string().contains("division by zero"), "{err}");
    }

    #[test]
    fn frequency_modes_are_checked() {
        let base = "[params]\ns = 0.5\n[cone]\npreset = half\n[task]\n";
        let cfg = parse_config(&format!("{base}modes = 1:1, 2:0.2\n"), Some(TaskKind::Frequency)).unwrap();
        let TaskConfig::Frequency { field, .. } = cfg.task else { panic!() };
        assert_eq!(field, FieldSource::Manufactured(vec![(1, 1.0), (2, 0.2)]));
        assert!(parse_config(&format!("{base}modes = 9:1\n"), Some(TaskKind::Frequency)).is_err());
        assert!(parse_config(&format!("{base}modes = x\n"), Some(TaskKind::Frequency)).is_err());
        assert!(parse_config(&format!("{base}count = 3\n"), Some(TaskKind::Frequency)).is_err());
    }

    #[test]
    fn smoothing_index_is_enforced() {
        let text = "[params]\ns = 0.5\n[cone]\ng_plus = 2\ng_minus = 1\n[task]\nn = 4\n";
        let err = parse_config(text, Some(TaskKind::SmoothCone)).unwrap_err();
        assert!(err.to_string().contains("12"), "{err}");
    }

    #[test]
    fn structural_errors() {
        let err = parse_config("s = 0.5\n[param]\n[cone]\npreset = half\npreset = full\nnonsense\n", Some(TaskKind::Eig)).unwrap_err();
        let all = err.to_string();
        assert!(all.contains("outside of any"), "{all}");
        assert!(all.contains("did you mean 'params'"), "{all}");
        assert!(all.contains("duplicate"), "{all}");
        assert!(all.contains("key = value"), "{all}");
    }
}
