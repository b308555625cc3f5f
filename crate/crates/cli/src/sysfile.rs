//! Line-oriented system files.
//!
//! ```text
//! # comments run to the end of the line
//! [variables]
//! q0 state [-2, 2]       # name, kind, optional sampling box
//! v0 velocity
//! lam multiplier
//! A0 input
//!
//! [parameters]
//! m = 1
//!
//! [lagrangian]           # or [hamiltonian]
//! coordinates = q0, q1
//! velocities = v0, v1
//! momenta = p0, p1
//! L = m*sqrt(-v0^2 + v1^2)
//!
//! [constraints]
//! -p0^2 + p1^2 - m^2
//!
//! [inputs]
//! u = q                  # linear input with output G = q
//! A0                     # input already inside H or a constraint
//!
//! [dirac]
//! canonical              # or J = [[..]] and B = [[..]]
//!
//! [signals]
//! lam = const(0.5)       # also sin(amp, omega, phase), step(t, before, after),
//! ep_1 = step(1, 0, 2)   # table([t..], [v..])
//!
//! [simulation]
//! t0 = 0
//! t1 = 1
//! dt = 1e-3
//! x0 = 0, 0, 0, 1
//!
//! [points]               # optional explicit rank-check points
//! x = 0.3, lam = 0
//! ```

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DMatrix;
use phs_core::constraints::InputChannels;
use phs_core::dynamics::Signal;
use phs_core::expr::{declare_vars, parse_expr, Binding, Expr, ParseError, VarId, VarKind};
use phs_core::sampling::SampleBox;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SysFileError {
    pub line: usize,
    pub col: Option<usize>,
    pub message: String,
}

impl SysFileError {
    fn new(line: usize, message: impl Into<String>) -> Self {
        SysFileError {
            line,
            col: None,
            message: message.into(),
        }
    }
}

impl fmt::Display for SysFileError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.col {
            Some(c) => write!(f, "line {}, col {}: {}", self.line, c, self.message),
            None => write!(f, "line {}: {}", self.line, self.message),
        }
    }
}

impl std::error::Error for SysFileError {}

/// Canonical coordinates and their momenta.
#[derive(Clone, Debug)]
pub struct Canonical {
    pub q: Vec<VarId>,
    pub p: Vec<VarId>,
}

#[derive(Clone, Debug)]
pub enum Formulation {
    Lagrangian {
        velocities: Vec<VarId>,
        lagrangian: Expr,
        h_c: Option<Expr>,
    },
    Hamiltonian {
        hamiltonian: Expr,
    },
}

#[derive(Clone, Debug)]
pub enum DiracSection {
    Canonical,
    Matrices { j: DMatrix<f64>, b: DMatrix<f64> },
}

#[derive(Clone, Debug)]
pub struct SignalDecl {
    pub name: String,
    pub signal: Signal,
    pub line: usize,
}

#[derive(Clone, Debug)]
pub struct Simulation {
    pub t0: f64,
    pub t1: f64,
    pub dt: f64,
    pub x0: Vec<f64>,
}

/// A parsed and name-checked system file.
#[derive(Clone, Debug)]
pub struct SystemFile {
    pub vars: Vec<VarId>,
    pub sample_box: SampleBox,
    pub parameters: Binding,
    pub states: Vec<VarId>,
    pub canonical: Option<Canonical>,
    pub formulation: Formulation,
    pub constraints: Vec<Expr>,
    pub inputs: InputChannels,
    pub dirac: Option<DiracSection>,
    pub signals: Vec<SignalDecl>,
    pub simulation: Option<Simulation>,
    pub points: Vec<Binding>,
    /// Line number reported for missing sections.
    pub end_line: usize,
}

impl SystemFile {
    pub fn var(&self, name: &str) -> Option<&VarId> {
        self.vars.iter().find(|v| v.name() == name)
    }

    pub fn vars_of(&self, kind: VarKind) -> Vec<VarId> {
        self.vars.iter().filter(|v| v.kind() == kind).cloned().collect()
    }
}

const SECTIONS: [&str; 10] = [
    "variables",
    "parameters",
    "lagrangian",
    "hamiltonian",
    "constraints",
    "inputs",
    "dirac",
    "signals",
    "simulation",
    "points",
];

/// One content line: number, byte column of the text and the text itself.
#[derive(Clone, Copy, Debug)]
struct Line<'a> {
    no: usize,
    col: usize,
    text: &'a str,
}

struct Section<'a> {
    header: usize,
    lines: Vec<Line<'a>>,
}

fn split_sections(src: &str) -> Result<BTreeMap<&str, Section<'_>>, SysFileError> {
    let mut sections: BTreeMap<&str, Section<'_>> = BTreeMap::new();
    let mut current: Option<&str> = None;
    for (i, raw) in src.lines().enumerate() {
        let no = i + 1;
        let body = raw.split('#').next().unwrap_or("");
        let text = body.trim();
        if text.is_empty() {
            continue;
        }
        let col = body.len() - body.trim_start().len() + 1;
        if let Some(name) = text.strip_prefix('[').and_then(|t| t.strip_suffix(']')) {
            let name = name.trim();
            if !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                let Some(known) = SECTIONS.iter().find(|s| **s == name) else {
                    return Err(SysFileError::new(no, format!("unknown section [{name}]")));
                };
                if let Some(prev) = sections.get(known) {
                    return Err(SysFileError::new(
                        no,
                        format!("section [{name}] repeated (first at line {})", prev.header),
                    ));
                }
                sections.insert(
                    known,
                    Section {
                        header: no,
                        lines: Vec::new(),
                    },
                );
                current = Some(known);
                continue;
            }
        }
        match current {
            Some(s) => sections
                .get_mut(s)
                .expect("current section exists")
                .lines
                .push(Line { no, col, text }),
            None => return Err(SysFileError::new(no, "content before the first section header")),
        }
    }
    Ok(sections)
}

/// `key = value`, with the column where the value starts.
fn key_value(line: Line<'_>) -> Result<(&str, Line<'_>), SysFileError> {
    let Some(eq) = line.text.find('=') else {
        return Err(SysFileError::new(
            line.no,
            format!("expected `key = value`, got `{}`", line.text),
        ));
    };
    let key = line.text[..eq].trim();
    let rest = &line.text[eq + 1..];
    let value = rest.trim_start();
    if key.is_empty() {
        return Err(SysFileError::new(line.no, "missing key before `=`"));
    }
    let col = line.col + eq + 1 + (rest.len() - value.len());
    Ok((
        key,
        Line {
            no: line.no,
            col,
            text: value.trim_end(),
        },
    ))
}

fn key_values<'a>(section: &Section<'a>, allowed: &[&str]) -> Result<BTreeMap<&'a str, Line<'a>>, SysFileError> {
    let mut out = BTreeMap::new();
    for line in &section.lines {
        let (key, value) = key_value(*line)?;
        if !allowed.is_empty() && !allowed.contains(&key) {
            return Err(SysFileError::new(
                line.no,
                format!("unknown key `{key}` (expected one of {})", allowed.join(", ")),
            ));
        }
        if out.insert(key, value).is_some() {
            return Err(SysFileError::new(line.no, format!("key `{key}` repeated")));
        }
    }
    Ok(out)
}

fn expr_error(line: Line<'_>, e: ParseError) -> SysFileError {
    let (_, col) = e.position();
    let message = match e {
        ParseError::Syntax { message, .. } => format!("syntax error: {message}"),
        ParseError::Undeclared { name, .. } => format!("undeclared identifier `{name}`"),
        ParseError::MalformedNumber { text, .. } => format!("malformed number `{text}`"),
    };
    SysFileError {
        line: line.no,
        col: Some(line.col + col - 1),
        message,
    }
}

fn expr(line: Line<'_>, vars: &[VarId]) -> Result<Expr, SysFileError> {
    parse_expr(line.text, vars).map_err(|e| expr_error(line, e))
}

/// A constant numeric expression such as `1e-3` or `2*0.5`.
fn number(line: Line<'_>) -> Result<f64, SysFileError> {
    let e = expr(line, &[])?;
    match e.evaluate(&Binding::new()) {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(SysFileError {
            line: line.no,
            col: Some(line.col),
            message: format!("`{}` is not a finite number", line.text),
        }),
    }
}

/// Split on commas, keeping the column of each piece.
fn pieces(line: Line<'_>) -> Vec<Line<'_>> {
    let mut out = Vec::new();
    let mut start = 0;
    for part in line.text.split(',') {
        let lead = part.len() - part.trim_start().len();
        out.push(Line {
            no: line.no,
            col: line.col + start + lead,
            text: part.trim(),
        });
        start += part.len() + 1;
    }
    out
}

fn numbers(line: Line<'_>) -> Result<Vec<f64>, SysFileError> {
    if line.text.is_empty() {
        return Ok(Vec::new());
    }
    pieces(line).into_iter().map(number).collect()
}

fn lookup(vars: &[VarId], name: &str, line: usize) -> Result<VarId, SysFileError> {
    vars.iter()
        .find(|v| v.name() == name)
        .cloned()
        .ok_or_else(|| SysFileError::new(line, format!("undeclared variable `{name}`")))
}

fn name_list(line: Line<'_>, vars: &[VarId], kind: VarKind) -> Result<Vec<VarId>, SysFileError> {
    let mut out: Vec<VarId> = Vec::new();
    for piece in pieces(line) {
        let v = lookup(vars, piece.text, line.no)?;
        if v.kind() != kind {
            return Err(SysFileError::new(
                line.no,
                format!(
                    "`{}` is a {}, expected a {}",
                    v.name(),
                    v.kind().as_str(),
                    kind.as_str()
                ),
            ));
        }
        if out.contains(&v) {
            return Err(SysFileError::new(line.no, format!("`{}` listed twice", v.name())));
        }
        out.push(v);
    }
    Ok(out)
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    chars.next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn matrix(line: Line<'_>) -> Result<DMatrix<f64>, SysFileError> {
    let rows: Vec<Vec<f64>> = serde_json::from_str(line.text).map_err(|e| SysFileError {
        line: line.no,
        col: Some(line.col),
        message: format!("bad matrix: {e}"),
    })?;
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(SysFileError::new(line.no, "matrix rows have different lengths"));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(SysFileError::new(line.no, "matrix entries must be finite"));
    }
    Ok(DMatrix::from_row_iterator(
        rows.len(),
        ncols,
        rows.into_iter().flatten(),
    ))
}

fn signal(line: Line<'_>) -> Result<Signal, SysFileError> {
    let err = |m: String| SysFileError {
        line: line.no,
        col: Some(line.col),
        message: m,
    };
    let open = line
        .text
        .find('(')
        .ok_or_else(|| err(format!("expected a signal like `const(1)`, got `{}`", line.text)))?;
    let Some(inner) = line.text[open + 1..].strip_suffix(')') else {
        return Err(err("missing closing `)`".into()));
    };
    let kind = line.text[..open].trim();
    if kind == "table" {
        let cols: (Vec<f64>, Vec<f64>) =
            serde_json::from_str(&format!("[{inner}]")).map_err(|e| err(format!("bad table: {e}")))?;
        return phs_core::dynamics::Table::new(cols.0, cols.1)
            .map(Signal::Table)
            .map_err(|e| err(e.to_string()));
    }
    let args = numbers(Line {
        no: line.no,
        col: line.col + open + 1,
        text: inner,
    })?;
    let want = match kind {
        "const" => 1,
        "sin" | "step" => 3,
        _ => return Err(err(format!("unknown signal `{kind}` (const, sin, step, table)"))),
    };
    if args.len() != want {
        return Err(err(format!("`{kind}` takes {want} argument(s), got {}", args.len())));
    }
    Ok(match kind {
        "const" => Signal::constant(args[0]),
        "sin" => Signal::sin(args[0], args[1], args[2]),
        _ => Signal::step(args[0], args[1], args[2]),
    })
}

fn missing(section: &Section<'_>, key: &str, name: &str) -> SysFileError {
    SysFileError::new(section.header, format!("[{name}] needs `{key} = ...`"))
}

pub fn parse_system(src: &str) -> Result<SystemFile, SysFileError> {
    let sections = split_sections(src)?;
    let end_line = src.lines().count().max(1);

    // declarations: [variables] then [parameters] names not declared there
    let mut decls: Vec<(String, VarKind, usize)> = Vec::new();
    let mut bounds: Vec<(usize, f64, f64)> = Vec::new();
    if let Some(sec) = sections.get("variables") {
        for line in &sec.lines {
            let (head, tail) = match line.text.find('[') {
                Some(i) => (
                    &line.text[..i],
                    Some(Line {
                        no: line.no,
                        col: line.col + i,
                        text: &line.text[i..],
                    }),
                ),
                None => (line.text, None),
            };
            let words: Vec<&str> = head.split_whitespace().collect();
            let [name, kind] = words[..] else {
                return Err(SysFileError::new(
                    line.no,
                    format!("expected `name kind [lo, hi]`, got `{}`", line.text),
                ));
            };
            if !is_identifier(name) {
                return Err(SysFileError::new(line.no, format!("`{name}` is not a valid name")));
            }
            let kind = VarKind::from_name(kind).ok_or_else(|| {
                SysFileError::new(
                    line.no,
                    format!("unknown kind `{kind}` (state, velocity, input, multiplier, parameter)"),
                )
            })?;
            if let Some(tail) = tail {
                let b: [f64; 2] = serde_json::from_str(tail.text).map_err(|e| SysFileError {
                    line: line.no,
                    col: Some(tail.col),
                    message: format!("bad bounds: {e}"),
                })?;
                if !(b[0] < b[1]) || !b[0].is_finite() || !b[1].is_finite() {
                    return Err(SysFileError::new(line.no, "bounds must be finite with lo < hi"));
                }
                bounds.push((decls.len(), b[0], b[1]));
            }
            if decls.iter().any(|d| d.0 == name) {
                return Err(SysFileError::new(line.no, format!("`{name}` declared twice")));
            }
            decls.push((name.to_string(), kind, line.no));
        }
    }
    let mut param_values: Vec<(String, Line<'_>)> = Vec::new();
    if let Some(sec) = sections.get("parameters") {
        for line in &sec.lines {
            let (key, value) = key_value(*line)?;
            if !is_identifier(key) {
                return Err(SysFileError::new(line.no, format!("`{key}` is not a valid name")));
            }
            if param_values.iter().any(|(k, _)| k == key) {
                return Err(SysFileError::new(line.no, format!("parameter `{key}` set twice")));
            }
            match decls.iter().find(|d| d.0 == key) {
                Some((_, VarKind::Parameter, _)) => {}
                Some((_, kind, _)) => {
                    return Err(SysFileError::new(
                        line.no,
                        format!("`{key}` is declared as a {}", kind.as_str()),
                    ));
                }
                None => decls.push((key.to_string(), VarKind::Parameter, line.no)),
            }
            param_values.push((key.to_string(), value));
        }
    }
    let vars = declare_vars(decls.iter().map(|(n, k, _)| (n.as_str(), *k)))
        .map_err(|e| SysFileError::new(1, e.to_string()))?;
    let mut sample_box = SampleBox::new();
    for (i, lo, hi) in bounds {
        sample_box.set(&vars[i], lo, hi);
    }
    let mut parameters = Binding::new();
    for (name, value) in &param_values {
        parameters.set(&lookup(&vars, name, value.no)?, number(*value)?);
    }

    // formulation
    let (formulation, states, canonical) = match (sections.get("lagrangian"), sections.get("hamiltonian")) {
        (Some(_), Some(h)) => {
            return Err(SysFileError::new(
                h.header,
                "a file has either [lagrangian] or [hamiltonian], not both",
            ))
        }
        (None, None) => {
            return Err(SysFileError::new(
                end_line,
                "missing [lagrangian] or [hamiltonian] section",
            ))
        }
        (Some(sec), None) => {
            let kv = key_values(sec, &["coordinates", "velocities", "momenta", "L", "H_c"])?;
            let get = |k: &str| kv.get(k).copied().ok_or_else(|| missing(sec, k, "lagrangian"));
            let q = name_list(get("coordinates")?, &vars, VarKind::State)?;
            let v = name_list(get("velocities")?, &vars, VarKind::Velocity)?;
            let p = name_list(get("momenta")?, &vars, VarKind::State)?;
            if q.len() != v.len() || q.len() != p.len() {
                return Err(SysFileError::new(
                    sec.header,
                    "coordinates, velocities and momenta must have equal length",
                ));
            }
            if let Some(dup) = q.iter().find(|x| p.contains(x)) {
                return Err(SysFileError::new(
                    sec.header,
                    format!("`{}` is both a coordinate and a momentum", dup.name()),
                ));
            }
            let lagrangian = expr(get("L")?, &vars)?;
            let h_c = kv.get("H_c").map(|l| expr(*l, &vars)).transpose()?;
            let states = q.iter().chain(&p).cloned().collect();
            (
                Formulation::Lagrangian {
                    velocities: v,
                    lagrangian,
                    h_c,
                },
                states,
                Some(Canonical { q, p }),
            )
        }
        (None, Some(sec)) => {
            let kv = key_values(sec, &["coordinates", "momenta", "states", "H"])?;
            let hamiltonian = expr(
                kv.get("H").copied().ok_or_else(|| missing(sec, "H", "hamiltonian"))?,
                &vars,
            )?;
            let (states, canonical) = match (kv.get("states"), kv.get("coordinates"), kv.get("momenta")) {
                (Some(s), None, None) => (name_list(*s, &vars, VarKind::State)?, None),
                (None, Some(q), Some(p)) => {
                    let q = name_list(*q, &vars, VarKind::State)?;
                    let p = name_list(*p, &vars, VarKind::State)?;
                    if q.len() != p.len() {
                        return Err(SysFileError::new(
                            sec.header,
                            "coordinates and momenta must have equal length",
                        ));
                    }
                    if let Some(dup) = q.iter().find(|x| p.contains(x)) {
                        return Err(SysFileError::new(
                            sec.header,
                            format!("`{}` is both a coordinate and a momentum", dup.name()),
                        ));
                    }
                    (q.iter().chain(&p).cloned().collect(), Some(Canonical { q, p }))
                }
                _ => {
                    return Err(SysFileError::new(
                        sec.header,
                        "[hamiltonian] needs either `states = ...` or both `coordinates` and `momenta`",
                    ))
                }
            };
            (Formulation::Hamiltonian { hamiltonian }, states, canonical)
        }
    };
    if states.is_empty() {
        return Err(SysFileError::new(end_line, "no state variables"));
    }

    let constraints = match sections.get("constraints") {
        Some(sec) => sec
            .lines
            .iter()
            .map(|l| expr(*l, &vars))
            .collect::<Result<Vec<_>, _>>()?,
        None => Vec::new(),
    };
    if !constraints.is_empty() && canonical.is_none() {
        return Err(SysFileError::new(
            sections["constraints"].header,
            "constraints need canonical `coordinates` and `momenta`",
        ));
    }

    let mut inputs = InputChannels::default();
    if let Some(sec) = sections.get("inputs") {
        let mut seen: Vec<VarId> = Vec::new();
        for line in &sec.lines {
            let (name, output) = if line.text.contains('=') {
                let (k, v) = key_value(*line)?;
                (k, Some(v))
            } else {
                (line.text, None)
            };
            let u = lookup(&vars, name, line.no)?;
            if u.kind() != VarKind::Input {
                return Err(SysFileError::new(
                    line.no,
                    format!("`{name}` is a {}, expected an input", u.kind().as_str()),
                ));
            }
            if seen.contains(&u) {
                return Err(SysFileError::new(line.no, format!("input `{name}` listed twice")));
            }
            seen.push(u.clone());
            match output {
                Some(v) => inputs.linear.push((u, expr(v, &vars)?)),
                None => inputs.nonlinear.push(u),
            }
        }
    }

    let n = states.len();
    let dirac = match sections.get("dirac") {
        None => None,
        Some(sec) if sec.lines.len() == 1 && sec.lines[0].text == "canonical" => {
            if canonical.is_none() {
                return Err(SysFileError::new(
                    sec.lines[0].no,
                    "a canonical structure needs `coordinates` and `momenta`",
                ));
            }
            Some(DiracSection::Canonical)
        }
        Some(sec) => {
            let kv = key_values(sec, &["J", "B"])?;
            let j = matrix(kv.get("J").copied().ok_or_else(|| missing(sec, "J", "dirac"))?)?;
            if j.nrows() != n || j.ncols() != n {
                return Err(SysFileError::new(
                    kv["J"].no,
                    format!("J is {}x{}, expected {n}x{n}", j.nrows(), j.ncols()),
                ));
            }
            let b = match kv.get("B") {
                Some(l) => {
                    let b = matrix(*l)?;
                    if b.nrows() != n || b.ncols() == 0 {
                        return Err(SysFileError::new(
                            l.no,
                            format!("B is {}x{}, expected {n} rows", b.nrows(), b.ncols()),
                        ));
                    }
                    b
                }
                None => DMatrix::zeros(n, 0),
            };
            Some(DiracSection::Matrices { j, b })
        }
    };

    let mut signals = Vec::new();
    if let Some(sec) = sections.get("signals") {
        for line in &sec.lines {
            let (name, value) = key_value(*line)?;
            if signals.iter().any(|s: &SignalDecl| s.name == name) {
                return Err(SysFileError::new(line.no, format!("signal for `{name}` given twice")));
            }
            signals.push(SignalDecl {
                name: name.to_string(),
                signal: signal(value)?,
                line: line.no,
            });
        }
    }

    let simulation = match sections.get("simulation") {
        None => None,
        Some(sec) => {
            let kv = key_values(sec, &["t0", "t1", "dt", "x0"])?;
            let get = |k: &str| kv.get(k).copied().ok_or_else(|| missing(sec, k, "simulation"));
            let t0 = kv.get("t0").map(|l| number(*l)).transpose()?.unwrap_or(0.0);
            let x0 = numbers(get("x0")?)?;
            if x0.len() != n {
                return Err(SysFileError::new(
                    kv["x0"].no,
                    format!("x0 has {} entries for {n} states", x0.len()),
                ));
            }
            Some(Simulation {
                t0,
                t1: number(get("t1")?)?,
                dt: number(get("dt")?)?,
                x0,
            })
        }
    };

    let mut points = Vec::new();
    if let Some(sec) = sections.get("points") {
        for line in &sec.lines {
            let mut b = parameters.clone();
            for piece in pieces(*line) {
                let (name, value) = key_value(piece)?;
                b.set(&lookup(&vars, name, line.no)?, number(value)?);
            }
            points.push(b);
        }
    }

    Ok(SystemFile {
        vars,
        sample_box,
        parameters,
        states,
        canonical,
        formulation,
        constraints,
        inputs,
        dirac,
        signals,
        simulation,
        points,
        end_line,
    })
}
