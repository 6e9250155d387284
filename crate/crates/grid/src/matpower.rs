//! A documented subset of the MATPOWER case format.
//!
//! Accepted input: `mpc.baseMVA = <number>;` and the matrix assignments
//! `mpc.bus`, `mpc.branch`, `mpc.gen` and `mpc.gencost` written as bracketed
//! numeric rows. Rows end with `;` or a newline, entries are separated by
//! whitespace or commas, `%` starts a comment. Other `mpc.*` assignments and
//! the `function` header are skipped. Expressions, concatenation and
//! anything else that needs an interpreter are rejected.

use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("missing mpc.{0}")]
    Missing(&'static str),
    #[error("line {line}: row has {found} entries, expected {expected}")]
    Ragged { line: usize, found: usize, expected: usize },
    #[error("line {line}: {table} rows need at least {min} columns, found {found}")]
    TooFewColumns {
        line: usize,
        table: &'static str,
        min: usize,
        found: usize,
    },
    #[error("line {line}: cannot read {token:?} as a number (only plain numeric literals are supported)")]
    Number { line: usize, token: String },
    #[error("line {line}: unterminated matrix for mpc.{table}")]
    Unterminated { line: usize, table: String },
    #[error("line {line}: unsupported syntax: {text}")]
    Unsupported { line: usize, text: String },
    #[error("{0}")]
    Invalid(String),
}

macro_rules! row_type {
    ($name:ident, $min:expr, { $($getter:ident : $col:expr),* $(,)? }) => {
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name(pub Vec<f64>);

        impl $name {
            pub const MIN_COLUMNS: usize = $min;
            $(
                pub fn $getter(&self) -> f64 {
                    self.0[$col]
                }
            )*
            pub fn get(&self, col: usize) -> Option<f64> {
                self.0.get(col).copied()
            }
        }
    };
}

row_type!(BusRow, 4, { pd: 2, qd: 3 });
row_type!(BranchRow, 4, { r: 2, x: 3 });
row_type!(GenRow, 10, { qmax: 3, qmin: 4, pmax: 8, pmin: 9 });
row_type!(GenCostRow, 4, { model: 0 });

impl BusRow {
    pub fn id(&self) -> usize {
        self.0[0] as usize
    }
    pub fn kind(&self) -> i64 {
        self.0[1] as i64
    }
    pub fn gs(&self) -> f64 {
        self.get(4).unwrap_or(0.0)
    }
    pub fn bs(&self) -> f64 {
        self.get(5).unwrap_or(0.0)
    }
    pub fn vmax(&self) -> f64 {
        self.get(11).unwrap_or(1.1)
    }
    pub fn vmin(&self) -> f64 {
        self.get(12).unwrap_or(0.9)
    }
}

impl BranchRow {
    pub fn from(&self) -> usize {
        self.0[0] as usize
    }
    pub fn to(&self) -> usize {
        self.0[1] as usize
    }
    pub fn b(&self) -> f64 {
        self.get(4).unwrap_or(0.0)
    }
    /// MVA rating; zero means unlimited.
    pub fn rate_a(&self) -> f64 {
        self.get(5).unwrap_or(0.0)
    }
    pub fn in_service(&self) -> bool {
        self.get(10).is_none_or(|s| s != 0.0)
    }
}

impl GenRow {
    pub fn bus(&self) -> usize {
        self.0[0] as usize
    }
    pub fn in_service(&self) -> bool {
        self.get(7).is_none_or(|s| s > 0.0)
    }
}

impl GenCostRow {
    /// Polynomial coefficients `(c2, c1, c0)` of a model-2 row; missing
    /// high-order terms are zero.
    pub fn quadratic(&self) -> Option<(f64, f64, f64)> {
        if self.model() != 2.0 {
            return None;
        }
        let n = self.0[3] as usize;
        let c = self.0.get(4..4 + n)?;
        let pick = |power: usize| if power < n { c[n - 1 - power] } else { 0.0 };
        Some((pick(2), pick(1), pick(0)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseData {
    pub name: String,
    pub base_mva: f64,
    pub bus: Vec<BusRow>,
    pub branch: Vec<BranchRow>,
    pub gen: Vec<GenRow>,
    pub gencost: Vec<GenCostRow>,
}

impl CaseData {
    /// Active and reactive cost rows of generator `g`, when present.
    pub fn cost_of(&self, g: usize) -> (Option<&GenCostRow>, Option<&GenCostRow>) {
        let ng = self.gen.len();
        (self.gencost.get(g), if self.gencost.len() == 2 * ng { self.gencost.get(ng + g) } else { None })
    }

    pub fn bus_index(&self, id: usize) -> Option<usize> {
        self.bus.iter().position(|b| b.id() == id)
    }

    pub fn validate(&self) -> Result<(), ParseError> {
        let mut ids: Vec<usize> = self.bus.iter().map(|b| b.id()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(ParseError::Invalid("bus ids are not unique".into()));
        }
        for (i, br) in self.branch.iter().enumerate() {
            for end in [br.from(), br.to()] {
                if self.bus_index(end).is_none() {
                    return Err(ParseError::Invalid(format!("branch {} references missing bus {end}", i + 1)));
                }
            }
            if br.rate_a() < 0.0 {
                return Err(ParseError::Invalid(format!("branch {} has negative rateA", i + 1)));
            }
        }
        for (i, g) in self.gen.iter().enumerate() {
            if self.bus_index(g.bus()).is_none() {
                return Err(ParseError::Invalid(format!("generator {} references missing bus {}", i + 1, g.bus())));
            }
        }
        // an optional second block of rows holds reactive-power costs
        let ng = self.gen.len();
        if !self.gencost.is_empty() && self.gencost.len() != ng && self.gencost.len() != 2 * ng {
            return Err(ParseError::Invalid(format!(
                "{} gencost rows for {} generators",
                self.gencost.len(),
                self.gen.len()
            )));
        }
        Ok(())
    }

    /// Writes the case back in the accepted subset.
    pub fn to_case_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "function mpc = {}", self.name).unwrap();
        writeln!(s, "mpc.version = '2';").unwrap();
        writeln!(s, "mpc.baseMVA = {};", self.base_mva).unwrap();
        let mut table = |name: &str, rows: &mut dyn Iterator<Item = &Vec<f64>>| {
            writeln!(s, "mpc.{name} = [").unwrap();
            for r in rows {
                let cells: Vec<String> = r.iter().map(|v| fmt_num(*v)).collect();
                writeln!(s, "\t{};", cells.join("\t")).unwrap();
            }
            writeln!(s, "];").unwrap();
        };
        table("bus", &mut self.bus.iter().map(|r| &r.0));
        table("branch", &mut self.branch.iter().map(|r| &r.0));
        table("gen", &mut self.gen.iter().map(|r| &r.0));
        table("gencost", &mut self.gencost.iter().map(|r| &r.0));
        s
    }
}

fn fmt_num(v: f64) -> String {
    if v == f64::INFINITY {
        "Inf".into()
    } else if v == f64::NEG_INFINITY {
        "-Inf".into()
    } else {
        format!("{v}")
    }
}

fn parse_num(tok: &str, line: usize) -> Result<f64, ParseError> {
    match tok {
        "Inf" | "inf" => return Ok(f64::INFINITY),
        "-Inf" | "-inf" => return Ok(f64::NEG_INFINITY),
        _ => {}
    }
    let ok = tok
        .chars()
        .all(|c| c.is_ascii_digit() || matches!(c, '.' | '-' | '+' | 'e' | 'E'));
    if !ok {
        return Err(ParseError::Number {
            line,
            token: tok.to_string(),
        });
    }
    tok.parse::<f64>().map_err(|_| ParseError::Number {
        line,
        token: tok.to_string(),
    })
}

fn strip_comment(line: &str) -> &str {
    // no string literals in the accepted subset contain '%'
    match line.find('%') {
        Some(i) => &line[..i],
        None => line,
    }
}

struct RawMatrix {
    rows: Vec<(usize, Vec<f64>)>,
}

/// Parses the body of a matrix from `text` (after the opening bracket).
/// Returns the rows and whether the closing bracket was seen.
fn push_matrix_text(text: &str, line: usize, cur: &mut Vec<f64>, out: &mut RawMatrix) -> Result<bool, ParseError> {
    let (body, closed) = match text.find(']') {
        Some(i) => {
            let rest = text[i + 1..].trim();
            if !(rest.is_empty() || rest == ";") {
                return Err(ParseError::Unsupported {
                    line,
                    text: text.trim().to_string(),
                });
            }
            (&text[..i], true)
        }
        None => (text, false),
    };
    if body.contains('[') {
        return Err(ParseError::Unsupported {
            line,
            text: "nested brackets or concatenation".into(),
        });
    }
    let mut pieces = body.split(';').peekable();
    while let Some(piece) = pieces.next() {
        for tok in piece.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty()) {
            cur.push(parse_num(tok, line)?);
        }
        // a ';' ends the row; so does the end of a physical line
        if (pieces.peek().is_some() || !closed) && !cur.is_empty() {
            out.rows.push((line, std::mem::take(cur)));
        }
    }
    if closed && !cur.is_empty() {
        out.rows.push((line, std::mem::take(cur)));
    }
    Ok(closed)
}

pub fn parse_case(text: &str) -> Result<CaseData, ParseError> {
    let mut name = String::from("case");
    let mut base: Option<f64> = None;
    let mut tables: Vec<(String, RawMatrix)> = Vec::new();
    let mut open: Option<(String, usize, RawMatrix, Vec<f64>, bool)> = None;
    let mut skipping_cell: Option<(char, usize)> = None;

    for (i, raw) in text.lines().enumerate() {
        let ln = i + 1;
        let line = strip_comment(raw);
        if let Some((close, _)) = skipping_cell {
            if line.contains(close) {
                skipping_cell = None;
            }
            continue;
        }
        if let Some((tname, start, mut m, mut cur, keep)) = open.take() {
            let closed = push_matrix_text(line, ln, &mut cur, &mut m)?;
            if closed {
                if keep {
                    tables.push((tname, m));
                }
            } else {
                open = Some((tname, start, m, cur, keep));
            }
            continue;
        }
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        if let Some(rest) = t.strip_prefix("function") {
            if let Some(eq) = rest.find('=') {
                name = rest[eq + 1..].trim().trim_end_matches(';').to_string();
            }
            continue;
        }
        let Some(rest) = t.strip_prefix("mpc.") else {
            return Err(ParseError::Unsupported { line: ln, text: t.to_string() });
        };
        let Some(eq) = rest.find('=') else {
            return Err(ParseError::Unsupported { line: ln, text: t.to_string() });
        };
        let key = rest[..eq].trim().to_string();
        let value = rest[eq + 1..].trim();
        let wanted = matches!(key.as_str(), "bus" | "branch" | "gen" | "gencost");
        if key == "baseMVA" {
            let v = value.trim_end_matches(';').trim();
            base = Some(parse_num(v, ln)?);
        } else if let Some(body) = value.strip_prefix('[') {
            let mut m = RawMatrix { rows: Vec::new() };
            let mut cur = Vec::new();
            if wanted {
                if push_matrix_text(body, ln, &mut cur, &mut m)? {
                    tables.push((key, m));
                } else {
                    open = Some((key, ln, m, cur, true));
                }
            } else if !body.contains(']') {
                skipping_cell = Some((']', ln));
            }
        } else if value.starts_with('{') {
            if !value.contains('}') {
                skipping_cell = Some(('}', ln));
            }
        } else if wanted {
            return Err(ParseError::Unsupported {
                line: ln,
                text: format!("mpc.{key} must be a bracketed numeric matrix"),
            });
        }
    }
    if let Some((tname, start, ..)) = open {
        return Err(ParseError::Unterminated { line: start, table: tname });
    }
    let base_mva = base.ok_or(ParseError::Missing("baseMVA"))?;

    fn take<'a>(
        tables: &'a [(String, RawMatrix)],
        key: &'static str,
        min: usize,
    ) -> Result<Vec<Vec<f64>>, ParseError> {
        let (_, m) = tables.iter().rev().find(|(k, _)| k == key).ok_or(ParseError::Missing(key))?;
        let width = m.rows.first().map_or(0, |r| r.1.len());
        let mut out = Vec::with_capacity(m.rows.len());
        for (line, r) in &m.rows {
            if r.len() != width {
                return Err(ParseError::Ragged {
                    line: *line,
                    found: r.len(),
                    expected: width,
                });
            }
            if r.len() < min {
                return Err(ParseError::TooFewColumns {
                    line: *line,
                    table: key,
                    min,
                    found: r.len(),
                });
            }
            out.push(r.clone());
        }
        Ok(out)
    }

    let case = CaseData {
        name,
        base_mva,
        bus: take(&tables, "bus", BusRow::MIN_COLUMNS)?.into_iter().map(BusRow).collect(),
        branch: take(&tables, "branch", BranchRow::MIN_COLUMNS)?.into_iter().map(BranchRow).collect(),
        gen: take(&tables, "gen", GenRow::MIN_COLUMNS)?.into_iter().map(GenRow).collect(),
        gencost: take(&tables, "gencost", GenCostRow::MIN_COLUMNS)?.into_iter().map(GenCostRow).collect(),
    };
    case.validate()?;
    Ok(case)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn two_bus_fixture() {
        let c = parse_case(fixtures::CASE2).unwrap();
        assert_eq!(c.base_mva, 100.0);
        assert_eq!(c.bus.len(), 2);
        assert_eq!(c.branch.len(), 1);
        assert_eq!(c.gen.len(), 2);
        assert_eq!(c.gencost[0].quadratic(), Some((0.0, 20.0, 0.0)));
    }

    #[test]
    fn empty_input() {
        assert_eq!(parse_case("").unwrap_err().to_string(), "missing mpc.baseMVA");
        assert_eq!(parse_case("mpc.baseMVA = 100;").unwrap_err(), ParseError::Missing("bus"));
    }

    #[test]
    fn trailing_comments_do_not_matter() {
        let with: String = fixtures::CASE2
            .lines()
            .map(|l| format!("{l}  % trailing note; with [brackets] and 1 2 3\n"))
            .collect();
        assert_eq!(parse_case(&with).unwrap(), parse_case(fixtures::CASE2).unwrap());
    }

    #[test]
    fn whitespace_and_separators() {
        let a = "mpc.baseMVA=100;\nmpc.bus=[1 3 0 0; 2 1 50 10];\nmpc.branch=[1,2,0.01,0.1];\nmpc.gen=[1 0 0 10 -10 1 100 1 200 0];\nmpc.gencost=[2 0 0 2 20 0];";
        let b = "mpc.baseMVA = 100;\nmpc.bus = [\n  1   3   0   0\n  2 1 50 10 ;\n];\nmpc.branch = [ 1 , 2 , 0.01 , 0.1 ];\nmpc.gen = [\n1\t0\t0\t10\t-10\t1\t100\t1\t200\t0;\n];\nmpc.gencost = [2 0 0 2 20 0;];";
        assert_eq!(parse_case(a).unwrap(), parse_case(b).unwrap());
    }

    #[test]
    fn ragged_rows_report_their_line() {
        let t = "mpc.baseMVA = 100;\nmpc.bus = [\n1 3 0 0;\n2 1 0;\n];";
        assert_eq!(
            parse_case(t).unwrap_err(),
            ParseError::Ragged {
                line: 4,
                found: 3,
                expected: 4
            }
        );
    }

    #[test]
    fn expressions_are_rejected() {
        let t = "mpc.baseMVA = 100;\nmpc.bus = [1 3 2*pi 0];";
        assert!(matches!(parse_case(t).unwrap_err(), ParseError::Number { line: 2, .. }));
        let t = "mpc.baseMVA = 100;\nmpc.bus = [mpc.bus; 1 2 3 4];";
        assert!(parse_case(t).is_err());
    }

    #[test]
    fn unknown_assignments_are_skipped() {
        let t = format!(
            "{}\nmpc.bus_name = {{\n\t'A';\n\t'B';\n}};\nmpc.areas = [\n1 1;\n];\nmpc.version = '2';",
            fixtures::CASE2
        );
        assert_eq!(parse_case(&t).unwrap(), parse_case(fixtures::CASE2).unwrap());
    }

    #[test]
    fn dangling_references_are_rejected() {
        let t = "mpc.baseMVA = 100;\nmpc.bus = [1 3 0 0];\nmpc.branch = [1 2 0 0.1];\nmpc.gen = [];\nmpc.gencost = [];";
        assert!(matches!(parse_case(t).unwrap_err(), ParseError::Invalid(_)));
    }

    #[test]
    fn roundtrip_is_a_fixed_point_on_all_fixtures() {
        for (name, text) in fixtures::ALL {
            let a = parse_case(text).unwrap_or_else(|e| panic!("{name}: {e}"));
            let b = parse_case(&a.to_case_text()).unwrap();
            assert_eq!(a, b, "{name}");
            assert_eq!(a.to_case_text(), b.to_case_text(), "{name}");
        }
    }
}
