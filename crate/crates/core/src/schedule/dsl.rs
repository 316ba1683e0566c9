//! Line-oriented schedule files.
//!
//! ```text
//! # CPU SpMV
//! CHUNK = 16
//! split(i, i0, i1, CHUNK)
//! reorder(i0, i1, j)
//! parallelize(i0, CPUThread, NoRaces)
//! ```
//!
//! Each line holds one directive; `#` starts a comment. `NAME = expr`
//! defines an integer constant, where `expr` multiplies and divides integers
//! and earlier constants. Chained-call syntax (`.split(...)`, `reorder({..})`,
//! `ParallelUnit::GPUBlock`) is accepted as well.

use std::collections::BTreeMap;

use super::provenance::BoundType;
use super::{ParallelUnit, RaceStrategy, SchedError, ScheduledStmt};

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum DslError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: {source}")]
    Apply { line: usize, source: SchedError },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Directive {
    Split(String, String, String, usize),
    Divide(String, String, String, usize),
    Fuse(String, String, String),
    Reorder(Vec<String>),
    Pos(String, String, String),
    Coord(String, String),
    Parallelize(String, ParallelUnit, RaceStrategy),
    Unroll(String, usize),
    Bound(String, String, usize, BoundType),
    Precompute(String, String, String, String),
}

impl Directive {
    pub fn apply(&self, s: &ScheduledStmt) -> Result<ScheduledStmt, SchedError> {
        match self {
            Directive::Split(i, o, n, k) => s.split(i, o, n, *k),
            Directive::Divide(i, o, n, k) => s.divide(i, o, n, *k),
            Directive::Fuse(i, j, f) => s.fuse(i, j, f),
            Directive::Reorder(vs) => {
                let vs: Vec<&str> = vs.iter().map(String::as_str).collect();
                s.reorder(&vs)
            }
            Directive::Pos(i, p, t) => s.pos(i, p, t),
            Directive::Coord(p, i) => s.coord(p, i),
            Directive::Parallelize(i, u, r) => s.parallelize(i, *u, *r),
            Directive::Unroll(i, k) => s.unroll(i, *k),
            Directive::Bound(i, b, n, t) => s.bound(i, b, *n, *t),
            Directive::Precompute(e, i, p, w) => s.precompute(e, i, p, w),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Schedule {
    pub directives: Vec<(usize, Directive)>,
}

impl Schedule {
    pub fn apply(&self, stmt: &ScheduledStmt) -> Result<ScheduledStmt, DslError> {
        let mut s = stmt.clone();
        for (line, d) in &self.directives {
            s = d.apply(&s).map_err(|source| DslError::Apply {
                line: *line,
                source,
            })?;
        }
        Ok(s)
    }
}

/// Splits on top-level commas, ignoring commas nested in parentheses.
fn split_args(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut cur = String::new();
    for c in s.chars() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            _ => {}
        }
        if c == ',' && depth == 0 {
            out.push(cur.trim().to_string());
            cur.clear();
        } else {
            cur.push(c);
        }
    }
    if !cur.trim().is_empty() {
        out.push(cur.trim().to_string());
    }
    out
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn int_expr(s: &str, consts: &BTreeMap<String, usize>) -> Option<usize> {
    let mut value: Option<usize> = None;
    let mut op = '*';
    let mut rest = s.trim();
    loop {
        let end = rest.find(['*', '/']).unwrap_or(rest.len());
        let tok = rest[..end].trim();
        let n = tok
            .parse::<usize>()
            .ok()
            .or_else(|| consts.get(tok).copied())?;
        value = Some(match (value, op) {
            (None, _) => n,
            (Some(v), '*') => v.checked_mul(n)?,
            (Some(v), _) => v.checked_div(n)?,
        });
        if end == rest.len() {
            return value;
        }
        op = rest[end..].chars().next()?;
        rest = &rest[end + 1..];
    }
}

pub fn parse_schedule(text: &str) -> Result<Schedule, DslError> {
    let mut consts = BTreeMap::new();
    let mut sched = Schedule::default();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        let body = body.trim_start_matches('.').trim_end_matches(';').trim();
        if body.is_empty() {
            continue;
        }
        let err = |msg: String| DslError::Syntax { line, msg };
        if let Some((name, value)) = body.split_once('=') {
            let name = name.trim();
            if is_ident(name) && !body.contains('(') {
                let v = int_expr(value, &consts)
                    .ok_or_else(|| err(format!("bad constant '{}'", value.trim())))?;
                consts.insert(name.to_string(), v);
                continue;
            }
        }
        let open = body
            .find('(')
            .ok_or_else(|| err(format!("expected a directive, got '{body}'")))?;
        if !body.ends_with(')') {
            return Err(err("missing closing ')'".into()));
        }
        let name = body[..open].trim();
        let inner = body[open + 1..body.len() - 1].replace(['{', '}'], "");
        let args = split_args(&inner);
        let arity = |k: usize| -> Result<(), DslError> {
            if args.len() == k {
                Ok(())
            } else {
                Err(err(format!(
                    "{name} takes {k} arguments, got {}",
                    args.len()
                )))
            }
        };
        let ident = |k: usize| -> Result<String, DslError> {
            if is_ident(&args[k]) {
                Ok(args[k].clone())
            } else {
                Err(err(format!("'{}' is not an index variable name", args[k])))
            }
        };
        let int = |k: usize| -> Result<usize, DslError> {
            int_expr(&args[k], &consts)
                .ok_or_else(|| err(format!("'{}' is not an integer", args[k])))
        };
        let d = match name {
            "split" | "divide" => {
                arity(4)?;
                let (i, o, p, k) = (ident(0)?, ident(1)?, ident(2)?, int(3)?);
                if name == "split" {
                    Directive::Split(i, o, p, k)
                } else {
                    Directive::Divide(i, o, p, k)
                }
            }
            "fuse" => {
                arity(3)?;
                Directive::Fuse(ident(0)?, ident(1)?, ident(2)?)
            }
            "reorder" => Directive::Reorder((0..args.len()).map(ident).collect::<Result<_, _>>()?),
            "pos" => {
                arity(3)?;
                Directive::Pos(ident(0)?, ident(1)?, args[2].clone())
            }
            "coord" => {
                arity(2)?;
                Directive::Coord(ident(0)?, ident(1)?)
            }
            "parallelize" => {
                arity(3)?;
                Directive::Parallelize(
                    ident(0)?,
                    args[1].parse().map_err(err)?,
                    args[2].parse().map_err(err)?,
                )
            }
            "unroll" => {
                arity(2)?;
                Directive::Unroll(ident(0)?, int(1)?)
            }
            "bound" => {
                arity(4)?;
                let kind = args[3].rsplit("::").next().unwrap_or("");
                if kind != "MaxExact" {
                    return Err(err(format!("unsupported bound type '{}'", args[3])));
                }
                Directive::Bound(ident(0)?, ident(1)?, int(2)?, BoundType::MaxExact)
            }
            "precompute" => {
                arity(4)?;
                Directive::Precompute(ident(0)?, ident(1)?, ident(2)?, ident(3)?)
            }
            other => return Err(err(format!("unknown directive '{other}'"))),
        };
        sched.directives.push((line, d));
    }
    Ok(sched)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_both_styles() {
        let s = parse_schedule(
            "# comment\nCHUNK = 16\nW = CHUNK / 4 * 2\n.split(i, i0, i1, CHUNK)\nreorder({i0, i1, j});\n\
             parallelize(i0, ParallelUnit::CPUThread, OutputRaceStrategy::NoRaces)\n\
             pos(f, fpos, A(i, j))\nbound(k, kb, W, BoundType::MaxExact)\n",
        )
        .unwrap();
        let ds: Vec<&Directive> = s.directives.iter().map(|(_, d)| d).collect();
        assert_eq!(
            ds[0],
            &Directive::Split("i".into(), "i0".into(), "i1".into(), 16)
        );
        assert_eq!(
            ds[1],
            &Directive::Reorder(vec!["i0".into(), "i1".into(), "j".into()])
        );
        assert_eq!(
            ds[2],
            &Directive::Parallelize("i0".into(), ParallelUnit::CPUThread, RaceStrategy::NoRaces)
        );
        assert_eq!(
            ds[3],
            &Directive::Pos("f".into(), "fpos".into(), "A(i, j)".into())
        );
        assert_eq!(
            ds[4],
            &Directive::Bound("k".into(), "kb".into(), 8, BoundType::MaxExact)
        );
        assert_eq!(s.directives[0].0, 4);
    }

    #[test]
    fn errors_carry_lines() {
        assert!(matches!(
            parse_schedule("\nsplit(i, a, b)"),
            Err(DslError::Syntax { line: 2, .. })
        ));
        assert!(matches!(
            parse_schedule("spilt(i,a,b,2)"),
            Err(DslError::Syntax { line: 1, .. })
        ));
        assert!(matches!(
            parse_schedule("split(i,a,b,X)"),
            Err(DslError::Syntax { .. })
        ));
        assert!(matches!(
            parse_schedule("parallelize(i, CPU, NoRaces)"),
            Err(DslError::Syntax { .. })
        ));
    }
}
