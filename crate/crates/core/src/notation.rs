//! Index notation: `y(i) = A(i,j) * x(j)`.
//!
//! Expressions are binary trees of multiplications and additions over tensor
//! accesses and scalar literals. Named sub-expressions (labels) may be bound
//! in earlier statements and referenced later, which is how `precompute`
//! finds its target:
//!
//! ```text
//! precomputedExpr = A(i,j) * x(j)
//! y(i) = precomputedExpr
//! ```

use std::collections::BTreeMap;
use std::fmt;

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum NotationError {
    #[error("syntax error at offset {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("variable '{var}' repeats within access {tensor}(...)")]
    RepeatedVar { tensor: String, var: String },
    #[error("unknown sub-expression label '{0}'")]
    UnknownLabel(String),
    #[error("label '{0}' is defined twice")]
    DuplicateLabel(String),
    #[error("additive term '{0}' references no tensor (constants are multiplicative only)")]
    ConstantTerm(String),
    #[error("output tensor '{0}' also appears on the right-hand side")]
    OutputInRhs(String),
    #[error("output variable '{0}' does not appear on the right-hand side")]
    UnusedOutputVar(String),
    #[error("tensor '{tensor}' is used with {a} and {b} indices")]
    InconsistentOrder { tensor: String, a: usize, b: usize },
    #[error("no assignment statement found")]
    NoAssignment,
}

type Result<T> = std::result::Result<T, NotationError>;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct IndexVar(pub String);

impl IndexVar {
    pub fn new(name: impl Into<String>) -> Self {
        IndexVar(name.into())
    }

    pub fn name(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for IndexVar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for IndexVar {
    fn from(s: &str) -> Self {
        IndexVar(s.to_string())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Access {
    pub tensor: String,
    pub vars: Vec<IndexVar>,
}

impl Access {
    pub fn new(tensor: &str, vars: &[&str]) -> Self {
        Access {
            tensor: tensor.to_string(),
            vars: vars.iter().map(|v| IndexVar::new(*v)).collect(),
        }
    }

    pub fn level_of(&self, var: &IndexVar) -> Option<usize> {
        self.vars.iter().position(|v| v == var)
    }
}

impl fmt::Display for Access {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.tensor)?;
        for (n, v) in self.vars.iter().enumerate() {
            if n > 0 {
                f.write_str(",")?;
            }
            write!(f, "{v}")?;
        }
        f.write_str(")")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Access(Access),
    Literal(f64),
    Mul(Box<Expr>, Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
}

// Constructors over owned operands, not operator impls.
#[allow(clippy::should_implement_trait)]
impl Expr {
    pub fn mul(a: Expr, b: Expr) -> Expr {
        Expr::Mul(Box::new(a), Box::new(b))
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        Expr::Add(Box::new(a), Box::new(b))
    }

    /// Accesses in left-to-right order. The position in this list is the
    /// access id used throughout the compiler.
    pub fn accesses(&self) -> Vec<&Access> {
        let mut out = Vec::new();
        self.collect_accesses(&mut out);
        out
    }

    fn collect_accesses<'a>(&'a self, out: &mut Vec<&'a Access>) {
        match self {
            Expr::Access(a) => out.push(a),
            Expr::Literal(_) => {}
            Expr::Mul(a, b) | Expr::Add(a, b) => {
                a.collect_accesses(out);
                b.collect_accesses(out);
            }
        }
    }

    pub fn access_count(&self) -> usize {
        match self {
            Expr::Access(_) => 1,
            Expr::Literal(_) => 0,
            Expr::Mul(a, b) | Expr::Add(a, b) => a.access_count() + b.access_count(),
        }
    }

    /// Variables in first-appearance order.
    pub fn vars(&self) -> Vec<IndexVar> {
        let mut out: Vec<IndexVar> = Vec::new();
        for a in self.accesses() {
            for v in &a.vars {
                if !out.contains(v) {
                    out.push(v.clone());
                }
            }
        }
        out
    }

    /// Additive terms, flattening nested additions.
    pub fn terms(&self) -> Vec<&Expr> {
        match self {
            Expr::Add(a, b) => {
                let mut t = a.terms();
                t.extend(b.terms());
                t
            }
            e => vec![e],
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Access(a) => write!(f, "{a}"),
            Expr::Literal(v) => write!(f, "{v}"),
            Expr::Add(a, b) => {
                write!(f, "{a} + ")?;
                if matches!(**b, Expr::Add(..)) {
                    write!(f, "({b})")
                } else {
                    write!(f, "{b}")
                }
            }
            Expr::Mul(a, b) => {
                if matches!(**a, Expr::Add(..)) {
                    write!(f, "({a})")?;
                } else {
                    write!(f, "{a}")?;
                }
                f.write_str(" * ")?;
                if matches!(**b, Expr::Add(..) | Expr::Mul(..)) {
                    write!(f, "({b})")
                } else {
                    write!(f, "{b}")
                }
            }
        }
    }
}

/// `lhs = rhs` with a dense output and any labels bound along the way.
#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    pub lhs: Access,
    pub rhs: Expr,
    pub labels: BTreeMap<String, Expr>,
}

impl Assignment {
    pub fn new(lhs: Access, rhs: Expr) -> Result<Self> {
        let a = Assignment {
            lhs,
            rhs,
            labels: BTreeMap::new(),
        };
        a.check()?;
        Ok(a)
    }

    fn check(&self) -> Result<()> {
        check_access(&self.lhs)?;
        let mut orders: BTreeMap<&str, usize> = BTreeMap::new();
        for a in self.rhs.accesses() {
            check_access(a)?;
            if a.tensor == self.lhs.tensor {
                return Err(NotationError::OutputInRhs(a.tensor.clone()));
            }
            let prev = *orders.entry(&a.tensor).or_insert(a.vars.len());
            if prev != a.vars.len() {
                return Err(NotationError::InconsistentOrder {
                    tensor: a.tensor.clone(),
                    a: prev,
                    b: a.vars.len(),
                });
            }
        }
        for term in self.rhs.terms() {
            if term.access_count() == 0 {
                return Err(NotationError::ConstantTerm(term.to_string()));
            }
        }
        let rhs_vars = self.rhs.vars();
        for v in &self.lhs.vars {
            if !rhs_vars.contains(v) {
                return Err(NotationError::UnusedOutputVar(v.0.clone()));
            }
        }
        Ok(())
    }

    /// Right-hand-side variables absent from the output, in first-appearance order.
    pub fn reduction_vars(&self) -> Vec<IndexVar> {
        self.rhs
            .vars()
            .into_iter()
            .filter(|v| !self.lhs.vars.contains(v))
            .collect()
    }

    /// Output variables followed by reduction variables.
    pub fn default_order(&self) -> Vec<IndexVar> {
        let mut order = self.lhs.vars.clone();
        order.extend(self.reduction_vars());
        order
    }

    pub fn all_vars(&self) -> Vec<IndexVar> {
        self.default_order()
    }

    /// Input tensor names in first-appearance order.
    pub fn inputs(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for a in self.rhs.accesses() {
            if !out.contains(&a.tensor) {
                out.push(a.tensor.clone());
            }
        }
        out
    }

    pub fn accesses(&self) -> Vec<&Access> {
        self.rhs.accesses()
    }
}

impl fmt::Display for Assignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} = {}", self.lhs, self.rhs)
    }
}

fn check_access(a: &Access) -> Result<()> {
    for (n, v) in a.vars.iter().enumerate() {
        if a.vars[..n].contains(v) {
            return Err(NotationError::RepeatedVar {
                tensor: a.tensor.clone(),
                var: v.0.clone(),
            });
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Num(f64),
    LParen,
    RParen,
    Comma,
    Eq,
    Plus,
    Star,
    Sep,
}

fn tokenize(text: &str) -> Result<Vec<(usize, Tok)>> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        let start = i;
        let simple = match c {
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            ',' => Some(Tok::Comma),
            '=' => Some(Tok::Eq),
            '+' => Some(Tok::Plus),
            '*' => Some(Tok::Star),
            ';' | '\n' => Some(Tok::Sep),
            _ => None,
        };
        if let Some(t) = simple {
            out.push((start, t));
            i += 1;
        } else if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_alphabetic() || c == '_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((start, Tok::Ident(text[start..i].to_string())));
        } else if c.is_ascii_digit() || c == '.' {
            while i < bytes.len()
                && (bytes[i].is_ascii_digit()
                    || bytes[i] == b'.'
                    || bytes[i] == b'e'
                    || bytes[i] == b'E'
                    || ((bytes[i] == b'-' || bytes[i] == b'+')
                        && matches!(bytes[i - 1], b'e' | b'E')))
            {
                i += 1;
            }
            let lit = &text[start..i];
            let v = lit.parse::<f64>().map_err(|_| NotationError::Syntax {
                pos: start,
                msg: format!("bad number '{lit}'"),
            })?;
            out.push((start, Tok::Num(v)));
        } else {
            return Err(NotationError::Syntax {
                pos: start,
                msg: format!("unexpected character '{c}'"),
            });
        }
    }
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<(usize, Tok)>,
    at: usize,
    end: usize,
    labels: &'a BTreeMap<String, Expr>,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.at).map(|(_, t)| t)
    }

    fn pos(&self) -> usize {
        self.toks.get(self.at).map_or(self.end, |(p, _)| *p)
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(NotationError::Syntax {
            pos: self.pos(),
            msg: msg.into(),
        })
    }

    fn expect(&mut self, t: Tok, what: &str) -> Result<()> {
        if self.peek() == Some(&t) {
            self.at += 1;
            Ok(())
        } else {
            self.err(format!("expected {what}"))
        }
    }

    fn ident(&mut self) -> Result<String> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.at += 1;
                Ok(s)
            }
            _ => self.err("expected identifier"),
        }
    }

    fn var_list(&mut self) -> Result<Vec<IndexVar>> {
        self.expect(Tok::LParen, "'('")?;
        let mut vars = Vec::new();
        if self.peek() != Some(&Tok::RParen) {
            loop {
                vars.push(IndexVar(self.ident()?));
                if self.peek() == Some(&Tok::Comma) {
                    self.at += 1;
                } else {
                    break;
                }
            }
        }
        self.expect(Tok::RParen, "')'")?;
        Ok(vars)
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut e = self.term()?;
        while self.peek() == Some(&Tok::Plus) {
            self.at += 1;
            e = Expr::add(e, self.term()?);
        }
        Ok(e)
    }

    fn term(&mut self) -> Result<Expr> {
        let mut e = self.factor()?;
        while self.peek() == Some(&Tok::Star) {
            self.at += 1;
            e = Expr::mul(e, self.factor()?);
        }
        Ok(e)
    }

    fn factor(&mut self) -> Result<Expr> {
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.at += 1;
                Ok(Expr::Literal(v))
            }
            Some(Tok::LParen) => {
                self.at += 1;
                let e = self.expr()?;
                self.expect(Tok::RParen, "')'")?;
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                self.at += 1;
                if self.peek() == Some(&Tok::LParen) {
                    let vars = self.var_list()?;
                    let access = Access { tensor: name, vars };
                    check_access(&access)?;
                    Ok(Expr::Access(access))
                } else {
                    self.labels
                        .get(&name)
                        .cloned()
                        .ok_or(NotationError::UnknownLabel(name))
                }
            }
            _ => self.err("expected access, number, label or '('"),
        }
    }
}

/// Parses one or more `;`/newline separated statements. Statements whose
/// left side is a bare identifier define labels; the single statement with an
/// access on the left is the assignment.
pub fn parse_expression(text: &str) -> Result<Assignment> {
    let toks = tokenize(text)?;
    let mut labels = BTreeMap::new();
    let mut result: Option<(Access, Expr)> = None;
    let mut statements: Vec<Vec<(usize, Tok)>> = vec![Vec::new()];
    for t in toks {
        if t.1 == Tok::Sep {
            statements.push(Vec::new());
        } else {
            statements.last_mut().expect("nonempty").push(t);
        }
    }
    for stmt in statements.into_iter().filter(|s| !s.is_empty()) {
        let end = text.len();
        let mut p = Parser {
            toks: stmt,
            at: 0,
            end,
            labels: &labels,
        };
        if result.is_some() {
            return p.err("statements after the assignment");
        }
        let name = p.ident()?;
        let lhs_vars = if p.peek() == Some(&Tok::LParen) {
            Some(p.var_list()?)
        } else {
            None
        };
        p.expect(Tok::Eq, "'='")?;
        let rhs = p.expr()?;
        if p.at != p.toks.len() {
            return p.err("unexpected trailing input");
        }
        match lhs_vars {
            Some(vars) => result = Some((Access { tensor: name, vars }, rhs)),
            None => {
                if labels.contains_key(&name) {
                    return Err(NotationError::DuplicateLabel(name));
                }
                labels.insert(name, rhs);
            }
        }
    }
    let (lhs, rhs) = result.ok_or(NotationError::NoAssignment)?;
    let assignment = Assignment { lhs, rhs, labels };
    assignment.check()?;
    Ok(assignment)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(vars: &[IndexVar]) -> Vec<&str> {
        vars.iter().map(|v| v.name()).collect()
    }

    #[test]
    fn spmv() {
        let a = parse_expression("y(i) = A(i,j) * x(j)").unwrap();
        assert_eq!(a.lhs, Access::new("y", &["i"]));
        assert_eq!(names(&a.reduction_vars()), ["j"]);
        assert_eq!(a.inputs(), ["A", "x"]);
    }

    #[test]
    fn copy_has_no_reduction() {
        let a = parse_expression("a(i) = b(i)").unwrap();
        assert!(a.reduction_vars().is_empty());
    }

    #[test]
    fn mttkrp() {
        let a = parse_expression("A(i,j) = B(i,k,l) * C(k,j) * D(l,j)").unwrap();
        assert_eq!(names(&a.reduction_vars()), ["k", "l"]);
        assert_eq!(names(&a.default_order()), ["i", "j", "k", "l"]);
    }

    #[test]
    fn labels_inline_as_subtrees() {
        let a =
            parse_expression("precomputedExpr = A(i, j) * x(j);\ny(i) = precomputedExpr").unwrap();
        assert_eq!(a.rhs, a.labels["precomputedExpr"]);
        assert_eq!(a.to_string(), "y(i) = A(i,j) * x(j)");
    }

    #[test]
    fn rejections() {
        assert!(matches!(
            parse_expression("y(i) = A(i,i)"),
            Err(NotationError::RepeatedVar { .. })
        ));
        assert!(matches!(
            parse_expression("y(i) = b(i) + 2"),
            Err(NotationError::ConstantTerm(_))
        ));
        assert!(matches!(
            parse_expression("y(i) = y(i) * b(i)"),
            Err(NotationError::OutputInRhs(_))
        ));
        assert!(matches!(
            parse_expression("y(i,k) = b(i)"),
            Err(NotationError::UnusedOutputVar(_))
        ));
        assert!(matches!(
            parse_expression("y(i) = b(i) * w"),
            Err(NotationError::UnknownLabel(_))
        ));
        assert!(matches!(
            parse_expression("y(i) = b(i) *"),
            Err(NotationError::Syntax { .. })
        ));
        assert!(matches!(
            parse_expression(""),
            Err(NotationError::NoAssignment)
        ));
    }

    #[test]
    fn scalar_factor_allowed() {
        let a = parse_expression("y(i) = 2.5 * b(i) + c(i)").unwrap();
        assert_eq!(a.to_string(), "y(i) = 2.5 * b(i) + c(i)");
    }

    #[test]
    fn parentheses_round_trip() {
        for s in [
            "a(i) = (b(i) + c(i)) * d(i)",
            "a(i) = b(i) * (c(i) * d(i))",
            "a(i) = b(i) + (c(i) + d(i))",
            "a(i) = b(i) + c(i) + d(i)",
        ] {
            let a = parse_expression(s).unwrap();
            assert_eq!(a.to_string(), s);
            assert_eq!(parse_expression(&a.to_string()).unwrap(), a);
        }
    }
}
