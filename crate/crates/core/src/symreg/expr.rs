//! Expression trees, evaluation and text forms.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnaryOp {
    Neg,
    Abs,
    Sign,
    Sin,
    Cos,
    Exp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl UnaryOp {
    pub fn symbol(self) -> &'static str {
        match self {
            UnaryOp::Neg => "neg",
            UnaryOp::Abs => "abs",
            UnaryOp::Sign => "sign",
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
            UnaryOp::Exp => "exp",
        }
    }

    pub fn apply(self, a: f64) -> f64 {
        match self {
            UnaryOp::Neg => -a,
            UnaryOp::Abs => a.abs(),
            UnaryOp::Sign => sign(a),
            UnaryOp::Sin => a.sin(),
            UnaryOp::Cos => a.cos(),
            UnaryOp::Exp => a.exp(),
        }
    }

    fn from_symbol(s: &str) -> Option<Self> {
        Some(match s {
            "neg" => UnaryOp::Neg,
            "abs" => UnaryOp::Abs,
            "sign" => UnaryOp::Sign,
            "sin" => UnaryOp::Sin,
            "cos" => UnaryOp::Cos,
            "exp" => UnaryOp::Exp,
            _ => return None,
        })
    }
}

impl BinaryOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
        }
    }

    pub fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
            BinaryOp::Div => {
                if b == 0.0 {
                    f64::NAN
                } else {
                    a / b
                }
            }
        }
    }

    fn from_symbol(s: &str) -> Option<Self> {
        Some(match s {
            "+" => BinaryOp::Add,
            "-" => BinaryOp::Sub,
            "*" => BinaryOp::Mul,
            "/" => BinaryOp::Div,
            _ => return None,
        })
    }
}

/// `sign(0) = 0`.
pub fn sign(a: f64) -> f64 {
    if a > 0.0 {
        1.0
    } else if a < 0.0 {
        -1.0
    } else {
        a
    }
}

/// `a^e`, undefined (NaN) for a negative base with a non-integer exponent.
pub fn pow(a: f64, e: f64) -> f64 {
    if a < 0.0 && e.fract() != 0.0 {
        f64::NAN
    } else {
        a.powf(e)
    }
}

/// Expression tree over indexed variables.
#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(usize),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
    /// `base ^ exponent` with a learnable exponent.
    Pow(Box<Expr>, f64),
}

impl Expr {
    pub fn var(i: usize) -> Self {
        Expr::Var(i)
    }

    pub fn unary(op: UnaryOp, a: Expr) -> Self {
        Expr::Unary(op, Box::new(a))
    }

    pub fn binary(op: BinaryOp, a: Expr, b: Expr) -> Self {
        Expr::Binary(op, Box::new(a), Box::new(b))
    }

    pub fn add(a: Expr, b: Expr) -> Self {
        Self::binary(BinaryOp::Add, a, b)
    }

    pub fn sub(a: Expr, b: Expr) -> Self {
        Self::binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(a: Expr, b: Expr) -> Self {
        Self::binary(BinaryOp::Mul, a, b)
    }

    pub fn abs(a: Expr) -> Self {
        Self::unary(UnaryOp::Abs, a)
    }

    pub fn sign(a: Expr) -> Self {
        Self::unary(UnaryOp::Sign, a)
    }

    pub fn neg(a: Expr) -> Self {
        Self::unary(UnaryOp::Neg, a)
    }

    pub fn pow(a: Expr, e: f64) -> Self {
        Expr::Pow(Box::new(a), e)
    }

    /// Sum of `terms`, or `0` when empty.
    pub fn sum(terms: impl IntoIterator<Item = Expr>) -> Self {
        terms.into_iter().reduce(Expr::add).unwrap_or(Expr::Const(0.0))
    }

    /// Node count; a power node counts 2 (operator plus exponent).
    pub fn complexity(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Var(_) => 1,
            Expr::Unary(_, a) => 1 + a.complexity(),
            Expr::Binary(_, a, b) => 1 + a.complexity() + b.complexity(),
            Expr::Pow(a, _) => 2 + a.complexity(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Var(_) => 1,
            Expr::Unary(_, a) | Expr::Pow(a, _) => 1 + a.depth(),
            Expr::Binary(_, a, b) => 1 + a.depth().max(b.depth()),
        }
    }

    /// Value at one sample; `row[i]` binds variable `i`. Domain violations
    /// give NaN.
    pub fn eval_row(&self, row: &[f64]) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Var(i) => row[*i],
            Expr::Unary(op, a) => op.apply(a.eval_row(row)),
            Expr::Binary(op, a, b) => op.apply(a.eval_row(row), b.eval_row(row)),
            Expr::Pow(a, e) => pow(a.eval_row(row), *e),
        }
    }

    /// Column-wise evaluation over `cols[i]` (one column per variable).
    pub fn eval_columns(&self, cols: &[&[f64]], n: usize) -> Vec<f64> {
        match self {
            Expr::Const(c) => vec![*c; n],
            Expr::Var(i) => cols[*i][..n].to_vec(),
            Expr::Unary(op, a) => {
                let mut v = a.eval_columns(cols, n);
                v.iter_mut().for_each(|x| *x = op.apply(*x));
                v
            }
            Expr::Binary(op, a, b) => {
                let mut v = a.eval_columns(cols, n);
                match b.as_ref() {
                    Expr::Const(c) => v.iter_mut().for_each(|x| *x = op.apply(*x, *c)),
                    b => {
                        let w = b.eval_columns(cols, n);
                        v.iter_mut().zip(&w).for_each(|(x, y)| *x = op.apply(*x, *y));
                    }
                }
                v
            }
            Expr::Pow(a, e) => {
                let mut v = a.eval_columns(cols, n);
                let e = *e;
                if e == 2.0 {
                    v.iter_mut().for_each(|x| *x *= *x);
                } else if e == 1.0 {
                } else {
                    v.iter_mut().for_each(|x| *x = pow(*x, e));
                }
                v
            }
        }
    }

    /// Largest variable index plus one.
    pub fn n_vars(&self) -> usize {
        match self {
            Expr::Const(_) => 0,
            Expr::Var(i) => i + 1,
            Expr::Unary(_, a) | Expr::Pow(a, _) => a.n_vars(),
            Expr::Binary(_, a, b) => a.n_vars().max(b.n_vars()),
        }
    }

    pub fn contains_var(&self, i: usize) -> bool {
        match self {
            Expr::Const(_) => false,
            Expr::Var(j) => *j == i,
            Expr::Unary(_, a) | Expr::Pow(a, _) => a.contains_var(i),
            Expr::Binary(_, a, b) => a.contains_var(i) || b.contains_var(i),
        }
    }

    /// Number of numeric slots: constants and power exponents.
    pub fn n_constants(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |e| {
            if matches!(e, Expr::Const(_) | Expr::Pow(..)) {
                n += 1
            }
        });
        n
    }

    /// Constants and exponents in pre-order.
    pub fn constants(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit(&mut |e| match e {
            Expr::Const(c) => out.push(*c),
            Expr::Pow(_, p) => out.push(*p),
            _ => {}
        });
        out
    }

    /// Overwrites constants and exponents in pre-order.
    pub fn set_constants(&mut self, values: &[f64]) {
        let mut i = 0;
        self.visit_mut(&mut |e| match e {
            Expr::Const(c) => {
                *c = values[i];
                i += 1;
            }
            Expr::Pow(_, p) => {
                *p = values[i];
                i += 1;
            }
            _ => {}
        });
    }

    /// Pre-order traversal.
    pub fn visit(&self, f: &mut dyn FnMut(&Expr)) {
        f(self);
        match self {
            Expr::Const(_) | Expr::Var(_) => {}
            Expr::Unary(_, a) | Expr::Pow(a, _) => a.visit(f),
            Expr::Binary(_, a, b) => {
                a.visit(f);
                b.visit(f);
            }
        }
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Expr)) {
        f(self);
        match self {
            Expr::Const(_) | Expr::Var(_) => {}
            Expr::Unary(_, a) | Expr::Pow(a, _) => a.visit_mut(f),
            Expr::Binary(_, a, b) => {
                a.visit_mut(f);
                b.visit_mut(f);
            }
        }
    }

    /// Number of nodes (each power node counted once).
    pub fn size(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_| n += 1);
        n
    }

    /// The `i`-th node in pre-order.
    pub fn node(&self, i: usize) -> &Expr {
        let mut k = i;
        self.find(&mut k).expect("index in range")
    }

    fn find(&self, k: &mut usize) -> Option<&Expr> {
        if *k == 0 {
            return Some(self);
        }
        *k -= 1;
        match self {
            Expr::Const(_) | Expr::Var(_) => None,
            Expr::Unary(_, a) | Expr::Pow(a, _) => a.find(k),
            Expr::Binary(_, a, b) => a.find(k).or_else(|| b.find(k)),
        }
    }

    pub fn node_mut(&mut self, i: usize) -> &mut Expr {
        let mut k = i;
        self.find_mut(&mut k).expect("index in range")
    }

    fn find_mut(&mut self, k: &mut usize) -> Option<&mut Expr> {
        if *k == 0 {
            return Some(self);
        }
        *k -= 1;
        match self {
            Expr::Const(_) | Expr::Var(_) => None,
            Expr::Unary(_, a) | Expr::Pow(a, _) => a.find_mut(k),
            Expr::Binary(_, a, b) => match a.find_mut(k) {
                Some(x) => Some(x),
                None => b.find_mut(k),
            },
        }
    }

    /// Replaces every variable `i` by `f(i)`.
    pub fn substitute(&self, f: &dyn Fn(usize) -> Expr) -> Expr {
        match self {
            Expr::Const(c) => Expr::Const(*c),
            Expr::Var(i) => f(*i),
            Expr::Unary(op, a) => Expr::unary(*op, a.substitute(f)),
            Expr::Binary(op, a, b) => Expr::binary(*op, a.substitute(f), b.substitute(f)),
            Expr::Pow(a, e) => Expr::pow(a.substitute(f), *e),
        }
    }

    /// Renders as a prefix s-expression using `vars` for names.
    pub fn to_sexpr(&self, vars: &VarSet) -> String {
        let mut s = String::new();
        self.write_sexpr(vars, &mut s);
        s
    }

    fn write_sexpr(&self, vars: &VarSet, s: &mut String) {
        match self {
            Expr::Const(c) => {
                let _ = write!(s, "{c:?}");
            }
            Expr::Var(i) => s.push_str(vars.name(*i)),
            Expr::Unary(op, a) => {
                let _ = write!(s, "({} ", op.symbol());
                a.write_sexpr(vars, s);
                s.push(')');
            }
            Expr::Binary(op, a, b) => {
                let _ = write!(s, "({} ", op.symbol());
                a.write_sexpr(vars, s);
                s.push(' ');
                b.write_sexpr(vars, s);
                s.push(')');
            }
            Expr::Pow(a, e) => {
                s.push_str("(pow ");
                a.write_sexpr(vars, s);
                let _ = write!(s, " {e:?})");
            }
        }
    }

    /// Parses the prefix s-expression form.
    pub fn parse_sexpr(text: &str, vars: &VarSet) -> Result<Expr> {
        let mut p = SexprParser { text, pos: 0, vars };
        let e = p.expr()?;
        p.skip_ws();
        if p.pos != text.len() {
            return Err(p.error("trailing input"));
        }
        Ok(e)
    }

    /// Human-readable infix rendering with `precision` significant digits.
    pub fn to_infix(&self, vars: &VarSet, precision: usize) -> String {
        self.infix(vars, precision, 0)
    }

    fn infix(&self, vars: &VarSet, prec: usize, parent: u8) -> String {
        // binding strength: 1 additive, 2 multiplicative, 3 unary/power
        let wrap = |s: String, own: u8| if own < parent { format!("({s})") } else { s };
        match self {
            Expr::Const(c) => {
                let s = format_sig(*c, prec);
                if *c < 0.0 && parent > 1 {
                    format!("({s})")
                } else {
                    s
                }
            }
            Expr::Var(i) => vars.name(*i).to_string(),
            Expr::Unary(UnaryOp::Neg, a) => wrap(format!("-{}", a.infix(vars, prec, 3)), 2),
            Expr::Unary(UnaryOp::Abs, a) => format!("|{}|", a.infix(vars, prec, 0)),
            Expr::Unary(op, a) => format!("{}({})", op.symbol(), a.infix(vars, prec, 0)),
            Expr::Binary(op @ (BinaryOp::Add | BinaryOp::Sub), a, b) => {
                let rhs = b.infix(vars, prec, if *op == BinaryOp::Sub { 2 } else { 1 });
                let rhs_neg = rhs.starts_with('-');
                let s = match (op, rhs_neg) {
                    (BinaryOp::Add, true) => format!("{} - {}", a.infix(vars, prec, 1), &rhs[1..]),
                    _ => format!("{} {} {}", a.infix(vars, prec, 1), op.symbol(), rhs),
                };
                wrap(s, 1)
            }
            Expr::Binary(BinaryOp::Mul, a, b) if matches!(a.as_ref(), Expr::Const(c) if *c < 0.0) => {
                let c = if let Expr::Const(c) = a.as_ref() { -c } else { unreachable!() };
                wrap(format!("-{} * {}", format_sig(c, prec), b.infix(vars, prec, 2)), 2)
            }
            Expr::Binary(op, a, b) => wrap(
                format!(
                    "{} {} {}",
                    a.infix(vars, prec, 2),
                    op.symbol(),
                    b.infix(vars, prec, if *op == BinaryOp::Mul { 2 } else { 3 })
                ),
                2,
            ),
            Expr::Pow(a, e) => {
                let base = match a.as_ref() {
                    Expr::Var(_) | Expr::Unary(UnaryOp::Abs, _) => a.infix(vars, prec, 4),
                    _ => format!("({})", a.infix(vars, prec, 0)),
                };
                format!("{base}^{}", format_sig(*e, prec))
            }
        }
    }
}

/// `v` with `sig` significant digits, without trailing zeros.
pub fn format_sig(v: f64, sig: usize) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let mag = v.abs().log10().floor() as i32;
    let decimals = (sig as i32 - 1 - mag).max(0) as usize;
    let s = format!("{v:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// Names of the variables an expression may reference.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VarSet {
    names: Vec<String>,
}

impl VarSet {
    pub fn new<S: AsRef<str>>(names: &[S]) -> Self {
        Self {
            names: names.iter().map(|s| s.as_ref().to_string()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// Evaluates `e` with variables bound by name.
pub fn eval_expr(e: &Expr, vars: &VarSet, bindings: &HashMap<String, f64>) -> Result<f64> {
    let mut row = vec![f64::NAN; vars.len()];
    let mut missing = None;
    e.visit(&mut |n| {
        if let Expr::Var(i) = n {
            match bindings.get(vars.name(*i)) {
                Some(v) => row[*i] = *v,
                None => missing = missing.take().or_else(|| Some(vars.name(*i).to_string())),
            }
        }
    });
    if let Some(name) = missing {
        return Err(Error::UnboundVariable(name));
    }
    Ok(e.eval_row(&row))
}

struct SexprParser<'a> {
    text: &'a str,
    pos: usize,
    vars: &'a VarSet,
}

impl<'a> SexprParser<'a> {
    fn error(&self, msg: &str) -> Error {
        Error::Parse {
            offset: self.pos,
            msg: msg.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.text.len() && self.text.as_bytes()[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn atom(&mut self) -> &'a str {
        self.skip_ws();
        let start = self.pos;
        let text: &'a str = self.text;
        let bytes = text.as_bytes();
        while self.pos < bytes.len() && !bytes[self.pos].is_ascii_whitespace() && bytes[self.pos] != b'(' && bytes[self.pos] != b')' {
            self.pos += 1;
        }
        &text[start..self.pos]
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        self.skip_ws();
        if self.text.as_bytes().get(self.pos) == Some(&c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(&format!("expected `{}`", c as char)))
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        self.skip_ws();
        match self.text.as_bytes().get(self.pos) {
            None => Err(self.error("unexpected end of input")),
            Some(b'(') => {
                self.pos += 1;
                let start = self.pos;
                let op = self.atom().to_string();
                let e = if op == "pow" {
                    let base = self.expr()?;
                    let at = self.pos;
                    let exp = self.atom();
                    let exp: f64 = exp.parse().map_err(|_| Error::Parse {
                        offset: at,
                        msg: format!("bad exponent `{exp}`"),
                    })?;
                    Expr::pow(base, exp)
                } else if let Some(u) = UnaryOp::from_symbol(&op) {
                    Expr::unary(u, self.expr()?)
                } else if let Some(b) = BinaryOp::from_symbol(&op) {
                    let a = self.expr()?;
                    let c = self.expr()?;
                    Expr::binary(b, a, c)
                } else {
                    return Err(Error::Parse {
                        offset: start,
                        msg: format!("unknown operator `{op}`"),
                    });
                };
                self.expect(b')')?;
                Ok(e)
            }
            Some(b')') => Err(self.error("unexpected `)`")),
            Some(_) => {
                let start = self.pos;
                let tok = self.atom();
                if let Ok(v) = tok.parse::<f64>() {
                    return Ok(Expr::Const(v));
                }
                match self.vars.index(tok) {
                    Some(i) => Ok(Expr::Var(i)),
                    None => Err(Error::Parse {
                        offset: start,
                        msg: format!("unknown variable `{tok}`"),
                    }),
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vars() -> VarSet {
        VarSet::new(&["xdot", "z"])
    }

    #[test]
    fn evaluates_true_link_law() {
        let v = vars();
        let e = Expr::parse_sexpr(
            "(+ (+ (* -5.0 (* (abs xdot) (* (pow (abs z) 0.5) z))) (* 4.0 (* xdot (pow (abs z) 1.5)))) (* 4.0 xdot))",
            &v,
        )
        .unwrap();
        assert!((e.eval_row(&[1.0, 1.0]) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn sexpr_round_trip() {
        let v = vars();
        let text = "(+ (* 4.0 xdot) (* -5.0 (* (abs xdot) (* (pow (abs z) 0.5486) z))))";
        let e = Expr::parse_sexpr(text, &v).unwrap();
        assert_eq!(e.to_sexpr(&v), text);
        assert_eq!(Expr::parse_sexpr(&e.to_sexpr(&v), &v).unwrap(), e);
    }

    #[test]
    fn parse_errors_carry_offsets() {
        let v = vars();
        match Expr::parse_sexpr("(+ xdot q)", &v) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 8),
            other => panic!("{other:?}"),
        }
        assert!(matches!(Expr::parse_sexpr("(+ xdot", &v), Err(Error::Parse { .. })));
    }

    #[test]
    fn complexity_counts_power_twice() {
        let e = Expr::pow(Expr::abs(Expr::var(1)), 1.5);
        assert_eq!(e.complexity(), 4);
        assert_eq!(e.eval_row(&[0.0, -4.0]), 8.0);
    }

    #[test]
    fn unbound_variable_is_an_error() {
        let v = vars();
        let e = Expr::mul(Expr::Const(4.0), Expr::var(0));
        let mut b = HashMap::new();
        assert!(matches!(eval_expr(&e, &v, &b), Err(Error::UnboundVariable(_))));
        b.insert("xdot".to_string(), 0.5);
        assert_eq!(eval_expr(&e, &v, &b).unwrap(), 2.0);
    }

    #[test]
    fn infix_rendering() {
        let v = vars();
        let e = Expr::add(
            Expr::mul(Expr::Const(4.0), Expr::var(0)),
            Expr::mul(Expr::Const(-5.0), Expr::mul(Expr::abs(Expr::var(0)), Expr::pow(Expr::abs(Expr::var(1)), 1.5))),
        );
        assert_eq!(e.to_infix(&v, 5), "4 * xdot - 5 * |xdot| * |z|^1.5");
    }
}
