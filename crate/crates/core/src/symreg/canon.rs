//! Sum-of-monomials normal form.
//!
//! A monomial is `c · Π sign(vᵢ)^{sᵢ} |vᵢ|^{eᵢ}` with `sᵢ ∈ {0, 1}`, which
//! covers products of variables, absolute values, signs and real powers of
//! absolute values. Subtrees outside that family (sums under `abs`, `sin`,
//! ...) become opaque atoms that are canonicalized recursively.

use std::cmp::Ordering;

use super::expr::{BinaryOp, Expr, UnaryOp};

/// Largest number of terms produced when distributing a product.
const MAX_TERMS: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub enum Base {
    Var(usize),
    Atom(Box<Expr>, String),
}

impl Base {
    fn key(&self) -> String {
        match self {
            Base::Var(i) => format!("v{i:04}"),
            Base::Atom(_, k) => format!("~{k}"),
        }
    }

    fn expr(&self) -> Expr {
        match self {
            Base::Var(i) => Expr::Var(*i),
            Base::Atom(e, _) => (**e).clone(),
        }
    }
}

/// `sign(base)^odd · |base|^exp`.
#[derive(Clone, Debug, PartialEq)]
pub struct Factor {
    pub base: Base,
    pub exp: f64,
    pub odd: bool,
}

/// Product of factors with distinct bases, sorted by base.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Monomial {
    pub factors: Vec<Factor>,
}

impl Monomial {
    pub fn is_constant(&self) -> bool {
        self.factors.is_empty()
    }

    fn mul(&self, other: &Monomial) -> Monomial {
        let mut factors = self.factors.clone();
        for f in &other.factors {
            match factors.iter_mut().find(|g| g.base == f.base) {
                Some(g) => {
                    g.exp += f.exp;
                    g.odd ^= f.odd;
                }
                None => factors.push(f.clone()),
            }
        }
        factors.retain(|f| f.odd || f.exp != 0.0);
        factors.sort_by_key(|f| f.base.key());
        Monomial { factors }
    }

    /// Text key identifying the monomial exactly.
    pub fn key(&self) -> String {
        self.factors
            .iter()
            .map(|f| format!("{}^{:?}{}", f.base.key(), f.exp, if f.odd { "s" } else { "" }))
            .collect::<Vec<_>>()
            .join("*")
    }

    /// Same bases and parities with exponents within `tol`.
    pub fn matches(&self, other: &Monomial, tol: f64) -> bool {
        self.factors.len() == other.factors.len()
            && self
                .factors
                .iter()
                .zip(&other.factors)
                .all(|(a, b)| a.base.key() == b.base.key() && a.odd == b.odd && (a.exp - b.exp).abs() <= tol)
    }

    /// Expression for the monomial without its coefficient.
    pub fn to_expr(&self) -> Expr {
        let parts: Vec<Expr> = self.factors.iter().flat_map(render_factor).collect();
        parts.into_iter().reduce(Expr::mul).unwrap_or(Expr::Const(1.0))
    }
}

fn render_factor(f: &Factor) -> Vec<Expr> {
    let v = f.base.expr();
    let abs = || Expr::abs(v.clone());
    let abs_pow = |e: f64| if e == 1.0 { abs() } else { Expr::pow(abs(), e) };
    match (f.odd, f.exp) {
        (true, e) if e == 1.0 => vec![v],
        (true, e) if e > 1.0 => vec![abs_pow(e - 1.0), v],
        (true, e) if e == 0.0 => vec![Expr::sign(v)],
        (true, e) => vec![Expr::sign(v.clone()), abs_pow(e)],
        (false, e) => vec![abs_pow(e)],
    }
}

/// Linear combination of monomials.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Poly {
    pub terms: Vec<(f64, Monomial)>,
}

impl Poly {
    fn constant(c: f64) -> Self {
        Poly {
            terms: vec![(c, Monomial::default())],
        }
        .normalized()
    }

    fn single(f: Factor) -> Self {
        Poly {
            terms: vec![(1.0, Monomial { factors: vec![f] })],
        }
    }

    fn atom(e: Expr) -> Self {
        let key = format!("{e:?}");
        Self::single(Factor {
            base: Base::Atom(Box::new(e), key),
            exp: 1.0,
            odd: true,
        })
    }

    fn scale(mut self, s: f64) -> Self {
        self.terms.iter_mut().for_each(|t| t.0 *= s);
        self.normalized()
    }

    fn add(mut self, other: Poly) -> Self {
        self.terms.extend(other.terms);
        self.normalized()
    }

    fn mul(&self, other: &Poly) -> Option<Self> {
        if self.terms.len() * other.terms.len() > MAX_TERMS {
            return None;
        }
        let mut terms = Vec::new();
        for (a, ma) in &self.terms {
            for (b, mb) in &other.terms {
                terms.push((a * b, ma.mul(mb)));
            }
        }
        Some(Poly { terms }.normalized())
    }

    /// Merges equal monomials, drops zero terms, sorts by key.
    fn normalized(mut self) -> Self {
        let mut merged: Vec<(f64, Monomial, String)> = Vec::new();
        for (c, m) in self.terms.drain(..) {
            let k = m.key();
            match merged.iter_mut().find(|t| t.2 == k) {
                Some(t) => t.0 += c,
                None => merged.push((c, m, k)),
            }
        }
        merged.retain(|t| t.0 != 0.0);
        merged.sort_by(|a, b| term_order(&a.1, &a.2, &b.1, &b.2));
        Poly {
            terms: merged.into_iter().map(|(c, m, _)| (c, m)).collect(),
        }
    }

    fn single_term(&self) -> Option<(f64, &Monomial)> {
        match self.terms.as_slice() {
            [] => Some((0.0, EMPTY)),
            [(c, m)] => Some((*c, m)),
            _ => None,
        }
    }

    /// Renders the polynomial as an expression tree.
    pub fn to_expr(&self) -> Expr {
        let terms = self.terms.iter().map(|(c, m)| {
            if m.is_constant() {
                Expr::Const(*c)
            } else if *c == 1.0 {
                m.to_expr()
            } else {
                Expr::mul(Expr::Const(*c), m.to_expr())
            }
        });
        Expr::sum(terms)
    }

    /// Coefficient-free term list.
    pub fn monomials(&self) -> Vec<&Monomial> {
        self.terms.iter().map(|(_, m)| m).collect()
    }
}

static EMPTY: &Monomial = &Monomial { factors: Vec::new() };

fn term_order(a: &Monomial, ka: &str, b: &Monomial, kb: &str) -> Ordering {
    a.factors.len().cmp(&b.factors.len()).then_with(|| ka.cmp(kb))
}

/// Converts `e` to normal form.
pub fn to_poly(e: &Expr) -> Poly {
    match e {
        Expr::Const(c) => Poly::constant(*c),
        Expr::Var(i) => Poly::single(Factor {
            base: Base::Var(*i),
            exp: 1.0,
            odd: true,
        }),
        Expr::Unary(UnaryOp::Neg, a) => to_poly(a).scale(-1.0),
        Expr::Unary(UnaryOp::Abs, a) => {
            let p = to_poly(a);
            match p.single_term() {
                Some((c, m)) => {
                    let factors = m.factors.iter().map(|f| Factor { odd: false, ..f.clone() }).collect();
                    Poly {
                        terms: vec![(c.abs(), Monomial { factors })],
                    }
                    .normalized()
                }
                None => Poly::atom(Expr::abs(p.to_expr())),
            }
        }
        Expr::Unary(UnaryOp::Sign, a) => {
            let p = to_poly(a);
            match p.single_term() {
                Some((c, m)) => {
                    let factors = m
                        .factors
                        .iter()
                        .filter(|f| f.odd)
                        .map(|f| Factor { exp: 0.0, ..f.clone() })
                        .collect();
                    Poly {
                        terms: vec![(super::expr::sign(c), Monomial { factors })],
                    }
                    .normalized()
                }
                None => Poly::atom(Expr::sign(p.to_expr())),
            }
        }
        Expr::Unary(op, a) => {
            let p = to_poly(a);
            match p.single_term() {
                Some((c, m)) if m.is_constant() => Poly::constant(op.apply(c)),
                _ => Poly::atom(Expr::unary(*op, p.to_expr())),
            }
        }
        Expr::Binary(BinaryOp::Add, a, b) => to_poly(a).add(to_poly(b)),
        Expr::Binary(BinaryOp::Sub, a, b) => to_poly(a).add(to_poly(b).scale(-1.0)),
        Expr::Binary(BinaryOp::Mul, a, b) => {
            let (pa, pb) = (to_poly(a), to_poly(b));
            pa.mul(&pb)
                .unwrap_or_else(|| Poly::atom(Expr::mul(pa.to_expr(), pb.to_expr())))
        }
        Expr::Binary(BinaryOp::Div, a, b) => {
            let (pa, pb) = (to_poly(a), to_poly(b));
            match pb.single_term() {
                Some((c, m)) if c != 0.0 => {
                    let inv = Monomial {
                        factors: m.factors.iter().map(|f| Factor { exp: -f.exp, ..f.clone() }).collect(),
                    };
                    let inv = Poly {
                        terms: vec![(1.0 / c, inv)],
                    };
                    pa.mul(&inv).expect("single-term product")
                }
                _ => Poly::atom(Expr::binary(BinaryOp::Div, pa.to_expr(), pb.to_expr())),
            }
        }
        Expr::Pow(a, p) => {
            let pa = to_poly(a);
            let p = *p;
            match pa.single_term() {
                Some((c, m)) => {
                    let all_even = m.factors.iter().all(|f| !f.odd);
                    if p.fract() == 0.0 {
                        let odd_power = (p as i64) % 2 != 0;
                        let factors = m
                            .factors
                            .iter()
                            .map(|f| Factor {
                                base: f.base.clone(),
                                exp: f.exp * p,
                                odd: f.odd && odd_power,
                            })
                            .collect();
                        Poly {
                            terms: vec![(c.powf(p), Monomial { factors })],
                        }
                        .normalized()
                    } else if all_even && c >= 0.0 {
                        let factors = m
                            .factors
                            .iter()
                            .map(|f| Factor {
                                base: f.base.clone(),
                                exp: f.exp * p,
                                odd: false,
                            })
                            .collect();
                        Poly {
                            terms: vec![(c.powf(p), Monomial { factors })],
                        }
                        .normalized()
                    } else {
                        Poly::atom(Expr::pow(pa.to_expr(), p))
                    }
                }
                None => Poly::atom(Expr::pow(pa.to_expr(), p)),
            }
        }
    }
}

/// Canonical form: flattened sum of monomials with folded constants and
/// sorted factors; `sign(z)·|z|^p` is written `|z|^(p−1)·z` for `p > 1`.
pub fn canonicalize(e: &Expr) -> Expr {
    to_poly(e).to_expr()
}

/// Whether two expressions have the same monomials (ignoring
/// coefficients), with exponents compared within `tol`.
pub fn same_structure(a: &Expr, b: &Expr, tol: f64) -> bool {
    match_terms(a, b, tol).is_some()
}

/// Pairs the monomials of `a` and `b` one to one, exponents compared
/// within `tol`, and returns `(coef_a, coef_b)` in the term order of `b`.
/// `None` when the monomial sets differ.
pub fn match_terms(a: &Expr, b: &Expr, tol: f64) -> Option<Vec<(f64, f64)>> {
    let (pa, pb) = (to_poly(a), to_poly(b));
    if pa.terms.len() != pb.terms.len() {
        return None;
    }
    let mut pairs = vec![(0.0, 0.0); pb.terms.len()];
    let mut used = vec![false; pb.terms.len()];
    for (ca, ma) in &pa.terms {
        let (j, (cb, _)) = pb.terms.iter().enumerate().find(|(j, (_, mb))| !used[*j] && ma.matches(mb, tol))?;
        used[j] = true;
        pairs[j] = (*ca, *cb);
    }
    Some(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symreg::expr::VarSet;

    fn vs() -> VarSet {
        VarSet::new(&["xdot", "z"])
    }

    fn parse(s: &str) -> Expr {
        Expr::parse_sexpr(s, &vs()).unwrap()
    }

    #[test]
    fn sign_times_power_becomes_odd_power() {
        let e = parse("(* (sign z) (pow (abs z) 1.5))");
        assert_eq!(canonicalize(&e).to_sexpr(&vs()), "(* (pow (abs z) 0.5) z)");
    }

    #[test]
    fn commutativity() {
        let a = parse("(+ xdot (* z xdot))");
        let b = parse("(+ (* xdot z) xdot)");
        assert_eq!(canonicalize(&a), canonicalize(&b));
    }

    #[test]
    fn constant_folding() {
        let e = parse("(* 2.0 (* 3.0 xdot))");
        assert_eq!(canonicalize(&e).to_sexpr(&vs()), "(* 6.0 xdot)");
    }

    #[test]
    fn canonical_form_preserves_values() {
        let exprs = [
            "(- (* (abs xdot) (* (abs z) z)) (* 3.0 (sign xdot)))",
            "(pow (abs (* 2.0 z)) 1.5)",
            "(* (+ xdot z) (- xdot z))",
            "(abs (+ xdot z))",
            "(/ xdot (* 2.0 z))",
        ];
        for s in exprs {
            let e = parse(s);
            let c = canonicalize(&e);
            for row in [[0.3, -1.2], [-2.0, 0.7], [1.5, 2.5]] {
                let (a, b) = (e.eval_row(&row), c.eval_row(&row));
                assert!((a - b).abs() < 1e-12 * a.abs().max(1.0), "{s}: {a} vs {b} ({})", c.to_sexpr(&vs()));
            }
        }
    }

    #[test]
    fn structure_ignores_coefficients() {
        let a = parse("(+ (* 4.0 xdot) (* -5.0 (* (abs xdot) (* (pow (abs z) 0.5) z))))");
        let b = parse("(+ (* -4.9 (* (abs xdot) (* (pow (abs z) 0.52) z))) (* 3.9 xdot))");
        assert!(same_structure(&a, &b, 0.05));
        assert!(!same_structure(&a, &b, 0.01));
        assert!(!same_structure(&a, &parse("(* 4.0 xdot)"), 0.05));
    }
}
