//! Reverse-mode automatic differentiation over `f64` scalars.
//!
//! A [`Tape`] records every primitive operation as a node holding the indices
//! of its operands and the local partial derivatives evaluated in the forward
//! pass. [`Tape::backward`] then performs a single reverse sweep. Nodes are
//! appended in evaluation order, so operands always precede their results.
//!
//! Domain violations (division by zero, `ln` of a non-positive number, a
//! fractional power of a negative base) do not abort the forward pass; the
//! first one is latched on the tape and can be retrieved with
//! [`Tape::domain_error`].
//!
//! Large composite operations whose parameters live outside the tape (the
//! neural surrogate, for instance) are recorded as *opaque* nodes: the
//! partials with respect to tape inputs are supplied up front, and the
//! adjoint reaching the node is handed to a callback during the backward
//! sweep so the caller can accumulate its own parameter gradients.

use std::cell::{Cell, RefCell};
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::error::Error;

/// Lower clamp applied to the base inside `ln` when differentiating
/// `x^n` with respect to a learnable exponent.
pub const LOG_BASE_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug)]
enum Node {
    Leaf,
    Unary {
        arg: usize,
        partial: f64,
    },
    Binary {
        lhs: usize,
        rhs: usize,
        d_lhs: f64,
        d_rhs: f64,
    },
    Opaque {
        start: usize,
        len: usize,
        payload: usize,
    },
}

/// A domain violation recorded during the forward pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DomainError {
    pub op: &'static str,
    pub value: f64,
}

impl From<DomainError> for Error {
    fn from(e: DomainError) -> Self {
        Error::Domain {
            op: e.op,
            value: e.value,
        }
    }
}

/// Append-only record of primitive operations.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    values: RefCell<Vec<f64>>,
    // (operand index, partial) pairs referenced by opaque nodes
    opaque_edges: RefCell<Vec<(usize, f64)>>,
    error: Cell<Option<DomainError>>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("len", &self.len()).finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Self {
            nodes: RefCell::new(Vec::with_capacity(n)),
            values: RefCell::new(Vec::with_capacity(n)),
            opaque_edges: RefCell::new(Vec::new()),
            error: Cell::new(None),
        }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drops every node but keeps the allocations for reuse.
    ///
    /// Takes `&mut self` so no [`Var`] borrowing the tape can survive.
    pub fn clear(&mut self) {
        self.nodes.get_mut().clear();
        self.values.get_mut().clear();
        self.opaque_edges.get_mut().clear();
        self.error.set(None);
    }

    /// First domain violation seen since the tape was created or cleared.
    pub fn domain_error(&self) -> Option<DomainError> {
        self.error.get()
    }

    /// Records a leaf variable.
    pub fn lift(&self, value: f64) -> Var<'_> {
        self.push(Node::Leaf, value)
    }

    /// Records `n` leaf variables.
    pub fn lift_all(&self, values: &[f64]) -> Vec<Var<'_>> {
        values.iter().map(|&v| self.lift(v)).collect()
    }

    /// Records an opaque node with precomputed partials against `inputs`.
    ///
    /// During [`Tape::backward_with`] the callback receives `payload` and the
    /// adjoint of this node, after the adjoint has been propagated to
    /// `inputs`.
    pub fn opaque<'t>(
        &'t self,
        inputs: &[Var<'t>],
        partials: &[f64],
        value: f64,
        payload: usize,
    ) -> Var<'t> {
        assert_eq!(inputs.len(), partials.len(), "one partial per input");
        let start = {
            let mut edges = self.opaque_edges.borrow_mut();
            let start = edges.len();
            edges.extend(inputs.iter().zip(partials).map(|(v, &p)| {
                debug_assert!(std::ptr::eq(v.tape, self));
                (v.idx, p)
            }));
            start
        };
        self.push(
            Node::Opaque {
                start,
                len: inputs.len(),
                payload,
            },
            value,
        )
    }

    fn push(&self, node: Node, value: f64) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let idx = nodes.len();
        nodes.push(node);
        self.values.borrow_mut().push(value);
        Var {
            tape: self,
            idx,
            value,
        }
    }

    fn unary(&self, arg: &Var<'_>, value: f64, partial: f64) -> Var<'_> {
        self.push(
            Node::Unary {
                arg: arg.idx,
                partial,
            },
            value,
        )
    }

    fn binary(&self, lhs: &Var<'_>, rhs: &Var<'_>, value: f64, d_lhs: f64, d_rhs: f64) -> Var<'_> {
        self.push(
            Node::Binary {
                lhs: lhs.idx,
                rhs: rhs.idx,
                d_lhs,
                d_rhs,
            },
            value,
        )
    }

    fn flag(&self, op: &'static str, value: f64) {
        if self.error.get().is_none() {
            self.error.set(Some(DomainError { op, value }));
        }
    }

    /// Reverse sweep from `loss`.
    pub fn backward(&self, loss: &Var<'_>) -> Gradients {
        self.backward_with(loss, |_, _| {})
    }

    /// Reverse sweep from `loss`, reporting the adjoint of every opaque node
    /// to `on_opaque(payload, adjoint)`.
    pub fn backward_with(&self, loss: &Var<'_>, mut on_opaque: impl FnMut(usize, f64)) -> Gradients {
        assert!(std::ptr::eq(loss.tape, self), "loss belongs to another tape");
        let nodes = self.nodes.borrow();
        let edges = self.opaque_edges.borrow();
        let mut adj = vec![0.0; nodes.len()];
        adj[loss.idx] = 1.0;
        for i in (0..=loss.idx).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            match nodes[i] {
                Node::Leaf => {}
                Node::Unary { arg, partial } => adj[arg] += a * partial,
                Node::Binary {
                    lhs,
                    rhs,
                    d_lhs,
                    d_rhs,
                } => {
                    adj[lhs] += a * d_lhs;
                    adj[rhs] += a * d_rhs;
                }
                Node::Opaque {
                    start,
                    len,
                    payload,
                } => {
                    for &(j, p) in &edges[start..start + len] {
                        adj[j] += a * p;
                    }
                    on_opaque(payload, a);
                }
            }
        }
        Gradients { adj }
    }
}

/// Adjoints of every node after a backward sweep.
#[derive(Clone, Debug)]
pub struct Gradients {
    adj: Vec<f64>,
}

impl Gradients {
    /// d(loss)/d(var).
    pub fn wrt(&self, var: &Var<'_>) -> f64 {
        self.adj.get(var.idx).copied().unwrap_or(0.0)
    }

    pub fn wrt_all(&self, vars: &[Var<'_>]) -> Vec<f64> {
        vars.iter().map(|v| self.wrt(v)).collect()
    }
}

/// A scalar recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: usize,
    value: f64,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}({})", self.idx, self.value)
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn index(&self) -> usize {
        self.idx
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    /// A constant on the same tape (a leaf whose gradient is simply ignored).
    pub fn constant(&self, value: f64) -> Var<'t> {
        self.tape.lift(value)
    }

    /// |x|, with subgradient 0 at x = 0.
    pub fn abs(self) -> Var<'t> {
        self.tape.unary(&self, self.value.abs(), sign(self.value))
    }

    /// sign(x); derivative 0 everywhere.
    pub fn sign(self) -> Var<'t> {
        self.tape.unary(&self, sign(self.value), 0.0)
    }

    /// x^e for a constant exponent.
    pub fn powf(self, e: f64) -> Var<'t> {
        let x = self.value;
        if x < 0.0 && e.fract() != 0.0 {
            self.tape.flag("pow_const", x);
        }
        let value = x.powf(e);
        let partial = if e == 0.0 {
            0.0
        } else if e == 1.0 {
            1.0
        } else {
            e * x.powf(e - 1.0)
        };
        self.tape.unary(&self, value, partial)
    }

    /// x^n with a learnable exponent; d/dn uses ln(max(x, 1e-12)).
    pub fn pow(self, n: Var<'t>) -> Var<'t> {
        let x = self.value;
        let e = n.value;
        if x < 0.0 && e.fract() != 0.0 {
            self.tape.flag("pow", x);
        }
        let value = x.powf(e);
        let d_base = if e == 0.0 { 0.0 } else { e * x.powf(e - 1.0) };
        let d_exp = value * x.max(LOG_BASE_FLOOR).ln();
        self.tape.binary(&self, &n, value, d_base, d_exp)
    }

    pub fn square(self) -> Var<'t> {
        self.tape.unary(&self, self.value * self.value, 2.0 * self.value)
    }

    pub fn tanh(self) -> Var<'t> {
        let t = self.value.tanh();
        self.tape.unary(&self, t, 1.0 - t * t)
    }

    pub fn exp(self) -> Var<'t> {
        let e = self.value.exp();
        self.tape.unary(&self, e, e)
    }

    pub fn ln(self) -> Var<'t> {
        let x = self.value;
        if x <= 0.0 {
            self.tape.flag("log", x);
        }
        self.tape.unary(&self, x.ln(), 1.0 / x)
    }

    pub fn sin(self) -> Var<'t> {
        self.tape.unary(&self, self.value.sin(), self.value.cos())
    }

    pub fn cos(self) -> Var<'t> {
        self.tape.unary(&self, self.value.cos(), -self.value.sin())
    }

    /// Scalar multiple, recorded as a single unary node.
    pub fn scale(self, c: f64) -> Var<'t> {
        self.tape.unary(&self, self.value * c, c)
    }

    /// Adds a constant, recorded as a single unary node.
    pub fn shift(self, c: f64) -> Var<'t> {
        self.tape.unary(&self, self.value + c, 1.0)
    }
}

/// Sum of a slice of variables as a balanced chain of additions.
pub fn sum<'t>(vars: &[Var<'t>]) -> Option<Var<'t>> {
    let mut it = vars.iter().copied();
    let first = it.next()?;
    Some(it.fold(first, |acc, v| acc + v))
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        self.tape.binary(&self, &rhs, self.value + rhs.value, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        self.tape.binary(&self, &rhs, self.value - rhs.value, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        self.tape
            .binary(&self, &rhs, self.value * rhs.value, rhs.value, self.value)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        if rhs.value == 0.0 {
            self.tape.flag("div", rhs.value);
        }
        let q = self.value / rhs.value;
        self.tape
            .binary(&self, &rhs, q, 1.0 / rhs.value, -q / rhs.value)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.tape.unary(&self, -self.value, -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: f64) -> Var<'t> {
        self.shift(rhs)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: f64) -> Var<'t> {
        self.shift(-rhs)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Var<'t> {
        self.scale(rhs)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: f64) -> Var<'t> {
        if rhs == 0.0 {
            self.tape.flag("div", rhs);
        }
        self.scale(1.0 / rhs)
    }
}

impl<'t> Add<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        rhs.shift(self)
    }
}

impl<'t> Sub<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        rhs.tape.unary(&rhs, self - rhs.value, -1.0)
    }
}

impl<'t> Mul<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        rhs.scale(self)
    }
}

impl<'t> Div<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        if rhs.value == 0.0 {
            rhs.tape.flag("div", rhs.value);
        }
        let q = self / rhs.value;
        rhs.tape.unary(&rhs, q, -q / rhs.value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn central_diff(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        let h = 1e-6;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn lift_identity_gradient() {
        let tape = Tape::new();
        let x = tape.lift(3.0);
        let g = tape.backward(&x);
        assert_eq!(g.wrt(&x), 1.0);
    }

    #[test]
    fn square_at_zero() {
        let tape = Tape::new();
        let x = tape.lift(0.0);
        let y = x * x;
        assert_eq!(tape.backward(&y).wrt(&x), 0.0);
    }

    #[test]
    fn cube_matches_finite_difference() {
        let fd = central_diff(|x| x * x * x, 2.0);
        let tape = Tape::new();
        let x = tape.lift(2.0);
        let y = x * x * x;
        let g = tape.backward(&y).wrt(&x);
        assert!((g - fd).abs() < 1e-6, "{g} vs {fd}");
        assert!((g - 12.0).abs() < 1e-12);
    }

    #[test]
    fn abs_and_sign_partials() {
        let tape = Tape::new();
        let x = tape.lift(-2.0);
        let a = x.abs();
        assert_eq!(a.value(), 2.0);
        assert_eq!(tape.backward(&a).wrt(&x), -1.0);

        let s_in = tape.lift(-0.7);
        let s = s_in.sign();
        assert_eq!(s.value(), -1.0);
        assert_eq!(tape.backward(&s).wrt(&s_in), 0.0);

        let zero = tape.lift(0.0);
        let az = zero.abs();
        assert_eq!(tape.backward(&az).wrt(&zero), 0.0);
    }

    #[test]
    fn fractional_power_of_abs() {
        let fd = central_diff(|z: f64| z.abs().powf(1.5), 4.0);
        let tape = Tape::new();
        let z = tape.lift(4.0);
        let y = z.abs().powf(1.5);
        assert!((y.value() - 8.0).abs() < 1e-12);
        let g = tape.backward(&y).wrt(&z);
        assert!((g - 3.0).abs() < 1e-12);
        assert!((g - fd).abs() < 1e-6);
    }

    #[test]
    fn learnable_exponent() {
        let tape = Tape::new();
        let x = tape.lift(2.0);
        let n = tape.lift(1.5);
        let y = x.pow(n);
        let g = tape.backward(&y);
        let fd = central_diff(|e| 2f64.powf(e), 1.5);
        assert!((g.wrt(&n) - fd).abs() < 1e-6);
        let fdx = central_diff(|b| b.powf(1.5), 2.0);
        assert!((g.wrt(&x) - fdx).abs() < 1e-6);

        // base 0: the log is clamped, no -inf
        let z = tape.lift(0.0);
        let n2 = tape.lift(2.0);
        let y2 = z.pow(n2);
        assert!(tape.backward(&y2).wrt(&n2).is_finite());
    }

    #[test]
    fn quadratic_loss_gradient() {
        let tape = Tape::new();
        let a = tape.lift(3.0);
        let b = tape.lift(1.0);
        let loss = (a - b).square();
        let g = tape.backward(&loss);
        assert_eq!(g.wrt(&a), 4.0);
        assert_eq!(g.wrt(&b), -4.0);
    }

    #[test]
    fn domain_errors_are_latched() {
        let tape = Tape::new();
        let x = tape.lift(-1.0);
        let _ = x.ln();
        let _ = x.powf(0.5);
        let err = tape.domain_error().unwrap();
        assert_eq!(err.op, "log");
        assert_eq!(err.value, -1.0);

        let tape = Tape::new();
        let x = tape.lift(1.0);
        let zero = tape.lift(0.0);
        let _ = x / zero;
        assert_eq!(tape.domain_error().unwrap().op, "div");

        let tape = Tape::new();
        let x = tape.lift(-2.0);
        let _ = x.powf(3.0);
        assert!(tape.domain_error().is_none(), "integer powers of negatives are fine");
    }

    #[test]
    fn opaque_node_routes_adjoint() {
        let tape = Tape::new();
        let a = tape.lift(2.0);
        let b = tape.lift(5.0);
        // f(a, b) = a * b recorded opaquely
        let f = tape.opaque(&[a, b], &[5.0, 2.0], 10.0, 7);
        let y = f * 3.0;
        let mut seen = Vec::new();
        let g = tape.backward_with(&y, |p, adj| seen.push((p, adj)));
        assert_eq!(g.wrt(&a), 15.0);
        assert_eq!(g.wrt(&b), 6.0);
        assert_eq!(seen, vec![(7, 3.0)]);
    }

    #[test]
    fn clear_resets() {
        let mut tape = Tape::new();
        {
            let x = tape.lift(-1.0);
            let _ = x.ln();
        }
        assert!(tape.domain_error().is_some());
        tape.clear();
        assert!(tape.is_empty());
        assert!(tape.domain_error().is_none());
    }
}
