//! Minimal scalar reverse-mode differentiation.
//!
//! Values are nodes in an eagerly-evaluated acyclic graph. Each node stores
//! its forward value, an accumulated adjoint (`grad`), and its parents
//! together with the local partial derivatives computed at construction
//! time. [`Value::backward`] runs one reverse sweep and adds the resulting
//! adjoints into every reachable node, so repeated calls accumulate and the
//! backward of a sum equals the sum of separate backwards.

use std::cell::RefCell;
use std::collections::{HashMap, HashSet};
use std::rc::Rc;

use crate::ball::atanh_clamped;
use crate::error::{Error, Result};
use crate::real::Real;

struct Node<T> {
    value: T,
    grad: T,
    parents: Vec<(Value<T>, T)>,
    kind: &'static str,
}

// Default recursive teardown would overflow the stack on long op chains;
// steal each uniquely-owned parent's edges and free iteratively instead.
impl<T> Drop for Node<T> {
    fn drop(&mut self) {
        let mut stack: Vec<Value<T>> =
            std::mem::take(&mut self.parents).into_iter().map(|(p, _)| p).collect();
        while let Some(v) = stack.pop() {
            if let Ok(cell) = Rc::try_unwrap(v.0) {
                let mut node = cell.into_inner();
                stack.extend(std::mem::take(&mut node.parents).into_iter().map(|(p, _)| p));
            }
        }
    }
}

/// A scalar in the differentiable graph.
#[derive(Clone)]
pub struct Value<T>(Rc<RefCell<Node<T>>>);

impl<T: Real> Value<T> {
    fn new(value: T, parents: Vec<(Value<T>, T)>, kind: &'static str) -> Self {
        Value(Rc::new(RefCell::new(Node { value, grad: T::zero(), parents, kind })))
    }

    /// Leaf holding a trainable or perturbable scalar.
    pub fn leaf(value: T) -> Self {
        Self::new(value, Vec::new(), "leaf")
    }

    /// Leaf treated as a constant (no semantic difference for backward;
    /// the label only aids diagnostics).
    pub fn constant(value: T) -> Self {
        Self::new(value, Vec::new(), "const")
    }

    pub fn value(&self) -> T {
        self.0.borrow().value
    }

    pub fn grad(&self) -> T {
        self.0.borrow().grad
    }

    pub fn kind(&self) -> &'static str {
        self.0.borrow().kind
    }

    /// Overwrite the stored value. Only meaningful on leaves: interior nodes
    /// are not recomputed.
    pub fn set_value(&self, v: T) {
        self.0.borrow_mut().value = v;
    }

    pub fn zero_grad(&self) {
        self.0.borrow_mut().grad = T::zero();
    }

    fn id(&self) -> usize {
        Rc::as_ptr(&self.0) as *const () as usize
    }

    fn unary(&self, value: T, partial: T, kind: &'static str) -> Self {
        Self::new(value, vec![(self.clone(), partial)], kind)
    }

    pub fn add(&self, o: &Self) -> Self {
        Self::new(
            self.value() + o.value(),
            vec![(self.clone(), T::one()), (o.clone(), T::one())],
            "add",
        )
    }

    pub fn sub(&self, o: &Self) -> Self {
        Self::new(
            self.value() - o.value(),
            vec![(self.clone(), T::one()), (o.clone(), -T::one())],
            "sub",
        )
    }

    pub fn mul(&self, o: &Self) -> Self {
        Self::new(
            self.value() * o.value(),
            vec![(self.clone(), o.value()), (o.clone(), self.value())],
            "mul",
        )
    }

    pub fn div(&self, o: &Self) -> Self {
        let b = o.value();
        Self::new(
            self.value() / b,
            vec![
                (self.clone(), T::one() / b),
                (o.clone(), -self.value() / (b * b)),
            ],
            "div",
        )
    }

    pub fn neg(&self) -> Self {
        self.unary(-self.value(), -T::one(), "neg")
    }

    pub fn add_const(&self, k: T) -> Self {
        self.unary(self.value() + k, T::one(), "add_const")
    }

    pub fn sub_const(&self, k: T) -> Self {
        self.unary(self.value() - k, T::one(), "sub_const")
    }

    pub fn mul_const(&self, k: T) -> Self {
        self.unary(self.value() * k, k, "mul_const")
    }

    pub fn exp(&self) -> Self {
        let e = self.value().exp();
        self.unary(e, e, "exp")
    }

    pub fn ln(&self) -> Self {
        self.unary(self.value().ln(), T::one() / self.value(), "ln")
    }

    pub fn sqrt(&self) -> Self {
        let r = self.value().sqrt();
        self.unary(r, T::of(0.5) / r, "sqrt")
    }

    pub fn square(&self) -> Self {
        let v = self.value();
        self.unary(v * v, T::of(2.0) * v, "square")
    }

    pub fn tanh(&self) -> Self {
        let t = self.value().tanh();
        self.unary(t, T::one() - t * t, "tanh")
    }

    /// `arctanh` with the argument clamped just inside ±1, matching the raw
    /// geometry path. The partial uses the clamped argument: beyond the
    /// clamp the function is flat, and the unclamped `1/(1−z²)` would flip
    /// sign there.
    pub fn atanh(&self) -> Self {
        let mut cap = T::one() - T::of(1e-15);
        if cap >= T::one() {
            cap = T::one() - T::epsilon();
        }
        let z = self.value().max(-cap).min(cap);
        let partial = if self.value().abs() >= cap {
            T::zero()
        } else {
            T::one() / (T::one() - z * z)
        };
        self.unary(atanh_clamped(self.value()), partial, "atanh")
    }

    pub fn relu(&self) -> Self {
        let v = self.value();
        let (val, p) = if v > T::zero() { (v, T::one()) } else { (T::zero(), T::zero()) };
        self.unary(val, p, "relu")
    }

    /// `ln(1 + eˣ)` in the overflow-safe form `max(x,0) + ln(1 + e^{-|x|})`,
    /// with derivative `σ(x)`.
    pub fn softplus(&self) -> Self {
        let x = self.value();
        let val = x.max(T::zero()) + (-x.abs()).exp().ln_1p();
        let sigma = if x >= T::zero() {
            T::one() / (T::one() + (-x).exp())
        } else {
            let e = x.exp();
            e / (T::one() + e)
        };
        self.unary(val, sigma, "softplus")
    }

    /// N-ary sum node: one node regardless of the number of terms.
    pub fn sum(items: &[Value<T>]) -> Self {
        let total = items.iter().map(|v| v.value()).fold(T::zero(), |a, b| a + b);
        let parents = items.iter().map(|v| (v.clone(), T::one())).collect();
        Self::new(total, parents, "sum")
    }

    /// N-ary inner product `Σ xᵢ·yᵢ`. Repeated nodes (e.g. `dot(v, v)`)
    /// accumulate correctly through the adjoint sweep.
    pub fn dot(xs: &[Value<T>], ys: &[Value<T>]) -> Self {
        debug_assert_eq!(xs.len(), ys.len());
        let mut total = T::zero();
        let mut parents = Vec::with_capacity(2 * xs.len());
        for (x, y) in xs.iter().zip(ys) {
            total = total + x.value() * y.value();
            parents.push((x.clone(), y.value()));
            parents.push((y.clone(), x.value()));
        }
        Self::new(total, parents, "dot")
    }

    fn topo_order(&self) -> Vec<Value<T>> {
        let mut order = Vec::new();
        let mut visited = HashSet::new();
        let mut stack: Vec<(Value<T>, bool)> = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !visited.insert(node.id()) {
                continue;
            }
            stack.push((node.clone(), true));
            for (p, _) in node.0.borrow().parents.iter() {
                if !visited.contains(&p.id()) {
                    stack.push((p.clone(), false));
                }
            }
        }
        order
    }

    /// Re-walk the graph, failing on the first non-finite intermediate, and
    /// return the root value.
    pub fn forward_eval(&self) -> Result<T> {
        for node in self.topo_order() {
            let v = node.value();
            if !v.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite intermediate ({v}) in node kind '{}'",
                    node.kind()
                )));
            }
        }
        Ok(self.value())
    }

    /// One reverse sweep from this scalar root. Adjoints are computed in a
    /// scratch map and then added into each node's `grad`, so earlier
    /// accumulated gradients never leak into the propagation itself.
    pub fn backward(&self) {
        let order = self.topo_order();
        let mut adjoint: HashMap<usize, T> = HashMap::with_capacity(order.len());
        adjoint.insert(self.id(), T::one());
        for node in order.iter().rev() {
            let a = match adjoint.get(&node.id()) {
                Some(&a) => a,
                None => continue,
            };
            {
                let mut n = node.0.borrow_mut();
                n.grad = n.grad + a;
            }
            for (p, w) in node.0.borrow().parents.iter() {
                let slot = adjoint.entry(p.id()).or_insert_with(T::zero);
                *slot = *slot + a * *w;
            }
        }
    }
}

impl<T: Real> std::fmt::Debug for Value<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Value({} = {}, grad {})", self.kind(), self.value(), self.grad())
    }
}

/// `ln Σ exp(xᵢ)` with max-subtraction.
pub fn log_sum_exp<T: Real>(items: &[Value<T>]) -> Value<T> {
    let m = items
        .iter()
        .map(|v| v.value())
        .fold(T::neg_infinity(), |a, b| a.max(b));
    let shifted: Vec<Value<T>> = items.iter().map(|v| v.sub_const(m).exp()).collect();
    Value::sum(&shifted).ln().add_const(m)
}

/// Mean of a non-empty slice as a single graph expression.
pub fn mean<T: Real>(items: &[Value<T>]) -> Value<T> {
    debug_assert!(!items.is_empty());
    Value::sum(items).mul_const(T::one() / T::of(items.len() as f64))
}
