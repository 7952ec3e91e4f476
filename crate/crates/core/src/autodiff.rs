//! Tape-based reverse-mode automatic differentiation over vector values.
//!
//! Every tape node holds a dense `Vec<f64>`; scalars are length-1 vectors and
//! broadcast in binary operations. Nodes are appended during the forward pass
//! and a single reverse sweep in inverse insertion order accumulates adjoints.
//!
//! ```
//! use graphmfg::autodiff::Tape;
//!
//! let tape = Tape::new();
//! let x = tape.var(vec![3.0]);
//! let y = (x * x).sum();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.get(x).unwrap(), &[6.0]);
//! ```

use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use thiserror::Error;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Error, PartialEq)]
pub enum AdError {
    #[error("variable belongs to tape {found}, not tape {expected}")]
    ForeignTape { expected: u64, found: u64 },
    #[error("loss must be a scalar, got length {0}")]
    NonScalarLoss(usize),
    #[error("seed length {got} does not match node length {expected}")]
    SeedLength { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy)]
enum Unary {
    Neg,
    Exp,
    Ln,
    Tanh,
    Relu,
    Abs,
    Square,
    Sqrt,
    Powi(i32),
    Scale(f64),
    Offset,
    MaxConst(f64),
}

#[derive(Debug, Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Unary(Unary, usize),
    Binary(Binary, usize, usize),
    MulConst(usize, Arc<[f64]>),
    Sum(usize),
    Broadcast(usize),
    Gather(usize, Arc<[usize]>),
    ScatterAdd(usize, Arc<[usize]>),
    Slice(usize, usize),
    /// Row-wise concatenation of `rows × da` and `rows × db`.
    ConcatCols { a: usize, b: usize, da: usize, db: usize },
    /// `rows × inp` input, `out × inp` weight, `out` bias.
    Linear { x: usize, w: usize, b: usize, inp: usize, out: usize },
    /// Dense constant `n × n` matrix times vector.
    MatVec(usize, Arc<Vec<f64>>),
    /// Mean over CSR neighbor lists of `dim`-wide rows.
    NeighborMean { x: usize, offsets: Arc<[usize]>, nbrs: Arc<[usize]>, dim: usize },
}

#[derive(Debug)]
struct Node {
    value: Vec<f64>,
    op: Op,
}

/// Append-only record of a forward computation.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: RefCell<Vec<Node>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var(tape {}, #{})", self.tape.id, self.idx)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed), nodes: RefCell::new(Vec::new()) }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Total floats held in node values.
    pub fn stored_floats(&self) -> usize {
        self.nodes.borrow().iter().map(|n| n.value.len()).sum()
    }

    /// Differentiable input.
    pub fn var(&self, value: Vec<f64>) -> Var<'_> {
        self.push(value, Op::Leaf)
    }

    /// Input that never needs a gradient (still a leaf; adjoints are ignored).
    pub fn constant(&self, value: Vec<f64>) -> Var<'_> {
        self.push(value, Op::Leaf)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.push(vec![value], Op::Leaf)
    }

    fn push(&self, value: Vec<f64>, op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Var { tape: self, idx: nodes.len() - 1 }
    }

    fn check(&self, v: Var<'_>) -> Result<(), AdError> {
        if v.tape.id == self.id {
            Ok(())
        } else {
            Err(AdError::ForeignTape { expected: self.id, found: v.tape.id })
        }
    }

    /// Reverse sweep from a scalar loss with adjoint 1.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients, AdError> {
        self.check(loss)?;
        let len = loss.len();
        if len != 1 {
            return Err(AdError::NonScalarLoss(len));
        }
        self.backward_seeded(&[(loss, vec![1.0])])
    }

    /// Reverse sweep with arbitrary output adjoints.
    pub fn backward_seeded(&self, seeds: &[(Var<'_>, Vec<f64>)]) -> Result<Gradients, AdError> {
        let nodes = self.nodes.borrow();
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        let mut start = 0;
        for (v, seed) in seeds {
            self.check(*v)?;
            let expected = nodes[v.idx].value.len();
            if seed.len() != expected {
                return Err(AdError::SeedLength { expected, got: seed.len() });
            }
            accumulate(&mut adj[v.idx], seed);
            start = start.max(v.idx + 1);
        }
        for idx in (0..start).rev() {
            let Some(g) = adj[idx].take() else { continue };
            propagate(&nodes, idx, &g, &mut adj);
            adj[idx] = Some(g);
        }
        Ok(Gradients { tape_id: self.id, adj })
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: &[f64]) {
    match slot {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        None => *slot = Some(g.to_vec()),
    }
}

fn slot_mut(adj: &mut [Option<Vec<f64>>], idx: usize, len: usize) -> &mut Vec<f64> {
    adj[idx].get_or_insert_with(|| vec![0.0; len])
}

/// Adds `g`, the adjoint of a (possibly broadcast) result, into `idx`.
fn accumulate_broadcast(adj: &mut [Option<Vec<f64>>], idx: usize, len: usize, g: impl Iterator<Item = f64>) {
    let acc = slot_mut(adj, idx, len);
    if len == 1 {
        acc[0] += g.sum::<f64>();
    } else {
        acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
    }
}

#[inline]
fn at(v: &[f64], k: usize) -> f64 {
    if v.len() == 1 {
        v[0]
    } else {
        v[k]
    }
}

fn propagate(nodes: &[Node], idx: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
    let out = &nodes[idx].value;
    match &nodes[idx].op {
        Op::Leaf => {}
        Op::Unary(u, a) => {
            let x = &nodes[*a].value;
            let acc = slot_mut(adj, *a, x.len());
            for k in 0..g.len() {
                let d = match *u {
                    Unary::Neg => -1.0,
                    Unary::Exp => out[k],
                    Unary::Ln => 1.0 / x[k],
                    Unary::Tanh => 1.0 - out[k] * out[k],
                    Unary::Relu => {
                        if x[k] > 0.0 {
                            1.0
                        } else {
                            0.0
                        }
                    }
                    Unary::Abs => {
                        if x[k] > 0.0 {
                            1.0
                        } else if x[k] < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    }
                    Unary::Square => 2.0 * x[k],
                    Unary::Sqrt => 0.5 / out[k],
                    Unary::Powi(p) => p as f64 * x[k].powi(p - 1),
                    Unary::Scale(c) => c,
                    Unary::Offset => 1.0,
                    Unary::MaxConst(c) => {
                        if x[k] > c {
                            1.0
                        } else {
                            0.0
                        }
                    }
                };
                acc[k] += g[k] * d;
            }
        }
        Op::Binary(b, l, r) => {
            let (xl, xr) = (&nodes[*l].value, &nodes[*r].value);
            let (ll, lr) = (xl.len(), xr.len());
            match b {
                Binary::Add => {
                    accumulate_broadcast(adj, *l, ll, g.iter().copied());
                    accumulate_broadcast(adj, *r, lr, g.iter().copied());
                }
                Binary::Sub => {
                    accumulate_broadcast(adj, *l, ll, g.iter().copied());
                    accumulate_broadcast(adj, *r, lr, g.iter().map(|x| -x));
                }
                Binary::Mul => {
                    accumulate_broadcast(adj, *l, ll, g.iter().enumerate().map(|(k, gk)| gk * at(xr, k)));
                    accumulate_broadcast(adj, *r, lr, g.iter().enumerate().map(|(k, gk)| gk * at(xl, k)));
                }
                Binary::Div => {
                    accumulate_broadcast(adj, *l, ll, g.iter().enumerate().map(|(k, gk)| gk / at(xr, k)));
                    accumulate_broadcast(
                        adj,
                        *r,
                        lr,
                        g.iter().enumerate().map(|(k, gk)| -gk * at(xl, k) / (at(xr, k) * at(xr, k))),
                    );
                }
            }
        }
        Op::MulConst(a, c) => {
            let acc = slot_mut(adj, *a, c.len());
            acc.iter_mut().zip(g.iter().zip(c.iter())).for_each(|(s, (gk, ck))| *s += gk * ck);
        }
        Op::Sum(a) => {
            let len = nodes[*a].value.len();
            slot_mut(adj, *a, len).iter_mut().for_each(|s| *s += g[0]);
        }
        Op::Broadcast(a) => {
            slot_mut(adj, *a, 1)[0] += g.iter().sum::<f64>();
        }
        Op::Gather(a, index) => {
            let acc = slot_mut(adj, *a, nodes[*a].value.len());
            for (gk, &src) in g.iter().zip(index.iter()) {
                acc[src] += gk;
            }
        }
        Op::ScatterAdd(a, index) => {
            let acc = slot_mut(adj, *a, index.len());
            for (s, &dst) in acc.iter_mut().zip(index.iter()) {
                *s += g[dst];
            }
        }
        Op::Slice(a, start) => {
            let acc = slot_mut(adj, *a, nodes[*a].value.len());
            acc[*start..*start + g.len()].iter_mut().zip(g).for_each(|(s, gk)| *s += gk);
        }
        Op::ConcatCols { a, b, da, db } => {
            let (da, db) = (*da, *db);
            let rows = g.len() / (da + db);
            {
                let acc = slot_mut(adj, *a, rows * da);
                for r in 0..rows {
                    for d in 0..da {
                        acc[r * da + d] += g[r * (da + db) + d];
                    }
                }
            }
            let acc = slot_mut(adj, *b, rows * db);
            for r in 0..rows {
                for d in 0..db {
                    acc[r * db + d] += g[r * (da + db) + da + d];
                }
            }
        }
        Op::Linear { x, w, b, inp, out: width } => {
            let (inp, width) = (*inp, *width);
            let xv = &nodes[*x].value;
            let wv = &nodes[*w].value;
            let rows = xv.len() / inp;
            {
                let acc = slot_mut(adj, *x, xv.len());
                for r in 0..rows {
                    for o in 0..width {
                        let go = g[r * width + o];
                        if go != 0.0 {
                            for i in 0..inp {
                                acc[r * inp + i] += go * wv[o * inp + i];
                            }
                        }
                    }
                }
            }
            {
                let acc = slot_mut(adj, *w, wv.len());
                for r in 0..rows {
                    for o in 0..width {
                        let go = g[r * width + o];
                        if go != 0.0 {
                            for i in 0..inp {
                                acc[o * inp + i] += go * xv[r * inp + i];
                            }
                        }
                    }
                }
            }
            let acc = slot_mut(adj, *b, width);
            for r in 0..rows {
                for o in 0..width {
                    acc[o] += g[r * width + o];
                }
            }
        }
        Op::MatVec(a, m) => {
            let n = g.len();
            let acc = slot_mut(adj, *a, n);
            // symmetric use is not assumed: adjoint is Mᵀg
            for (i, gi) in g.iter().enumerate() {
                if *gi != 0.0 {
                    let row = &m[i * n..(i + 1) * n];
                    acc.iter_mut().zip(row).for_each(|(s, mij)| *s += gi * mij);
                }
            }
        }
        Op::NeighborMean { x, offsets, nbrs, dim } => {
            let dim = *dim;
            let acc = slot_mut(adj, *x, nodes[*x].value.len());
            for i in 0..offsets.len() - 1 {
                let list = &nbrs[offsets[i]..offsets[i + 1]];
                if list.is_empty() {
                    continue;
                }
                let inv = 1.0 / list.len() as f64;
                for &j in list {
                    for d in 0..dim {
                        acc[j * dim + d] += g[i * dim + d] * inv;
                    }
                }
            }
        }
    }
}

/// Adjoints from one reverse sweep.
#[derive(Debug, Clone)]
pub struct Gradients {
    tape_id: u64,
    adj: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Adjoint of `v`; zeros if the loss does not depend on it.
    pub fn get(&self, v: Var<'_>) -> Result<&[f64], AdError> {
        if v.tape.id != self.tape_id {
            return Err(AdError::ForeignTape { expected: self.tape_id, found: v.tape.id });
        }
        Ok(self.adj[v.idx].as_deref().unwrap_or(&[]))
    }

    /// Adjoint of `v` as an owned vector, zero-filled when absent.
    pub fn get_or_zero(&self, v: Var<'_>) -> Result<Vec<f64>, AdError> {
        let g = self.get(v)?;
        Ok(if g.is_empty() { vec![0.0; v.len()] } else { g.to_vec() })
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn len(&self) -> usize {
        self.tape.nodes.borrow()[self.idx].value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn value(&self) -> Vec<f64> {
        self.tape.nodes.borrow()[self.idx].value.clone()
    }

    /// Value of a length-1 node.
    pub fn item(&self) -> f64 {
        let nodes = self.tape.nodes.borrow();
        let v = &nodes[self.idx].value;
        assert_eq!(v.len(), 1, "item() on a vector of length {}", v.len());
        v[0]
    }

    fn with_value<R>(&self, f: impl FnOnce(&[f64]) -> R) -> R {
        f(&self.tape.nodes.borrow()[self.idx].value)
    }

    fn same_tape(&self, other: Var<'t>) {
        assert_eq!(self.tape.id, other.tape.id, "operands recorded on different tapes");
    }

    fn unary(self, u: Unary, f: impl Fn(f64) -> f64) -> Var<'t> {
        let value = self.with_value(|x| x.iter().map(|&v| f(v)).collect());
        self.tape.push(value, Op::Unary(u, self.idx))
    }

    fn binary(self, other: Var<'t>, b: Binary, f: impl Fn(f64, f64) -> f64) -> Var<'t> {
        self.same_tape(other);
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (x, y) = (&nodes[self.idx].value, &nodes[other.idx].value);
            let n = x.len().max(y.len());
            assert!(
                x.len() == y.len() || x.len() == 1 || y.len() == 1,
                "length mismatch {} vs {}",
                x.len(),
                y.len()
            );
            (0..n).map(|k| f(at(x, k), at(y, k))).collect()
        };
        self.tape.push(value, Op::Binary(b, self.idx, other.idx))
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(Unary::Exp, f64::exp)
    }

    pub fn ln(self) -> Var<'t> {
        self.unary(Unary::Ln, f64::ln)
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary(Unary::Tanh, f64::tanh)
    }

    /// relu′(0) = 0.
    pub fn relu(self) -> Var<'t> {
        self.unary(Unary::Relu, |x| if x > 0.0 { x } else { 0.0 })
    }

    /// |x|′(0) = 0.
    pub fn abs(self) -> Var<'t> {
        self.unary(Unary::Abs, f64::abs)
    }

    pub fn square(self) -> Var<'t> {
        self.unary(Unary::Square, |x| x * x)
    }

    pub fn sqrt(self) -> Var<'t> {
        self.unary(Unary::Sqrt, f64::sqrt)
    }

    pub fn powi(self, p: i32) -> Var<'t> {
        self.unary(Unary::Powi(p), |x| x.powi(p))
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        self.unary(Unary::Scale(c), |x| c * x)
    }

    pub fn offset(self, c: f64) -> Var<'t> {
        self.unary(Unary::Offset, |x| x + c)
    }

    /// `max(x, c)` elementwise; derivative follows the active branch.
    pub fn max_const(self, c: f64) -> Var<'t> {
        self.unary(Unary::MaxConst(c), |x| x.max(c))
    }

    /// Elementwise product with a constant vector.
    pub fn mul_const(self, c: Arc<[f64]>) -> Var<'t> {
        let value = self.with_value(|x| {
            assert_eq!(x.len(), c.len(), "mul_const length mismatch");
            x.iter().zip(c.iter()).map(|(a, b)| a * b).collect()
        });
        self.tape.push(value, Op::MulConst(self.idx, c))
    }

    pub fn sum(self) -> Var<'t> {
        let value = self.with_value(|x| vec![x.iter().sum()]);
        self.tape.push(value, Op::Sum(self.idx))
    }

    /// Repeats a length-1 node `n` times.
    pub fn broadcast(self, n: usize) -> Var<'t> {
        let value = self.with_value(|x| {
            assert_eq!(x.len(), 1, "broadcast needs a scalar");
            vec![x[0]; n]
        });
        self.tape.push(value, Op::Broadcast(self.idx))
    }

    /// `out[k] = x[index[k]]`.
    pub fn gather(self, index: &Arc<[usize]>) -> Var<'t> {
        let value = self.with_value(|x| index.iter().map(|&i| x[i]).collect());
        self.tape.push(value, Op::Gather(self.idx, Arc::clone(index)))
    }

    /// `out[index[k]] += x[k]` into a zero vector of length `n`.
    pub fn scatter_add(self, index: &Arc<[usize]>, n: usize) -> Var<'t> {
        let value = self.with_value(|x| {
            assert_eq!(x.len(), index.len(), "scatter index length mismatch");
            let mut out = vec![0.0; n];
            for (v, &i) in x.iter().zip(index.iter()) {
                out[i] += v;
            }
            out
        });
        self.tape.push(value, Op::ScatterAdd(self.idx, Arc::clone(index)))
    }

    /// Contiguous sub-range `[start, start + len)`.
    pub fn slice(self, start: usize, len: usize) -> Var<'t> {
        let value = self.with_value(|x| x[start..start + len].to_vec());
        self.tape.push(value, Op::Slice(self.idx, start))
    }

    /// Row-wise concatenation `[self ‖ other]` of `da`- and `db`-wide rows.
    pub fn concat_cols(self, other: Var<'t>, da: usize, db: usize) -> Var<'t> {
        self.same_tape(other);
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (x, y) = (&nodes[self.idx].value, &nodes[other.idx].value);
            let rows = x.len() / da;
            assert_eq!(y.len(), rows * db, "concat row count mismatch");
            let mut out = Vec::with_capacity(rows * (da + db));
            for r in 0..rows {
                out.extend_from_slice(&x[r * da..(r + 1) * da]);
                out.extend_from_slice(&y[r * db..(r + 1) * db]);
            }
            out
        };
        self.tape.push(value, Op::ConcatCols { a: self.idx, b: other.idx, da, db })
    }

    /// Row-wise affine map: `self` is `rows × inp`, `w` is `out × inp`, `b` has length `out`.
    pub fn linear(self, w: Var<'t>, b: Var<'t>, inp: usize, out: usize) -> Var<'t> {
        self.same_tape(w);
        self.same_tape(b);
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (x, wv, bv) = (&nodes[self.idx].value, &nodes[w.idx].value, &nodes[b.idx].value);
            assert_eq!(x.len() % inp, 0, "input width mismatch");
            assert_eq!(wv.len(), inp * out, "weight shape mismatch");
            assert_eq!(bv.len(), out, "bias shape mismatch");
            let rows = x.len() / inp;
            let mut y = Vec::with_capacity(rows * out);
            for r in 0..rows {
                let xr = &x[r * inp..(r + 1) * inp];
                for o in 0..out {
                    let wo = &wv[o * inp..(o + 1) * inp];
                    y.push(bv[o] + wo.iter().zip(xr).map(|(a, c)| a * c).sum::<f64>());
                }
            }
            y
        };
        self.tape.push(value, Op::Linear { x: self.idx, w: w.idx, b: b.idx, inp, out })
    }

    /// Constant dense `n × n` row-major matrix times `self`.
    pub fn matvec_const(self, m: &Arc<Vec<f64>>) -> Var<'t> {
        let value = self.with_value(|x| {
            let n = x.len();
            assert_eq!(m.len(), n * n, "matrix shape mismatch");
            m.chunks_exact(n).map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
        });
        self.tape.push(value, Op::MatVec(self.idx, Arc::clone(m)))
    }

    /// Mean of `dim`-wide neighbor rows, neighbors given in CSR form.
    pub fn neighbor_mean(self, offsets: &Arc<[usize]>, nbrs: &Arc<[usize]>, dim: usize) -> Var<'t> {
        let value = self.with_value(|x| {
            let n = offsets.len() - 1;
            let mut out = vec![0.0; n * dim];
            for i in 0..n {
                let list = &nbrs[offsets[i]..offsets[i + 1]];
                if list.is_empty() {
                    continue;
                }
                let inv = 1.0 / list.len() as f64;
                for &j in list {
                    for d in 0..dim {
                        out[i * dim + d] += x[j * dim + d];
                    }
                }
                out[i * dim..(i + 1) * dim].iter_mut().for_each(|v| *v *= inv);
            }
            out
        });
        self.tape.push(
            value,
            Op::NeighborMean { x: self.idx, offsets: Arc::clone(offsets), nbrs: Arc::clone(nbrs), dim },
        )
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, Binary::Add, |a, b| a + b)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, Binary::Sub, |a, b| a - b)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, Binary::Mul, |a, b| a * b)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        self.binary(rhs, Binary::Div, |a, b| a / b)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.unary(Unary::Neg, |x| -x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let tape = Tape::new();
        let x = tape.scalar(3.0);
        let y = x * x;
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap(), &[6.0]);
    }

    #[test]
    fn tanh_gradient_at_zero() {
        let tape = Tape::new();
        let x = tape.scalar(0.0);
        let g = tape.backward(x.tanh()).unwrap();
        assert_eq!(g.get(x).unwrap(), &[1.0]);
    }

    #[test]
    fn kinks_use_zero_derivative() {
        let tape = Tape::new();
        let x = tape.var(vec![0.0, 0.0]);
        let y = (x.relu() + x.abs()).sum();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap(), &[0.0, 0.0]);
        let tape = Tape::new();
        let x = tape.var(vec![1.0, -1.0]);
        let g = tape.backward(x.max_const(0.5).sum()).unwrap();
        assert_eq!(g.get(x).unwrap(), &[1.0, 0.0]);
    }

    #[test]
    fn foreign_tape_is_rejected() {
        let a = Tape::new();
        let b = Tape::new();
        let x = a.scalar(1.0);
        let y = b.scalar(2.0);
        let g = a.backward(x.square()).unwrap();
        assert!(matches!(g.get(y), Err(AdError::ForeignTape { .. })));
        assert!(matches!(a.backward(y), Err(AdError::ForeignTape { .. })));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let t = Tape::new();
        let x = t.var(vec![1.0, 2.0]);
        assert_eq!(t.backward(x).unwrap_err(), AdError::NonScalarLoss(2));
    }

    #[test]
    fn broadcasting_scalar() {
        let t = Tape::new();
        let c = t.scalar(2.0);
        let x = t.var(vec![1.0, 2.0, 3.0]);
        let y = (c * x).sum();
        assert_eq!(y.item(), 12.0);
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(c).unwrap(), &[6.0]);
        assert_eq!(g.get(x).unwrap(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn gather_scatter_adjoint() {
        let t = Tape::new();
        let x = t.var(vec![1.0, 2.0, 3.0]);
        let idx: Arc<[usize]> = Arc::from(vec![2usize, 0, 2]);
        let gathered = x.gather(&idx);
        assert_eq!(gathered.value(), vec![3.0, 1.0, 3.0]);
        let back = gathered.scatter_add(&idx, 3);
        assert_eq!(back.value(), vec![1.0, 0.0, 6.0]);
        let g = t.backward(back.square().sum()).unwrap();
        // d/dx0 = 2·1·1, d/dx2 = 2·6·2
        assert_eq!(g.get(x).unwrap(), &[2.0, 0.0, 24.0]);
    }

    #[test]
    fn unused_variable_has_empty_gradient() {
        let t = Tape::new();
        let x = t.scalar(1.0);
        let y = t.scalar(5.0);
        let g = t.backward(x.exp()).unwrap();
        assert!(g.get(y).unwrap().is_empty());
        assert_eq!(g.get_or_zero(y).unwrap(), vec![0.0]);
    }
}
