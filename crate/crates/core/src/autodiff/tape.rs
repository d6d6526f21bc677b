use std::cell::{Cell, RefCell};
use std::collections::BTreeMap;
use std::fmt;

use super::{shape_err, sigmoid, softplus, AutodiffError, Real, Tensor};

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    MatMul(usize, usize),
    MatVec(usize, usize),
    Transpose(usize),
    Reshape(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Minimum(usize, usize),
    AddBias(usize, usize),
    RepeatRows(usize),
    ScalarMul(usize, T),
    AddScalar(usize),
    Softplus(usize),
    Tanh(usize),
    Exp(usize),
    Log(usize),
    Square(usize),
    Clamp(usize, T, T),
    Sum(usize),
    Mean(usize),
    SumRows(usize),
    MeanRows(usize),
    SumCols(usize),
    FrobeniusSq(usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    SliceCols(usize, usize),
    SliceRows(usize, usize),
    Diag(usize),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    scope: usize,
}

/// Operation record for one forward/backward pass.
///
/// Every recorded op adds its multiply-add count to the current scope
/// (see [`Tape::scope`]); matmul counts `n·k·m`, elementwise and reduction
/// ops count one per element, and pure data movement counts zero.
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
    scopes: RefCell<Vec<String>>,
    current: Cell<usize>,
    flops: RefCell<Vec<u64>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            scopes: RefCell::new(vec![String::new()]),
            current: Cell::new(0),
            flops: RefCell::new(vec![0]),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Trainable input.
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push_raw(value, Op::Leaf, true, 0)
    }

    /// Input that receives no gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push_raw(value, Op::Leaf, false, 0)
    }

    /// Run `f` with every recorded op attributed to `name`.
    pub fn scope<R>(&self, name: &str, f: impl FnOnce() -> R) -> R {
        let idx = {
            let mut scopes = self.scopes.borrow_mut();
            match scopes.iter().position(|s| s == name) {
                Some(i) => i,
                None => {
                    scopes.push(name.to_string());
                    self.flops.borrow_mut().push(0);
                    scopes.len() - 1
                }
            }
        };
        let prev = self.current.replace(idx);
        let out = f();
        self.current.set(prev);
        out
    }

    pub fn flops(&self) -> u64 {
        self.flops.borrow().iter().sum()
    }

    /// Multiply-adds recorded per named scope (the unnamed scope is `""`).
    pub fn flops_by_scope(&self) -> BTreeMap<String, u64> {
        self.scopes
            .borrow()
            .iter()
            .cloned()
            .zip(self.flops.borrow().iter().copied())
            .collect()
    }

    pub fn flops_in(&self, scope: &str) -> u64 {
        self.flops_by_scope().get(scope).copied().unwrap_or(0)
    }

    fn push_raw(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool, flops: u64) -> Var<'_, T> {
        let scope = self.current.get();
        self.flops.borrow_mut()[scope] += flops;
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
            scope,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, inputs: &[usize], flops: u64) -> Var<'_, T> {
        let rg = {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|&i| nodes[i].requires_grad)
        };
        self.push_raw(value, op, rg, flops)
    }

    fn value(&self, id: usize) -> Tensor<T> {
        self.nodes.borrow()[id].value.clone()
    }

    fn with_value<R>(&self, id: usize, f: impl FnOnce(&Tensor<T>) -> R) -> R {
        f(&self.nodes.borrow()[id].value)
    }

    #[cfg(debug_assertions)]
    fn checksum(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for n in self.nodes.borrow().iter() {
            for x in n.value.data() {
                x.as_f64().to_bits().hash(&mut h);
            }
        }
        h.finish()
    }

    /// Reverse pass from a scalar `loss`. Every node recorded up to the
    /// loss is visited once, in reverse order.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>, AutodiffError> {
        let shape = loss.shape();
        if shape.iter().product::<usize>() != 1 {
            return Err(AutodiffError::NotScalar(shape));
        }
        #[cfg(debug_assertions)]
        let before = self.checksum();

        let nodes = self.nodes.borrow();
        let n = loss.id + 1;
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; n];
        let mut visits = vec![0usize; self.scopes.borrow().len()];
        grads[loss.id] = Some(Tensor::full(&shape, T::one()));

        for id in (0..n).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            visits[node.scope] += 1;
            if node.requires_grad {
                backprop_node(&nodes, node, &g, &mut grads);
            }
            grads[id] = Some(g);
        }
        drop(nodes);

        #[cfg(debug_assertions)]
        debug_assert_eq!(before, self.checksum(), "backward mutated a recorded value");

        let visits = self.scopes.borrow().iter().cloned().zip(visits).collect();
        Ok(Gradients { grads, visits })
    }
}

fn accumulate<T: Real>(nodes: &[Node<T>], grads: &mut [Option<Tensor<T>>], id: usize, g: Tensor<T>) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(acc) => acc.add_assign(&g),
        slot => *slot = Some(g),
    }
}

fn backprop_node<T: Real>(nodes: &[Node<T>], node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
    let val = |i: usize| &nodes[i].value;
    let y = &node.value;
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            if nodes[*a].requires_grad {
                let ga = g.matmul(&val(*b).transpose()).expect("shapes checked forward");
                accumulate(nodes, grads, *a, ga);
            }
            if nodes[*b].requires_grad {
                let gb = val(*a).transpose().matmul(g).expect("shapes checked forward");
                accumulate(nodes, grads, *b, gb);
            }
        }
        Op::MatVec(a, x) => {
            let (r, c) = val(*a).dims2();
            if nodes[*a].requires_grad {
                let xv = val(*x).data();
                let data = (0..r * c).map(|k| g.data()[k / c] * xv[k % c]).collect();
                accumulate(nodes, grads, *a, Tensor::new(&[r, c], data).unwrap());
            }
            if nodes[*x].requires_grad {
                let gx = val(*a).transpose().matvec(g).expect("shapes checked forward");
                accumulate(nodes, grads, *x, gx);
            }
        }
        Op::Transpose(a) => accumulate(nodes, grads, *a, g.transpose()),
        Op::Reshape(a) => accumulate(nodes, grads, *a, g.reshaped(val(*a).shape()).unwrap()),
        Op::Add(a, b) => {
            accumulate(nodes, grads, *a, g.clone());
            accumulate(nodes, grads, *b, g.clone());
        }
        Op::Sub(a, b) => {
            accumulate(nodes, grads, *a, g.clone());
            accumulate(nodes, grads, *b, g.scale(-T::one()));
        }
        Op::Mul(a, b) => {
            accumulate(nodes, grads, *a, g.zip_map(val(*b), |gi, bi| gi * bi));
            accumulate(nodes, grads, *b, g.zip_map(val(*a), |gi, ai| gi * ai));
        }
        Op::Minimum(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            let pick_a: Vec<bool> = va.data().iter().zip(vb.data()).map(|(x, y)| x <= y).collect();
            let mask = |want: bool| {
                let data = g
                    .data()
                    .iter()
                    .zip(&pick_a)
                    .map(|(&gi, &pa)| if pa == want { gi } else { T::zero() })
                    .collect();
                Tensor::new(g.shape(), data).unwrap()
            };
            accumulate(nodes, grads, *a, mask(true));
            accumulate(nodes, grads, *b, mask(false));
        }
        Op::AddBias(x, b) => {
            accumulate(nodes, grads, *x, g.clone());
            let gb = g.sum_rows().reshaped(val(*b).shape()).unwrap();
            accumulate(nodes, grads, *b, gb);
        }
        Op::RepeatRows(a) => {
            let ga = g.sum_rows().reshaped(val(*a).shape()).unwrap();
            accumulate(nodes, grads, *a, ga);
        }
        Op::ScalarMul(a, s) => accumulate(nodes, grads, *a, g.scale(*s)),
        Op::AddScalar(a) => accumulate(nodes, grads, *a, g.clone()),
        Op::Softplus(a) => accumulate(nodes, grads, *a, g.zip_map(val(*a), |gi, x| gi * sigmoid(x))),
        Op::Tanh(a) => accumulate(nodes, grads, *a, g.zip_map(y, |gi, t| gi * (T::one() - t * t))),
        Op::Exp(a) => accumulate(nodes, grads, *a, g.zip_map(y, |gi, e| gi * e)),
        Op::Log(a) => accumulate(nodes, grads, *a, g.zip_map(val(*a), |gi, x| gi / x)),
        Op::Square(a) => accumulate(nodes, grads, *a, g.zip_map(val(*a), |gi, x| gi * (x + x))),
        Op::Clamp(a, lo, hi) => {
            let ga = g.zip_map(val(*a), |gi, x| if x >= *lo && x <= *hi { gi } else { T::zero() });
            accumulate(nodes, grads, *a, ga);
        }
        Op::Sum(a) => accumulate(nodes, grads, *a, Tensor::full(val(*a).shape(), g.item())),
        Op::Mean(a) => {
            let n = T::lit(val(*a).numel() as f64);
            accumulate(nodes, grads, *a, Tensor::full(val(*a).shape(), g.item() / n));
        }
        Op::SumRows(a) | Op::MeanRows(a) => {
            let (r, _) = val(*a).dims2();
            let mut ga = g.repeat_rows(r).reshaped(val(*a).shape()).unwrap();
            if matches!(node.op, Op::MeanRows(_)) {
                ga = ga.scale(T::one() / T::lit(r as f64));
            }
            accumulate(nodes, grads, *a, ga);
        }
        Op::SumCols(a) => {
            let (r, c) = val(*a).dims2();
            let data = (0..r * c).map(|k| g.data()[k / c]).collect();
            accumulate(nodes, grads, *a, Tensor::new(val(*a).shape(), data).unwrap());
        }
        Op::FrobeniusSq(a) => {
            let s = g.item();
            accumulate(nodes, grads, *a, val(*a).map(|x| (x + x) * s));
        }
        Op::ConcatCols(ids) => {
            let (r, total) = g.dims2();
            let mut start = 0;
            for &i in ids {
                let (_, c) = val(i).dims2();
                let mut data = Vec::with_capacity(r * c);
                for row in 0..r {
                    data.extend_from_slice(&g.data()[row * total + start..row * total + start + c]);
                }
                accumulate(nodes, grads, i, Tensor::new(val(i).shape(), data).unwrap());
                start += c;
            }
        }
        Op::ConcatRows(ids) => {
            let mut offset = 0;
            for &i in ids {
                let n = val(i).numel();
                let data = g.data()[offset..offset + n].to_vec();
                accumulate(nodes, grads, i, Tensor::new(val(i).shape(), data).unwrap());
                offset += n;
            }
        }
        Op::SliceCols(a, start) => {
            let (r, c) = val(*a).dims2();
            let (_, w) = g.dims2();
            let mut ga = Tensor::zeros(val(*a).shape());
            for row in 0..r {
                ga.data_mut()[row * c + start..row * c + start + w].copy_from_slice(&g.data()[row * w..(row + 1) * w]);
            }
            accumulate(nodes, grads, *a, ga);
        }
        Op::SliceRows(a, start) => {
            let (_, c) = val(*a).dims2();
            let mut ga = Tensor::zeros(val(*a).shape());
            ga.data_mut()[start * c..start * c + g.numel()].copy_from_slice(g.data());
            accumulate(nodes, grads, *a, ga);
        }
        Op::Diag(a) => {
            let n = val(*a).numel();
            let data = (0..n).map(|i| g.data()[i * n + i]).collect();
            accumulate(nodes, grads, *a, Tensor::vector(data));
        }
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    visits: BTreeMap<String, usize>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the loss with respect to `v`; zeros when `v` does not
    /// influence the loss.
    pub fn get(&self, v: Var<'_, T>) -> Tensor<T> {
        self.grads
            .get(v.id)
            .and_then(|g| g.clone())
            .unwrap_or_else(|| Tensor::zeros(&v.shape()))
    }

    /// Number of nodes in `scope` that the reverse pass processed.
    pub fn visits(&self, scope: &str) -> usize {
        self.visits.get(scope).copied().unwrap_or(0)
    }
}

/// Handle to a tensor recorded on a [`Tape`].
pub struct Var<'t, T> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T> Clone for Var<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<T> Copy for Var<'_, T> {}

impl<T: Real> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

fn same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<(), AutodiffError> {
    if a == b {
        Ok(())
    } else {
        shape_err(op, a, b)
    }
}

impl<'t, T: Real> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Tensor<T> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.with_value(self.id, |v| v.shape().to_vec())
    }

    pub fn item(&self) -> T {
        self.tape.with_value(self.id, |v| v.item())
    }

    fn unary(self, op: Op<T>, f: impl Fn(T) -> T) -> Self {
        let value = self.tape.with_value(self.id, |v| v.map(f));
        let n = value.numel() as u64;
        self.tape.push(value, op, &[self.id], n)
    }

    fn elementwise(
        self,
        other: Self,
        name: &'static str,
        op: Op<T>,
        f: impl Fn(T, T) -> T,
    ) -> Result<Self, AutodiffError> {
        let value = self.tape.with_value(self.id, |a| {
            self.tape.with_value(other.id, |b| {
                same_shape(name, a.shape(), b.shape())?;
                Ok(a.zip_map(b, f))
            })
        })?;
        let n = value.numel() as u64;
        Ok(self.tape.push(value, op, &[self.id, other.id], n))
    }

    pub fn matmul(self, other: Self) -> Result<Self, AutodiffError> {
        let (value, flops) = self.tape.with_value(self.id, |a| {
            self.tape.with_value(other.id, |b| {
                let out = a.matmul(b)?;
                Ok::<_, AutodiffError>((out, (a.shape()[0] * a.shape()[1] * b.shape()[1]) as u64))
            })
        })?;
        Ok(self.tape.push(value, Op::MatMul(self.id, other.id), &[self.id, other.id], flops))
    }

    pub fn matvec(self, x: Self) -> Result<Self, AutodiffError> {
        let value = self.tape.with_value(self.id, |a| self.tape.with_value(x.id, |b| a.matvec(b)))?;
        let flops = self.tape.with_value(self.id, |a| a.numel() as u64);
        Ok(self.tape.push(value, Op::MatVec(self.id, x.id), &[self.id, x.id], flops))
    }

    pub fn transpose(self) -> Self {
        let value = self.tape.with_value(self.id, |v| v.transpose());
        self.tape.push(value, Op::Transpose(self.id), &[self.id], 0)
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self, AutodiffError> {
        let value = self.tape.with_value(self.id, |v| v.reshaped(shape))?;
        Ok(self.tape.push(value, Op::Reshape(self.id), &[self.id], 0))
    }

    pub fn add(self, other: Self) -> Result<Self, AutodiffError> {
        self.elementwise(other, "add", Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(self, other: Self) -> Result<Self, AutodiffError> {
        self.elementwise(other, "sub", Op::Sub(self.id, other.id), |a, b| a - b)
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(self, other: Self) -> Result<Self, AutodiffError> {
        self.elementwise(other, "mul", Op::Mul(self.id, other.id), |a, b| a * b)
    }

    pub fn minimum(self, other: Self) -> Result<Self, AutodiffError> {
        self.elementwise(other, "minimum", Op::Minimum(self.id, other.id), |a, b| if a <= b { a } else { b })
    }

    /// `[r, c] + [c]`, the bias added to every row. The only broadcast.
    pub fn add_bias(self, bias: Self) -> Result<Self, AutodiffError> {
        let value = self.tape.with_value(self.id, |x| {
            self.tape.with_value(bias.id, |b| {
                let (r, c) = x.dims2();
                if x.shape().len() != 2 || b.numel() != c || b.shape().len() != 1 {
                    return shape_err("add_bias", x.shape(), b.shape());
                }
                let mut out = x.clone();
                for i in 0..r {
                    for j in 0..c {
                        out.data_mut()[i * c + j] += b.data()[j];
                    }
                }
                Ok(out)
            })
        })?;
        let n = value.numel() as u64;
        Ok(self.tape.push(value, Op::AddBias(self.id, bias.id), &[self.id, bias.id], n))
    }

    /// Stack `n` copies of this vector into an `[n, c]` matrix.
    pub fn repeat_rows(self, n: usize) -> Result<Self, AutodiffError> {
        let value = self.tape.with_value(self.id, |v| {
            if v.shape().len() != 1 {
                return shape_err("repeat_rows", v.shape(), &[n]);
            }
            Ok(v.repeat_rows(n))
        })?;
        Ok(self.tape.push(value, Op::RepeatRows(self.id), &[self.id], 0))
    }

    pub fn scalar_mul(self, s: f64) -> Self {
        let s = T::lit(s);
        self.unary(Op::ScalarMul(self.id, s), |x| x * s)
    }

    pub fn neg(self) -> Self {
        self.scalar_mul(-1.0)
    }

    pub fn add_scalar(self, c: f64) -> Self {
        let c = T::lit(c);
        self.unary(Op::AddScalar(self.id), |x| x + c)
    }

    pub fn softplus(self) -> Self {
        self.unary(Op::Softplus(self.id), softplus)
    }

    pub fn tanh(self) -> Self {
        self.unary(Op::Tanh(self.id), |x| x.tanh())
    }

    pub fn exp(self) -> Self {
        self.unary(Op::Exp(self.id), |x| x.exp())
    }

    pub fn log(self) -> Self {
        self.unary(Op::Log(self.id), |x| x.ln())
    }

    pub fn square(self) -> Self {
        self.unary(Op::Square(self.id), |x| x * x)
    }

    pub fn clamp(self, lo: f64, hi: f64) -> Self {
        let (lo, hi) = (T::lit(lo), T::lit(hi));
        self.unary(Op::Clamp(self.id, lo, hi), |x| x.max(lo).min(hi))
    }

    fn reduce(self, op: Op<T>, f: impl Fn(&Tensor<T>) -> Tensor<T>) -> Self {
        let (value, n) = self.tape.with_value(self.id, |v| (f(v), v.numel() as u64));
        self.tape.push(value, op, &[self.id], n)
    }

    /// Sum of all entries, as a rank-0 tensor.
    pub fn sum(self) -> Self {
        self.reduce(Op::Sum(self.id), |v| Tensor::scalar(v.sum()))
    }

    pub fn mean(self) -> Self {
        self.reduce(Op::Mean(self.id), |v| Tensor::scalar(v.sum() / T::lit(v.numel() as f64)))
    }

    /// `[r, c] → [c]`.
    pub fn sum_rows(self) -> Self {
        self.reduce(Op::SumRows(self.id), |v| v.sum_rows())
    }

    /// `[r, c] → [c]`.
    pub fn mean_rows(self) -> Self {
        self.reduce(Op::MeanRows(self.id), |v| v.sum_rows().scale(T::one() / T::lit(v.dims2().0 as f64)))
    }

    /// `[r, c] → [r]`.
    pub fn sum_cols(self) -> Self {
        self.reduce(Op::SumCols(self.id), |v| v.sum_cols())
    }

    pub fn frobenius_norm_sq(self) -> Self {
        self.reduce(Op::FrobeniusSq(self.id), |v| Tensor::scalar(v.norm_sq()))
    }

    /// Square diagonal matrix from a vector.
    pub fn diag(self) -> Result<Self, AutodiffError> {
        let value = self.tape.with_value(self.id, |v| {
            if v.shape().len() != 1 {
                return shape_err("diag", v.shape(), &[]);
            }
            let n = v.numel();
            let mut out = Tensor::zeros(&[n, n]);
            for i in 0..n {
                out.data_mut()[i * n + i] = v.data()[i];
            }
            Ok(out)
        })?;
        Ok(self.tape.push(value, Op::Diag(self.id), &[self.id], 0))
    }

    /// Columns `[start, start + len)` of a matrix (or entries of a vector).
    pub fn slice_cols(self, start: usize, len: usize) -> Result<Self, AutodiffError> {
        let value = self.tape.with_value(self.id, |v| {
            let (r, c) = v.dims2();
            if start + len > c {
                return shape_err("slice_cols", v.shape(), &[start, len]);
            }
            let mut data = Vec::with_capacity(r * len);
            for row in 0..r {
                data.extend_from_slice(&v.data()[row * c + start..row * c + start + len]);
            }
            let shape: Vec<usize> = if v.shape().len() == 2 { vec![r, len] } else { vec![len] };
            Tensor::new(&shape, data)
        })?;
        Ok(self.tape.push(value, Op::SliceCols(self.id, start), &[self.id], 0))
    }

    /// Rows `[start, start + len)` of a matrix.
    pub fn slice_rows(self, start: usize, len: usize) -> Result<Self, AutodiffError> {
        let value = self.tape.with_value(self.id, |v| {
            let (r, c) = v.dims2();
            if v.shape().len() != 2 || start + len > r {
                return shape_err("slice_rows", v.shape(), &[start, len]);
            }
            Tensor::new(&[len, c], v.data()[start * c..(start + len) * c].to_vec())
        })?;
        Ok(self.tape.push(value, Op::SliceRows(self.id, start), &[self.id], 0))
    }

    /// Side-by-side concatenation of matrices with equal row counts (or of
    /// vectors).
    pub fn concat_cols(parts: &[Self]) -> Result<Self, AutodiffError> {
        let tape = parts.first().expect("concat of nothing").tape;
        let value = {
            let nodes = tape.nodes.borrow();
            let vals: Vec<&Tensor<T>> = parts.iter().map(|p| &nodes[p.id].value).collect();
            let rank = vals[0].shape().len();
            let rows = vals[0].dims2().0;
            for v in &vals {
                if v.shape().len() != rank || v.dims2().0 != rows {
                    return shape_err("concat_cols", vals[0].shape(), v.shape());
                }
            }
            let total: usize = vals.iter().map(|v| v.dims2().1).sum();
            let mut data = Vec::with_capacity(rows * total);
            for row in 0..rows {
                for v in &vals {
                    let c = v.dims2().1;
                    data.extend_from_slice(&v.data()[row * c..(row + 1) * c]);
                }
            }
            let shape = if rank == 2 { vec![rows, total] } else { vec![total] };
            Tensor::new(&shape, data)?
        };
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        Ok(tape.push(value, Op::ConcatCols(ids.clone()), &ids, 0))
    }

    /// Stack matrices with equal column counts on top of each other.
    pub fn concat_rows(parts: &[Self]) -> Result<Self, AutodiffError> {
        let tape = parts.first().expect("concat of nothing").tape;
        let value = {
            let nodes = tape.nodes.borrow();
            let vals: Vec<&Tensor<T>> = parts.iter().map(|p| &nodes[p.id].value).collect();
            let cols = vals[0].dims2().1;
            let mut rows = 0;
            let mut data = Vec::new();
            for v in &vals {
                if v.shape().len() != 2 || v.dims2().1 != cols {
                    return shape_err("concat_rows", vals[0].shape(), v.shape());
                }
                rows += v.dims2().0;
                data.extend_from_slice(v.data());
            }
            Tensor::new(&[rows, cols], data)?
        };
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        Ok(tape.push(value, Op::ConcatRows(ids.clone()), &ids, 0))
    }
}
