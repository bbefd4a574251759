//! Differentiable dense-array substrate.
//!
//! A [`Graph`] records every primitive op on a tape; [`Tensor`] handles are
//! cheap ids into it. [`Tensor::backward`] walks the tape in reverse and
//! returns one gradient per named parameter. Graph construction is
//! single-threaded by design; evaluating a frozen [`ParamStore`] is pure, so
//! independent graphs may run on independent threads.

mod backward;
mod gradcheck;
mod kernels;

pub use gradcheck::gradcheck;

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fmt::{Debug, Display};
use std::rc::Rc;

use num_traits::Float;
use rand::Rng;
use thiserror::Error;

/// Element type of a graph: `f32` for training, `f64` for gradient checking.
/// A dtype is picked per run; graphs never mix the two.
pub trait Scalar:
    Float + Debug + Display + Send + Sync + Default + serde::Serialize + 'static
{
    const DTYPE: Dtype;
    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const DTYPE: Dtype = Dtype::F32;
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]])
    }
}

impl Scalar for f64 {
    const DTYPE: Dtype = Dtype::F64;
    fn from_f64(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        let mut b = [0u8; 8];
        b.copy_from_slice(&bytes[..8]);
        f64::from_le_bytes(b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn tag(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }
    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Dtype::F32),
            1 => Some(Dtype::F64),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch: lhs {lhs:?}, rhs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: invalid shape {shape:?}: {why}")]
    BadShape {
        op: &'static str,
        shape: Vec<usize>,
        why: String,
    },
    #[error("{op}: axis {axis} out of range for rank {rank}")]
    BadAxis {
        op: &'static str,
        axis: usize,
        rank: usize,
    },
    #[error("{op}: non-finite value in output")]
    NonFinite { op: &'static str },
    #[error("softmax: row {row} is fully masked (no finite entry)")]
    FullyMaskedRow { row: usize },
    #[error("backward: loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("tensors belong to different graphs")]
    GraphMismatch,
    #[error("gather: index {index} out of bounds for dim of size {dim}")]
    IndexOutOfBounds { index: usize, dim: usize },
    #[error("gradcheck: eps {0} outside [1e-6, 1e-3]")]
    BadEps(f64),
    #[error("gradcheck: loss_fn is not deterministic ({0} != {1})")]
    NonDeterministic(f64, f64),
    #[error("parameter {0:?} already registered")]
    DuplicateParam(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Boolean mask used by [`Tensor::masked_fill`]. `true` marks entries that
/// get replaced by `-inf`; its shape must equal the input shape or a suffix
/// of it (broadcast over leading dims).
#[derive(Debug, Clone)]
pub struct BoolMask {
    pub shape: Vec<usize>,
    pub data: Vec<bool>,
}

impl BoolMask {
    pub fn new(shape: Vec<usize>, data: Vec<bool>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        BoolMask { shape, data }
    }
}

pub(crate) type Id = usize;

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf { name: Option<String> },
    Add(Id, Id),
    Sub(Id, Id),
    Mul(Id, Id),
    MatMul(Id, Id),
    Transpose(Id),
    Reshape(Id),
    Concat { axis: usize, parts: Vec<Id> },
    Slice { input: Id, axis: usize, start: usize },
    Gather { input: Id, axis: usize, indices: Rc<Vec<usize>> },
    Broadcast { input: Id },
    Softmax(Id),
    MaskedFill { input: Id, mask: Rc<BoolMask> },
    LayerNorm { input: Id, gamma: Id, beta: Id },
    Relu(Id),
    Gelu(Id),
    Tanh(Id),
    Sigmoid(Id),
    Scale { input: Id, c: f64 },
    AddScalar { input: Id, c: f64 },
    SumAll(Id),
    MeanAll(Id),
    SmoothL1(Id, Id),
    Bce(Id, Id),
}

pub(crate) struct Node<E> {
    pub op: Op,
    pub shape: Vec<usize>,
    pub data: Vec<E>,
    pub needs_grad: bool,
}

struct GraphInner<E> {
    nodes: Vec<Node<E>>,
    check_finite: bool,
}

/// A tape of primitive ops. Cloning is cheap (shared handle).
pub struct Graph<E: Scalar> {
    inner: Rc<RefCell<GraphInner<E>>>,
}

impl<E: Scalar> Clone for Graph<E> {
    fn clone(&self) -> Self {
        Graph {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<E: Scalar> Default for Graph<E> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to one node of a [`Graph`].
pub struct Tensor<E: Scalar> {
    graph: Graph<E>,
    id: Id,
    shape: Vec<usize>,
}

impl<E: Scalar> Debug for Tensor<E> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.id)
            .field("shape", &self.shape)
            .finish()
    }
}

impl<E: Scalar> Clone for Tensor<E> {
    fn clone(&self) -> Self {
        Tensor {
            graph: self.graph.clone(),
            id: self.id,
            shape: self.shape.clone(),
        }
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// `small` broadcasts into `big` if it is a suffix of it, or a single scalar.
/// Returns true when compatible.
fn suffix_compatible(big: &[usize], small: &[usize]) -> bool {
    if small.len() == 1 && small[0] == 1 {
        return true;
    }
    small.len() <= big.len() && big[big.len() - small.len()..] == *small
}

impl<E: Scalar> Graph<E> {
    pub fn new() -> Self {
        Graph {
            inner: Rc::new(RefCell::new(GraphInner {
                nodes: Vec::new(),
                check_finite: false,
            })),
        }
    }

    /// Enable a full finiteness scan after every op (slow; used by tests and
    /// the gradient checker).
    pub fn with_finite_checks() -> Self {
        let g = Self::new();
        g.inner.borrow_mut().check_finite = true;
        g
    }

    pub fn num_nodes(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    fn push(&self, op: Op, shape: Vec<usize>, data: Vec<E>, needs_grad: bool) -> Result<Tensor<E>> {
        debug_assert_eq!(numel(&shape), data.len());
        let check = self.inner.borrow().check_finite;
        if check && !matches!(op, Op::MaskedFill { .. }) {
            if let Some(_bad) = data.iter().find(|v| !v.is_finite()) {
                return Err(TensorError::NonFinite { op: op_name(&op) });
            }
        }
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            op,
            shape: shape.clone(),
            data,
            needs_grad,
        });
        Ok(Tensor {
            graph: self.clone(),
            id,
            shape,
        })
    }

    /// Detached constant (no gradient flows into it).
    pub fn constant(&self, shape: Vec<usize>, data: Vec<E>) -> Tensor<E> {
        assert_eq!(
            numel(&shape),
            data.len(),
            "constant: shape {:?} does not match data length {}",
            shape,
            data.len()
        );
        self.push(Op::Leaf { name: None }, shape, data, false)
            .expect("constant push cannot fail")
    }

    pub fn scalar(&self, v: E) -> Tensor<E> {
        self.constant(vec![1], vec![v])
    }

    /// Leaf bound to a named parameter; gradients accumulate under its name.
    pub fn param(&self, store: &ParamStore<E>, name: &str) -> Tensor<E> {
        let p = store.get(name);
        self.push(
            Op::Leaf {
                name: Some(name.to_string()),
            },
            p.shape.clone(),
            p.data.clone(),
            true,
        )
        .expect("param push cannot fail")
    }

    pub(crate) fn with_nodes<R>(&self, f: impl FnOnce(&[Node<E>]) -> R) -> R {
        f(&self.inner.borrow().nodes)
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf { .. } => "leaf",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::MatMul(..) => "matmul",
        Op::Transpose(..) => "transpose",
        Op::Reshape(..) => "reshape",
        Op::Concat { .. } => "concat",
        Op::Slice { .. } => "slice",
        Op::Gather { .. } => "gather",
        Op::Broadcast { .. } => "broadcast",
        Op::Softmax(..) => "softmax",
        Op::MaskedFill { .. } => "masked_fill",
        Op::LayerNorm { .. } => "layer_norm",
        Op::Relu(..) => "relu",
        Op::Gelu(..) => "gelu",
        Op::Tanh(..) => "tanh",
        Op::Sigmoid(..) => "sigmoid",
        Op::Scale { .. } => "scale",
        Op::AddScalar { .. } => "add_scalar",
        Op::SumAll(..) => "sum_all",
        Op::MeanAll(..) => "mean_all",
        Op::SmoothL1(..) => "smooth_l1",
        Op::Bce(..) => "bce",
    }
}

/// Outer size, axis size, inner size decomposition around `axis`.
fn around(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let mid = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, mid, inner)
}

impl<E: Scalar> Tensor<E> {
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        numel(&self.shape)
    }

    pub(crate) fn id(&self) -> Id {
        self.id
    }

    pub fn graph(&self) -> &Graph<E> {
        &self.graph
    }

    /// Copy of this node's values.
    pub fn to_vec(&self) -> Vec<E> {
        self.graph.inner.borrow().nodes[self.id].data.clone()
    }

    /// The single value of a scalar tensor.
    pub fn item(&self) -> E {
        let inner = self.graph.inner.borrow();
        let n = &inner.nodes[self.id];
        assert_eq!(n.data.len(), 1, "item() on non-scalar shape {:?}", n.shape);
        n.data[0]
    }

    fn same_graph(&self, other: &Tensor<E>) -> Result<()> {
        if Rc::ptr_eq(&self.graph.inner, &other.graph.inner) {
            Ok(())
        } else {
            Err(TensorError::GraphMismatch)
        }
    }

    fn read<R>(&self, f: impl FnOnce(&Node<E>) -> R) -> R {
        f(&self.graph.inner.borrow().nodes[self.id])
    }

    fn binary_broadcast(
        &self,
        rhs: &Tensor<E>,
        opname: &'static str,
        apply: impl Fn(E, E) -> E,
        mk: impl FnOnce(Id, Id) -> Op,
    ) -> Result<Tensor<E>> {
        self.same_graph(rhs)?;
        let (big, small, rhs_is_small) = if suffix_compatible(&self.shape, &rhs.shape) {
            (self, rhs, true)
        } else if suffix_compatible(&rhs.shape, &self.shape) {
            (rhs, self, false)
        } else {
            return Err(TensorError::ShapeMismatch {
                op: opname,
                lhs: self.shape.clone(),
                rhs: rhs.shape.clone(),
            });
        };
        let out_shape = big.shape.clone();
        let n = numel(&out_shape);
        let sn = small.numel();
        let mut out = vec![E::zero(); n];
        let inner = self.graph.inner.borrow();
        let bd = &inner.nodes[big.id].data;
        let sd = &inner.nodes[small.id].data;
        if sn == n {
            for ((o, &a), &b) in out.iter_mut().zip(bd.iter()).zip(sd.iter()) {
                *o = if rhs_is_small { apply(a, b) } else { apply(b, a) };
            }
        } else {
            for (chunk, ochunk) in bd.chunks(sn).zip(out.chunks_mut(sn)) {
                for ((o, &a), &b) in ochunk.iter_mut().zip(chunk).zip(sd.iter()) {
                    *o = if rhs_is_small { apply(a, b) } else { apply(b, a) };
                }
            }
        }
        let needs = inner.nodes[self.id].needs_grad || inner.nodes[rhs.id].needs_grad;
        drop(inner);
        self.graph
            .push(mk(self.id, rhs.id), out_shape, out, needs)
    }

    pub fn add(&self, rhs: &Tensor<E>) -> Result<Tensor<E>> {
        self.binary_broadcast(rhs, "add", |a, b| a + b, Op::Add)
    }

    pub fn sub(&self, rhs: &Tensor<E>) -> Result<Tensor<E>> {
        self.binary_broadcast(rhs, "sub", |a, b| a - b, Op::Sub)
    }

    pub fn mul(&self, rhs: &Tensor<E>) -> Result<Tensor<E>> {
        self.binary_broadcast(rhs, "mul", |a, b| a * b, Op::Mul)
    }

    /// Matrix product over the last two dims. Leading dims must match, or
    /// either side may be rank-2 (shared across the other's leading dims).
    pub fn matmul(&self, rhs: &Tensor<E>) -> Result<Tensor<E>> {
        self.same_graph(rhs)?;
        let (ls, rs) = (&self.shape, &rhs.shape);
        if ls.len() < 2 || rs.len() < 2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: ls.clone(),
                rhs: rs.clone(),
            });
        }
        let (m, k1) = (ls[ls.len() - 2], ls[ls.len() - 1]);
        let (k2, n) = (rs[rs.len() - 2], rs[rs.len() - 1]);
        let lb: usize = ls[..ls.len() - 2].iter().product();
        let rb: usize = rs[..rs.len() - 2].iter().product();
        let batches_ok = ls[..ls.len() - 2] == rs[..rs.len() - 2] || ls.len() == 2 || rs.len() == 2;
        if k1 != k2 || !batches_ok {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: ls.clone(),
                rhs: rs.clone(),
            });
        }
        let k = k1;
        let batch = lb.max(rb);
        let mut out_shape: Vec<usize> = if ls.len() >= rs.len() {
            ls[..ls.len() - 2].to_vec()
        } else {
            rs[..rs.len() - 2].to_vec()
        };
        out_shape.push(m);
        out_shape.push(n);
        let mut out = vec![E::zero(); batch * m * n];
        {
            let inner = self.graph.inner.borrow();
            let a = &inner.nodes[self.id].data;
            let b = &inner.nodes[rhs.id].data;
            if rb == 1 && lb >= 1 {
                // Shared rhs: one big [lb*m, k] @ [k, n].
                kernels::gemm_nn(a, &b[..k * n], lb * m, k, n, &mut out);
            } else if lb == 1 && rb > 1 {
                for bi in 0..rb {
                    kernels::gemm_nn(
                        &a[..m * k],
                        &b[bi * k * n..(bi + 1) * k * n],
                        m,
                        k,
                        n,
                        &mut out[bi * m * n..(bi + 1) * m * n],
                    );
                }
            } else {
                for bi in 0..batch {
                    kernels::gemm_nn(
                        &a[bi * m * k..(bi + 1) * m * k],
                        &b[bi * k * n..(bi + 1) * k * n],
                        m,
                        k,
                        n,
                        &mut out[bi * m * n..(bi + 1) * m * n],
                    );
                }
            }
        }
        let needs = self.read(|n| n.needs_grad) || rhs.read(|n| n.needs_grad);
        self.graph
            .push(Op::MatMul(self.id, rhs.id), out_shape, out, needs)
    }

    /// Swap the last two dims.
    pub fn transpose(&self) -> Result<Tensor<E>> {
        let s = &self.shape;
        if s.len() < 2 {
            return Err(TensorError::BadShape {
                op: "transpose",
                shape: s.clone(),
                why: "rank must be >= 2".into(),
            });
        }
        let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
        let batch: usize = s[..s.len() - 2].iter().product();
        let mut out_shape = s.clone();
        let ln = out_shape.len();
        out_shape.swap(ln - 2, ln - 1);
        let mut out = vec![E::zero(); self.numel()];
        self.read(|node| kernels::transpose_last2(&node.data, batch, r, c, &mut out));
        let needs = self.read(|n| n.needs_grad);
        self.graph.push(Op::Transpose(self.id), out_shape, out, needs)
    }

    pub fn reshape(&self, new_shape: Vec<usize>) -> Result<Tensor<E>> {
        if numel(&new_shape) != self.numel() {
            return Err(TensorError::BadShape {
                op: "reshape",
                shape: new_shape,
                why: format!("element count differs from {:?}", self.shape),
            });
        }
        let data = self.to_vec();
        let needs = self.read(|n| n.needs_grad);
        self.graph.push(Op::Reshape(self.id), new_shape, data, needs)
    }

    /// Contiguous slice `start..start+len` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<E>> {
        if axis >= self.rank() {
            return Err(TensorError::BadAxis {
                op: "slice",
                axis,
                rank: self.rank(),
            });
        }
        let (outer, mid, inner) = around(&self.shape, axis);
        if start + len > mid {
            return Err(TensorError::BadShape {
                op: "slice",
                shape: self.shape.clone(),
                why: format!("range {}..{} exceeds dim {}", start, start + len, mid),
            });
        }
        let mut out_shape = self.shape.clone();
        out_shape[axis] = len;
        let mut out = vec![E::zero(); outer * len * inner];
        self.read(|node| {
            for o in 0..outer {
                let src = &node.data[(o * mid + start) * inner..(o * mid + start + len) * inner];
                out[o * len * inner..(o + 1) * len * inner].copy_from_slice(src);
            }
        });
        let needs = self.read(|n| n.needs_grad);
        self.graph.push(
            Op::Slice {
                input: self.id,
                axis,
                start,
            },
            out_shape,
            out,
            needs,
        )
    }

    /// Index-select along `axis`; indices may repeat.
    pub fn gather(&self, axis: usize, indices: &[usize]) -> Result<Tensor<E>> {
        if axis >= self.rank() {
            return Err(TensorError::BadAxis {
                op: "gather",
                axis,
                rank: self.rank(),
            });
        }
        let (outer, mid, inner) = around(&self.shape, axis);
        for &ix in indices {
            if ix >= mid {
                return Err(TensorError::IndexOutOfBounds { index: ix, dim: mid });
            }
        }
        let mut out_shape = self.shape.clone();
        out_shape[axis] = indices.len();
        let mut out = vec![E::zero(); outer * indices.len() * inner];
        self.read(|node| {
            for o in 0..outer {
                for (j, &ix) in indices.iter().enumerate() {
                    let src = &node.data[(o * mid + ix) * inner..(o * mid + ix + 1) * inner];
                    let dst_base = (o * indices.len() + j) * inner;
                    out[dst_base..dst_base + inner].copy_from_slice(src);
                }
            }
        });
        let needs = self.read(|n| n.needs_grad);
        self.graph.push(
            Op::Gather {
                input: self.id,
                axis,
                indices: Rc::new(indices.to_vec()),
            },
            out_shape,
            out,
            needs,
        )
    }

    /// Prepend a leading dim of size `reps`, repeating the data.
    pub fn broadcast_to(&self, reps: usize) -> Result<Tensor<E>> {
        let mut out_shape = Vec::with_capacity(self.rank() + 1);
        out_shape.push(reps);
        out_shape.extend_from_slice(&self.shape);
        let n = self.numel();
        let mut out = vec![E::zero(); reps * n];
        self.read(|node| {
            for r in 0..reps {
                out[r * n..(r + 1) * n].copy_from_slice(&node.data);
            }
        });
        let needs = self.read(|n| n.needs_grad);
        self.graph
            .push(Op::Broadcast { input: self.id }, out_shape, out, needs)
    }

    /// Softmax over the last dim. `-inf` entries get exactly 0 probability;
    /// a fully `-inf` row is an error.
    pub fn softmax(&self) -> Result<Tensor<E>> {
        let d = *self.shape.last().ok_or_else(|| TensorError::BadShape {
            op: "softmax",
            shape: self.shape.clone(),
            why: "rank must be >= 1".into(),
        })?;
        let mut out = vec![E::zero(); self.numel()];
        let res = self.read(|node| kernels::softmax_rows(&node.data, d, &mut out));
        if let Err(row) = res {
            return Err(TensorError::FullyMaskedRow { row });
        }
        let needs = self.read(|n| n.needs_grad);
        self.graph
            .push(Op::Softmax(self.id), self.shape.clone(), out, needs)
    }

    /// Replace entries where `mask` is true with `-inf` (additive-mask
    /// convention used right before softmax). The mask's shape must equal the
    /// input shape or a suffix of it.
    pub fn masked_fill(&self, mask: &Rc<BoolMask>) -> Result<Tensor<E>> {
        if !suffix_compatible(&self.shape, &mask.shape) {
            return Err(TensorError::ShapeMismatch {
                op: "masked_fill",
                lhs: self.shape.clone(),
                rhs: mask.shape.clone(),
            });
        }
        let mn = mask.data.len();
        let mut out = self.to_vec();
        for (chunk_i, chunk) in out.chunks_mut(mn).enumerate() {
            let _ = chunk_i;
            for (o, &blocked) in chunk.iter_mut().zip(mask.data.iter()) {
                if blocked {
                    *o = E::neg_infinity();
                }
            }
        }
        let needs = self.read(|n| n.needs_grad);
        self.graph.push(
            Op::MaskedFill {
                input: self.id,
                mask: Rc::clone(mask),
            },
            self.shape.clone(),
            out,
            needs,
        )
    }

    /// Layer norm over the last dim with learnable scale and shift, eps 1e-5.
    pub fn layer_norm(&self, gamma: &Tensor<E>, beta: &Tensor<E>) -> Result<Tensor<E>> {
        self.same_graph(gamma)?;
        self.same_graph(beta)?;
        let d = *self.shape.last().unwrap_or(&0);
        if gamma.shape != [d] || beta.shape != [d] {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                lhs: self.shape.clone(),
                rhs: gamma.shape.clone(),
            });
        }
        let eps = E::from_f64(LN_EPS);
        let mut out = vec![E::zero(); self.numel()];
        {
            let inner = self.graph.inner.borrow();
            let x = &inner.nodes[self.id].data;
            let g = &inner.nodes[gamma.id].data;
            let b = &inner.nodes[beta.id].data;
            let dn = E::from_f64(d as f64);
            for (row, orow) in x.chunks(d).zip(out.chunks_mut(d)) {
                let mut mean = E::zero();
                for &v in row {
                    mean = mean + v;
                }
                mean = mean / dn;
                let mut var = E::zero();
                for &v in row {
                    let c = v - mean;
                    var = var + c * c;
                }
                var = var / dn;
                let inv = E::one() / (var + eps).sqrt();
                for (j, (o, &v)) in orow.iter_mut().zip(row).enumerate() {
                    *o = (v - mean) * inv * g[j] + b[j];
                }
            }
        }
        let needs = self.read(|n| n.needs_grad)
            || gamma.read(|n| n.needs_grad)
            || beta.read(|n| n.needs_grad);
        self.graph.push(
            Op::LayerNorm {
                input: self.id,
                gamma: gamma.id,
                beta: beta.id,
            },
            self.shape.clone(),
            out,
            needs,
        )
    }

    fn unary(
        &self,
        mk: impl FnOnce(Id) -> Op,
        apply: impl Fn(E) -> E,
    ) -> Result<Tensor<E>> {
        let out: Vec<E> = self.read(|node| node.data.iter().map(|&v| apply(v)).collect());
        let needs = self.read(|n| n.needs_grad);
        self.graph.push(mk(self.id), self.shape.clone(), out, needs)
    }

    pub fn relu(&self) -> Result<Tensor<E>> {
        self.unary(Op::Relu, |v| if v > E::zero() { v } else { E::zero() })
    }

    pub fn gelu(&self) -> Result<Tensor<E>> {
        self.unary(Op::Gelu, gelu_fwd)
    }

    pub fn tanh_act(&self) -> Result<Tensor<E>> {
        self.unary(Op::Tanh, |v| v.tanh())
    }

    pub fn sigmoid(&self) -> Result<Tensor<E>> {
        self.unary(Op::Sigmoid, sigmoid_fwd)
    }

    pub fn scale(&self, c: f64) -> Result<Tensor<E>> {
        let ce = E::from_f64(c);
        self.unary(|id| Op::Scale { input: id, c }, |v| v * ce)
    }

    pub fn add_scalar(&self, c: f64) -> Result<Tensor<E>> {
        let ce = E::from_f64(c);
        self.unary(|id| Op::AddScalar { input: id, c }, |v| v + ce)
    }

    pub fn sum_all(&self) -> Result<Tensor<E>> {
        let mut s = E::zero();
        self.read(|node| {
            for &v in &node.data {
                s = s + v;
            }
        });
        let needs = self.read(|n| n.needs_grad);
        self.graph.push(Op::SumAll(self.id), vec![1], vec![s], needs)
    }

    pub fn mean_all(&self) -> Result<Tensor<E>> {
        let n = self.numel();
        let mut s = E::zero();
        self.read(|node| {
            for &v in &node.data {
                s = s + v;
            }
        });
        let m = s / E::from_f64(n as f64);
        let needs = self.read(|n| n.needs_grad);
        self.graph.push(Op::MeanAll(self.id), vec![1], vec![m], needs)
    }

    /// Elementwise smooth-L1 (Huber, beta = 1) of `self - target`.
    pub fn smooth_l1(&self, target: &Tensor<E>) -> Result<Tensor<E>> {
        self.same_graph(target)?;
        if self.shape != target.shape {
            return Err(TensorError::ShapeMismatch {
                op: "smooth_l1",
                lhs: self.shape.clone(),
                rhs: target.shape.clone(),
            });
        }
        let inner = self.graph.inner.borrow();
        let p = &inner.nodes[self.id].data;
        let t = &inner.nodes[target.id].data;
        let half = E::from_f64(0.5);
        let out: Vec<E> = p
            .iter()
            .zip(t.iter())
            .map(|(&a, &b)| {
                let x = a - b;
                if x.abs() < E::one() {
                    half * x * x
                } else {
                    x.abs() - half
                }
            })
            .collect();
        let needs = inner.nodes[self.id].needs_grad || inner.nodes[target.id].needs_grad;
        drop(inner);
        self.graph
            .push(Op::SmoothL1(self.id, target.id), self.shape.clone(), out, needs)
    }

    /// Elementwise binary cross entropy; probabilities are clamped to
    /// [eps, 1-eps] with eps = 1e-7 before the logs.
    pub fn bce(&self, target: &Tensor<E>) -> Result<Tensor<E>> {
        self.same_graph(target)?;
        if self.shape != target.shape {
            return Err(TensorError::ShapeMismatch {
                op: "bce",
                lhs: self.shape.clone(),
                rhs: target.shape.clone(),
            });
        }
        let inner = self.graph.inner.borrow();
        let p = &inner.nodes[self.id].data;
        let t = &inner.nodes[target.id].data;
        let out: Vec<E> = p
            .iter()
            .zip(t.iter())
            .map(|(&pv, &yv)| {
                let pc = clamp_prob(pv);
                -(yv * pc.ln() + (E::one() - yv) * (E::one() - pc).ln())
            })
            .collect();
        let needs = inner.nodes[self.id].needs_grad || inner.nodes[target.id].needs_grad;
        drop(inner);
        self.graph
            .push(Op::Bce(self.id, target.id), self.shape.clone(), out, needs)
    }

    /// Concatenate along `axis`; all parts must agree on every other dim.
    pub fn concat(parts: &[Tensor<E>], axis: usize) -> Result<Tensor<E>> {
        assert!(!parts.is_empty(), "concat of zero tensors");
        let first = &parts[0];
        for p in parts.iter().skip(1) {
            first.same_graph(p)?;
        }
        let rank = first.rank();
        if axis >= rank {
            return Err(TensorError::BadAxis {
                op: "concat",
                axis,
                rank,
            });
        }
        let mut axis_total = 0;
        for p in parts {
            if p.rank() != rank {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: first.shape.clone(),
                    rhs: p.shape.clone(),
                });
            }
            for d in 0..rank {
                if d != axis && p.shape[d] != first.shape[d] {
                    return Err(TensorError::ShapeMismatch {
                        op: "concat",
                        lhs: first.shape.clone(),
                        rhs: p.shape.clone(),
                    });
                }
            }
            axis_total += p.shape[axis];
        }
        let mut out_shape = first.shape.clone();
        out_shape[axis] = axis_total;
        let (outer, _, inner_sz) = around(&out_shape, axis);
        let mut out = vec![E::zero(); numel(&out_shape)];
        {
            let g = first.graph.inner.borrow();
            for o in 0..outer {
                let mut dst = o * axis_total * inner_sz;
                for p in parts {
                    let mid = p.shape[axis];
                    let src = &g.nodes[p.id].data[o * mid * inner_sz..(o + 1) * mid * inner_sz];
                    out[dst..dst + mid * inner_sz].copy_from_slice(src);
                    dst += mid * inner_sz;
                }
            }
        }
        let needs = parts.iter().any(|p| p.read(|n| n.needs_grad));
        first.graph.push(
            Op::Concat {
                axis,
                parts: parts.iter().map(|p| p.id).collect(),
            },
            out_shape,
            out,
            needs,
        )
    }
}

pub(crate) const LN_EPS: f64 = 1e-5;
pub(crate) const BCE_EPS: f64 = 1e-7;
const GELU_S: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044715;

fn clamp_prob<E: Scalar>(p: E) -> E {
    let lo = E::from_f64(BCE_EPS);
    let hi = E::one() - lo;
    if p < lo {
        lo
    } else if p > hi {
        hi
    } else {
        p
    }
}

fn gelu_fwd<E: Scalar>(x: E) -> E {
    let s = E::from_f64(GELU_S);
    let c = E::from_f64(GELU_C);
    let half = E::from_f64(0.5);
    half * x * (E::one() + (s * (x + c * x * x * x)).tanh())
}

pub(crate) fn gelu_bwd<E: Scalar>(x: E) -> E {
    let s = E::from_f64(GELU_S);
    let c = E::from_f64(GELU_C);
    let half = E::from_f64(0.5);
    let three = E::from_f64(3.0);
    let u = s * (x + c * x * x * x);
    let t = u.tanh();
    let du = s * (E::one() + three * c * x * x);
    half * (E::one() + t) + half * x * (E::one() - t * t) * du
}

fn sigmoid_fwd<E: Scalar>(x: E) -> E {
    E::one() / (E::one() + (-x).exp())
}

/// Named trainable parameters. Iteration order (and therefore every
/// serialization and init order) is the lexicographic name order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<E> {
    params: BTreeMap<String, Param<E>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<E> {
    pub shape: Vec<usize>,
    pub data: Vec<E>,
}

impl<E: Scalar> Default for ParamStore<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Scalar> ParamStore<E> {
    pub fn new() -> Self {
        ParamStore {
            params: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, shape: Vec<usize>, data: Vec<E>) -> Result<()> {
        assert_eq!(numel(&shape), data.len());
        if self.params.contains_key(name) {
            return Err(TensorError::DuplicateParam(name.to_string()));
        }
        self.params.insert(name.to_string(), Param { shape, data });
        Ok(())
    }

    pub fn get(&self, name: &str) -> &Param<E> {
        self.params
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name:?}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Param<E> {
        self.params
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name:?}"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.params.values().map(|p| p.data.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param<E>)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param<E>)> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    /// Convert every value to another element type (f32 <-> f64).
    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        let mut out = ParamStore::new();
        for (name, p) in &self.params {
            out.params.insert(
                name.clone(),
                Param {
                    shape: p.shape.clone(),
                    data: p.data.iter().map(|&v| T::from_f64(v.as_f64())).collect(),
                },
            );
        }
        out
    }
}

/// Truncated normal draw: resample until within 2 standard deviations.
pub fn trunc_normal<E: Scalar, R: Rng>(rng: &mut R, std: f64) -> E {
    loop {
        // Box-Muller on two uniforms keeps us independent of rand_distr.
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        if z.abs() <= 2.0 {
            return E::from_f64(z * std);
        }
    }
}

#[cfg(test)]
mod tests;
