use crate::tensor::Tensor;
use crate::{NdError, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Matmul(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Neg(NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Offset(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    RowSum(NodeId),
    Relu(NodeId),
    LeakyRelu(NodeId, f64),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Softmax(NodeId),
    LogSoftmax(NodeId),
    Log(NodeId),
    Exp(NodeId),
    Square(NodeId),
    ConcatCols(Vec<NodeId>),
    SliceCols(NodeId, usize),
    GatherRows(NodeId, Vec<usize>),
    TakePerRow(NodeId, Vec<usize>),
    SegmentSum(NodeId, Vec<usize>),
    BceWithLogits(NodeId, Vec<f64>),
    Reshape(NodeId),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Wengert-list recording of one forward pass.
///
/// Rebuilt per forward pass (define-by-run) and confined to a single thread.
/// Every operation appears after all of its inputs, so one reverse sweep in
/// [`backward`](Tape::backward) completes the chain rule.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients returned by [`Tape::backward`], keyed by leaf node id.
#[derive(Debug)]
pub struct Gradients {
    entries: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to the given leaf, if it received one.
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.entries.get(id.0).and_then(|g| g.as_ref())
    }

    /// Removes and returns the gradient for the given leaf.
    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.entries.get_mut(id.0).and_then(|g| g.take())
    }
}

fn shape_err(op: &'static str, detail: String) -> NdError {
    NdError::ShapeMismatch { op, detail }
}

/// `c[m,n] (beta)= a[m,k] @ b[k,n]` with explicit strides so transposed reads
/// need no copies. Strides are in elements.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() == m * n);
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf. Gradients are produced for it iff `requires_grad` is
    /// set on the tensor.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        let needs = value.requires_grad();
        self.push(value, Op::Leaf, needs)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, mut value: Tensor) -> NodeId {
        value.set_requires_grad(false);
        self.push(value, Op::Leaf, false)
    }

    /// The value computed at `id`.
    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    // ---- primitives ------------------------------------------------------

    /// `[n,k] @ [k,m] -> [n,m]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ar, ac) = self.value(a).dim2().map_err(|_| {
            shape_err("matmul", format!("lhs must be 2-D, got {:?}", self.value(a).shape()))
        })?;
        let (br, bc) = self.value(b).dim2().map_err(|_| {
            shape_err("matmul", format!("rhs must be 2-D, got {:?}", self.value(b).shape()))
        })?;
        if ac != br {
            return Err(shape_err("matmul", format!("[{ar},{ac}] @ [{br},{bc}]")));
        }
        let mut out = vec![0.0; ar * bc];
        gemm(
            ar,
            ac,
            bc,
            self.value(a).data(),
            ac as isize,
            1,
            self.value(b).data(),
            bc as isize,
            1,
            0.0,
            &mut out,
        );
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(vec![ar, bc], out)?, Op::Matmul(a, b), needs))
    }

    /// Elementwise addition of same-shape tensors.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_elementwise("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    /// Adds a `[m]` bias row to every row of a `[n,m]` tensor.
    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (n, m) = self.value(a).dim2().map_err(|_| {
            shape_err("add_row", format!("lhs must be 2-D, got {:?}", self.value(a).shape()))
        })?;
        let bshape = self.value(bias).shape().to_vec();
        if bshape != [m] {
            return Err(shape_err("add_row", format!("bias {:?} does not match [{n},{m}]", bshape)));
        }
        let bd = self.value(bias).data();
        let mut out = self.value(a).data().to_vec();
        for r in 0..n {
            for c in 0..m {
                out[r * m + c] += bd[c];
            }
        }
        let needs = self.needs(a) || self.needs(bias);
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::AddRow(a, bias), needs))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_elementwise("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn neg(&mut self, a: NodeId) -> Result<NodeId> {
        self.map_elementwise(a, |x| -x, Op::Neg(a))
    }

    /// Elementwise (Hadamard) product of same-shape tensors.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_elementwise("multiply", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Multiplies every element by a constant.
    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId> {
        self.map_elementwise(a, |x| factor * x, Op::Scale(a, factor))
    }

    /// Adds a constant to every element.
    pub fn offset(&mut self, a: NodeId, shift: f64) -> Result<NodeId> {
        self.map_elementwise(a, |x| x + shift, Op::Offset(a))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let total: f64 = self.value(a).data().iter().sum();
        let needs = self.needs(a);
        Ok(self.push(Tensor::scalar(total), Op::Sum(a), needs))
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        if self.value(a).is_empty() {
            return Err(NdError::Contract("mean of empty tensor".into()));
        }
        let v = self.value(a);
        let total: f64 = v.data().iter().sum();
        let mean = total / v.len() as f64;
        let needs = self.needs(a);
        Ok(self.push(Tensor::scalar(mean), Op::Mean(a), needs))
    }

    /// Sum over the last axis of a `[n,m]` tensor, yielding `[n]`.
    pub fn row_sum(&mut self, a: NodeId) -> Result<NodeId> {
        let (n, m) = self.value(a).dim2().map_err(|_| {
            shape_err("row_sum", format!("input must be 2-D, got {:?}", self.value(a).shape()))
        })?;
        let d = self.value(a).data();
        let out: Vec<f64> = (0..n).map(|r| d[r * m..(r + 1) * m].iter().sum()).collect();
        let needs = self.needs(a);
        Ok(self.push(Tensor::vector(out), Op::RowSum(a), needs))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.map_elementwise(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: f64) -> Result<NodeId> {
        self.map_elementwise(a, |x| if x > 0.0 { x } else { slope * x }, Op::LeakyRelu(a, slope))
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.map_elementwise(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.map_elementwise(a, sigmoid, Op::Sigmoid(a))
    }

    /// Row-wise softmax over the last axis (1-D tensors are one row).
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let (rows, cols) = self.row_view("softmax", a)?;
        let d = self.value(a).data();
        let mut out = vec![0.0; d.len()];
        for r in 0..rows {
            let row = &d[r * cols..(r + 1) * cols];
            let hi = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for c in 0..cols {
                let e = (row[c] - hi).exp();
                out[r * cols + c] = e;
                z += e;
            }
            for c in 0..cols {
                out[r * cols + c] /= z;
            }
        }
        let shape = self.value(a).shape().to_vec();
        let needs = self.needs(a);
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax(a), needs))
    }

    /// Row-wise log-softmax; numerically stable for large logits.
    pub fn log_softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let (rows, cols) = self.row_view("log_softmax", a)?;
        let d = self.value(a).data();
        let mut out = vec![0.0; d.len()];
        for r in 0..rows {
            let row = &d[r * cols..(r + 1) * cols];
            let hi = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|x| (x - hi).exp()).sum();
            let log_z = hi + z.ln();
            for c in 0..cols {
                out[r * cols + c] = row[c] - log_z;
            }
        }
        let shape = self.value(a).shape().to_vec();
        let needs = self.needs(a);
        Ok(self.push(Tensor::new(shape, out)?, Op::LogSoftmax(a), needs))
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        self.map_elementwise(a, f64::ln, Op::Log(a))
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        self.map_elementwise(a, f64::exp, Op::Exp(a))
    }

    pub fn square(&mut self, a: NodeId) -> Result<NodeId> {
        self.map_elementwise(a, |x| x * x, Op::Square(a))
    }

    /// Concatenates 2-D tensors with equal row counts along the column axis.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(NdError::Contract("concat of zero tensors".into()));
        }
        let n = self.value(parts[0]).rows().map_err(|_| {
            shape_err("concat", format!("parts must be 2-D, got {:?}", self.value(parts[0]).shape()))
        })?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).dim2().map_err(|_| {
                shape_err("concat", format!("parts must be 2-D, got {:?}", self.value(p).shape()))
            })?;
            if r != n {
                return Err(shape_err("concat", format!("row counts differ: {n} vs {r}")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; n * total];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let d = self.value(p).data();
            for r in 0..n {
                out[r * total + offset..r * total + offset + w]
                    .copy_from_slice(&d[r * w..(r + 1) * w]);
            }
            offset += w;
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Tensor::new(vec![n, total], out)?, Op::ConcatCols(parts.to_vec()), needs))
    }

    /// Columns `[start, end)` of a 2-D tensor.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let (n, m) = self.value(a).dim2().map_err(|_| {
            shape_err("slice", format!("input must be 2-D, got {:?}", self.value(a).shape()))
        })?;
        if start > end || end > m {
            return Err(shape_err("slice", format!("range {start}..{end} out of 0..{m}")));
        }
        let w = end - start;
        let d = self.value(a).data();
        let mut out = vec![0.0; n * w];
        for r in 0..n {
            out[r * w..(r + 1) * w].copy_from_slice(&d[r * m + start..r * m + end]);
        }
        let needs = self.needs(a);
        Ok(self.push(Tensor::new(vec![n, w], out)?, Op::SliceCols(a, start), needs))
    }

    /// Selects rows of a 2-D tensor by index (rows may repeat).
    pub fn gather_rows(&mut self, a: NodeId, indices: &[usize]) -> Result<NodeId> {
        let (n, m) = self.value(a).dim2().map_err(|_| {
            shape_err("gather_rows", format!("input must be 2-D, got {:?}", self.value(a).shape()))
        })?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(shape_err("gather_rows", format!("index {bad} out of 0..{n}")));
        }
        let d = self.value(a).data();
        let mut out = vec![0.0; indices.len() * m];
        for (r, &i) in indices.iter().enumerate() {
            out[r * m..(r + 1) * m].copy_from_slice(&d[i * m..(i + 1) * m]);
        }
        let needs = self.needs(a);
        Ok(self.push(
            Tensor::new(vec![indices.len(), m], out)?,
            Op::GatherRows(a, indices.to_vec()),
            needs,
        ))
    }

    /// `out[i] = a[i, col[i]]` for a 2-D tensor; used for per-row class picks.
    pub fn take_per_row(&mut self, a: NodeId, cols: &[usize]) -> Result<NodeId> {
        let (n, m) = self.value(a).dim2().map_err(|_| {
            shape_err("take_per_row", format!("input must be 2-D, got {:?}", self.value(a).shape()))
        })?;
        if cols.len() != n {
            return Err(shape_err("take_per_row", format!("{} picks for {n} rows", cols.len())));
        }
        if let Some(&bad) = cols.iter().find(|&&c| c >= m) {
            return Err(shape_err("take_per_row", format!("column {bad} out of 0..{m}")));
        }
        let d = self.value(a).data();
        let out: Vec<f64> = cols.iter().enumerate().map(|(r, &c)| d[r * m + c]).collect();
        let needs = self.needs(a);
        Ok(self.push(Tensor::vector(out), Op::TakePerRow(a, cols.to_vec()), needs))
    }

    /// Sums rows of a 2-D tensor into `num_segments` output rows:
    /// `out[segments[i]] += a[i]`. Accumulation runs in row order, so the
    /// result is deterministic. Empty segments stay zero.
    pub fn segment_sum(&mut self, a: NodeId, segments: &[usize], num_segments: usize) -> Result<NodeId> {
        let (n, m) = self.value(a).dim2().map_err(|_| {
            shape_err("segment_sum", format!("input must be 2-D, got {:?}", self.value(a).shape()))
        })?;
        if segments.len() != n {
            return Err(shape_err("segment_sum", format!("{} segment ids for {n} rows", segments.len())));
        }
        if let Some(&bad) = segments.iter().find(|&&s| s >= num_segments) {
            return Err(shape_err("segment_sum", format!("segment {bad} out of 0..{num_segments}")));
        }
        let d = self.value(a).data();
        let mut out = vec![0.0; num_segments * m];
        for (r, &s) in segments.iter().enumerate() {
            for c in 0..m {
                out[s * m + c] += d[r * m + c];
            }
        }
        let needs = self.needs(a);
        Ok(self.push(
            Tensor::new(vec![num_segments, m], out)?,
            Op::SegmentSum(a, segments.to_vec()),
            needs,
        ))
    }

    /// Elementwise binary cross-entropy of logits against fixed targets:
    /// `max(x,0) - x*t + ln(1 + exp(-|x|))`. Stable for large |logits|.
    pub fn bce_with_logits(&mut self, a: NodeId, targets: &[f64]) -> Result<NodeId> {
        let v = self.value(a);
        if targets.len() != v.len() {
            return Err(shape_err(
                "bce_with_logits",
                format!("{} targets for {} logits", targets.len(), v.len()),
            ));
        }
        let out: Vec<f64> = v
            .data()
            .iter()
            .zip(targets)
            .map(|(&x, &t)| x.max(0.0) - x * t + (-x.abs()).exp().ln_1p())
            .collect();
        let shape = v.shape().to_vec();
        let needs = self.needs(a);
        Ok(self.push(Tensor::new(shape, out)?, Op::BceWithLogits(a, targets.to_vec()), needs))
    }

    /// Reinterprets the data with a new shape of equal element count.
    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let v = self.value(a);
        let numel: usize = shape.iter().product();
        if numel != v.len() {
            return Err(shape_err(
                "reshape",
                format!("cannot view {:?} as {:?}", v.shape(), shape),
            ));
        }
        let t = Tensor::new(shape.to_vec(), v.data().to_vec())?;
        let needs = self.needs(a);
        Ok(self.push(t, Op::Reshape(a), needs))
    }

    // ---- helpers ---------------------------------------------------------

    fn map_elementwise(&mut self, a: NodeId, f: impl Fn(f64) -> f64, op: Op) -> Result<NodeId> {
        let v = self.value(a);
        let out: Vec<f64> = v.data().iter().map(|&x| f(x)).collect();
        let shape = v.shape().to_vec();
        let needs = self.needs(a);
        Ok(self.push(Tensor::new(shape, out)?, op, needs))
    }

    fn zip_elementwise(
        &mut self,
        name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err(name, format!("{:?} vs {:?}", va.shape(), vb.shape())));
        }
        let out: Vec<f64> = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let shape = va.shape().to_vec();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(shape, out)?, op, needs))
    }

    fn row_view(&self, op: &'static str, a: NodeId) -> Result<(usize, usize)> {
        let v = self.value(a);
        match v.shape() {
            [n] => Ok((1, *n)),
            [r, c] => Ok((*r, *c)),
            other => Err(shape_err(op, format!("expected 1-D or 2-D, got {:?}", other))),
        }
    }

    // ---- reverse sweep ---------------------------------------------------

    /// Runs the reverse sweep from a scalar loss and consumes the tape.
    ///
    /// Every `requires_grad` leaf reachable from `loss` receives its
    /// gradient; leaves the loss does not depend on are absent from the
    /// result.
    pub fn backward(self, loss: NodeId) -> Result<Gradients> {
        let Tape { nodes } = self;
        if !nodes[loss.0].value.is_scalar() {
            return Err(NdError::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..nodes.len()).map(|_| None).collect();
        if nodes[loss.0].needs_grad {
            grads[loss.0] = Some(vec![1.0]);
        }

        for i in (0..=loss.0).rev() {
            if !nodes[i].needs_grad || matches!(nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(gz) = grads[i].take() else { continue };
            backprop_node(&nodes, i, &gz, &mut grads);
        }

        let entries = nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| match (&node.op, g) {
                (Op::Leaf, Some(g)) if node.value.requires_grad() => {
                    Some(Tensor::new(node.value.shape().to_vec(), g).expect("grad shape"))
                }
                _ => None,
            })
            .collect();
        Ok(Gradients { entries })
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, len: usize, add: impl FnOnce(&mut [f64])) {
    let buf = slot.get_or_insert_with(|| vec![0.0; len]);
    add(buf);
}

/// Distributes the adjoint `gz` of node `i` to its parents.
fn backprop_node(nodes: &[Node], i: usize, gz: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let needs = |id: NodeId| nodes[id.0].needs_grad;
    let val = |id: NodeId| nodes[id.0].value.data();
    let len = |id: NodeId| nodes[id.0].value.len();
    match &nodes[i].op {
        Op::Leaf => {}
        Op::Matmul(a, b) => {
            let (ar, ac) = nodes[a.0].value.dim2().expect("matmul lhs");
            let bc = nodes[b.0].value.cols().expect("matmul rhs");
            if needs(*a) {
                // dA += G @ B^T
                let bdat = val(*b);
                accumulate(&mut grads[a.0], ar * ac, |buf| {
                    gemm(ar, bc, ac, gz, bc as isize, 1, bdat, 1, bc as isize, 1.0, buf);
                });
            }
            if needs(*b) {
                // dB += A^T @ G
                let adat = val(*a);
                accumulate(&mut grads[b.0], ac * bc, |buf| {
                    gemm(ac, ar, bc, adat, 1, ac as isize, gz, bc as isize, 1, 1.0, buf);
                });
            }
        }
        Op::Add(a, b) => {
            for id in [a, b] {
                if needs(*id) {
                    accumulate(&mut grads[id.0], len(*id), |buf| {
                        for (g, &z) in buf.iter_mut().zip(gz) {
                            *g += z;
                        }
                    });
                }
            }
        }
        Op::AddRow(a, bias) => {
            if needs(*a) {
                accumulate(&mut grads[a.0], len(*a), |buf| {
                    for (g, &z) in buf.iter_mut().zip(gz) {
                        *g += z;
                    }
                });
            }
            if needs(*bias) {
                let m = len(*bias);
                accumulate(&mut grads[bias.0], m, |buf| {
                    for (r, chunk) in gz.chunks(m).enumerate() {
                        let _ = r;
                        for (g, &z) in buf.iter_mut().zip(chunk) {
                            *g += z;
                        }
                    }
                });
            }
        }
        Op::Sub(a, b) => {
            if needs(*a) {
                accumulate(&mut grads[a.0], len(*a), |buf| {
                    for (g, &z) in buf.iter_mut().zip(gz) {
                        *g += z;
                    }
                });
            }
            if needs(*b) {
                accumulate(&mut grads[b.0], len(*b), |buf| {
                    for (g, &z) in buf.iter_mut().zip(gz) {
                        *g -= z;
                    }
                });
            }
        }
        Op::Neg(a) => {
            if needs(*a) {
                accumulate(&mut grads[a.0], len(*a), |buf| {
                    for (g, &z) in buf.iter_mut().zip(gz) {
                        *g -= z;
                    }
                });
            }
        }
        Op::Mul(a, b) => {
            if needs(*a) {
                let other = val(*b);
                accumulate(&mut grads[a.0], len(*a), |buf| {
                    for ((g, &z), &o) in buf.iter_mut().zip(gz).zip(other) {
                        *g += z * o;
                    }
                });
            }
            if needs(*b) {
                let other = val(*a);
                accumulate(&mut grads[b.0], len(*b), |buf| {
                    for ((g, &z), &o) in buf.iter_mut().zip(gz).zip(other) {
                        *g += z * o;
                    }
                });
            }
        }
        Op::Scale(a, factor) => {
            if needs(*a) {
                accumulate(&mut grads[a.0], len(*a), |buf| {
                    for (g, &z) in buf.iter_mut().zip(gz) {
                        *g += factor * z;
                    }
                });
            }
        }
        Op::Offset(a) => {
            if needs(*a) {
                accumulate(&mut grads[a.0], len(*a), |buf| {
                    for (g, &z) in buf.iter_mut().zip(gz) {
                        *g += z;
                    }
                });
            }
        }
        Op::Sum(a) => {
            if needs(*a) {
                let z = gz[0];
                accumulate(&mut grads[a.0], len(*a), |buf| {
                    for g in buf.iter_mut() {
                        *g += z;
                    }
                });
            }
        }
        Op::Mean(a) => {
            if needs(*a) {
                let z = gz[0] / len(*a) as f64;
                accumulate(&mut grads[a.0], len(*a), |buf| {
                    for g in buf.iter_mut() {
                        *g += z;
                    }
                });
            }
        }
        Op::RowSum(a) => {
            if needs(*a) {
                let m = len(*a) / gz.len();
                accumulate(&mut grads[a.0], len(*a), |buf| {
                    for (r, &z) in gz.iter().enumerate() {
                        for g in &mut buf[r * m..(r + 1) * m] {
                            *g += z;
                        }
                    }
                });
            }
        }
        Op::Relu(a) => {
            if needs(*a) {
                let x = val(*a);
                accumulate(&mut grads[a.0], len(*a), |buf| {
                    for ((g, &z), &xi) in buf.iter_mut().zip(gz).zip(x) {
                        if xi > 0.0 {
                            *g += z;
                        }
                    }
                });
            }
        }
        Op::LeakyRelu(a, slope) => {
            if needs(*a) {
                let x = val(*a);
                accumulate(&mut grads[a.0], len(*a), |buf| {
                    for ((g, &z), &xi) in buf.iter_mut().zip(gz).zip(x) {
                        *g += if xi > 0.0 { z } else { slope * z };
                    }
                });
            }
        }
        Op::Tanh(a) => {
            if needs(*a) {
                let y = nodes[i].value.data();
                accumulate(&mut grads[a.0], len(*a), |buf| {
                    for ((g, &z), &yi) in buf.iter_mut().zip(gz).zip(y) {
                        *g += z * (1.0 - yi * yi);
                    }
                });
            }
        }
        Op::Sigmoid(a) => {
            if needs(*a) {
                let y = nodes[i].value.data();
                accumulate(&mut grads[a.0], len(*a), |buf| {
                    for ((g, &z), &yi) in buf.iter_mut().zip(gz).zip(y) {
                        *g += z * yi * (1.0 - yi);
                    }
                });
            }
        }
        Op::Softmax(a) => {
            if needs(*a) {
                let y = nodes[i].value.data();
                let cols = *nodes[i].value.shape().last().expect("softmax shape");
                accumulate(&mut grads[a.0], len(*a), |buf| {
                    for r in 0..y.len() / cols {
                        let yr = &y[r * cols..(r + 1) * cols];
                        let zr = &gz[r * cols..(r + 1) * cols];
                        let dot: f64 = yr.iter().zip(zr).map(|(&yi, &zi)| yi * zi).sum();
                        for c in 0..cols {
                            buf[r * cols + c] += yr[c] * (zr[c] - dot);
                        }
                    }
                });
            }
        }
        Op::LogSoftmax(a) => {
            if needs(*a) {
                let y = nodes[i].value.data();
                let cols = *nodes[i].value.shape().last().expect("log_softmax shape");
                accumulate(&mut grads[a.0], len(*a), |buf| {
                    for r in 0..y.len() / cols {
                        let yr = &y[r * cols..(r + 1) * cols];
                        let zr = &gz[r * cols..(r + 1) * cols];
                        let zsum: f64 = zr.iter().sum();
                        for c in 0..cols {
                            buf[r * cols + c] += zr[c] - yr[c].exp() * zsum;
                        }
                    }
                });
            }
        }
        Op::Log(a) => {
            if needs(*a) {
                let x = val(*a);
                accumulate(&mut grads[a.0], len(*a), |buf| {
                    for ((g, &z), &xi) in buf.iter_mut().zip(gz).zip(x) {
                        *g += z / xi;
                    }
                });
            }
        }
        Op::Exp(a) => {
            if needs(*a) {
                let y = nodes[i].value.data();
                accumulate(&mut grads[a.0], len(*a), |buf| {
                    for ((g, &z), &yi) in buf.iter_mut().zip(gz).zip(y) {
                        *g += z * yi;
                    }
                });
            }
        }
        Op::Square(a) => {
            if needs(*a) {
                let x = val(*a);
                accumulate(&mut grads[a.0], len(*a), |buf| {
                    for ((g, &z), &xi) in buf.iter_mut().zip(gz).zip(x) {
                        *g += 2.0 * xi * z;
                    }
                });
            }
        }
        Op::ConcatCols(parts) => {
            let n = nodes[i].value.rows().expect("concat shape");
            let total = nodes[i].value.cols().expect("concat shape");
            let mut offset = 0;
            for &p in parts {
                let w = nodes[p.0].value.cols().expect("concat part");
                if needs(p) {
                    accumulate(&mut grads[p.0], n * w, |buf| {
                        for r in 0..n {
                            for c in 0..w {
                                buf[r * w + c] += gz[r * total + offset + c];
                            }
                        }
                    });
                }
                offset += w;
            }
        }
        Op::SliceCols(a, start) => {
            if needs(*a) {
                let m = nodes[a.0].value.cols().expect("slice parent");
                let w = nodes[i].value.cols().expect("slice shape");
                let n = nodes[i].value.rows().expect("slice shape");
                accumulate(&mut grads[a.0], len(*a), |buf| {
                    for r in 0..n {
                        for c in 0..w {
                            buf[r * m + start + c] += gz[r * w + c];
                        }
                    }
                });
            }
        }
        Op::GatherRows(a, indices) => {
            if needs(*a) {
                let m = nodes[a.0].value.cols().expect("gather parent");
                accumulate(&mut grads[a.0], len(*a), |buf| {
                    for (r, &src) in indices.iter().enumerate() {
                        for c in 0..m {
                            buf[src * m + c] += gz[r * m + c];
                        }
                    }
                });
            }
        }
        Op::TakePerRow(a, cols) => {
            if needs(*a) {
                let m = nodes[a.0].value.cols().expect("take parent");
                accumulate(&mut grads[a.0], len(*a), |buf| {
                    for (r, &c) in cols.iter().enumerate() {
                        buf[r * m + c] += gz[r];
                    }
                });
            }
        }
        Op::SegmentSum(a, segments) => {
            if needs(*a) {
                let m = nodes[a.0].value.cols().expect("segment parent");
                accumulate(&mut grads[a.0], len(*a), |buf| {
                    for (r, &s) in segments.iter().enumerate() {
                        for c in 0..m {
                            buf[r * m + c] += gz[s * m + c];
                        }
                    }
                });
            }
        }
        Op::BceWithLogits(a, targets) => {
            if needs(*a) {
                let x = val(*a);
                accumulate(&mut grads[a.0], len(*a), |buf| {
                    for ((g, &z), (&xi, &t)) in buf.iter_mut().zip(gz).zip(x.iter().zip(targets)) {
                        *g += z * (sigmoid(xi) - t);
                    }
                });
            }
        }
        Op::Reshape(a) => {
            if needs(*a) {
                accumulate(&mut grads[a.0], len(*a), |buf| {
                    for (g, &z) in buf.iter_mut().zip(gz) {
                        *g += z;
                    }
                });
            }
        }
    }
}
