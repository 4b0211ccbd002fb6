use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::{AdError, Result};

/// Handle to a node on the tape.
pub type VarId = usize;

enum Op {
    Leaf,
    Matmul(VarId, VarId),
    Add(VarId, VarId),
    AddRow(VarId, VarId),
    Sub(VarId, VarId),
    Mul(VarId, VarId),
    Scale(VarId, f64),
    AddScalar(VarId),
    Concat { parts: Vec<VarId>, axis: usize },
    Slice { src: VarId, start: usize, len: usize },
    GatherRows { src: VarId, idx: Vec<usize> },
    StackRows { parts: Vec<VarId> },
    Reshape(VarId),
    Relu(VarId),
    Sigmoid(VarId),
    Tanh(VarId),
    Square(VarId),
    Powf { src: VarId, p: f64 },
    MulBcast(VarId, VarId),
    LnClamped { src: VarId, floor: f64 },
    Softmax(VarId),
    MaskedSoftmax { src: VarId, mask: Vec<bool> },
    Sum(VarId),
    Mean(VarId),
    SumAxis { src: VarId, axis: usize },
    Transpose(VarId),
    PairwiseSqDist(VarId, VarId),
    DivRows(VarId, VarId),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Reverse-mode tape. Ops append nodes during the forward pass; `backward`
/// sweeps the tape once in reverse. Node insertion order is a valid
/// topological order by construction.
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    params: Vec<(VarId, usize)>, // (leaf node, index in the bound store)
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
            params: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: VarId) -> &Tensor {
        &self.nodes[id].value
    }

    /// Gradient of the last `backward` loss w.r.t. node `id`; zeros if the
    /// node was not reached.
    pub fn grad(&self, id: VarId) -> Tensor {
        match &self.grads.get(id) {
            Some(Some(g)) => g.clone(),
            _ => Tensor::zeros(self.nodes[id].value.shape()),
        }
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op, needs: bool) -> Result<VarId> {
        if !value.all_finite() {
            return Err(AdError::NonFinite { op: op_name });
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad: needs,
        });
        Ok(self.nodes.len() - 1)
    }

    fn needs(&self, id: VarId) -> bool {
        self.nodes[id].needs_grad
    }

    /// Non-trainable leaf (instance data, labels, targets).
    pub fn constant(&mut self, value: Tensor) -> Result<VarId> {
        self.push("constant", value, Op::Leaf, false)
    }

    /// Trainable leaf not tied to a store (used by grad checks and tests).
    pub fn input(&mut self, value: Tensor) -> Result<VarId> {
        self.push("input", value, Op::Leaf, true)
    }

    /// Leaf bound to a named parameter; gradients flow back to the store via
    /// [`Graph::apply_grads`].
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<VarId> {
        let idx = store
            .index_of(name)
            .ok_or_else(|| AdError::UnknownParam(name.to_string()))?;
        let id = self.push("param", store.value_at(idx).clone(), Op::Leaf, true)?;
        self.params.push((id, idx));
        Ok(id)
    }

    /// Parameter leaf that is read but not updated: gradients still flow
    /// *through* it to other inputs, but nothing accumulates on it.
    pub fn param_frozen(&mut self, store: &ParamStore, name: &str) -> Result<VarId> {
        let idx = store
            .index_of(name)
            .ok_or_else(|| AdError::UnknownParam(name.to_string()))?;
        self.push("param", store.value_at(idx).clone(), Op::Leaf, false)
    }

    // ---- ops -------------------------------------------------------------

    /// Matrix product. 1-D left operands act as a row vector, 1-D right
    /// operands as a column vector, so `matmul([k], [k])` is a dot product.
    pub fn matmul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        let (av, bv) = (&self.nodes[a].value, &self.nodes[b].value);
        let (m, ka) = as_matrix_dims(av, true);
        let (kb, n) = as_matrix_dims(bv, false);
        if ka != kb {
            return Err(AdError::ShapeMismatch {
                op: "matmul",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        matmul_into(av.data(), bv.data(), m, ka, n, &mut out);
        let shape = matmul_out_shape(av.ndim(), bv.ndim(), m, n);
        let t = Tensor::from_vec(&shape, out)?;
        let needs = self.needs(a) || self.needs(b);
        self.push("matmul", t, Op::Matmul(a, b), needs)
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.elementwise("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.elementwise("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.elementwise("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn elementwise(
        &mut self,
        name: &'static str,
        a: VarId,
        b: VarId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<VarId> {
        let (av, bv) = (&self.nodes[a].value, &self.nodes[b].value);
        if av.shape() != bv.shape() {
            return Err(AdError::ShapeMismatch {
                op: name,
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        let t = Tensor::from_vec(av.shape(), data)?;
        let needs = self.needs(a) || self.needs(b);
        self.push(name, t, op, needs)
    }

    /// Broadcast-add a 1-D row vector to every row of a matrix (bias add).
    pub fn add_row(&mut self, a: VarId, row: VarId) -> Result<VarId> {
        let (av, rv) = (&self.nodes[a].value, &self.nodes[row].value);
        if av.ndim() != 2 || rv.ndim() != 1 || av.cols() != rv.numel() {
            return Err(AdError::ShapeMismatch {
                op: "add_row",
                lhs: av.shape().to_vec(),
                rhs: rv.shape().to_vec(),
            });
        }
        let cols = av.cols();
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + rv.data()[i % cols])
            .collect();
        let t = Tensor::from_vec(av.shape(), data)?;
        let needs = self.needs(a) || self.needs(row);
        self.push("add_row", t, Op::AddRow(a, row), needs)
    }

    pub fn scale(&mut self, a: VarId, c: f64) -> Result<VarId> {
        let data = self.nodes[a].value.data().iter().map(|v| v * c).collect();
        let t = Tensor::from_vec(self.nodes[a].value.shape(), data)?;
        let needs = self.needs(a);
        self.push("scale", t, Op::Scale(a, c), needs)
    }

    pub fn add_scalar(&mut self, a: VarId, c: f64) -> Result<VarId> {
        let data = self.nodes[a].value.data().iter().map(|v| v + c).collect();
        let t = Tensor::from_vec(self.nodes[a].value.shape(), data)?;
        let needs = self.needs(a);
        self.push("add_scalar", t, Op::AddScalar(a), needs)
    }

    /// Concatenate along `axis`. 1-D tensors concatenate end to end
    /// (axis 0); 2-D tensors support axis 0 (rows) and 1 (columns).
    pub fn concat(&mut self, parts: &[VarId], axis: usize) -> Result<VarId> {
        if parts.is_empty() {
            return Err(AdError::BadShape {
                op: "concat",
                expected: "at least one part".into(),
                got: vec![0],
            });
        }
        let first = self.nodes[parts[0]].value.shape().to_vec();
        let ndim = first.len();
        if axis >= ndim.max(1) || ndim == 0 || ndim > 2 {
            return Err(AdError::BadShape {
                op: "concat",
                expected: "1-D or 2-D parts with a valid axis".into(),
                got: first,
            });
        }
        let t = if ndim == 1 {
            let mut data = Vec::new();
            for &p in parts {
                let v = &self.nodes[p].value;
                if v.ndim() != 1 {
                    return Err(AdError::ShapeMismatch {
                        op: "concat",
                        lhs: first,
                        rhs: v.shape().to_vec(),
                    });
                }
                data.extend_from_slice(v.data());
            }
            let n = data.len();
            Tensor::from_vec(&[n], data)?
        } else if axis == 0 {
            let cols = first[1];
            let mut data = Vec::new();
            let mut rows = 0;
            for &p in parts {
                let v = &self.nodes[p].value;
                if v.ndim() != 2 || v.cols() != cols {
                    return Err(AdError::ShapeMismatch {
                        op: "concat",
                        lhs: first,
                        rhs: v.shape().to_vec(),
                    });
                }
                rows += v.rows();
                data.extend_from_slice(v.data());
            }
            Tensor::from_vec(&[rows, cols], data)?
        } else {
            let rows = first[0];
            let mut cols = 0;
            for &p in parts {
                let v = &self.nodes[p].value;
                if v.ndim() != 2 || v.rows() != rows {
                    return Err(AdError::ShapeMismatch {
                        op: "concat",
                        lhs: first,
                        rhs: v.shape().to_vec(),
                    });
                }
                cols += v.cols();
            }
            let mut data = vec![0.0; rows * cols];
            let mut at = 0;
            for &p in parts {
                let v = &self.nodes[p].value;
                let pc = v.cols();
                for r in 0..rows {
                    data[r * cols + at..r * cols + at + pc].copy_from_slice(v.row(r));
                }
                at += pc;
            }
            Tensor::from_vec(&[rows, cols], data)?
        };
        let needs = parts.iter().any(|&p| self.needs(p));
        self.push(
            "concat",
            t,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            needs,
        )
    }

    /// Contiguous slice of a 1-D tensor.
    pub fn slice(&mut self, src: VarId, start: usize, len: usize) -> Result<VarId> {
        let v = &self.nodes[src].value;
        if v.ndim() != 1 || start + len > v.numel() {
            return Err(AdError::BadShape {
                op: "slice",
                expected: format!("1-D tensor covering [{start}, {})", start + len),
                got: v.shape().to_vec(),
            });
        }
        let data = v.data()[start..start + len].to_vec();
        let t = Tensor::from_vec(&[len], data)?;
        let needs = self.needs(src);
        self.push("slice", t, Op::Slice { src, start, len }, needs)
    }

    /// Row gather / embedding lookup: picks rows of a matrix by index, with
    /// repeats allowed. Gradients of repeated rows accumulate.
    pub fn gather_rows(&mut self, src: VarId, idx: &[usize]) -> Result<VarId> {
        let v = &self.nodes[src].value;
        if v.ndim() != 2 {
            return Err(AdError::BadShape {
                op: "gather_rows",
                expected: "2-D source".into(),
                got: v.shape().to_vec(),
            });
        }
        let cols = v.cols();
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            if i >= v.rows() {
                return Err(AdError::BadShape {
                    op: "gather_rows",
                    expected: format!("row index < {}", v.rows()),
                    got: vec![i],
                });
            }
            data.extend_from_slice(v.row(i));
        }
        let t = Tensor::from_vec(&[idx.len(), cols], data)?;
        let needs = self.needs(src);
        self.push(
            "gather_rows",
            t,
            Op::GatherRows {
                src,
                idx: idx.to_vec(),
            },
            needs,
        )
    }

    /// Alias for [`Graph::gather_rows`] in embedding-table terms.
    pub fn embedding_lookup(&mut self, table: VarId, ids: &[usize]) -> Result<VarId> {
        self.gather_rows(table, ids)
    }

    /// View the same elements under a new shape (element count must match).
    pub fn reshape(&mut self, src: VarId, shape: &[usize]) -> Result<VarId> {
        let v = &self.nodes[src].value;
        let n: usize = shape.iter().product();
        if n != v.numel() {
            return Err(AdError::BadShape {
                op: "reshape",
                expected: format!("{} elements for shape {shape:?}", v.numel()),
                got: v.shape().to_vec(),
            });
        }
        let t = Tensor::from_vec(shape, v.data().to_vec())?;
        let needs = self.needs(src);
        self.push("reshape", t, Op::Reshape(src), needs)
    }

    /// Single row of a matrix as a 1-D vector.
    pub fn row(&mut self, src: VarId, r: usize) -> Result<VarId> {
        let cols = self.nodes[src].value.cols();
        let picked = self.gather_rows(src, &[r])?;
        self.reshape(picked, &[cols])
    }

    /// Stack equal-length 1-D vectors into a matrix, one per row.
    pub fn stack_rows(&mut self, parts: &[VarId]) -> Result<VarId> {
        if parts.is_empty() {
            return Err(AdError::BadShape {
                op: "stack_rows",
                expected: "at least one row".into(),
                got: vec![0],
            });
        }
        let cols = self.nodes[parts[0]].value.numel();
        let mut data = Vec::with_capacity(parts.len() * cols);
        for &p in parts {
            let v = &self.nodes[p].value;
            if v.ndim() != 1 || v.numel() != cols {
                return Err(AdError::ShapeMismatch {
                    op: "stack_rows",
                    lhs: vec![cols],
                    rhs: v.shape().to_vec(),
                });
            }
            data.extend_from_slice(v.data());
        }
        let t = Tensor::from_vec(&[parts.len(), cols], data)?;
        let needs = parts.iter().any(|&p| self.needs(p));
        self.push(
            "stack_rows",
            t,
            Op::StackRows {
                parts: parts.to_vec(),
            },
            needs,
        )
    }

    pub fn relu(&mut self, a: VarId) -> Result<VarId> {
        self.unary("relu", a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: VarId) -> Result<VarId> {
        self.unary("sigmoid", a, |x| 1.0 / (1.0 + (-x).exp()), Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: VarId) -> Result<VarId> {
        self.unary("tanh", a, f64::tanh, Op::Tanh(a))
    }

    pub fn square(&mut self, a: VarId) -> Result<VarId> {
        self.unary("square", a, |x| x * x, Op::Square(a))
    }

    /// Elementwise power `x^p` (positive inputs for fractional exponents).
    pub fn powf(&mut self, a: VarId, p: f64) -> Result<VarId> {
        self.unary("powf", a, |x| x.powf(p), Op::Powf { src: a, p })
    }

    /// Multiply every element of `a` by a 1-element tensor `s`.
    pub fn mul_bcast(&mut self, a: VarId, s: VarId) -> Result<VarId> {
        let sv = &self.nodes[s].value;
        if sv.numel() != 1 {
            return Err(AdError::BadShape {
                op: "mul_bcast",
                expected: "1-element scale".into(),
                got: sv.shape().to_vec(),
            });
        }
        let scale = sv.data()[0];
        let data = self.nodes[a].value.data().iter().map(|v| v * scale).collect();
        let t = Tensor::from_vec(self.nodes[a].value.shape(), data)?;
        let needs = self.needs(a) || self.needs(s);
        self.push("mul_bcast", t, Op::MulBcast(a, s), needs)
    }

    /// `ln(max(x, floor))`; gradient is zero wherever the clamp is active.
    pub fn ln_clamped(&mut self, a: VarId, floor: f64) -> Result<VarId> {
        self.unary(
            "ln_clamped",
            a,
            |x| x.max(floor).ln(),
            Op::LnClamped { src: a, floor },
        )
    }

    fn unary(
        &mut self,
        name: &'static str,
        a: VarId,
        f: impl Fn(f64) -> f64,
        op: Op,
    ) -> Result<VarId> {
        let data = self.nodes[a].value.data().iter().map(|v| f(*v)).collect();
        let t = Tensor::from_vec(self.nodes[a].value.shape(), data)?;
        let needs = self.needs(a);
        self.push(name, t, op, needs)
    }

    /// Numerically stable softmax over the last axis (each row of a 2-D
    /// tensor, or a whole 1-D tensor).
    pub fn softmax(&mut self, a: VarId) -> Result<VarId> {
        let v = &self.nodes[a].value;
        let cols = v.cols();
        let rows = v.numel() / cols.max(1);
        let mut data = v.data().to_vec();
        for r in 0..rows {
            softmax_row(&mut data[r * cols..(r + 1) * cols]);
        }
        let t = Tensor::from_vec(v.shape(), data)?;
        let needs = self.needs(a);
        self.push("softmax", t, Op::Softmax(a), needs)
    }

    /// Softmax over the unmasked entries of a 1-D tensor; masked-out entries
    /// (mask = false) get probability exactly 0 and receive zero gradient.
    /// An all-masked input yields all zeros.
    pub fn masked_softmax(&mut self, a: VarId, mask: &[bool]) -> Result<VarId> {
        let v = &self.nodes[a].value;
        if v.ndim() != 1 || v.numel() != mask.len() {
            return Err(AdError::BadShape {
                op: "masked_softmax",
                expected: format!("1-D tensor of length {}", mask.len()),
                got: v.shape().to_vec(),
            });
        }
        let mut data = vec![0.0; v.numel()];
        let mx = v
            .data()
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(x, _)| *x)
            .fold(f64::NEG_INFINITY, f64::max);
        if mx.is_finite() {
            let mut denom = 0.0;
            for (i, &m) in mask.iter().enumerate() {
                if m {
                    data[i] = (v.data()[i] - mx).exp();
                    denom += data[i];
                }
            }
            for d in &mut data {
                *d /= denom;
            }
        }
        let t = Tensor::from_vec(v.shape(), data)?;
        let needs = self.needs(a);
        self.push(
            "masked_softmax",
            t,
            Op::MaskedSoftmax {
                src: a,
                mask: mask.to_vec(),
            },
            needs,
        )
    }

    pub fn sum(&mut self, a: VarId) -> Result<VarId> {
        let s: f64 = self.nodes[a].value.data().iter().sum();
        let needs = self.needs(a);
        self.push("sum", Tensor::scalar(s), Op::Sum(a), needs)
    }

    pub fn mean(&mut self, a: VarId) -> Result<VarId> {
        let v = &self.nodes[a].value;
        let s: f64 = v.data().iter().sum();
        let n = v.numel().max(1) as f64;
        let needs = self.needs(a);
        self.push("mean", Tensor::scalar(s / n), Op::Mean(a), needs)
    }

    /// Sum a 2-D tensor along `axis` (0 = over rows → per-column sums,
    /// 1 = over columns → per-row sums), yielding a 1-D tensor.
    pub fn sum_axis(&mut self, a: VarId, axis: usize) -> Result<VarId> {
        let v = &self.nodes[a].value;
        if v.ndim() != 2 || axis > 1 {
            return Err(AdError::BadShape {
                op: "sum_axis",
                expected: "2-D tensor, axis 0 or 1".into(),
                got: v.shape().to_vec(),
            });
        }
        let (rows, cols) = (v.rows(), v.cols());
        let t = if axis == 0 {
            let mut out = vec![0.0; cols];
            for r in 0..rows {
                for (o, x) in out.iter_mut().zip(v.row(r)) {
                    *o += x;
                }
            }
            Tensor::from_vec(&[cols], out)?
        } else {
            let out = (0..rows).map(|r| v.row(r).iter().sum()).collect();
            Tensor::from_vec(&[rows], out)?
        };
        let needs = self.needs(a);
        self.push("sum_axis", t, Op::SumAxis { src: a, axis }, needs)
    }

    pub fn transpose(&mut self, a: VarId) -> Result<VarId> {
        let v = &self.nodes[a].value;
        if v.ndim() != 2 {
            return Err(AdError::BadShape {
                op: "transpose",
                expected: "2-D tensor".into(),
                got: v.shape().to_vec(),
            });
        }
        let (rows, cols) = (v.rows(), v.cols());
        let mut data = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                data[c * rows + r] = v.get2(r, c);
            }
        }
        let t = Tensor::from_vec(&[cols, rows], data)?;
        let needs = self.needs(a);
        self.push("transpose", t, Op::Transpose(a), needs)
    }

    /// All pairwise squared Euclidean distances between the rows of
    /// `x: [n, d]` and the rows of `y: [k, d]`, as an `[n, k]` matrix.
    pub fn pairwise_sqdist(&mut self, x: VarId, y: VarId) -> Result<VarId> {
        let (xv, yv) = (&self.nodes[x].value, &self.nodes[y].value);
        if xv.ndim() != 2 || yv.ndim() != 2 || xv.cols() != yv.cols() {
            return Err(AdError::ShapeMismatch {
                op: "pairwise_sqdist",
                lhs: xv.shape().to_vec(),
                rhs: yv.shape().to_vec(),
            });
        }
        let (n, k) = (xv.rows(), yv.rows());
        let mut data = vec![0.0; n * k];
        for i in 0..n {
            for j in 0..k {
                let d: f64 = xv
                    .row(i)
                    .iter()
                    .zip(yv.row(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                data[i * k + j] = d;
            }
        }
        let t = Tensor::from_vec(&[n, k], data)?;
        let needs = self.needs(x) || self.needs(y);
        self.push("pairwise_sqdist", t, Op::PairwiseSqDist(x, y), needs)
    }

    /// Divide each row of `a: [k, d]` by the matching entry of `denom: [k]`.
    pub fn div_rows(&mut self, a: VarId, denom: VarId) -> Result<VarId> {
        let (av, dv) = (&self.nodes[a].value, &self.nodes[denom].value);
        if av.ndim() != 2 || dv.ndim() != 1 || av.rows() != dv.numel() {
            return Err(AdError::ShapeMismatch {
                op: "div_rows",
                lhs: av.shape().to_vec(),
                rhs: dv.shape().to_vec(),
            });
        }
        let cols = av.cols();
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v / dv.data()[i / cols])
            .collect();
        let t = Tensor::from_vec(av.shape(), data)?;
        let needs = self.needs(a) || self.needs(denom);
        self.push("div_rows", t, Op::DivRows(a, denom), needs)
    }

    // ---- backward ---------------------------------------------------------

    /// Reverse sweep from a scalar loss. Gradients accumulate additively;
    /// nodes that do not require gradients are skipped.
    pub fn backward(&mut self, loss: VarId) -> Result<()> {
        let lv = &self.nodes[loss].value;
        if !lv.is_scalar() {
            return Err(AdError::NonScalarLoss {
                got: lv.shape().to_vec(),
            });
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss] = Some(Tensor::scalar(1.0));

        for id in (0..=loss).rev() {
            if !self.nodes[id].needs_grad {
                continue;
            }
            let Some(g) = self.grads[id].take() else {
                continue;
            };
            self.propagate(id, &g);
            self.grads[id] = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, id: VarId, delta: Tensor) {
        if !self.nodes[id].needs_grad {
            return;
        }
        match &mut self.grads[id] {
            Some(g) => g.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&mut self, id: VarId, g: &Tensor) {
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (a, b) = (*a, *b);
                let av = self.nodes[a].value.clone();
                let bv = self.nodes[b].value.clone();
                let (m, k) = as_matrix_dims(&av, true);
                let (_, n) = as_matrix_dims(&bv, false);
                if self.needs(a) {
                    // ga = g . b^T
                    let mut ga = vec![0.0; m * k];
                    for i in 0..m {
                        for kk in 0..k {
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += g.data()[i * n + j] * bv.data()[kk * n + j];
                            }
                            ga[i * k + kk] = acc;
                        }
                    }
                    self.accumulate(a, Tensor::from_vec(av.shape(), ga).unwrap());
                }
                if self.needs(b) {
                    // gb = a^T . g
                    let mut gb = vec![0.0; k * n];
                    for kk in 0..k {
                        for i in 0..m {
                            let av_ik = av.data()[i * k + kk];
                            if av_ik == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                gb[kk * n + j] += av_ik * g.data()[i * n + j];
                            }
                        }
                    }
                    self.accumulate(b, Tensor::from_vec(bv.shape(), gb).unwrap());
                }
            }
            Op::Add(a, b) => {
                let (a, b) = (*a, *b);
                self.accumulate(a, g.clone());
                self.accumulate(b, g.clone());
            }
            Op::Sub(a, b) => {
                let (a, b) = (*a, *b);
                self.accumulate(a, g.clone());
                let mut neg = g.clone();
                for v in neg.data_mut() {
                    *v = -*v;
                }
                self.accumulate(b, neg);
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                let av = self.nodes[a].value.clone();
                let bv = self.nodes[b].value.clone();
                if self.needs(a) {
                    let mut ga = g.clone();
                    for (x, y) in ga.data_mut().iter_mut().zip(bv.data()) {
                        *x *= y;
                    }
                    self.accumulate(a, ga);
                }
                if self.needs(b) {
                    let mut gb = g.clone();
                    for (x, y) in gb.data_mut().iter_mut().zip(av.data()) {
                        *x *= y;
                    }
                    self.accumulate(b, gb);
                }
            }
            Op::AddRow(a, row) => {
                let (a, row) = (*a, *row);
                let cols = self.nodes[row].value.numel();
                self.accumulate(a, g.clone());
                if self.needs(row) {
                    let mut gr = vec![0.0; cols];
                    for (i, v) in g.data().iter().enumerate() {
                        gr[i % cols] += v;
                    }
                    self.accumulate(row, Tensor::from_vec(&[cols], gr).unwrap());
                }
            }
            Op::Scale(a, c) => {
                let (a, c) = (*a, *c);
                let mut ga = g.clone();
                for v in ga.data_mut() {
                    *v *= c;
                }
                self.accumulate(a, ga);
            }
            Op::AddScalar(a) => {
                let a = *a;
                self.accumulate(a, g.clone());
            }
            Op::Concat { parts, axis } => {
                let parts = parts.clone();
                let axis = *axis;
                let ndim = self.nodes[parts[0]].value.ndim();
                if ndim == 1 {
                    let mut at = 0;
                    for p in parts {
                        let n = self.nodes[p].value.numel();
                        let gp = Tensor::from_vec(&[n], g.data()[at..at + n].to_vec()).unwrap();
                        at += n;
                        self.accumulate(p, gp);
                    }
                } else if axis == 0 {
                    let cols = self.nodes[parts[0]].value.cols();
                    let mut at = 0;
                    for p in parts {
                        let rows = self.nodes[p].value.rows();
                        let n = rows * cols;
                        let gp =
                            Tensor::from_vec(&[rows, cols], g.data()[at..at + n].to_vec()).unwrap();
                        at += n;
                        self.accumulate(p, gp);
                    }
                } else {
                    let rows = self.nodes[parts[0]].value.rows();
                    let total_cols: usize = parts.iter().map(|&p| self.nodes[p].value.cols()).sum();
                    let mut at = 0;
                    for p in parts {
                        let pc = self.nodes[p].value.cols();
                        let mut data = vec![0.0; rows * pc];
                        for r in 0..rows {
                            data[r * pc..(r + 1) * pc].copy_from_slice(
                                &g.data()[r * total_cols + at..r * total_cols + at + pc],
                            );
                        }
                        at += pc;
                        self.accumulate(p, Tensor::from_vec(&[rows, pc], data).unwrap());
                    }
                }
            }
            Op::Slice { src, start, len } => {
                let (src, start, len) = (*src, *start, *len);
                let n = self.nodes[src].value.numel();
                let mut gs = vec![0.0; n];
                gs[start..start + len].copy_from_slice(g.data());
                self.accumulate(src, Tensor::from_vec(&[n], gs).unwrap());
            }
            Op::GatherRows { src, idx } => {
                let src = *src;
                let idx = idx.clone();
                let shape = self.nodes[src].value.shape().to_vec();
                let cols = shape[1];
                let mut gs = vec![0.0; shape[0] * cols];
                for (i, &r) in idx.iter().enumerate() {
                    for c in 0..cols {
                        gs[r * cols + c] += g.data()[i * cols + c];
                    }
                }
                self.accumulate(src, Tensor::from_vec(&shape, gs).unwrap());
            }
            Op::StackRows { parts } => {
                let parts = parts.clone();
                let cols = self.nodes[parts[0]].value.numel();
                for (i, p) in parts.into_iter().enumerate() {
                    let gp =
                        Tensor::from_vec(&[cols], g.data()[i * cols..(i + 1) * cols].to_vec())
                            .unwrap();
                    self.accumulate(p, gp);
                }
            }
            Op::Reshape(src) => {
                let src = *src;
                let shape = self.nodes[src].value.shape().to_vec();
                self.accumulate(src, Tensor::from_vec(&shape, g.data().to_vec()).unwrap());
            }
            Op::Relu(a) => {
                let a = *a;
                let av = self.nodes[a].value.clone();
                let mut ga = g.clone();
                for (x, v) in ga.data_mut().iter_mut().zip(av.data()) {
                    if *v <= 0.0 {
                        *x = 0.0;
                    }
                }
                self.accumulate(a, ga);
            }
            Op::Sigmoid(a) => {
                let a = *a;
                let out = self.nodes[id].value.clone();
                let mut ga = g.clone();
                for (x, s) in ga.data_mut().iter_mut().zip(out.data()) {
                    *x *= s * (1.0 - s);
                }
                self.accumulate(a, ga);
            }
            Op::Tanh(a) => {
                let a = *a;
                let out = self.nodes[id].value.clone();
                let mut ga = g.clone();
                for (x, t) in ga.data_mut().iter_mut().zip(out.data()) {
                    *x *= 1.0 - t * t;
                }
                self.accumulate(a, ga);
            }
            Op::Square(a) => {
                let a = *a;
                let av = self.nodes[a].value.clone();
                let mut ga = g.clone();
                for (x, v) in ga.data_mut().iter_mut().zip(av.data()) {
                    *x *= 2.0 * v;
                }
                self.accumulate(a, ga);
            }
            Op::Powf { src, p } => {
                let (src, p) = (*src, *p);
                let av = self.nodes[src].value.clone();
                let mut ga = g.clone();
                for (x, v) in ga.data_mut().iter_mut().zip(av.data()) {
                    *x *= p * v.powf(p - 1.0);
                }
                self.accumulate(src, ga);
            }
            Op::MulBcast(a, s) => {
                let (a, s) = (*a, *s);
                let scale = self.nodes[s].value.data()[0];
                let av = self.nodes[a].value.clone();
                if self.needs(a) {
                    let mut ga = g.clone();
                    for x in ga.data_mut() {
                        *x *= scale;
                    }
                    self.accumulate(a, ga);
                }
                if self.needs(s) {
                    let dot: f64 = g.data().iter().zip(av.data()).map(|(x, y)| x * y).sum();
                    self.accumulate(s, Tensor::from_vec(self.nodes[s].value.shape(), vec![dot]).unwrap());
                }
            }
            Op::LnClamped { src, floor } => {
                let (src, floor) = (*src, *floor);
                let av = self.nodes[src].value.clone();
                let mut ga = g.clone();
                for (x, v) in ga.data_mut().iter_mut().zip(av.data()) {
                    if *v > floor {
                        *x /= v;
                    } else {
                        *x = 0.0;
                    }
                }
                self.accumulate(src, ga);
            }
            Op::Softmax(a) => {
                let a = *a;
                let out = self.nodes[id].value.clone();
                let cols = out.cols();
                let rows = out.numel() / cols.max(1);
                let mut ga = vec![0.0; out.numel()];
                for r in 0..rows {
                    let s = &out.data()[r * cols..(r + 1) * cols];
                    let gr = &g.data()[r * cols..(r + 1) * cols];
                    let dot: f64 = s.iter().zip(gr).map(|(x, y)| x * y).sum();
                    for c in 0..cols {
                        ga[r * cols + c] = s[c] * (gr[c] - dot);
                    }
                }
                self.accumulate(a, Tensor::from_vec(out.shape(), ga).unwrap());
            }
            Op::MaskedSoftmax { src, mask } => {
                let src = *src;
                let mask = mask.clone();
                let out = self.nodes[id].value.clone();
                let dot: f64 = out.data().iter().zip(g.data()).map(|(x, y)| x * y).sum();
                let mut ga = vec![0.0; out.numel()];
                for (i, &m) in mask.iter().enumerate() {
                    if m {
                        ga[i] = out.data()[i] * (g.data()[i] - dot);
                    }
                }
                self.accumulate(src, Tensor::from_vec(out.shape(), ga).unwrap());
            }
            Op::Sum(a) => {
                let a = *a;
                let shape = self.nodes[a].value.shape().to_vec();
                self.accumulate(a, Tensor::filled(&shape, g.item()));
            }
            Op::Mean(a) => {
                let a = *a;
                let shape = self.nodes[a].value.shape().to_vec();
                let n: usize = shape.iter().product::<usize>().max(1);
                self.accumulate(a, Tensor::filled(&shape, g.item() / n as f64));
            }
            Op::SumAxis { src, axis } => {
                let (src, axis) = (*src, *axis);
                let shape = self.nodes[src].value.shape().to_vec();
                let (rows, cols) = (shape[0], shape[1]);
                let mut gs = vec![0.0; rows * cols];
                for r in 0..rows {
                    for c in 0..cols {
                        gs[r * cols + c] = if axis == 0 { g.data()[c] } else { g.data()[r] };
                    }
                }
                self.accumulate(src, Tensor::from_vec(&shape, gs).unwrap());
            }
            Op::Transpose(a) => {
                let a = *a;
                let (rows, cols) = (g.rows(), g.cols());
                let mut gs = vec![0.0; rows * cols];
                for r in 0..rows {
                    for c in 0..cols {
                        gs[c * rows + r] = g.get2(r, c);
                    }
                }
                self.accumulate(a, Tensor::from_vec(&[cols, rows], gs).unwrap());
            }
            Op::PairwiseSqDist(x, y) => {
                let (x, y) = (*x, *y);
                let xv = self.nodes[x].value.clone();
                let yv = self.nodes[y].value.clone();
                let (n, k, d) = (xv.rows(), yv.rows(), xv.cols());
                if self.needs(x) {
                    let mut gx = vec![0.0; n * d];
                    for i in 0..n {
                        for j in 0..k {
                            let gij = g.data()[i * k + j];
                            if gij == 0.0 {
                                continue;
                            }
                            for c in 0..d {
                                gx[i * d + c] += gij * 2.0 * (xv.get2(i, c) - yv.get2(j, c));
                            }
                        }
                    }
                    self.accumulate(x, Tensor::from_vec(&[n, d], gx).unwrap());
                }
                if self.needs(y) {
                    let mut gy = vec![0.0; k * d];
                    for i in 0..n {
                        for j in 0..k {
                            let gij = g.data()[i * k + j];
                            if gij == 0.0 {
                                continue;
                            }
                            for c in 0..d {
                                gy[j * d + c] -= gij * 2.0 * (xv.get2(i, c) - yv.get2(j, c));
                            }
                        }
                    }
                    self.accumulate(y, Tensor::from_vec(&[k, d], gy).unwrap());
                }
            }
            Op::DivRows(a, denom) => {
                let (a, denom) = (*a, *denom);
                let av = self.nodes[a].value.clone();
                let dv = self.nodes[denom].value.clone();
                let cols = av.cols();
                if self.needs(a) {
                    let mut ga = g.clone();
                    for (i, x) in ga.data_mut().iter_mut().enumerate() {
                        *x /= dv.data()[i / cols];
                    }
                    self.accumulate(a, ga);
                }
                if self.needs(denom) {
                    let mut gd = vec![0.0; dv.numel()];
                    for (i, x) in g.data().iter().enumerate() {
                        let r = i / cols;
                        gd[r] -= x * av.data()[i] / (dv.data()[r] * dv.data()[r]);
                    }
                    self.accumulate(denom, Tensor::from_vec(dv.shape(), gd).unwrap());
                }
            }
        }
    }

    /// Scatter accumulated leaf gradients back into the bound store.
    pub fn apply_grads(&self, store: &mut ParamStore) {
        for &(node, idx) in &self.params {
            if let Some(Some(g)) = self.grads.get(node) {
                store.grad_at_mut(idx).add_assign(g);
            }
        }
    }
}

fn softmax_row(row: &mut [f64]) {
    let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut denom = 0.0;
    for v in row.iter_mut() {
        *v = (*v - mx).exp();
        denom += *v;
    }
    for v in row.iter_mut() {
        *v /= denom;
    }
}

/// Interpret a tensor as a matrix for matmul: 1-D on the left is a row
/// vector, 1-D on the right a column vector.
fn as_matrix_dims(t: &Tensor, lhs: bool) -> (usize, usize) {
    match t.ndim() {
        2 => (t.shape()[0], t.shape()[1]),
        1 => {
            if lhs {
                (1, t.shape()[0])
            } else {
                (t.shape()[0], 1)
            }
        }
        _ => (1, 1),
    }
}

fn matmul_out_shape(andim: usize, bndim: usize, m: usize, n: usize) -> Vec<usize> {
    match (andim, bndim) {
        (1, 1) => vec![],
        (1, _) => vec![n],
        (_, 1) => vec![m],
        _ => vec![m, n],
    }
}

fn matmul_into(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            let brow = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}
