//! Reverse-mode automatic differentiation over a Wengert tape.
//!
//! A `Tape` owns every intermediate value of one forward pass. Operations
//! record which earlier nodes they read, and `backward` replays the list in
//! reverse, accumulating vector-Jacobian products. Tapes are built fresh for
//! every optimization step, so gradients never leak between steps.
//!
//! The op set is exactly what the loss stack needs: affine layers, row
//! normalization, cosine plumbing, softmax cross-entropy, per-class means,
//! the hinge band penalty, and scalar reductions. Fused ops carry their own
//! analytic backward and every one of them is checked against central finite
//! differences in the tests below.

use crate::error::{Error, Result};

use super::matrix::{l2_normalize_rows, softmax_xent_forward, Matrix, NORM_EPS};

/// Handle to a node on a tape. Only valid for the tape that produced it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    /// a (m x k) · b (k x n)
    MatMul(Var, Var),
    /// a (m x d) · bᵀ (d x n)
    MatMulNT(Var, Var),
    /// x (m x n) + bias (1 x n) broadcast over rows
    AddRowBias(Var, Var),
    /// elementwise max(x, slope * x); slope 0 is ReLU
    LeakyRelu(Var, f64),
    /// rows rescaled to unit norm; near-zero rows pass through unchanged
    NormalizeRows(Var),
    /// elementwise clamp to [lo, hi]; gradient passes strictly inside
    Clamp(Var, f64, f64),
    /// elementwise scale * x + shift; only the scale matters going backward
    Affine(Var, f64),
    /// elementwise natural log
    Ln(Var),
    /// rows of x re-ordered/duplicated by index list
    GatherRows(Var, Vec<usize>),
    /// row-wise dot product of equal-shape a and b, yielding a column
    RowwiseDot(Var, Var),
    /// a stacked above b
    ConcatRows(Var, Var),
    /// mean of all entries, yielding 1x1
    MeanAll(Var),
    /// sum of all entries, yielding 1x1
    SumAll(Var),
    /// sum of squared entries, yielding 1x1
    SqSum(Var),
    /// mean softmax cross-entropy of temperature-scaled score rows
    SoftmaxXent { scores: Var, labels: Vec<usize>, temperature: f64 },
    /// per-group row means; groups[i] is the group of row i
    GroupMean { x: Var, groups: Vec<usize>, counts: Vec<usize> },
    /// two-sided squared hinge on sims vs. a [tau-eps, tau+eps] band,
    /// summed over (row, neighbor) pairs and divided by the row count
    BandHingeSq { sims: Var, tau: Matrix, eps: f64, neighbors: Vec<Vec<usize>> },
    /// mean over rows of squared L2 distance to fixed target rows
    MeanSqRowDist { x: Var, target: Matrix },
    /// weighted sum of 1x1 scalars
    WeightedSum(Vec<(Var, f64)>),
}

struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by one backward pass, addressed by `Var`.
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient for `v`, or None when no path reached it.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, or zeros of the node's shape when none flowed.
    pub fn get_or_zeros(&self, tape: &Tape, v: Var) -> Matrix {
        match self.get(v) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = tape.nodes[v.0].value.shape();
                Matrix::zeros(r, c)
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn val(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Value of a node (valid any time after the node is created).
    pub fn value(&self, v: Var) -> &Matrix {
        self.val(v)
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> Result<f64> {
        self.val(v).scalar_value()
    }

    /// Registers an input the caller does not need gradients for.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Registers a parameter snapshot. Leaves and parameters are identical on
    /// the tape; callers keep the returned `Var` to look up gradients.
    pub fn param(&mut self, value: &Matrix) -> Var {
        self.push(value.clone(), Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.val(a).matmul(self.val(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.val(a).matmul_nt(self.val(b))?;
        Ok(self.push(value, Op::MatMulNT(a, b)))
    }

    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xv = self.val(x);
        let bv = self.val(bias);
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return Err(Error::shape(format!(
                "bias {}x{} against activations {}x{}",
                bv.rows(),
                bv.cols(),
                xv.rows(),
                xv.cols()
            )));
        }
        let mut value = xv.clone();
        for r in 0..value.rows() {
            let row = value.row_mut(r);
            for (v, b) in row.iter_mut().zip(bv.row(0)) {
                *v += b;
            }
        }
        Ok(self.push(value, Op::AddRowBias(x, bias)))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let value = self.val(x).map(|v| if v > 0.0 { v } else { slope * v });
        self.push(value, Op::LeakyRelu(x, slope))
    }

    pub fn normalize_rows(&mut self, x: Var) -> Var {
        let value = l2_normalize_rows(self.val(x));
        self.push(value, Op::NormalizeRows(x))
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let value = self.val(x).map(|v| v.clamp(lo, hi));
        self.push(value, Op::Clamp(x, lo, hi))
    }

    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let value = self.val(x).map(|v| scale * v + shift);
        self.push(value, Op::Affine(x, scale))
    }

    /// Natural log. The caller guarantees positive inputs (clamp first).
    pub fn ln(&mut self, x: Var) -> Result<Var> {
        if self.val(x).data().iter().any(|&v| v <= 0.0) {
            return Err(Error::numeric("ln of a non-positive value"));
        }
        let value = self.val(x).map(f64::ln);
        Ok(self.push(value, Op::Ln(x)))
    }

    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let value = self.val(x).select_rows(idx)?;
        Ok(self.push(value, Op::GatherRows(x, idx.to_vec())))
    }

    pub fn rowwise_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let av = self.val(a);
        let bv = self.val(b);
        if av.shape() != bv.shape() {
            return Err(Error::shape(format!(
                "rowwise dot of {}x{} with {}x{}",
                av.rows(),
                av.cols(),
                bv.rows(),
                bv.cols()
            )));
        }
        let mut value = Matrix::zeros(av.rows(), 1);
        for r in 0..av.rows() {
            let dot: f64 = av.row(r).iter().zip(bv.row(r)).map(|(x, y)| x * y).sum();
            value.set(r, 0, dot);
        }
        Ok(self.push(value, Op::RowwiseDot(a, b)))
    }

    /// Row-wise cosine similarity of paired rows, clamped to [-1, 1].
    pub fn rowwise_cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        let na = self.normalize_rows(a);
        let nb = self.normalize_rows(b);
        let dot = self.rowwise_dot(na, nb)?;
        Ok(self.clamp(dot, -1.0, 1.0))
    }

    /// Pairwise cosine similarities (rows of a vs. rows of b), clamped.
    pub fn cosine_matrix(&mut self, a: Var, b: Var) -> Result<Var> {
        let na = self.normalize_rows(a);
        let nb = self.normalize_rows(b);
        let prod = self.matmul_nt(na, nb)?;
        Ok(self.clamp(prod, -1.0, 1.0))
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.val(a).vconcat(self.val(b))?;
        Ok(self.push(value, Op::ConcatRows(a, b)))
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let xv = self.val(x);
        if xv.is_empty() {
            return Err(Error::contract("mean of an empty matrix"));
        }
        let mean = xv.data().iter().sum::<f64>() / xv.len() as f64;
        Ok(self.push(Matrix::scalar(mean), Op::MeanAll(x)))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let sum = self.val(x).data().iter().sum::<f64>();
        self.push(Matrix::scalar(sum), Op::SumAll(x))
    }

    pub fn sq_sum(&mut self, x: Var) -> Var {
        let sum = self.val(x).data().iter().map(|v| v * v).sum::<f64>();
        self.push(Matrix::scalar(sum), Op::SqSum(x))
    }

    pub fn softmax_xent(&mut self, scores: Var, labels: &[usize], temperature: f64) -> Result<Var> {
        let (loss, _) = softmax_xent_forward(self.val(scores), labels, temperature)?;
        Ok(self.push(
            Matrix::scalar(loss),
            Op::SoftmaxXent { scores, labels: labels.to_vec(), temperature },
        ))
    }

    /// Per-group means of rows. `groups[i]` assigns row i to a group in
    /// [0, n_groups); every group must receive at least one row.
    pub fn group_mean(&mut self, x: Var, groups: &[usize], n_groups: usize) -> Result<Var> {
        let xv = self.val(x);
        if groups.len() != xv.rows() {
            return Err(Error::shape(format!(
                "{} group assignments for {} rows",
                groups.len(),
                xv.rows()
            )));
        }
        let mut counts = vec![0usize; n_groups];
        for &g in groups {
            if g >= n_groups {
                return Err(Error::index(format!("group {} of {}", g, n_groups)));
            }
            counts[g] += 1;
        }
        if let Some(empty) = counts.iter().position(|&c| c == 0) {
            return Err(Error::contract(format!("group {} has no rows to average", empty)));
        }
        let mut value = Matrix::zeros(n_groups, xv.cols());
        for (i, &g) in groups.iter().enumerate() {
            let row = xv.row(i).to_vec();
            for (acc, v) in value.row_mut(g).iter_mut().zip(&row) {
                *acc += v;
            }
        }
        for g in 0..n_groups {
            let inv = 1.0 / counts[g] as f64;
            for v in value.row_mut(g) {
                *v *= inv;
            }
        }
        Ok(self.push(
            value,
            Op::GroupMean { x, groups: groups.to_vec(), counts },
        ))
    }

    /// Two-sided squared hinge keeping sims inside [tau - eps, tau + eps],
    /// summed over each row's neighbor columns and divided by the row count.
    pub fn band_hinge_sq(
        &mut self,
        sims: Var,
        tau: &Matrix,
        eps: f64,
        neighbors: &[Vec<usize>],
    ) -> Result<Var> {
        let sv = self.val(sims);
        if tau.shape() != sv.shape() {
            return Err(Error::shape(format!(
                "target band {}x{} against sims {}x{}",
                tau.rows(),
                tau.cols(),
                sv.rows(),
                sv.cols()
            )));
        }
        if neighbors.len() != sv.rows() {
            return Err(Error::shape(format!(
                "{} neighbor lists for {} rows",
                neighbors.len(),
                sv.rows()
            )));
        }
        let n = sv.rows();
        if n == 0 {
            return Err(Error::contract("hinge band over zero classes"));
        }
        let mut total = 0.0;
        for (i, nb) in neighbors.iter().enumerate() {
            for &j in nb {
                if j >= sv.cols() {
                    return Err(Error::index(format!("neighbor column {} of {}", j, sv.cols())));
                }
                let s = sv.get(i, j);
                let t = tau.get(i, j);
                let over = (s - (t + eps)).max(0.0);
                let under = ((t - eps) - s).max(0.0);
                total += over * over + under * under;
            }
        }
        Ok(self.push(
            Matrix::scalar(total / n as f64),
            Op::BandHingeSq { sims, tau: tau.clone(), eps, neighbors: neighbors.to_vec() },
        ))
    }

    /// Mean over rows of squared L2 distance between x rows and fixed target rows.
    pub fn mean_sq_row_dist(&mut self, x: Var, target: &Matrix) -> Result<Var> {
        let xv = self.val(x);
        if xv.shape() != target.shape() {
            return Err(Error::shape(format!(
                "targets {}x{} against rows {}x{}",
                target.rows(),
                target.cols(),
                xv.rows(),
                xv.cols()
            )));
        }
        if xv.rows() == 0 {
            return Err(Error::contract("row-distance mean over zero rows"));
        }
        let mut total = 0.0;
        for r in 0..xv.rows() {
            for (a, b) in xv.row(r).iter().zip(target.row(r)) {
                let d = a - b;
                total += d * d;
            }
        }
        Ok(self.push(
            Matrix::scalar(total / xv.rows() as f64),
            Op::MeanSqRowDist { x, target: target.clone() },
        ))
    }

    /// Weighted sum of 1x1 scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut total = 0.0;
        for &(v, w) in terms {
            total += w * self.scalar(v)?;
        }
        Ok(self.push(Matrix::scalar(total), Op::WeightedSum(terms.to_vec())))
    }

    /// Reverse pass from a scalar loss node. Returns per-node gradients;
    /// nodes the loss does not depend on have no gradient.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.val(loss).shape() != (1, 1) {
            return Err(Error::contract(format!(
                "backward from a {}x{} node; losses must be 1x1",
                self.val(loss).rows(),
                self.val(loss).cols()
            )));
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::scalar(1.0));

        for id in (0..=loss.0).rev() {
            let upstream = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            self.apply_backward(id, &upstream, &mut grads)?;
            grads[id] = Some(upstream);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(grads: &mut [Option<Matrix>], v: Var, delta: Matrix) -> Result<()> {
        match &mut grads[v.0] {
            Some(g) => g.add_assign(&delta),
            slot @ None => {
                *slot = Some(delta);
                Ok(())
            }
        }
    }

    fn apply_backward(&self, id: usize, d: &Matrix, grads: &mut [Option<Matrix>]) -> Result<()> {
        match &self.nodes[id].op {
            Op::Leaf => Ok(()),
            Op::MatMul(a, b) => {
                let da = d.matmul_nt(self.val(*b))?;
                let db = self.val(*a).matmul_tn(d)?;
                Self::accumulate(grads, *a, da)?;
                Self::accumulate(grads, *b, db)
            }
            Op::MatMulNT(a, b) => {
                let da = d.matmul(self.val(*b))?;
                let db = d.matmul_tn(self.val(*a))?;
                Self::accumulate(grads, *a, da)?;
                Self::accumulate(grads, *b, db)
            }
            Op::AddRowBias(x, bias) => {
                let mut db = Matrix::zeros(1, d.cols());
                for r in 0..d.rows() {
                    for (acc, v) in db.row_mut(0).iter_mut().zip(d.row(r)) {
                        *acc += v;
                    }
                }
                Self::accumulate(grads, *x, d.clone())?;
                Self::accumulate(grads, *bias, db)
            }
            Op::LeakyRelu(x, slope) => {
                let xv = self.val(*x);
                let mut dx = d.clone();
                for (g, &v) in dx.data_mut().iter_mut().zip(xv.data()) {
                    if v <= 0.0 {
                        *g *= slope;
                    }
                }
                Self::accumulate(grads, *x, dx)
            }
            Op::NormalizeRows(x) => {
                let xv = self.val(*x);
                let yv = &self.nodes[id].value;
                let mut dx = Matrix::zeros(xv.rows(), xv.cols());
                for r in 0..xv.rows() {
                    let norm = xv.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
                    if norm < NORM_EPS {
                        // pass-through region: y = x exactly
                        dx.row_mut(r).copy_from_slice(d.row(r));
                    } else {
                        let y = yv.row(r);
                        let dy = d.row(r);
                        let dot: f64 = y.iter().zip(dy).map(|(a, b)| a * b).sum();
                        for ((o, &yi), &di) in dx.row_mut(r).iter_mut().zip(y).zip(dy) {
                            *o = (di - yi * dot) / norm;
                        }
                    }
                }
                Self::accumulate(grads, *x, dx)
            }
            Op::Clamp(x, lo, hi) => {
                let xv = self.val(*x);
                let mut dx = d.clone();
                for (g, &v) in dx.data_mut().iter_mut().zip(xv.data()) {
                    if v <= *lo || v >= *hi {
                        *g = 0.0;
                    }
                }
                Self::accumulate(grads, *x, dx)
            }
            Op::Affine(x, scale) => Self::accumulate(grads, *x, d.scale(*scale)),
            Op::Ln(x) => {
                let xv = self.val(*x);
                let mut dx = d.clone();
                for (g, &v) in dx.data_mut().iter_mut().zip(xv.data()) {
                    *g /= v;
                }
                Self::accumulate(grads, *x, dx)
            }
            Op::GatherRows(x, idx) => {
                let xv = self.val(*x);
                let mut dx = Matrix::zeros(xv.rows(), xv.cols());
                for (out_r, &src_r) in idx.iter().enumerate() {
                    for (acc, v) in dx.row_mut(src_r).iter_mut().zip(d.row(out_r)) {
                        *acc += v;
                    }
                }
                Self::accumulate(grads, *x, dx)
            }
            Op::RowwiseDot(a, b) => {
                let av = self.val(*a);
                let bv = self.val(*b);
                let mut da = Matrix::zeros(av.rows(), av.cols());
                let mut db = Matrix::zeros(bv.rows(), bv.cols());
                for r in 0..av.rows() {
                    let g = d.get(r, 0);
                    for (o, &bvv) in da.row_mut(r).iter_mut().zip(bv.row(r)) {
                        *o = g * bvv;
                    }
                    for (o, &avv) in db.row_mut(r).iter_mut().zip(av.row(r)) {
                        *o = g * avv;
                    }
                }
                Self::accumulate(grads, *a, da)?;
                Self::accumulate(grads, *b, db)
            }
            Op::ConcatRows(a, b) => {
                let ar = self.val(*a).rows();
                let cols = d.cols();
                let mut da = Matrix::zeros(ar, cols);
                let mut db = Matrix::zeros(d.rows() - ar, cols);
                for r in 0..d.rows() {
                    if r < ar {
                        da.row_mut(r).copy_from_slice(d.row(r));
                    } else {
                        db.row_mut(r - ar).copy_from_slice(d.row(r));
                    }
                }
                Self::accumulate(grads, *a, da)?;
                Self::accumulate(grads, *b, db)
            }
            Op::MeanAll(x) => {
                let xv = self.val(*x);
                let g = d.scalar_value()? / xv.len() as f64;
                Self::accumulate(grads, *x, Matrix::filled(xv.rows(), xv.cols(), g))
            }
            Op::SumAll(x) => {
                let xv = self.val(*x);
                let g = d.scalar_value()?;
                Self::accumulate(grads, *x, Matrix::filled(xv.rows(), xv.cols(), g))
            }
            Op::SqSum(x) => {
                let g = d.scalar_value()?;
                Self::accumulate(grads, *x, self.val(*x).scale(2.0 * g))
            }
            Op::SoftmaxXent { scores, labels, temperature } => {
                let sv = self.val(*scores);
                let (_, mut probs) = softmax_xent_forward(sv, labels, *temperature)?;
                let g = d.scalar_value()? * temperature / sv.rows() as f64;
                for (i, &label) in labels.iter().enumerate() {
                    let row = probs.row_mut(i);
                    row[label] -= 1.0;
                    for v in row {
                        *v *= g;
                    }
                }
                Self::accumulate(grads, *scores, probs)
            }
            Op::GroupMean { x, groups, counts } => {
                let xv = self.val(*x);
                let mut dx = Matrix::zeros(xv.rows(), xv.cols());
                for (i, &g) in groups.iter().enumerate() {
                    let inv = 1.0 / counts[g] as f64;
                    for (o, v) in dx.row_mut(i).iter_mut().zip(d.row(g)) {
                        *o = v * inv;
                    }
                }
                Self::accumulate(grads, *x, dx)
            }
            Op::BandHingeSq { sims, tau, eps, neighbors } => {
                let sv = self.val(*sims);
                let g = d.scalar_value()? / sv.rows() as f64;
                let mut dx = Matrix::zeros(sv.rows(), sv.cols());
                for (i, nb) in neighbors.iter().enumerate() {
                    for &j in nb {
                        let s = sv.get(i, j);
                        let t = tau.get(i, j);
                        let over = (s - (t + eps)).max(0.0);
                        let under = ((t - eps) - s).max(0.0);
                        dx.set(i, j, dx.get(i, j) + g * (2.0 * over - 2.0 * under));
                    }
                }
                Self::accumulate(grads, *sims, dx)
            }
            Op::MeanSqRowDist { x, target } => {
                let xv = self.val(*x);
                let g = 2.0 * d.scalar_value()? / xv.rows() as f64;
                let mut dx = xv.clone();
                for (o, &t) in dx.data_mut().iter_mut().zip(target.data()) {
                    *o = (*o - t) * g;
                }
                Self::accumulate(grads, *x, dx)
            }
            Op::WeightedSum(terms) => {
                let g = d.scalar_value()?;
                for &(v, w) in terms {
                    Self::accumulate(grads, v, Matrix::scalar(g * w))?;
                }
                Ok(())
            }
        }
    }
}
