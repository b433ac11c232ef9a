//! Reverse-mode automatic differentiation over 2-D `f64` tensors.
//!
//! A [`Tape`] records every operation of a forward pass as a node; nodes are
//! created in topological order, so one reverse sweep over the node list
//! propagates gradients from a scalar (1x1) loss to every leaf. The op set is
//! exactly what the network needs: matmul, broadcasts, layer norm, GELU,
//! row softmax, gather, slicing/concatenation, and the three loss heads.
//!
//! All ops are smooth, which keeps analytic gradients checkable against
//! central finite differences at tight tolerances in double precision.

use ndarray::{concatenate, s, Array2, Axis};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    /// `(m,n) + (1,n)`, the bias pattern.
    AddRowBroadcast(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    SoftmaxRows(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var },
    Transpose(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows { x: Var, start: usize, len: usize },
    SliceCols { x: Var, start: usize, len: usize },
    /// Select rows of a table by index (embedding lookup).
    GatherRows { table: Var, indices: Vec<usize> },
    /// Mean cross-entropy over rows against hard targets; output 1x1.
    CeMeanRows { logits: Var, targets: Vec<usize> },
    /// Cross-entropy of a single logit row against a soft distribution; 1x1.
    CeSoft { logits: Var, target: Vec<f64> },
    /// Mean per-class sigmoid binary cross-entropy of a single row; 1x1.
    BceMean { logits: Var, target: Vec<f64> },
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

const LAYER_NORM_EPS: f64 = 1e-5;

/// Records a forward computation and differentiates it in reverse.
pub struct Tape {
    nodes: Vec<Node>,
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

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Convenience for 1x1 nodes.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add(a, b))
    }

    pub fn add_row_broadcast(&mut self, a: Var, bias: Var) -> Var {
        debug_assert_eq!(self.value(bias).nrows(), 1);
        let value = self.value(a) + self.value(bias);
        self.push(value, Op::AddRowBroadcast(a, bias))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a) * k;
        self.push(value, Op::Scale(a, k))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(gelu);
        self.push(value, Op::Gelu(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for mut row in value.rows_mut() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|x| (x - max).exp());
            let sum: f64 = row.sum();
            row.mapv_inplace(|x| x / sum);
        }
        self.push(value, Op::SoftmaxRows(a))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let g = self.value(gamma);
        let b = self.value(beta);
        let mut value = xv.clone();
        for mut row in value.rows_mut() {
            let (mean, rstd) = row_moments(row.as_slice().unwrap());
            for (j, e) in row.iter_mut().enumerate() {
                *e = g[[0, j]] * (*e - mean) * rstd + b[[0, j]];
            }
        }
        self.push(value, Op::LayerNorm { x, gamma, beta })
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).t().to_owned();
        self.push(value, Op::Transpose(a))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&v| self.value(v).view()).collect();
        let value = concatenate(Axis(0), &views).expect("row concat shape mismatch");
        self.push(value, Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&v| self.value(v).view()).collect();
        let value = concatenate(Axis(1), &views).expect("col concat shape mismatch");
        self.push(value, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Var {
        let value = self.value(x).slice(s![start..start + len, ..]).to_owned();
        self.push(value, Op::SliceRows { x, start, len })
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let value = self.value(x).slice(s![.., start..start + len]).to_owned();
        self.push(value, Op::SliceCols { x, start, len })
    }

    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Var {
        let t = self.value(table);
        let mut value = Array2::zeros((indices.len(), t.ncols()));
        for (i, &idx) in indices.iter().enumerate() {
            value.row_mut(i).assign(&t.row(idx));
        }
        self.push(value, Op::GatherRows { table, indices: indices.to_vec() })
    }

    pub fn ce_mean_rows(&mut self, logits: Var, targets: &[usize]) -> Var {
        let l = self.value(logits);
        debug_assert_eq!(l.nrows(), targets.len());
        let mut total = 0.0;
        for (row, &t) in l.rows().into_iter().zip(targets) {
            total += log_sum_exp(row.as_slice().unwrap()) - row[t];
        }
        let value = Array2::from_elem((1, 1), total / targets.len() as f64);
        self.push(value, Op::CeMeanRows { logits, targets: targets.to_vec() })
    }

    pub fn ce_soft(&mut self, logits: Var, target: &[f64]) -> Var {
        let l = self.value(logits);
        debug_assert_eq!(l.nrows(), 1);
        debug_assert_eq!(l.ncols(), target.len());
        let row = l.row(0);
        let lse = log_sum_exp(row.as_slice().unwrap());
        let dot: f64 = row.iter().zip(target).map(|(&x, &t)| x * t).sum();
        let value = Array2::from_elem((1, 1), lse - dot);
        self.push(value, Op::CeSoft { logits, target: target.to_vec() })
    }

    pub fn bce_mean(&mut self, logits: Var, target: &[f64]) -> Var {
        let l = self.value(logits);
        debug_assert_eq!(l.nrows(), 1);
        debug_assert_eq!(l.ncols(), target.len());
        let mut total = 0.0;
        for (&z, &t) in l.row(0).iter().zip(target) {
            // softplus(z) - t*z, numerically stable
            total += z.max(0.0) + (-z.abs()).exp().ln_1p() - t * z;
        }
        let value = Array2::from_elem((1, 1), total / target.len() as f64);
        self.push(value, Op::BceMean { logits, target: target.to_vec() })
    }

    /// Backpropagate from a 1x1 root node. Returns per-node gradients; nodes
    /// the root does not depend on get `None`.
    pub fn backward(&self, root: Var) -> Gradients {
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        debug_assert_eq!(self.value(root).dim(), (1, 1));
        grads[root.0] = Some(Array2::from_elem((1, 1), 1.0));

        for id in (0..=root.0).rev() {
            let Some(grad) = grads[id].take() else { continue };
            self.backprop_node(id, &grad, &mut grads);
            grads[id] = Some(grad);
        }
        Gradients { grads }
    }

    fn backprop_node(&self, id: usize, grad: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let da = grad.dot(&self.value(*b).t());
                let db = self.value(*a).t().dot(grad);
                accumulate(grads, *a, da);
                accumulate(grads, *b, db);
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, grad.clone());
                accumulate(grads, *b, grad.clone());
            }
            Op::AddRowBroadcast(a, bias) => {
                accumulate(grads, *a, grad.clone());
                let db = grad.sum_axis(Axis(0)).insert_axis(Axis(0));
                accumulate(grads, *bias, db);
            }
            Op::Scale(a, k) => {
                accumulate(grads, *a, grad * *k);
            }
            Op::Gelu(a) => {
                let da = self.value(*a).mapv(gelu_prime) * grad;
                accumulate(grads, *a, da);
            }
            Op::SoftmaxRows(a) => {
                let y = &self.nodes[id].value;
                let mut da = grad * y;
                for (mut drow, yrow) in da.rows_mut().into_iter().zip(y.rows()) {
                    let dot: f64 = drow.sum();
                    for (d, &yv) in drow.iter_mut().zip(yrow) {
                        *d -= dot * yv;
                    }
                }
                accumulate(grads, *a, da);
            }
            Op::LayerNorm { x, gamma, beta } => {
                let xv = self.value(*x);
                let g = self.value(*gamma);
                let n = xv.ncols() as f64;
                let mut dx = Array2::zeros(xv.raw_dim());
                let mut dgamma = Array2::zeros((1, xv.ncols()));
                let mut dbeta = Array2::zeros((1, xv.ncols()));
                for (i, row) in xv.rows().into_iter().enumerate() {
                    let (mean, rstd) = row_moments(row.as_slice().unwrap());
                    let dy = grad.row(i);
                    let mut sum_gdy = 0.0;
                    let mut sum_gdy_xhat = 0.0;
                    for (j, (&xj, &dyj)) in row.iter().zip(dy).enumerate() {
                        let xhat = (xj - mean) * rstd;
                        let gdy = g[[0, j]] * dyj;
                        sum_gdy += gdy;
                        sum_gdy_xhat += gdy * xhat;
                        dgamma[[0, j]] += dyj * xhat;
                        dbeta[[0, j]] += dyj;
                    }
                    for (j, (&xj, &dyj)) in row.iter().zip(dy).enumerate() {
                        let xhat = (xj - mean) * rstd;
                        let gdy = g[[0, j]] * dyj;
                        dx[[i, j]] = rstd * (gdy - sum_gdy / n - xhat * sum_gdy_xhat / n);
                    }
                }
                accumulate(grads, *x, dx);
                accumulate(grads, *gamma, dgamma);
                accumulate(grads, *beta, dbeta);
            }
            Op::Transpose(a) => {
                accumulate(grads, *a, grad.t().to_owned());
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let rows = self.value(p).nrows();
                    let dp = grad.slice(s![start..start + rows, ..]).to_owned();
                    accumulate(grads, p, dp);
                    start += rows;
                }
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let cols = self.value(p).ncols();
                    let dp = grad.slice(s![.., start..start + cols]).to_owned();
                    accumulate(grads, p, dp);
                    start += cols;
                }
            }
            Op::SliceRows { x, start, len } => {
                let mut dx = Array2::zeros(self.value(*x).raw_dim());
                dx.slice_mut(s![*start..*start + *len, ..]).assign(grad);
                accumulate(grads, *x, dx);
            }
            Op::SliceCols { x, start, len } => {
                let mut dx = Array2::zeros(self.value(*x).raw_dim());
                dx.slice_mut(s![.., *start..*start + *len]).assign(grad);
                accumulate(grads, *x, dx);
            }
            Op::GatherRows { table, indices } => {
                let mut dt = Array2::zeros(self.value(*table).raw_dim());
                for (i, &idx) in indices.iter().enumerate() {
                    let mut target = dt.row_mut(idx);
                    target += &grad.row(i);
                }
                accumulate(grads, *table, dt);
            }
            Op::CeMeanRows { logits, targets } => {
                let upstream = grad[[0, 0]];
                let l = self.value(*logits);
                let mut dl = softmax_of(l);
                for (i, &t) in targets.iter().enumerate() {
                    dl[[i, t]] -= 1.0;
                }
                dl *= upstream / targets.len() as f64;
                accumulate(grads, *logits, dl);
            }
            Op::CeSoft { logits, target } => {
                let upstream = grad[[0, 0]];
                let l = self.value(*logits);
                let mut dl = softmax_of(l);
                for (j, &t) in target.iter().enumerate() {
                    dl[[0, j]] -= t;
                }
                dl *= upstream;
                accumulate(grads, *logits, dl);
            }
            Op::BceMean { logits, target } => {
                let upstream = grad[[0, 0]];
                let l = self.value(*logits);
                let k = target.len() as f64;
                let mut dl = Array2::zeros(l.raw_dim());
                for (j, &t) in target.iter().enumerate() {
                    let z = l[[0, j]];
                    dl[[0, j]] = (sigmoid(z) - t) * upstream / k;
                }
                accumulate(grads, *logits, dl);
            }
        }
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Per-node gradients from one backward sweep.
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// Gradient of the root with respect to the node, zeros if unreached.
    pub fn of(&self, v: Var, tape: &Tape) -> Array2<f64> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Array2::zeros(tape.value(v).raw_dim()),
        }
    }

    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads[v.0].as_ref()
    }
}

fn accumulate(grads: &mut [Option<Array2<f64>>], v: Var, delta: Array2<f64>) {
    match &mut grads[v.0] {
        Some(g) => *g += &delta,
        slot => *slot = Some(delta),
    }
}

fn row_moments(row: &[f64]) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, 1.0 / (var + LAYER_NORM_EPS).sqrt())
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

fn softmax_of(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|x| (x - max).exp());
        let sum: f64 = row.sum();
        row.mapv_inplace(|x| x / sum);
    }
    out
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

const GELU_C0: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C1: f64 = 0.044_715;

/// GELU, tanh approximation (smooth everywhere).
fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C0 * (x + GELU_C1 * x * x * x)).tanh())
}

fn gelu_prime(x: f64) -> f64 {
    let u = GELU_C0 * (x + GELU_C1 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C0 * (1.0 + 3.0 * GELU_C1 * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
    }

    /// Check analytic gradients of `f`'s scalar output with respect to one
    /// leaf against central finite differences.
    fn check_leaf_gradient<F>(input: Array2<f64>, f: F)
    where
        F: Fn(&mut Tape, Var) -> Var,
    {
        let mut tape = Tape::new();
        let x = tape.leaf(input.clone());
        let out = f(&mut tape, x);
        assert_eq!(tape.value(out).dim(), (1, 1), "test function must end in a scalar");
        let grads = tape.backward(out);
        let analytic = grads.of(x, &tape);

        let h = 1e-6;
        for i in 0..input.nrows() {
            for j in 0..input.ncols() {
                let mut plus = input.clone();
                plus[[i, j]] += h;
                let mut minus = input.clone();
                minus[[i, j]] -= h;
                let eval = |m: Array2<f64>| {
                    let mut t = Tape::new();
                    let v = t.leaf(m);
                    let o = f(&mut t, v);
                    t.scalar(o)
                };
                let numeric = (eval(plus) - eval(minus)) / (2.0 * h);
                let a = analytic[[i, j]];
                let denom = a.abs().max(numeric.abs()).max(1e-6);
                assert!(
                    (a - numeric).abs() / denom < 1e-6,
                    "grad mismatch at ({i},{j}): analytic {a}, numeric {numeric}"
                );
            }
        }
    }

    /// Sum all entries into a scalar so any op can be checked.
    fn sum_all(tape: &mut Tape, v: Var) -> Var {
        let (r, c) = tape.value(v).dim();
        let ones_r = tape.leaf(Array2::from_elem((1, r), 1.0));
        let ones_c = tape.leaf(Array2::from_elem((c, 1), 1.0));
        let rowsum = tape.matmul(ones_r, v);
        tape.matmul(rowsum, ones_c)
    }

    #[test]
    fn matmul_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = random_matrix(&mut rng, 4, 3);
        let x = random_matrix(&mut rng, 2, 4);
        check_leaf_gradient(x, move |t, v| {
            let wv = t.leaf(w.clone());
            let y = t.matmul(v, wv);
            sum_all(t, y)
        });
    }

    #[test]
    fn gelu_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_matrix(&mut rng, 3, 5);
        check_leaf_gradient(x, |t, v| {
            let y = t.gelu(v);
            sum_all(t, y)
        });
    }

    #[test]
    fn softmax_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_matrix(&mut rng, 3, 4);
        let w = random_matrix(&mut rng, 4, 2);
        check_leaf_gradient(x, move |t, v| {
            let y = t.softmax_rows(v);
            let wv = t.leaf(w.clone());
            let z = t.matmul(y, wv);
            sum_all(t, z)
        });
    }

    #[test]
    fn layer_norm_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_matrix(&mut rng, 3, 6);
        let gamma = random_matrix(&mut rng, 1, 6);
        let beta = random_matrix(&mut rng, 1, 6);
        let w = random_matrix(&mut rng, 6, 2);

        let gamma2 = gamma.clone();
        let beta2 = beta.clone();
        let w2 = w.clone();
        check_leaf_gradient(x.clone(), move |t, v| {
            let g = t.leaf(gamma2.clone());
            let b = t.leaf(beta2.clone());
            let y = t.layer_norm(v, g, b);
            let wv = t.leaf(w2.clone());
            let z = t.matmul(y, wv);
            sum_all(t, z)
        });

        // gamma as the differentiated leaf
        let x2 = x.clone();
        let beta3 = beta.clone();
        let w3 = w.clone();
        check_leaf_gradient(gamma, move |t, gv| {
            let xv = t.leaf(x2.clone());
            let b = t.leaf(beta3.clone());
            let y = t.layer_norm(xv, gv, b);
            let wv = t.leaf(w3.clone());
            let z = t.matmul(y, wv);
            sum_all(t, z)
        });

        check_leaf_gradient(beta, move |t, bv| {
            let xv = t.leaf(x.clone());
            let g = t.leaf(gamma.clone());
            let y = t.layer_norm(xv, g, bv);
            let wv = t.leaf(w.clone());
            let z = t.matmul(y, wv);
            sum_all(t, z)
        });
    }

    #[test]
    fn slicing_and_concat_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_matrix(&mut rng, 4, 6);
        check_leaf_gradient(x, |t, v| {
            let a = t.slice_cols(v, 0, 3);
            let b = t.slice_cols(v, 3, 3);
            let cat = t.concat_cols(&[b, a]);
            let r0 = t.slice_rows(cat, 1, 2);
            let g = t.gelu(r0);
            sum_all(t, g)
        });
    }

    #[test]
    fn gather_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let table = random_matrix(&mut rng, 5, 3);
        check_leaf_gradient(table, |t, v| {
            let g = t.gather_rows(v, &[0, 2, 2, 4]);
            let y = t.gelu(g);
            sum_all(t, y)
        });
    }

    #[test]
    fn ce_mean_rows_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let logits = random_matrix(&mut rng, 4, 5);
        check_leaf_gradient(logits, |t, v| t.ce_mean_rows(v, &[0, 3, 2, 4]));
    }

    #[test]
    fn ce_soft_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let logits = random_matrix(&mut rng, 1, 4);
        check_leaf_gradient(logits, |t, v| t.ce_soft(v, &[0.1, 0.5, 0.3, 0.1]));
    }

    #[test]
    fn bce_mean_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let logits = random_matrix(&mut rng, 1, 4);
        check_leaf_gradient(logits, |t, v| t.bce_mean(v, &[1.0, 0.0, 1.0, 0.0]));
    }

    #[test]
    fn transpose_and_scale_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = random_matrix(&mut rng, 3, 4);
        check_leaf_gradient(x, |t, v| {
            let xt = t.transpose(v);
            let s = t.scale(xt, 2.5);
            let g = t.gelu(s);
            sum_all(t, g)
        });
    }

    #[test]
    fn uniform_logits_ce_is_ln_k() {
        let mut tape = Tape::new();
        let logits = tape.leaf(Array2::from_elem((3, 257), 0.42));
        let loss = tape.ce_mean_rows(logits, &[0, 100, 256]);
        assert!((tape.scalar(loss) - (257.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn pad_target_pulls_only_pad_logit() {
        // For an all-pad target row, the target-pull part of the CE gradient
        // sits exactly on the pad class; every other class is pushed down.
        let mut tape = Tape::new();
        let logits = tape.leaf(Array2::zeros((2, 257)));
        let loss = tape.ce_mean_rows(logits, &[256, 256]);
        let grads = tape.backward(loss);
        let g = grads.of(logits, &tape);
        for i in 0..2 {
            assert!(g[[i, 256]] < 0.0);
            for j in 0..256 {
                assert!(g[[i, j]] > 0.0);
            }
        }
    }
}
