//! Reverse-mode differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation of one forward pass; [`Tape::backward`]
//! replays it in reverse. Rows are time steps, columns are features.

use std::collections::BTreeMap;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    /// `a + row` broadcast over rows.
    AddRow(usize, usize),
    /// `a * row` broadcast over rows.
    MulRow(usize, usize),
    /// Elementwise product with a constant.
    Mask(usize, Array2<f64>),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    SliceRows(usize, usize),
    SliceCols(usize, usize),
    Transpose(usize),
    Reshape(usize),
    SoftmaxRows(usize),
    Gather(usize, Vec<usize>),
    Im2Col {
        input: usize,
        width: usize,
        left: usize,
    },
    /// `y[t] = max(x[t], x[t + 1])`; `from_next` marks where `x[t + 1]` won.
    MaxPool2 {
        input: usize,
        from_next: Array2<bool>,
    },
    /// Per-column standardization with batch statistics.
    Normalize {
        input: usize,
        inv_std: Vec<f64>,
    },
    /// `(a - shift) * scale` per column with constant shift and scale.
    ColAffine {
        input: usize,
        scale: Vec<f64>,
    },
    /// Mean absolute error against a constant target, as a 1x1 value.
    L1Mean {
        input: usize,
        target: Array2<f64>,
    },
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    names: BTreeMap<String, Var>,
}

pub const BN_EPS: f64 = 1e-5;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn row_sums(a: &Array2<f64>) -> Array2<f64> {
    a.sum_axis(Axis(0)).insert_axis(Axis(0))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
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

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Named leaf, created once per tape and reused on later lookups.
    pub fn named(&mut self, name: &str, init: impl FnOnce() -> Array2<f64>) -> Var {
        if let Some(v) = self.names.get(name) {
            return *v;
        }
        let v = self.push(init(), Op::Leaf);
        self.names.insert(name.to_string(), v);
        v
    }

    pub fn named_vars(&self) -> &BTreeMap<String, Var> {
        &self.names
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a.0, b.0))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a.0, b.0))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        debug_assert_eq!(self.value(row).nrows(), 1);
        let v = self.value(a) + self.value(row);
        self.push(v, Op::AddRow(a.0, row.0))
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        debug_assert_eq!(self.value(row).nrows(), 1);
        let v = self.value(a) * self.value(row);
        self.push(v, Op::MulRow(a.0, row.0))
    }

    pub fn mask(&mut self, a: Var, mask: Array2<f64>) -> Var {
        let v = self.value(a) * &mask;
        self.push(v, Op::Mask(a.0, mask))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        self.push(v, Op::Sigmoid(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(v, Op::Tanh(a.0))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(v, Op::Relu(a.0))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = concatenate(Axis(1), &views).expect("row counts agree");
        self.push(v, Op::ConcatCols(parts.iter().map(|p| p.0).collect()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = concatenate(Axis(0), &views).expect("column counts agree");
        self.push(v, Op::ConcatRows(parts.iter().map(|p| p.0).collect()))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice(s![start..start + len, ..]).to_owned();
        self.push(v, Op::SliceRows(a.0, start))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.push(v, Op::SliceCols(a.0, start))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).t().to_owned();
        self.push(v, Op::Transpose(a.0))
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let flat: Vec<f64> = self.value(a).iter().copied().collect();
        let v = Array2::from_shape_vec((rows, cols), flat).expect("element count preserved");
        self.push(v, Op::Reshape(a.0))
    }

    /// Softmax along each row, max-subtracted.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for mut row in v.rows_mut() {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|x| (x - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|x| x / sum);
        }
        self.push(v, Op::SoftmaxRows(a.0))
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let mut v = Array2::zeros((ids.len(), t.ncols()));
        for (i, &id) in ids.iter().enumerate() {
            v.row_mut(i).assign(&t.row(id));
        }
        self.push(v, Op::Gather(table.0, ids.to_vec()))
    }

    /// Zero-padded windows for a same-length 1-D convolution of odd or
    /// even `width`: row `t` holds `x[t - left .. t - left + width]`.
    pub fn im2col(&mut self, a: Var, width: usize) -> Var {
        let x = self.value(a);
        let (t_len, ch) = x.dim();
        let left = (width - 1) / 2;
        let mut v = Array2::zeros((t_len, width * ch));
        for t in 0..t_len {
            for j in 0..width {
                let src = t as isize + j as isize - left as isize;
                if src >= 0 && (src as usize) < t_len {
                    v.slice_mut(s![t, j * ch..(j + 1) * ch]).assign(&x.row(src as usize));
                }
            }
        }
        self.push(
            v,
            Op::Im2Col {
                input: a.0,
                width,
                left,
            },
        )
    }

    /// Width-2, stride-1 max pooling that keeps the sequence length.
    pub fn max_pool2(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let (t_len, ch) = x.dim();
        let mut v = x.clone();
        let mut from_next = Array2::from_elem((t_len, ch), false);
        for t in 0..t_len.saturating_sub(1) {
            for c in 0..ch {
                if x[[t + 1, c]] > x[[t, c]] {
                    v[[t, c]] = x[[t + 1, c]];
                    from_next[[t, c]] = true;
                }
            }
        }
        self.push(v, Op::MaxPool2 { input: a.0, from_next })
    }

    /// Standardizes each column with its own mean and biased variance.
    /// Returns the output and the batch `(mean, var)`.
    pub fn normalize(&mut self, a: Var) -> (Var, Vec<f64>, Vec<f64>) {
        let x = self.value(a);
        let n = x.nrows() as f64;
        let mean: Vec<f64> = x.columns().into_iter().map(|c| c.sum() / n).collect();
        let var: Vec<f64> = x
            .columns()
            .into_iter()
            .zip(&mean)
            .map(|(c, m)| c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n)
            .collect();
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mut y = x.clone();
        for (j, mut col) in y.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|v| (v - mean[j]) * inv_std[j]);
        }
        let out = self.push(y, Op::Normalize { input: a.0, inv_std });
        (out, mean, var)
    }

    /// `(a - shift) * scale` per column; shift and scale are constants.
    pub fn col_affine(&mut self, a: Var, shift: &[f64], scale: &[f64]) -> Var {
        let mut y = self.value(a).clone();
        for (j, mut col) in y.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|v| (v - shift[j]) * scale[j]);
        }
        self.push(
            y,
            Op::ColAffine {
                input: a.0,
                scale: scale.to_vec(),
            },
        )
    }

    pub fn l1_mean(&mut self, a: Var, target: Array2<f64>) -> Var {
        let x = self.value(a);
        assert_eq!(x.dim(), target.dim(), "loss target shape");
        let mean = (x - &target).mapv(f64::abs).mean().unwrap_or(0.0);
        self.push(Array2::from_elem((1, 1), mean), Op::L1Mean { input: a.0, target })
    }

    /// Gradients of the scalar `output` with respect to every node.
    pub fn backward(&self, output: Var) -> Gradients {
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        let out_shape = self.nodes[output.0].value.dim();
        grads[output.0] = Some(Array2::ones(out_shape));

        fn acc(grads: &mut [Option<Array2<f64>>], i: usize, g: Array2<f64>) {
            match &mut grads[i] {
                Some(existing) => *existing += &g,
                slot => *slot = Some(g),
            }
        }

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let val = |i: usize| &self.nodes[i].value;
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    acc(&mut grads, *a, g.dot(&val(*b).t()));
                    acc(&mut grads, *b, val(*a).t().dot(&g));
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, -&g);
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    acc(&mut grads, *a, &g * val(*b));
                    acc(&mut grads, *b, &g * val(*a));
                }
                Op::AddRow(a, row) => {
                    acc(&mut grads, *row, row_sums(&g));
                    acc(&mut grads, *a, g);
                }
                Op::MulRow(a, row) => {
                    acc(&mut grads, *row, row_sums(&(&g * val(*a))));
                    acc(&mut grads, *a, &g * val(*row));
                }
                Op::Mask(a, m) => acc(&mut grads, *a, &g * m),
                Op::Sigmoid(a) => {
                    let d = node.value.mapv(|y| y * (1.0 - y));
                    acc(&mut grads, *a, g * d);
                }
                Op::Tanh(a) => {
                    let d = node.value.mapv(|y| 1.0 - y * y);
                    acc(&mut grads, *a, g * d);
                }
                Op::Relu(a) => {
                    let mut ga = g;
                    ga.zip_mut_with(val(*a), |gv, &x| {
                        if x <= 0.0 {
                            *gv = 0.0
                        }
                    });
                    acc(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let w = val(p).ncols();
                        acc(&mut grads, p, g.slice(s![.., start..start + w]).to_owned());
                        start += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let h = val(p).nrows();
                        acc(&mut grads, p, g.slice(s![start..start + h, ..]).to_owned());
                        start += h;
                    }
                }
                Op::SliceRows(a, start) => {
                    let mut ga = Array2::zeros(val(*a).dim());
                    ga.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                    acc(&mut grads, *a, ga);
                }
                Op::SliceCols(a, start) => {
                    let mut ga = Array2::zeros(val(*a).dim());
                    ga.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    acc(&mut grads, *a, ga);
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.t().to_owned()),
                Op::Reshape(a) => {
                    let flat: Vec<f64> = g.iter().copied().collect();
                    acc(
                        &mut grads,
                        *a,
                        Array2::from_shape_vec(val(*a).dim(), flat).expect("same size"),
                    );
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut ga = Array2::zeros(y.dim());
                    for ((mut out, yr), gr) in ga.rows_mut().into_iter().zip(y.rows()).zip(g.rows()) {
                        let dot: f64 = yr.iter().zip(gr.iter()).map(|(a, b)| a * b).sum();
                        for ((o, yv), gv) in out.iter_mut().zip(yr.iter()).zip(gr.iter()) {
                            *o = yv * (gv - dot);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Gather(table, ids) => {
                    let mut gt = Array2::zeros(val(*table).dim());
                    for (i, &id) in ids.iter().enumerate() {
                        let mut row = gt.row_mut(id);
                        row += &g.row(i);
                    }
                    acc(&mut grads, *table, gt);
                }
                Op::Im2Col { input, width, left } => {
                    let (t_len, ch) = val(*input).dim();
                    let mut gx = Array2::zeros((t_len, ch));
                    for t in 0..t_len {
                        for j in 0..*width {
                            let src = t as isize + j as isize - *left as isize;
                            if src >= 0 && (src as usize) < t_len {
                                let mut row = gx.row_mut(src as usize);
                                row += &g.slice(s![t, j * ch..(j + 1) * ch]);
                            }
                        }
                    }
                    acc(&mut grads, *input, gx);
                }
                Op::MaxPool2 { input, from_next } => {
                    let mut gx = Array2::zeros(val(*input).dim());
                    for ((t, c), &next) in from_next.indexed_iter() {
                        gx[[if next { t + 1 } else { t }, c]] += g[[t, c]];
                    }
                    acc(&mut grads, *input, gx);
                }
                Op::Normalize { input, inv_std } => {
                    let xhat = &node.value;
                    let n = xhat.nrows() as f64;
                    let mut gx = Array2::zeros(xhat.dim());
                    for j in 0..xhat.ncols() {
                        let gc = g.column(j);
                        let xc = xhat.column(j);
                        let sum_g = gc.sum();
                        let sum_gx: f64 = gc.iter().zip(xc.iter()).map(|(a, b)| a * b).sum();
                        for i in 0..xhat.nrows() {
                            gx[[i, j]] = inv_std[j] / n * (n * gc[i] - sum_g - xc[i] * sum_gx);
                        }
                    }
                    acc(&mut grads, *input, gx);
                }
                Op::ColAffine { input, scale } => {
                    let mut gx = g;
                    for (j, mut col) in gx.columns_mut().into_iter().enumerate() {
                        col *= scale[j];
                    }
                    acc(&mut grads, *input, gx);
                }
                Op::L1Mean { input, target } => {
                    let x = val(*input);
                    let n = x.len().max(1) as f64;
                    let scale = g[[0, 0]] / n;
                    let mut gx = x - target;
                    gx.mapv_inplace(|d| {
                        if d > 0.0 {
                            scale
                        } else if d < 0.0 {
                            -scale
                        } else {
                            0.0
                        }
                    });
                    acc(&mut grads, *input, gx);
                }
            }
        }
        Gradients { grads }
    }
}

pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// Gradient of a node, or `None` when it did not influence the output.
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads[v.0].as_ref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.gen_range(-1.0..1.0))
    }

    /// Checks d(sum(w * f(x))) / dx against central differences, where `w`
    /// is a fixed random weighting that makes the output scalar.
    fn check(inputs: Vec<Array2<f64>>, f: impl Fn(&mut Tape, &[Var]) -> Var) {
        let build = |inputs: &[Array2<f64>]| {
            let mut tape = Tape::new();
            let vars: Vec<Var> = inputs.iter().map(|m| tape.constant(m.clone())).collect();
            let out = f(&mut tape, &vars);
            (tape, vars, out)
        };
        let (probe, _, out) = build(&inputs);
        let (r, c) = probe.value(out).dim();
        let weights = rand_matrix(&mut ChaCha8Rng::seed_from_u64(99), r, c);
        let scalar = |inputs: &[Array2<f64>]| {
            let (tape, _, out) = build(inputs);
            (tape.value(out) * &weights).sum()
        };
        let (mut tape, vars, out) = build(&inputs);
        let w = tape.constant(weights.clone());
        let prod = tape.mul(out, w);
        let total = tape.l1_mean(prod, Array2::from_elem((r, c), -1e6));
        let grads = tape.backward(total);
        let eps = 1e-6;
        for (k, input) in inputs.iter().enumerate() {
            let analytic = grads
                .get(vars[k])
                .map(|g| g * (r * c) as f64)
                .unwrap_or_else(|| Array2::zeros(input.dim()));
            for ((i, j), &a) in analytic.indexed_iter() {
                let mut plus = inputs.clone();
                plus[k][[i, j]] += eps;
                let mut minus = inputs.clone();
                minus[k][[i, j]] -= eps;
                let numeric = (scalar(&plus) - scalar(&minus)) / (2.0 * eps);
                assert!(
                    (a - numeric).abs() <= 1e-6 * (1.0 + a.abs().max(numeric.abs())),
                    "input {k} [{i},{j}]: analytic {a} numeric {numeric}"
                );
            }
        }
    }

    #[test]
    fn elementwise_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = rand_matrix(&mut rng, 3, 4);
        let b = rand_matrix(&mut rng, 3, 4);
        check(vec![a.clone(), b.clone()], |t, v| {
            let x = t.mul(v[0], v[1]);
            let y = t.sub(x, v[1]);
            let z = t.add(y, v[0]);
            let s = t.sigmoid(z);
            let h = t.tanh(v[1]);
            t.add(s, h)
        });
        check(vec![a.clone()], |t, v| {
            let m = t.mask(
                v[0],
                array![[1.0, 0.0, 2.0, 0.5], [0.0, 1.0, 1.0, 1.0], [3.0, 0.0, 0.0, 1.0]],
            );
            t.relu(m)
        });
    }

    #[test]
    fn matmul_and_broadcasts() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        check(
            vec![
                rand_matrix(&mut rng, 3, 4),
                rand_matrix(&mut rng, 4, 2),
                rand_matrix(&mut rng, 1, 2),
            ],
            |t, v| {
                let m = t.matmul(v[0], v[1]);
                let a = t.add_row(m, v[2]);
                t.mul_row(a, v[2])
            },
        );
    }

    #[test]
    fn structural_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        check(
            vec![rand_matrix(&mut rng, 4, 3), rand_matrix(&mut rng, 4, 2)],
            |t, v| {
                let c = t.concat_cols(&[v[0], v[1]]);
                let r = t.slice_rows(c, 1, 2);
                let s = t.slice_cols(c, 2, 3);
                let tr = t.transpose(s);
                let rs = t.reshape(tr, 2, 6);
                let rr = t.reshape(r, 2, 5);
                t.concat_cols(&[rr, rs])
            },
        );
    }

    #[test]
    fn softmax_gather_conv_pool() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        check(vec![rand_matrix(&mut rng, 2, 5)], |t, v| t.softmax_rows(v[0]));
        check(vec![rand_matrix(&mut rng, 4, 3)], |t, v| {
            t.gather(v[0], &[2, 0, 2, 3, 1])
        });
        for width in 1..=4 {
            check(vec![rand_matrix(&mut rng, 5, 3)], move |t, v| t.im2col(v[0], width));
        }
        check(vec![rand_matrix(&mut rng, 6, 3)], |t, v| t.max_pool2(v[0]));
    }

    #[test]
    fn normalization_and_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        check(vec![rand_matrix(&mut rng, 5, 3)], |t, v| t.normalize(v[0]).0);
        check(vec![rand_matrix(&mut rng, 5, 3)], |t, v| {
            t.col_affine(v[0], &[0.1, -0.2, 0.3], &[2.0, 0.5, -1.0])
        });
        let target = rand_matrix(&mut rng, 3, 2);
        check(vec![rand_matrix(&mut rng, 3, 2)], move |t, v| {
            t.l1_mean(v[0], target.clone())
        });
    }

    #[test]
    fn softmax_is_stable_for_large_inputs() {
        let mut t = Tape::new();
        let x = t.constant(array![[1000.0, 1000.0, -1000.0]]);
        let y = t.softmax_rows(x);
        let v = t.value(y);
        assert!((v[[0, 0]] - 0.5).abs() < 1e-12 && v[[0, 2]] == 0.0);
    }

    #[test]
    fn named_leaves_are_shared() {
        let mut t = Tape::new();
        let a = t.named("w", || Array2::ones((2, 2)));
        let b = t.named("w", || Array2::zeros((2, 2)));
        assert_eq!(a, b);
        assert_eq!(t.value(b)[[0, 0]], 1.0);
    }
}
