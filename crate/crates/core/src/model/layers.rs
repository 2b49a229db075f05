//! Network blocks expressed as tape operations.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tape::{Tape, Var};
use super::{ModelConfig, ModelError, ModelParams};

/// Batch statistics of one batch-norm site from a training-mode pass.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub prefix: String,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Graph construction state for one forward pass.
pub struct Graph<'a> {
    pub tape: Tape,
    params: &'a ModelParams,
    pub cfg: &'a ModelConfig,
    /// Batch-norm uses batch statistics when set, running statistics otherwise.
    training: bool,
    dropout_rng: ChaCha8Rng,
    pub batch_stats: Vec<BatchStats>,
}

impl<'a> Graph<'a> {
    pub fn new(params: &'a ModelParams, cfg: &'a ModelConfig, training: bool, dropout_seed: u64) -> Self {
        Self {
            tape: Tape::new(),
            params,
            cfg,
            training,
            dropout_rng: ChaCha8Rng::seed_from_u64(dropout_seed),
            batch_stats: Vec::new(),
        }
    }

    /// Leaf for a named parameter, shared across uses within the pass.
    pub fn param(&mut self, name: &str) -> Var {
        let params = self.params;
        self.tape.named(name, || params.tensor(name).clone())
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        self.tape.value(v)
    }

    pub fn affine(&mut self, x: Var, prefix: &str) -> Var {
        let w = self.param(&format!("{prefix}.w"));
        let b = self.param(&format!("{prefix}.b"));
        let xw = self.tape.matmul(x, w);
        self.tape.add_row(xw, b)
    }

    /// Inverted dropout with a mask drawn from the pass's pinned stream.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Var {
        if rate <= 0.0 {
            return x;
        }
        let keep = 1.0 - rate;
        let dim = self.value(x).dim();
        let rng = &mut self.dropout_rng;
        let mask = Array2::from_shape_fn(dim, |_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 });
        self.tape.mask(x, mask)
    }

    /// affine -> ReLU -> dropout per configured layer.
    pub fn prenet(&mut self, x: Var, prefix: &str) -> Var {
        let mut h = x;
        for i in 0..self.cfg.prenet_dims.len() {
            let a = self.affine(h, &format!("{prefix}.{i}"));
            let r = self.tape.relu(a);
            h = self.dropout(r, self.cfg.prenet_dropout);
        }
        h
    }

    pub fn batch_norm(&mut self, x: Var, prefix: &str) -> Var {
        let normalized = if self.training {
            let (y, mean, var) = self.tape.normalize(x);
            self.batch_stats.push(BatchStats {
                prefix: prefix.to_string(),
                mean,
                var,
            });
            y
        } else {
            let mean = self.params.tensor(&format!("{prefix}.running_mean")).row(0).to_vec();
            let scale: Vec<f64> = self
                .params
                .tensor(&format!("{prefix}.running_var"))
                .iter()
                .map(|v| 1.0 / (v + super::tape::BN_EPS).sqrt())
                .collect();
            self.tape.col_affine(x, &mean, &scale)
        };
        let gamma = self.param(&format!("{prefix}.gamma"));
        let beta = self.param(&format!("{prefix}.beta"));
        let scaled = self.tape.mul_row(normalized, gamma);
        self.tape.add_row(scaled, beta)
    }

    /// Same-length 1-D convolution over time with kernel `width`.
    pub fn conv1d(&mut self, x: Var, prefix: &str, width: usize, bias: bool) -> Var {
        let cols = self.tape.im2col(x, width);
        let w = self.param(&format!("{prefix}.w"));
        let y = self.tape.matmul(cols, w);
        if bias {
            let b = self.param(&format!("{prefix}.b"));
            self.tape.add_row(y, b)
        } else {
            y
        }
    }

    /// `y = H(x) * T(x) + x * (1 - T(x))`, written as `x + T * (H - x)`.
    pub fn highway_layer(&mut self, x: Var, prefix: &str) -> Var {
        let h_lin = self.affine(x, &format!("{prefix}.h"));
        let h = self.tape.relu(h_lin);
        let t_lin = self.affine(x, &format!("{prefix}.t"));
        let t = self.tape.sigmoid(t_lin);
        let diff = self.tape.sub(h, x);
        let gated = self.tape.mul(t, diff);
        self.tape.add(x, gated)
    }

    /// One GRU update from a precomputed input row `xw = x W_x + b`.
    pub fn gru_cell(&mut self, xw: Var, h: Var, prefix: &str) -> Var {
        let dim = self.value(h).ncols();
        let u_zr = self.param(&format!("{prefix}.u_zr"));
        let u_h = self.param(&format!("{prefix}.u_h"));
        let hu = self.tape.matmul(h, u_zr);
        let xz = self.tape.slice_cols(xw, 0, dim);
        let hz = self.tape.slice_cols(hu, 0, dim);
        let z_lin = self.tape.add(xz, hz);
        let z = self.tape.sigmoid(z_lin);
        let xr = self.tape.slice_cols(xw, dim, dim);
        let hr = self.tape.slice_cols(hu, dim, dim);
        let r_lin = self.tape.add(xr, hr);
        let r = self.tape.sigmoid(r_lin);
        let rh = self.tape.mul(r, h);
        let rhu = self.tape.matmul(rh, u_h);
        let xn = self.tape.slice_cols(xw, 2 * dim, dim);
        let n_lin = self.tape.add(xn, rhu);
        let n = self.tape.tanh(n_lin);
        let diff = self.tape.sub(n, h);
        let step = self.tape.mul(z, diff);
        self.tape.add(h, step)
    }

    /// GRU input projection for all rows at once.
    pub fn gru_inputs(&mut self, x: Var, prefix: &str) -> Var {
        let w = self.param(&format!("{prefix}.w_x"));
        let b = self.param(&format!("{prefix}.b"));
        let xw = self.tape.matmul(x, w);
        self.tape.add_row(xw, b)
    }

    /// Runs a GRU over every row of `x`, forward or reversed, from a zero
    /// state. Output rows stay aligned with input rows.
    pub fn gru_sequence(&mut self, x: Var, prefix: &str, hidden: usize, reverse: bool) -> Var {
        let t_len = self.value(x).nrows();
        let xw = self.gru_inputs(x, prefix);
        let mut h = self.tape.constant(Array2::zeros((1, hidden)));
        let mut outputs = vec![h; t_len];
        let order: Vec<usize> = if reverse {
            (0..t_len).rev().collect()
        } else {
            (0..t_len).collect()
        };
        for t in order {
            let row = self.tape.slice_rows(xw, t, 1);
            h = self.gru_cell(row, h, prefix);
            outputs[t] = h;
        }
        self.tape.concat_rows(&outputs)
    }

    pub fn bigru(&mut self, x: Var, prefix: &str) -> Var {
        let g = self.cfg.gru_dim;
        let fw = self.gru_sequence(x, &format!("{prefix}.gru_fw"), g, false);
        let bw = self.gru_sequence(x, &format!("{prefix}.gru_bw"), g, true);
        self.tape.concat_cols(&[fw, bw])
    }

    /// Convolution bank, max-pool, projections, residual, highways, BiGRU.
    pub fn cbhg(&mut self, x: Var, prefix: &str, in_dim: usize) -> Result<Var, ModelError> {
        let (t_len, width) = self.value(x).dim();
        if t_len == 0 {
            return Err(ModelError::EmptyInput);
        }
        if width != in_dim {
            return Err(ModelError::InvalidConfig(format!(
                "{prefix}: residual input has {width} channels, projections produce {in_dim}"
            )));
        }
        let mut bank = Vec::with_capacity(self.cfg.encoder_bank_k);
        for k in 1..=self.cfg.encoder_bank_k {
            let p = format!("{prefix}.bank.{k}");
            let c = self.conv1d(x, &p, k, true);
            let a = self.tape.relu(c);
            bank.push(self.batch_norm(a, &format!("{p}.bn")));
        }
        let stacked = self.tape.concat_cols(&bank);
        let pooled = self.tape.max_pool2(stacked);
        let p1 = self.conv1d(pooled, &format!("{prefix}.proj1"), 3, true);
        let p1 = self.tape.relu(p1);
        let p1 = self.batch_norm(p1, &format!("{prefix}.proj1.bn"));
        let p2 = self.conv1d(p1, &format!("{prefix}.proj2"), 3, false);
        let p2 = self.batch_norm(p2, &format!("{prefix}.proj2.bn"));
        let mut h = self.tape.add(p2, x);
        for l in 0..self.cfg.highway_layers {
            h = self.highway_layer(h, &format!("{prefix}.highway.{l}"));
        }
        Ok(self.bigru(h, prefix))
    }

    /// Additive attention. `keys` is `memory W_m`, computed once per pass.
    /// Returns `(context 1 x enc, weights 1 x T_enc)`.
    pub fn attention(&mut self, query: Var, memory: Var, keys: Var) -> (Var, Var) {
        let w_q = self.param("decoder.attention.w_q");
        let v = self.param("decoder.attention.v");
        let q = self.tape.matmul(query, w_q);
        let summed = self.tape.add_row(keys, q);
        let e = self.tape.tanh(summed);
        let scores = self.tape.matmul(e, v);
        let scores_row = self.tape.transpose(scores);
        let weights = self.tape.softmax_rows(scores_row);
        let context = self.tape.matmul(weights, memory);
        (context, weights)
    }

    /// Updates running statistics in `params` from this pass.
    pub fn apply_batch_stats(stats: &[BatchStats], params: &mut ModelParams, momentum: f64) {
        for s in stats {
            for (key, batch) in [("running_mean", &s.mean), ("running_var", &s.var)] {
                if let Some(t) = params.get_mut(&format!("{}.{key}", s.prefix)) {
                    for (r, b) in t.iter_mut().zip(batch) {
                        *r = momentum * *r + (1.0 - momentum) * b;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;
    use ndarray::array;

    fn small_cfg() -> ModelConfig {
        ModelConfig {
            vocab_size: 5,
            embed_dim: 2,
            prenet_dims: vec![2, 2],
            prenet_dropout: 0.0,
            encoder_bank_k: 2,
            conv_channels: 2,
            highway_layers: 1,
            gru_dim: 2,
            attention_dim: 2,
            decoder_layers: 1,
            mel_bands: 2,
            linear_bins: 3,
            reduction_r: 1,
            ..ModelConfig::default()
        }
    }

    fn set(params: &mut ModelParams, name: &str, v: Array2<f64>) {
        *params.get_mut(name).unwrap() = v;
    }

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    #[test]
    fn prenet_matches_manual_chain() {
        let cfg = small_cfg();
        let mut p = init_params(&cfg).unwrap();
        set(&mut p, "encoder.prenet.0.w", array![[1.0, -2.0], [0.5, 1.0]]);
        set(&mut p, "encoder.prenet.0.b", array![[0.1, 0.2]]);
        set(&mut p, "encoder.prenet.1.w", array![[2.0, 0.0], [-1.0, 1.0]]);
        set(&mut p, "encoder.prenet.1.b", array![[0.0, -0.5]]);
        let mut g = Graph::new(&p, &cfg, false, 0);
        let x = g.tape.constant(array![[1.0, 2.0], [-1.0, 0.5]]);
        let y = g.prenet(x, "encoder.prenet");
        // row 0: [1,2]W1 + b1 = [2.1, 0.2] -> relu same; W2: [4.2-0.2, 0.2] + b2 = [4.0, -0.3] -> [4.0, 0]
        // row 1: [-1,0.5]W1 + b1 = [-0.65, 2.7] -> [0, 2.7]; W2: [-2.7, 2.7] + b2 -> [0, 2.2]
        let expected = array![[4.0, 0.0], [0.0, 2.2]];
        for (a, b) in g.value(y).iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn prenet_zero_input_zero_bias_is_zero() {
        let cfg = ModelConfig {
            prenet_dropout: 0.5,
            ..small_cfg()
        };
        let p = init_params(&cfg).unwrap();
        let mut g = Graph::new(&p, &cfg, true, 3);
        let x = g.tape.constant(Array2::zeros((4, 2)));
        let y = g.prenet(x, "encoder.prenet");
        assert!(g.value(y).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn dropout_is_seed_pinned() {
        let cfg = ModelConfig {
            prenet_dropout: 0.5,
            prenet_dims: vec![32],
            ..small_cfg()
        };
        let p = init_params(&cfg).unwrap();
        let run = |seed| {
            let mut g = Graph::new(&p, &cfg, false, seed);
            let x = g.tape.constant(Array2::ones((6, 2)));
            let y = g.prenet(x, "encoder.prenet");
            g.value(y).clone()
        };
        assert_eq!(run(5), run(5));
        assert_ne!(run(5), run(6));
    }

    #[test]
    fn highway_gate_extremes_and_manual() {
        let cfg = small_cfg();
        let mut p = init_params(&cfg).unwrap();
        let pre = "encoder.cbhg.highway.0";
        set(&mut p, &format!("{pre}.h.w"), array![[1.0, 2.0], [-1.0, 0.5]]);
        set(&mut p, &format!("{pre}.h.b"), array![[0.5, -0.5]]);
        set(&mut p, &format!("{pre}.t.w"), array![[0.3, -0.2], [0.1, 0.4]]);
        let x_val = array![[0.7, -1.2]];
        let run = |p: &ModelParams| {
            let mut g = Graph::new(p, &cfg, false, 0);
            let x = g.tape.constant(x_val.clone());
            let y = g.highway_layer(x, pre);
            g.value(y).clone()
        };
        set(&mut p, &format!("{pre}.t.b"), array![[-20.0, -20.0]]);
        let closed = run(&p);
        assert!(closed.iter().zip(x_val.iter()).all(|(a, b)| (a - b).abs() < 1e-6));
        set(&mut p, &format!("{pre}.t.b"), array![[20.0, 20.0]]);
        let open = run(&p);
        // H = relu([0.7+1.2+0.5, 1.4-0.6-0.5]) = [2.4, 0.3]
        assert!((open[[0, 0]] - 2.4).abs() < 1e-6 && (open[[0, 1]] - 0.3).abs() < 1e-6);
        set(&mut p, &format!("{pre}.t.b"), array![[0.1, -0.3]]);
        let mixed = run(&p);
        let t0 = sig(0.7 * 0.3 - 1.2 * 0.1 + 0.1);
        let t1 = sig(-0.7 * 0.2 - 1.2 * 0.4 - 0.3);
        let expected = [2.4 * t0 + 0.7 * (1.0 - t0), 0.3 * t1 - 1.2 * (1.0 - t1)];
        assert!((mixed[[0, 0]] - expected[0]).abs() < 1e-12);
        assert!((mixed[[0, 1]] - expected[1]).abs() < 1e-12);
    }

    #[test]
    fn gru_step_at_dim_one_matches_closed_form() {
        let cfg = ModelConfig {
            gru_dim: 1,
            ..small_cfg()
        };
        let mut p = init_params(&cfg).unwrap();
        let pre = "encoder.cbhg.gru_fw";
        set(&mut p, &format!("{pre}.u_zr"), array![[0.4, -0.6]]);
        set(&mut p, &format!("{pre}.u_h"), array![[0.9]]);
        let mut g = Graph::new(&p, &cfg, false, 0);
        // xw already includes x W_x + b for the three gates.
        let xw = g.tape.constant(array![[0.2, -0.1, 0.3]]);
        let h0 = 0.5;
        let h = g.tape.constant(array![[h0]]);
        let out = g.gru_cell(xw, h, pre);
        let z = sig(0.2 + 0.4 * h0);
        let r = sig(-0.1 - 0.6 * h0);
        let n = (0.3 + 0.9 * r * h0).tanh();
        let expected = (1.0 - z) * h0 + z * n;
        assert!((g.value(out)[[0, 0]] - expected).abs() < 1e-10);
    }

    #[test]
    fn batch_norm_identity_on_standardized_input() {
        let cfg = small_cfg();
        let p = init_params(&cfg).unwrap();
        let mut g = Graph::new(&p, &cfg, true, 0);
        let s = std::f64::consts::SQRT_2;
        let x_val: Array2<f64> = array![[1.0, s], [-1.0, 0.0], [1.0, 0.0], [-1.0, -s]];
        for c in x_val.columns() {
            assert!(c.sum().abs() < 1e-12 && (c.mapv(|v| v * v).sum() / 4.0 - 1.0).abs() < 1e-12);
        }
        let x = g.tape.constant(x_val.clone());
        let y = g.batch_norm(x, "encoder.cbhg.bank.1.bn");
        for (a, b) in g.value(y).iter().zip(x_val.iter()) {
            assert!((a - b).abs() < 1e-5);
        }
        // Fresh running statistics (mean 0, var 1) make inference the same map.
        let mut gi = Graph::new(&p, &cfg, false, 0);
        let xi = gi.tape.constant(x_val.clone());
        let yi = gi.batch_norm(xi, "encoder.cbhg.bank.1.bn");
        for (a, b) in gi.value(yi).iter().zip(x_val.iter()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn running_stats_update() {
        let cfg = small_cfg();
        let mut p = init_params(&cfg).unwrap();
        let stats = vec![BatchStats {
            prefix: "encoder.cbhg.bank.1.bn".into(),
            mean: vec![1.0, 2.0],
            var: vec![3.0, 5.0],
        }];
        Graph::apply_batch_stats(&stats, &mut p, 0.75);
        assert_eq!(
            p.get("encoder.cbhg.bank.1.bn.running_mean").unwrap(),
            &array![[0.25, 0.5]]
        );
        assert_eq!(
            p.get("encoder.cbhg.bank.1.bn.running_var").unwrap(),
            &array![[1.5, 2.0]]
        );
    }

    /// A standalone GRU over plain vectors.
    fn gru_oracle(p: &ModelParams, prefix: &str, x: &Array2<f64>, reverse: bool) -> Array2<f64> {
        let w_x = p.get(&format!("{prefix}.w_x")).unwrap();
        let u_zr = p.get(&format!("{prefix}.u_zr")).unwrap();
        let u_h = p.get(&format!("{prefix}.u_h")).unwrap();
        let b = p.get(&format!("{prefix}.b")).unwrap();
        let hd = u_h.nrows();
        let mut out = Array2::zeros((x.nrows(), hd));
        let mut h = vec![0.0; hd];
        let order: Vec<usize> = if reverse {
            (0..x.nrows()).rev().collect()
        } else {
            (0..x.nrows()).collect()
        };
        for t in order {
            let lin =
                |col: usize| -> f64 { (0..x.ncols()).map(|i| x[[t, i]] * w_x[[i, col]]).sum::<f64>() + b[[0, col]] };
            let rec = |col: usize, h: &[f64]| -> f64 { (0..hd).map(|i| h[i] * u_zr[[i, col]]).sum() };
            let z: Vec<f64> = (0..hd).map(|j| sig(lin(j) + rec(j, &h))).collect();
            let r: Vec<f64> = (0..hd).map(|j| sig(lin(hd + j) + rec(hd + j, &h))).collect();
            let rh: Vec<f64> = (0..hd).map(|i| r[i] * h[i]).collect();
            let n: Vec<f64> = (0..hd)
                .map(|j| (lin(2 * hd + j) + (0..hd).map(|i| rh[i] * u_h[[i, j]]).sum::<f64>()).tanh())
                .collect();
            h = (0..hd).map(|j| (1.0 - z[j]) * h[j] + z[j] * n[j]).collect();
            for j in 0..hd {
                out[[t, j]] = h[j];
            }
        }
        out
    }

    #[test]
    fn cbhg_with_zeroed_convs_and_highways_is_a_bigru() {
        let cfg = ModelConfig {
            highway_layers: 2,
            gru_dim: 3,
            ..small_cfg()
        };
        let mut p = init_params(&cfg).unwrap();
        let names: Vec<String> = p.names().map(str::to_string).collect();
        for name in &names {
            let zero = name.starts_with("encoder.cbhg.bank")
                || name.starts_with("encoder.cbhg.proj")
                || (name.starts_with("encoder.cbhg.highway") && !name.ends_with("t.b"));
            if zero && !name.contains("running") && !name.ends_with("gamma") {
                p.get_mut(name).unwrap().fill(0.0);
            }
            if name.starts_with("encoder.cbhg.highway") && name.ends_with("t.b") {
                p.get_mut(name).unwrap().fill(-40.0);
            }
        }
        let x_val = array![[0.3, -0.2], [1.0, 0.4], [-0.7, 0.9], [0.2, 0.2], [0.5, -1.1]];
        for training in [true, false] {
            let mut g = Graph::new(&p, &cfg, training, 0);
            let x = g.tape.constant(x_val.clone());
            let y = g.cbhg(x, "encoder.cbhg", 2).unwrap();
            let fw = gru_oracle(&p, "encoder.cbhg.gru_fw", &x_val, false);
            let bw = gru_oracle(&p, "encoder.cbhg.gru_bw", &x_val, true);
            let out = g.value(y);
            assert_eq!(out.dim(), (5, 6));
            for t in 0..5 {
                for j in 0..3 {
                    assert!((out[[t, j]] - fw[[t, j]]).abs() < 1e-12);
                    assert!((out[[t, 3 + j]] - bw[[t, j]]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn cbhg_keeps_length_and_checks_width() {
        let cfg = small_cfg();
        let p = init_params(&cfg).unwrap();
        for t_len in [1usize, 2, 3, 5, 8, 13, 4, 7, 11, 20] {
            let mut g = Graph::new(&p, &cfg, false, 0);
            let x = g.tape.constant(Array2::from_shape_fn((t_len, 2), |(i, j)| {
                (i as f64 * 0.3 - j as f64).sin()
            }));
            let y = g.cbhg(x, "encoder.cbhg", 2).unwrap();
            assert_eq!(g.value(y).dim(), (t_len, 4));
        }
        let mut g = Graph::new(&p, &cfg, false, 0);
        let bad = g.tape.constant(Array2::zeros((3, 5)));
        assert!(matches!(
            g.cbhg(bad, "encoder.cbhg", 2),
            Err(ModelError::InvalidConfig(_))
        ));
        let empty = g.tape.constant(Array2::zeros((0, 2)));
        assert!(matches!(g.cbhg(empty, "encoder.cbhg", 2), Err(ModelError::EmptyInput)));
    }

    #[test]
    fn attention_manual_oracle() {
        let cfg = small_cfg();
        let mut p = init_params(&cfg).unwrap();
        set(&mut p, "decoder.attention.w_q", array![[1.0, 0.0], [0.5, -1.0]]);
        set(
            &mut p,
            "decoder.attention.w_m",
            array![[0.2, 0.1, 0.0, -0.3], [0.4, -0.2, 0.3, 0.1]].t().to_owned(),
        );
        set(&mut p, "decoder.attention.v", array![[1.5], [-0.5]]);
        let memory_val = array![[1.0, 0.0, 0.5, -0.5], [0.0, 1.0, -1.0, 0.2], [0.3, 0.3, 0.3, 0.3]];
        let query_val = array![[0.4, -0.8]];
        let mut g = Graph::new(&p, &cfg, false, 0);
        let memory = g.tape.constant(memory_val.clone());
        let w_m = g.param("decoder.attention.w_m");
        let keys = g.tape.matmul(memory, w_m);
        let query = g.tape.constant(query_val.clone());
        let (ctx, w) = g.attention(query, memory, keys);
        // q W_q = [0.4 - 0.4, 0.8] = [0, 0.8]
        let q = [0.0, 0.8];
        let wm = p.get("decoder.attention.w_m").unwrap();
        let scores: Vec<f64> = (0..3)
            .map(|j| {
                let k: Vec<f64> = (0..2)
                    .map(|a| (0..4).map(|i| memory_val[[j, i]] * wm[[i, a]]).sum())
                    .collect();
                1.5 * (k[0] + q[0]).tanh() - 0.5 * (k[1] + q[1]).tanh()
            })
            .collect();
        let z: f64 = scores.iter().map(|s| s.exp()).sum();
        let weights: Vec<f64> = scores.iter().map(|s| s.exp() / z).collect();
        for (j, want) in weights.iter().enumerate() {
            assert!((g.value(w)[[0, j]] - want).abs() < 1e-12);
        }
        for c in 0..4 {
            let expected: f64 = (0..3).map(|j| weights[j] * memory_val[[j, c]]).sum();
            assert!((g.value(ctx)[[0, c]] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_single_state_and_random_rows() {
        use rand::{Rng, SeedableRng};
        let cfg = small_cfg();
        let p = init_params(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut g = Graph::new(&p, &cfg, false, 0);
        let w_m = g.param("decoder.attention.w_m");
        let single = g.tape.constant(array![[0.1, -0.4, 2.0, 0.3]]);
        let keys = g.tape.matmul(single, w_m);
        let q = g.tape.constant(array![[3.0, -2.0]]);
        let (ctx, w) = g.attention(q, single, keys);
        assert_eq!(g.value(w), &array![[1.0]]);
        assert_eq!(g.value(ctx), g.value(single));
        for _ in 0..100 {
            let t_len = rng.gen_range(1..20);
            let scale = rng.gen_range(0.1..50.0);
            let m = g
                .tape
                .constant(Array2::from_shape_fn((t_len, 4), |_| rng.gen_range(-scale..scale)));
            let k = g.tape.matmul(m, w_m);
            let q = g
                .tape
                .constant(Array2::from_shape_fn((1, 2), |_| rng.gen_range(-scale..scale)));
            let (_, w) = g.attention(q, m, k);
            let row = g.value(w);
            assert!((row.sum() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
