//! Network building blocks on top of the autodiff graph: linear/MLP
//! stacks, an LSTM cell, scaled dot-product self-attention, and the
//! conv/pool board encoder. Each block registers its parameters in a
//! [`ParamSet`] under a caller-chosen prefix and is a pure function of
//! (params, input) afterwards.

use rand::Rng;
use rand_chacha::ChaCha20Rng;

use crate::autodiff::{zeros, Arr, Padding, ParamSet, Var};

/// Weight initialization families. Biases always start at zero unless a
/// block documents otherwise (LSTM forget gate).
#[derive(Clone, Copy, Debug)]
pub enum Init {
    /// Uniform with bound sqrt(6 / fan_in); suits ReLU stacks.
    Kaiming,
    /// Uniform with bound sqrt(6 / (fan_in + fan_out)); suits linear maps
    /// feeding softmax or sigmoid.
    Xavier,
    /// Uniform with an explicit bound.
    Bound(f64),
}

fn init_bound(init: Init, fan_in: usize, fan_out: usize) -> f64 {
    match init {
        Init::Kaiming => (6.0 / fan_in as f64).sqrt(),
        Init::Xavier => (6.0 / (fan_in + fan_out) as f64).sqrt(),
        Init::Bound(b) => b,
    }
}

fn uniform_arr(shape: &[usize], bound: f64, rng: &mut ChaCha20Rng) -> Arr {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|_| rng.random::<f64>() * 2.0 * bound - bound)
        .collect();
    crate::autodiff::arr_from(shape, data)
}

/// Freshly drawn weight array for blocks assembled outside this module
/// (e.g. bespoke conv stacks); fan sizes feed the init family's bound.
pub fn init_array(
    shape: &[usize],
    init: Init,
    fan_in: usize,
    fan_out: usize,
    rng: &mut ChaCha20Rng,
) -> Arr {
    uniform_arr(shape, init_bound(init, fan_in, fan_out), rng)
}

/// Affine map `x·W + b` with `W: [in, out]`. Accepts a single input
/// vector or a `[batch, in]` matrix.
pub struct Linear {
    pub w: Var,
    pub b: Var,
}

impl Linear {
    pub fn new(
        params: &mut ParamSet,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
        init: Init,
        rng: &mut ChaCha20Rng,
    ) -> Linear {
        let bound = init_bound(init, in_dim, out_dim);
        Linear {
            w: params.param(&format!("{prefix}/w"), uniform_arr(&[in_dim, out_dim], bound, rng)),
            b: params.param(&format!("{prefix}/b"), zeros(&[out_dim])),
        }
    }

    pub fn forward(&self, x: &Var) -> Var {
        x.matmul(&self.w).add(&self.b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputActivation {
    None,
    Sigmoid,
    Tanh,
}

/// Fully connected stack: ReLU between layers, configurable activation on
/// the last. `widths` lists each layer's output size.
pub struct Mlp {
    layers: Vec<Linear>,
    out_act: OutputActivation,
}

impl Mlp {
    pub fn new(
        params: &mut ParamSet,
        prefix: &str,
        in_dim: usize,
        widths: &[usize],
        out_act: OutputActivation,
        rng: &mut ChaCha20Rng,
    ) -> Mlp {
        assert!(!widths.is_empty(), "mlp needs at least one layer");
        assert!(widths.iter().all(|&w| w > 0), "mlp widths must be positive");
        let mut layers = Vec::with_capacity(widths.len());
        let mut prev = in_dim;
        for (i, &w) in widths.iter().enumerate() {
            // Hidden layers feed ReLU; the output layer matches whatever
            // follows it.
            let init = if i + 1 < widths.len() {
                Init::Kaiming
            } else {
                match out_act {
                    OutputActivation::None => Init::Kaiming,
                    _ => Init::Xavier,
                }
            };
            layers.push(Linear::new(
                params,
                &format!("{prefix}/l{i}"),
                prev,
                w,
                init,
                rng,
            ));
            prev = w;
        }
        Mlp { layers, out_act }
    }

    pub fn forward(&self, x: &Var) -> Var {
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h);
            if i + 1 < self.layers.len() {
                h = h.relu();
            }
        }
        match self.out_act {
            OutputActivation::None => h,
            OutputActivation::Sigmoid => h.sigmoid(),
            OutputActivation::Tanh => h.tanh(),
        }
    }

    /// Like [`Mlp::forward`] but applies dropout after every hidden ReLU.
    pub fn forward_dropout(
        &self,
        x: &Var,
        rate: f64,
        train: bool,
        rng: &mut ChaCha20Rng,
    ) -> Var {
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h);
            if i + 1 < self.layers.len() {
                h = h.relu().dropout(rate, train, rng);
            }
        }
        match self.out_act {
            OutputActivation::None => h,
            OutputActivation::Sigmoid => h.sigmoid(),
            OutputActivation::Tanh => h.tanh(),
        }
    }
}

/// Recurrent state threaded through [`LstmCell::step`].
#[derive(Clone)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl LstmState {
    pub fn zeros(width: usize) -> LstmState {
        LstmState {
            h: Var::constant(zeros(&[width])),
            c: Var::constant(zeros(&[width])),
        }
    }
}

/// Single LSTM cell with gates packed `[input, forget, candidate, output]`
/// along one `[*, 4·hidden]` weight pair. Forget bias starts at 1.0 so
/// early training remembers by default.
pub struct LstmCell {
    wx: Var,
    wh: Var,
    b: Var,
    hidden: usize,
}

impl LstmCell {
    pub fn new(
        params: &mut ParamSet,
        prefix: &str,
        in_dim: usize,
        hidden: usize,
        rng: &mut ChaCha20Rng,
    ) -> LstmCell {
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut bias = zeros(&[4 * hidden]);
        for i in hidden..2 * hidden {
            bias[[i]] = 1.0;
        }
        LstmCell {
            wx: params.param(
                &format!("{prefix}/wx"),
                uniform_arr(&[in_dim, 4 * hidden], bound, rng),
            ),
            wh: params.param(
                &format!("{prefix}/wh"),
                uniform_arr(&[hidden, 4 * hidden], bound, rng),
            ),
            b: {
                let v = Var::param(bias);
                params.register(&format!("{prefix}/b"), v.clone());
                v
            },
            hidden,
        }
    }

    pub fn step(&self, x: &Var, state: &LstmState) -> LstmState {
        let h = self.hidden;
        let z = x.matmul(&self.wx).add(&state.h.matmul(&self.wh)).add(&self.b);
        let i = z.slice(0, 0, h).sigmoid();
        let f = z.slice(0, h, 2 * h).sigmoid();
        let g = z.slice(0, 2 * h, 3 * h).tanh();
        let o = z.slice(0, 3 * h, 4 * h).sigmoid();
        let c = f.mul(&state.c).add(&i.mul(&g));
        let hidden = o.mul(&c.tanh());
        LstmState { h: hidden, c }
    }
}

/// Dimensions of one attention block.
#[derive(Clone, Copy, Debug)]
pub struct AttentionSpec {
    pub model_dim: usize,
    pub key_dim: usize,
    pub value_dim: usize,
    pub heads: usize,
}

impl AttentionSpec {
    /// Single head, key and value dims equal to the model dim.
    pub fn square(model_dim: usize) -> AttentionSpec {
        AttentionSpec {
            model_dim,
            key_dim: model_dim,
            value_dim: model_dim,
            heads: 1,
        }
    }
}

/// Scaled dot-product self-attention over a `[T, model_dim]` sequence,
/// no positional encoding.
pub struct SelfAttention {
    spec: AttentionSpec,
    wq: Vec<Var>,
    wk: Vec<Var>,
    wv: Vec<Var>,
    wo: Var,
}

impl SelfAttention {
    pub fn new(
        params: &mut ParamSet,
        prefix: &str,
        spec: AttentionSpec,
        rng: &mut ChaCha20Rng,
    ) -> SelfAttention {
        assert!(spec.heads >= 1, "attention needs at least one head");
        assert!(
            spec.model_dim > 0 && spec.key_dim > 0 && spec.value_dim > 0,
            "attention dims must be positive"
        );
        let d = spec.model_dim;
        let mk = |params: &mut ParamSet, name: String, rows: usize, cols: usize, rng: &mut ChaCha20Rng| {
            params.param(&name, uniform_arr(&[rows, cols], init_bound(Init::Xavier, rows, cols), rng))
        };
        let mut wq = Vec::new();
        let mut wk = Vec::new();
        let mut wv = Vec::new();
        for h in 0..spec.heads {
            wq.push(mk(params, format!("{prefix}/h{h}/q"), d, spec.key_dim, rng));
            wk.push(mk(params, format!("{prefix}/h{h}/k"), d, spec.key_dim, rng));
            wv.push(mk(params, format!("{prefix}/h{h}/v"), d, spec.value_dim, rng));
        }
        let wo = mk(params, format!("{prefix}/o"), spec.heads * spec.value_dim, d, rng);
        SelfAttention { spec, wq, wk, wv, wo }
    }

    pub fn forward(&self, x: &Var) -> Var {
        self.forward_with_weights(x).0
    }

    /// Returns the output and each head's `[T, T]` attention matrix
    /// (rows sum to 1).
    pub fn forward_with_weights(&self, x: &Var) -> (Var, Vec<Var>) {
        let shape = x.shape();
        assert_eq!(shape.len(), 2, "attention input must be [t, model_dim]");
        assert_eq!(shape[1], self.spec.model_dim, "attention model_dim mismatch");
        let inv_sqrt = 1.0 / (self.spec.key_dim as f64).sqrt();
        let mut outs = Vec::with_capacity(self.spec.heads);
        let mut weights = Vec::with_capacity(self.spec.heads);
        for h in 0..self.spec.heads {
            let q = x.matmul(&self.wq[h]);
            let k = x.matmul(&self.wk[h]);
            let v = x.matmul(&self.wv[h]);
            let a = q.matmul(&k.transpose()).scale(inv_sqrt).softmax(1);
            weights.push(a.clone());
            outs.push(a.matmul(&v));
        }
        let cat = if outs.len() == 1 {
            outs.pop().unwrap()
        } else {
            let refs: Vec<&Var> = outs.iter().collect();
            Var::concat(&refs, 1)
        };
        (cat.matmul(&self.wo), weights)
    }
}

/// Board-to-vector front end: 5×5 same-padded convolution, ReLU, zero pad
/// to even height/width, 2×2 max pool, flatten, fully connected layer,
/// ReLU. Output width is `embed_dim` for any fixed board size.
pub struct ConvEncoder {
    kernel: Var,
    fc: Linear,
    in_shape: (usize, usize, usize),
}

impl ConvEncoder {
    pub fn new(
        params: &mut ParamSet,
        prefix: &str,
        height: usize,
        width: usize,
        channels: usize,
        filters: usize,
        kernel_size: usize,
        embed_dim: usize,
        rng: &mut ChaCha20Rng,
    ) -> ConvEncoder {
        assert!(kernel_size % 2 == 1, "conv encoder kernel must be odd");
        let fan_in = kernel_size * kernel_size * channels;
        let kernel = params.param(
            &format!("{prefix}/conv"),
            uniform_arr(
                &[kernel_size, kernel_size, channels, filters],
                (6.0 / fan_in as f64).sqrt(),
                rng,
            ),
        );
        let pooled_h = height.div_ceil(2);
        let pooled_w = width.div_ceil(2);
        let fc = Linear::new(
            params,
            &format!("{prefix}/fc"),
            pooled_h * pooled_w * filters,
            embed_dim,
            Init::Kaiming,
            rng,
        );
        ConvEncoder {
            kernel,
            fc,
            in_shape: (height, width, channels),
        }
    }

    pub fn forward(&self, x: &Var) -> Var {
        let (h, w, c) = self.in_shape;
        assert_eq!(x.shape(), vec![h, w, c], "conv encoder input shape");
        let conv = x.conv2d(&self.kernel, 1, Padding::Same).relu();
        let padded = conv.pad(&[(0, h % 2), (0, w % 2), (0, 0)]);
        let pooled = padded.maxpool2d(2);
        self.fc.forward(&pooled.flatten()).relu()
    }
}
