use ndarray::{concatenate, Array2, Array3, Array4, ArrayView1, Axis, Ix1, Ix2, Ix3, Ix4, IxDyn,
              Slice, Zip};
use rand::Rng;
use rand_chacha::ChaCha20Rng;

use super::graph::Var;
use super::{arr_from, zeros, Arr};

/// Spatial padding mode for [`Var::conv2d`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// No padding; output shrinks by kernel−1.
    Valid,
    /// Zero padding that preserves height and width (odd kernels, stride 1).
    Same,
}

#[derive(Clone)]
pub(crate) enum Op {
    Leaf,
    Add,
    /// Second parent is a 1-D bias broadcast over the last axis.
    AddBias,
    Sub,
    Mul,
    Neg,
    Scale(f64),
    Matmul,
    Transpose,
    Relu,
    Sigmoid,
    Tanh,
    Softmax {
        axis: usize,
    },
    Conv2d {
        stride: usize,
        pad: (usize, usize),
    },
    MaxPool2d {
        /// Flat row-major input index of each window's argmax, in output order.
        switches: Vec<usize>,
    },
    Pad {
        widths: Vec<(usize, usize)>,
    },
    Concat {
        axis: usize,
        sizes: Vec<usize>,
    },
    Slice {
        axis: usize,
        start: usize,
    },
    SumAxis {
        axis: usize,
    },
    SumAll,
    Mean,
    Dropout {
        /// Kept entries hold 1/(1−rate), dropped entries 0.
        mask: Arr,
    },
    Mse,
    Reshape,
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add => "add",
            Op::AddBias => "add_bias",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Neg => "neg",
            Op::Scale(_) => "scale",
            Op::Matmul => "matmul",
            Op::Transpose => "transpose",
            Op::Relu => "relu",
            Op::Sigmoid => "sigmoid",
            Op::Tanh => "tanh",
            Op::Softmax { .. } => "softmax",
            Op::Conv2d { .. } => "conv2d",
            Op::MaxPool2d { .. } => "maxpool2d",
            Op::Pad { .. } => "pad",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::SumAxis { .. } => "sum_axis",
            Op::SumAll => "sum_all",
            Op::Mean => "mean",
            Op::Dropout { .. } => "dropout",
            Op::Mse => "mse",
            Op::Reshape => "reshape",
        }
    }
}

fn scalar_of(a: &Arr) -> f64 {
    debug_assert_eq!(a.len(), 1);
    *a.iter().next().unwrap()
}

fn outer(u: ArrayView1<f64>, v: ArrayView1<f64>) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros((u.len(), v.len()));
    for i in 0..u.len() {
        for j in 0..v.len() {
            out[[i, j]] = u[i] * v[j];
        }
    }
    out
}

impl Var {
    /// Elementwise sum, or bias addition when `rhs` is a 1-D vector
    /// matching the last axis of a higher-rank `self`.
    pub fn add(&self, rhs: &Var) -> Var {
        let a = self.value();
        let b = rhs.value();
        if a.shape() == b.shape() {
            Var::from_node(&a + &b, vec![self.clone(), rhs.clone()], Op::Add)
        } else if b.ndim() == 1 && a.ndim() > 1 && a.shape()[a.ndim() - 1] == b.len() {
            Var::from_node(&a + &b, vec![self.clone(), rhs.clone()], Op::AddBias)
        } else {
            panic!(
                "add: incompatible shapes {:?} and {:?}",
                a.shape(),
                b.shape()
            );
        }
    }

    pub fn sub(&self, rhs: &Var) -> Var {
        let a = self.value();
        let b = rhs.value();
        assert_eq!(a.shape(), b.shape(), "sub: shape mismatch");
        Var::from_node(&a - &b, vec![self.clone(), rhs.clone()], Op::Sub)
    }

    /// Elementwise product; shapes must match exactly.
    pub fn mul(&self, rhs: &Var) -> Var {
        let a = self.value();
        let b = rhs.value();
        assert_eq!(a.shape(), b.shape(), "mul: shape mismatch");
        Var::from_node(&a * &b, vec![self.clone(), rhs.clone()], Op::Mul)
    }

    pub fn neg(&self) -> Var {
        Var::from_node(self.value().mapv(|x| -x), vec![self.clone()], Op::Neg)
    }

    /// Multiplication by a compile-time constant (not differentiated w.r.t. `c`).
    pub fn scale(&self, c: f64) -> Var {
        assert!(c.is_finite(), "scale factor must be finite");
        Var::from_node(self.value().mapv(|x| c * x), vec![self.clone()], Op::Scale(c))
    }

    /// Matrix/vector product over 1-D and 2-D operands. 1-D · 1-D is the
    /// dot product and yields shape `[1]`.
    pub fn matmul(&self, rhs: &Var) -> Var {
        let a = self.value();
        let b = rhs.value();
        let out: Arr = match (a.ndim(), b.ndim()) {
            (1, 1) => {
                assert_eq!(a.len(), b.len(), "matmul: vector lengths differ");
                let a1 = a.view().into_dimensionality::<Ix1>().unwrap();
                let b1 = b.view().into_dimensionality::<Ix1>().unwrap();
                arr_from(&[1], vec![a1.dot(&b1)])
            }
            (1, 2) => {
                let a1 = a.view().into_dimensionality::<Ix1>().unwrap();
                let b2 = b.view().into_dimensionality::<Ix2>().unwrap();
                assert_eq!(a1.len(), b2.nrows(), "matmul: inner dims differ");
                a1.dot(&b2).into_dyn()
            }
            (2, 1) => {
                let a2 = a.view().into_dimensionality::<Ix2>().unwrap();
                let b1 = b.view().into_dimensionality::<Ix1>().unwrap();
                assert_eq!(a2.ncols(), b1.len(), "matmul: inner dims differ");
                a2.dot(&b1).into_dyn()
            }
            (2, 2) => {
                let a2 = a.view().into_dimensionality::<Ix2>().unwrap();
                let b2 = b.view().into_dimensionality::<Ix2>().unwrap();
                assert_eq!(a2.ncols(), b2.nrows(), "matmul: inner dims differ");
                a2.dot(&b2).into_dyn()
            }
            (x, y) => panic!("matmul: unsupported ranks {x} and {y}"),
        };
        Var::from_node(out, vec![self.clone(), rhs.clone()], Op::Matmul)
    }

    pub fn transpose(&self) -> Var {
        let a = self.value();
        assert_eq!(a.ndim(), 2, "transpose: 2-D only");
        Var::from_node(a.t().to_owned(), vec![self.clone()], Op::Transpose)
    }

    pub fn relu(&self) -> Var {
        Var::from_node(
            self.value().mapv(|x| x.max(0.0)),
            vec![self.clone()],
            Op::Relu,
        )
    }

    pub fn sigmoid(&self) -> Var {
        Var::from_node(
            self.value().mapv(|x| 1.0 / (1.0 + (-x).exp())),
            vec![self.clone()],
            Op::Sigmoid,
        )
    }

    pub fn tanh(&self) -> Var {
        Var::from_node(self.value().mapv(f64::tanh), vec![self.clone()], Op::Tanh)
    }

    /// Softmax along one axis, max-shifted for stability.
    pub fn softmax(&self, axis: usize) -> Var {
        let a = self.value();
        assert!(axis < a.ndim(), "softmax: axis out of range");
        let mut out = a.clone();
        for mut lane in out.lanes_mut(Axis(axis)).into_iter() {
            let m = lane.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            lane.mapv_inplace(|x| (x - m).exp());
            let s = lane.sum();
            lane.mapv_inplace(|x| x / s);
        }
        Var::from_node(out, vec![self.clone()], Op::Softmax { axis })
    }

    /// 2-D convolution of an `[h, w, c_in]` input with a
    /// `[kh, kw, c_in, c_out]` kernel. Output is
    /// `[(h + 2p − kh)/stride + 1, (w + 2p − kw)/stride + 1, c_out]`.
    pub fn conv2d(&self, kernel: &Var, stride: usize, padding: Padding) -> Var {
        let a = self.value();
        let k = kernel.value();
        assert_eq!(a.ndim(), 3, "conv2d: input must be [h, w, c]");
        assert_eq!(k.ndim(), 4, "conv2d: kernel must be [kh, kw, c_in, c_out]");
        assert!(stride >= 1, "conv2d: stride must be positive");
        let a3 = a.view().into_dimensionality::<Ix3>().unwrap();
        let k4 = k.view().into_dimensionality::<Ix4>().unwrap();
        let (h, w, c) = a3.dim();
        let (kh, kw, kc, fc) = k4.dim();
        assert_eq!(c, kc, "conv2d: channel mismatch");
        let pad = match padding {
            Padding::Valid => (0, 0),
            Padding::Same => {
                assert!(
                    kh % 2 == 1 && kw % 2 == 1 && stride == 1,
                    "conv2d: same padding needs odd kernel and stride 1"
                );
                (kh / 2, kw / 2)
            }
        };
        assert!(
            h + 2 * pad.0 >= kh && w + 2 * pad.1 >= kw,
            "conv2d: kernel larger than padded input"
        );
        let oh = (h + 2 * pad.0 - kh) / stride + 1;
        let ow = (w + 2 * pad.1 - kw) / stride + 1;
        let mut out = Array3::<f64>::zeros((oh, ow, fc));
        for oy in 0..oh {
            for ox in 0..ow {
                for f in 0..fc {
                    let mut acc = 0.0;
                    for i in 0..kh {
                        let iy = (oy * stride + i) as isize - pad.0 as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for j in 0..kw {
                            let ix = (ox * stride + j) as isize - pad.1 as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            for ch in 0..c {
                                acc += a3[[iy as usize, ix as usize, ch]] * k4[[i, j, ch, f]];
                            }
                        }
                    }
                    out[[oy, ox, f]] = acc;
                }
            }
        }
        Var::from_node(
            out.into_dyn(),
            vec![self.clone(), kernel.clone()],
            Op::Conv2d { stride, pad },
        )
    }

    /// Max pooling with a square `size`×`size` window and matching stride.
    /// Height and width must be divisible by `size`; pad first if not.
    pub fn maxpool2d(&self, size: usize) -> Var {
        let a = self.value();
        assert_eq!(a.ndim(), 3, "maxpool2d: input must be [h, w, c]");
        assert!(size >= 1, "maxpool2d: window must be positive");
        let a3 = a.view().into_dimensionality::<Ix3>().unwrap();
        let (h, w, c) = a3.dim();
        assert!(
            h % size == 0 && w % size == 0,
            "maxpool2d: {size}x{size} window must tile the {h}x{w} input"
        );
        let (oh, ow) = (h / size, w / size);
        let mut out = Array3::<f64>::zeros((oh, ow, c));
        let mut switches = Vec::with_capacity(oh * ow * c);
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0usize;
                    for i in 0..size {
                        for j in 0..size {
                            let (iy, ix) = (oy * size + i, ox * size + j);
                            let v = a3[[iy, ix, ch]];
                            if v > best {
                                best = v;
                                best_idx = (iy * w + ix) * c + ch;
                            }
                        }
                    }
                    out[[oy, ox, ch]] = best;
                    switches.push(best_idx);
                }
            }
        }
        Var::from_node(out.into_dyn(), vec![self.clone()], Op::MaxPool2d { switches })
    }

    /// Zero padding, `widths[axis] = (before, after)`.
    pub fn pad(&self, widths: &[(usize, usize)]) -> Var {
        let a = self.value();
        assert_eq!(widths.len(), a.ndim(), "pad: one width pair per axis");
        let dims: Vec<usize> = a
            .shape()
            .iter()
            .zip(widths)
            .map(|(&d, &(lo, hi))| d + lo + hi)
            .collect();
        let mut out = zeros(&dims);
        {
            let mut inner = out.view_mut();
            for (ax, &(lo, _)) in widths.iter().enumerate() {
                let d = a.shape()[ax];
                inner.slice_axis_inplace(Axis(ax), Slice::from(lo as isize..(lo + d) as isize));
            }
            inner.assign(&a);
        }
        Var::from_node(
            out,
            vec![self.clone()],
            Op::Pad {
                widths: widths.to_vec(),
            },
        )
    }

    /// Concatenation along `axis`; other axes must agree.
    pub fn concat(parts: &[&Var], axis: usize) -> Var {
        assert!(!parts.is_empty(), "concat: needs at least one part");
        let values: Vec<Arr> = parts.iter().map(|p| p.value()).collect();
        let views: Vec<_> = values.iter().map(|v| v.view()).collect();
        let out = concatenate(Axis(axis), &views).expect("concat: shapes must agree off-axis");
        let sizes = values.iter().map(|v| v.shape()[axis]).collect();
        Var::from_node(
            out,
            parts.iter().map(|p| (*p).clone()).collect(),
            Op::Concat { axis, sizes },
        )
    }

    /// The half-open range `start..end` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Var {
        let a = self.value();
        assert!(
            axis < a.ndim() && start < end && end <= a.shape()[axis],
            "slice: bounds {start}..{end} invalid for axis {axis} of {:?}",
            a.shape()
        );
        let out = a
            .slice_axis(Axis(axis), Slice::from(start as isize..end as isize))
            .to_owned();
        Var::from_node(out, vec![self.clone()], Op::Slice { axis, start })
    }

    /// Sum along one axis; summing the only axis of a vector yields `[1]`.
    pub fn sum_axis(&self, axis: usize) -> Var {
        let a = self.value();
        assert!(axis < a.ndim(), "sum_axis: axis out of range");
        let summed = a.sum_axis(Axis(axis));
        let out = if summed.ndim() == 0 {
            arr_from(&[1], vec![*summed.iter().next().unwrap()])
        } else {
            summed
        };
        Var::from_node(out, vec![self.clone()], Op::SumAxis { axis })
    }

    pub fn sum_all(&self) -> Var {
        let a = self.value();
        Var::from_node(arr_from(&[1], vec![a.sum()]), vec![self.clone()], Op::SumAll)
    }

    pub fn mean(&self) -> Var {
        let a = self.value();
        assert!(!a.is_empty(), "mean: empty input");
        let m = a.sum() / a.len() as f64;
        Var::from_node(arr_from(&[1], vec![m]), vec![self.clone()], Op::Mean)
    }

    /// Inverted dropout: surviving units are scaled by 1/(1−rate) so the
    /// expectation is unchanged. With `train` off (or rate 0) this is the
    /// exact identity: the same node is returned, no op recorded.
    pub fn dropout(&self, rate: f64, train: bool, rng: &mut ChaCha20Rng) -> Var {
        assert!((0.0..1.0).contains(&rate), "dropout: rate must be in [0, 1)");
        if !train || rate == 0.0 {
            return self.clone();
        }
        let keep = 1.0 - rate;
        let a = self.value();
        let mask = a.mapv(|_| {
            if rng.random::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        Var::from_node(&a * &mask, vec![self.clone()], Op::Dropout { mask })
    }

    pub fn reshape(&self, dims: &[usize]) -> Var {
        let a = self.value();
        let n: usize = dims.iter().product();
        assert_eq!(a.len(), n, "reshape: element count must be preserved");
        let out = arr_from(dims, a.iter().cloned().collect());
        Var::from_node(out, vec![self.clone()], Op::Reshape)
    }

    pub fn flatten(&self) -> Var {
        let n = self.len();
        self.reshape(&[n])
    }
}

/// Mean squared error over all elements, a scalar.
pub fn mse(a: &Var, b: &Var) -> Var {
    let av = a.value();
    let bv = b.value();
    assert_eq!(av.shape(), bv.shape(), "mse: shape mismatch");
    assert!(!av.is_empty(), "mse: empty input");
    let d = &av - &bv;
    let v = d.iter().map(|x| x * x).sum::<f64>() / av.len() as f64;
    Var::from_node(
        arr_from(&[1], vec![v]),
        vec![a.clone(), b.clone()],
        Op::Mse,
    )
}

/// Runs the chain rule for one interior node, adding contributions into
/// each parent's grad. Called once per node by `Var::backward`.
pub(crate) fn apply_backward(var: &Var) {
    let (grad, value, op, parents) = {
        let node = var.node.borrow();
        (
            node.grad.clone(),
            node.value.clone(),
            node.op.clone(),
            node.parents.clone(),
        )
    };
    let pvals: Vec<Arr> = parents.iter().map(|p| p.value()).collect();
    let contribs: Vec<Arr> = match &op {
        Op::Leaf => return,
        Op::Add => vec![grad.clone(), grad],
        Op::AddBias => {
            let mut s = grad.clone();
            while s.ndim() > 1 {
                s = s.sum_axis(Axis(0));
            }
            vec![grad, s]
        }
        Op::Sub => {
            let n = grad.mapv(|x| -x);
            vec![grad, n]
        }
        Op::Mul => vec![&grad * &pvals[1], &grad * &pvals[0]],
        Op::Neg => vec![grad.mapv(|x| -x)],
        Op::Scale(c) => vec![grad.mapv(|x| c * x)],
        Op::Matmul => {
            let a = &pvals[0];
            let b = &pvals[1];
            match (a.ndim(), b.ndim()) {
                (1, 1) => {
                    let g0 = scalar_of(&grad);
                    vec![b.mapv(|x| x * g0), a.mapv(|x| x * g0)]
                }
                (1, 2) => {
                    let a1 = a.view().into_dimensionality::<Ix1>().unwrap();
                    let b2 = b.view().into_dimensionality::<Ix2>().unwrap();
                    let g1 = grad.view().into_dimensionality::<Ix1>().unwrap();
                    vec![b2.dot(&g1).into_dyn(), outer(a1, g1).into_dyn()]
                }
                (2, 1) => {
                    let a2 = a.view().into_dimensionality::<Ix2>().unwrap();
                    let b1 = b.view().into_dimensionality::<Ix1>().unwrap();
                    let g1 = grad.view().into_dimensionality::<Ix1>().unwrap();
                    vec![outer(g1, b1).into_dyn(), a2.t().dot(&g1).into_dyn()]
                }
                (2, 2) => {
                    let a2 = a.view().into_dimensionality::<Ix2>().unwrap();
                    let b2 = b.view().into_dimensionality::<Ix2>().unwrap();
                    let g2 = grad.view().into_dimensionality::<Ix2>().unwrap();
                    vec![g2.dot(&b2.t()).into_dyn(), a2.t().dot(&g2).into_dyn()]
                }
                _ => unreachable!("ranks validated at forward time"),
            }
        }
        Op::Transpose => vec![grad.t().to_owned()],
        Op::Relu => {
            let mask = pvals[0].mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
            vec![&grad * &mask]
        }
        Op::Sigmoid => {
            let d = value.mapv(|y| y * (1.0 - y));
            vec![&grad * &d]
        }
        Op::Tanh => {
            let d = value.mapv(|y| 1.0 - y * y);
            vec![&grad * &d]
        }
        Op::Softmax { axis } => {
            let mut out = Arr::zeros(value.raw_dim());
            Zip::from(out.lanes_mut(Axis(*axis)))
                .and(value.lanes(Axis(*axis)))
                .and(grad.lanes(Axis(*axis)))
                .for_each(|mut o, y, g| {
                    let dot: f64 = y.iter().zip(g.iter()).map(|(a, b)| a * b).sum();
                    for ((o, &yv), &gv) in o.iter_mut().zip(y.iter()).zip(g.iter()) {
                        *o = yv * (gv - dot);
                    }
                });
            vec![out]
        }
        Op::Conv2d { stride, pad } => {
            let a3 = pvals[0].view().into_dimensionality::<Ix3>().unwrap();
            let k4 = pvals[1].view().into_dimensionality::<Ix4>().unwrap();
            let g3 = grad.view().into_dimensionality::<Ix3>().unwrap();
            let (h, w, c) = a3.dim();
            let (kh, kw, _, fc) = k4.dim();
            let (oh, ow, _) = g3.dim();
            let mut da = Array3::<f64>::zeros((h, w, c));
            let mut dk = Array4::<f64>::zeros((kh, kw, c, fc));
            for oy in 0..oh {
                for ox in 0..ow {
                    for f in 0..fc {
                        let gv = g3[[oy, ox, f]];
                        if gv == 0.0 {
                            continue;
                        }
                        for i in 0..kh {
                            let iy = (oy * stride + i) as isize - pad.0 as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for j in 0..kw {
                                let ix = (ox * stride + j) as isize - pad.1 as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                for ch in 0..c {
                                    da[[iy as usize, ix as usize, ch]] += gv * k4[[i, j, ch, f]];
                                    dk[[i, j, ch, f]] += gv * a3[[iy as usize, ix as usize, ch]];
                                }
                            }
                        }
                    }
                }
            }
            vec![da.into_dyn(), dk.into_dyn()]
        }
        Op::MaxPool2d { switches } => {
            let mut da = zeros(pvals[0].shape());
            {
                let flat = da.as_slice_mut().expect("fresh arrays are contiguous");
                for (g, &src) in grad.iter().zip(switches.iter()) {
                    flat[src] += *g;
                }
            }
            vec![da]
        }
        Op::Pad { widths } => {
            let mut v = grad.view();
            for (ax, &(lo, _)) in widths.iter().enumerate() {
                let d = pvals[0].shape()[ax];
                v.slice_axis_inplace(Axis(ax), Slice::from(lo as isize..(lo + d) as isize));
            }
            vec![v.to_owned()]
        }
        Op::Concat { axis, sizes } => {
            let mut out = Vec::with_capacity(sizes.len());
            let mut start = 0isize;
            for &sz in sizes {
                out.push(
                    grad.slice_axis(Axis(*axis), Slice::from(start..start + sz as isize))
                        .to_owned(),
                );
                start += sz as isize;
            }
            out
        }
        Op::Slice { axis, start } => {
            let mut da = zeros(pvals[0].shape());
            let len = grad.shape()[*axis] as isize;
            let s = *start as isize;
            da.slice_axis_mut(Axis(*axis), Slice::from(s..s + len))
                .assign(&grad);
            vec![da]
        }
        Op::SumAxis { axis } => {
            let pshape = pvals[0].shape().to_vec();
            let da = if pvals[0].ndim() == 1 {
                Arr::from_elem(IxDyn(&pshape), scalar_of(&grad))
            } else {
                grad.clone()
                    .insert_axis(Axis(*axis))
                    .broadcast(IxDyn(&pshape))
                    .expect("sum_axis grad broadcasts to parent shape")
                    .to_owned()
            };
            vec![da]
        }
        Op::SumAll => vec![Arr::from_elem(IxDyn(pvals[0].shape()), scalar_of(&grad))],
        Op::Mean => {
            let n = pvals[0].len() as f64;
            vec![Arr::from_elem(
                IxDyn(pvals[0].shape()),
                scalar_of(&grad) / n,
            )]
        }
        Op::Dropout { mask } => vec![&grad * mask],
        Op::Mse => {
            let n = pvals[0].len() as f64;
            let g0 = scalar_of(&grad);
            let diff = &pvals[0] - &pvals[1];
            let c0 = diff.mapv(|d| d * 2.0 * g0 / n);
            let c1 = c0.mapv(|x| -x);
            vec![c0, c1]
        }
        Op::Reshape => vec![arr_from(
            pvals[0].shape(),
            grad.iter().cloned().collect(),
        )],
    };
    debug_assert_eq!(contribs.len(), parents.len());
    for (p, c) in parents.iter().zip(contribs) {
        let mut node = p.node.borrow_mut();
        debug_assert_eq!(node.grad.shape(), c.shape(), "grad contribution shape");
        node.grad += &c;
    }
}
