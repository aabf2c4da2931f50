//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] is built fresh for every forward pass. Each op appends a node
//! holding its output value plus whatever it needs for the backward sweep;
//! [`Graph::backward`] then walks the tape in reverse.

use crate::error::{Error, Result};
use crate::kernels::{self, bilinear_taps, ConvGeom};
use crate::tensor::Tensor;

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    Affine {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Relu(Var),
    Sigmoid(Var),
    Add(Var, Var),
    Mul(Var, Var),
    MulMask {
        x: Var,
        mask: Var,
    },
    OneMinus(Var),
    Scale(Var, f64),
    Concat(Vec<Var>),
    Resize(Var),
    PMap {
        x: Var,
        sums: Tensor,
        denom: Vec<f64>,
        shrink: f64,
        argmax: Vec<Option<usize>>,
    },
    QMap {
        x: Var,
        probs: Tensor,
        rescale: f64,
    },
    Scalar(Vec<(Var, Tensor)>),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Per-channel statistics observed by a training-mode normalization.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: usize,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    kink_margin: f64,
    scratch: Vec<f64>,
}

/// Gradients of a scalar root with respect to every node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads[v.0].take()
    }
}

/// Normalization epsilon; shared by training and inference paths.
pub const NORM_EPS: f64 = 1e-5;

fn mismatch(op: &str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape(format!("{op}: {:?} vs {:?}", a.shape(), b.shape()))
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            kink_margin: f64::INFINITY,
            scratch: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Smallest distance of any non-smooth point (rectifier input, spatial
    /// max tie) from its kink seen so far.
    pub fn kink_margin(&self) -> f64 {
        self.kink_margin
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let xs = self.value(x).shape();
        let ws = self.value(w).shape();
        if ws[1] != xs[1] || ws[2] != ws[3] {
            return Err(Error::Shape(format!(
                "conv2d: weight {ws:?} does not fit input {xs:?}"
            )));
        }
        if let Some(b) = b {
            if self.value(b).len() != ws[0] {
                return Err(Error::Shape("conv2d: bias length != out channels".into()));
            }
        }
        let k = ws[2];
        if xs[2] + 2 * pad < k || xs[3] + 2 * pad < k {
            return Err(Error::Degenerate(format!(
                "conv2d: {k}x{k} kernel does not fit {}x{} input",
                xs[2], xs[3]
            )));
        }
        let geom = ConvGeom {
            in_c: xs[1],
            in_h: xs[2],
            in_w: xs[3],
            out_c: ws[0],
            kernel: k,
            stride,
            pad,
        };
        let mut out = Tensor::zeros([xs[0], ws[0], geom.out_h(), geom.out_w()]);
        let mut scratch = std::mem::take(&mut self.scratch);
        {
            let xv = self.value(x);
            let wv = self.value(w).data();
            let bv = b.map(|b| self.value(b).data());
            for n in 0..xs[0] {
                kernels::conv_forward(&geom, xv.item(n), wv, bv, out.item_mut(n), &mut scratch);
            }
        }
        self.scratch = scratch;
        Ok(self.push(
            out,
            Op::Conv {
                x,
                w,
                b,
                stride,
                pad,
            },
        ))
    }

    /// Training-mode normalization over `N, H, W` per channel. Returns the
    /// output and the batch statistics for running-average updates.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<(Var, BatchStats)> {
        let xv = self.value(x);
        let [n, c, _, _] = xv.shape();
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(Error::Shape("batch_norm: affine length != channels".into()));
        }
        let plane = xv.plane();
        let count = n * plane;
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for b in 0..n {
            for (ch, m) in mean.iter_mut().enumerate() {
                *m += xv.channel_plane(b, ch).iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= count as f64);
        for b in 0..n {
            for ch in 0..c {
                var[ch] += xv
                    .channel_plane(b, ch)
                    .iter()
                    .map(|v| (v - mean[ch]).powi(2))
                    .sum::<f64>();
            }
        }
        var.iter_mut().for_each(|v| *v /= count as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + NORM_EPS).sqrt()).collect();
        let mut xhat = xv.clone();
        let mut out = xv.clone();
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        for b in 0..n {
            for ch in 0..c {
                let start = (b * c + ch) * plane;
                for i in start..start + plane {
                    let h = (xhat.data()[i] - mean[ch]) * inv_std[ch];
                    xhat.data_mut()[i] = h;
                    out.data_mut()[i] = gv[ch] * h + bv[ch];
                }
            }
        }
        let stats = BatchStats {
            mean,
            var,
            count,
        };
        let v = self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        );
        Ok((v, stats))
    }

    /// Inference-mode normalization with fixed statistics.
    pub fn affine_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        var: &[f64],
    ) -> Result<Var> {
        let xv = self.value(x);
        let [n, c, _, _] = xv.shape();
        if self.value(gamma).len() != c || mean.len() != c || var.len() != c {
            return Err(Error::Shape("affine_norm: statistics length != channels".into()));
        }
        let plane = xv.plane();
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + NORM_EPS).sqrt()).collect();
        let mut out = xv.clone();
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        for b in 0..n {
            for ch in 0..c {
                let start = (b * c + ch) * plane;
                for v in &mut out.data_mut()[start..start + plane] {
                    *v = gv[ch] * (*v - mean[ch]) * inv_std[ch] + bv[ch];
                }
            }
        }
        Ok(self.push(
            out,
            Op::Affine {
                x,
                gamma,
                beta,
                mean: mean.to_vec(),
                inv_std,
            },
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let margin = xv.data().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
        let out = xv.map(|v| v.max(0.0));
        self.kink_margin = self.kink_margin.min(margin);
        self.push(out, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| 1.0 / (1.0 + (-v).exp()));
        self.push(out, Op::Sigmoid(x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(mismatch("add", av, bv));
        }
        let out = av.zip_map(bv, |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(mismatch("mul", av, bv));
        }
        let out = av.zip_map(bv, |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// Multiplies every channel of `x` by the single-channel `mask`.
    pub fn mul_mask(&mut self, x: Var, mask: Var) -> Result<Var> {
        let (xv, mv) = (self.value(x), self.value(mask));
        let [n, c, h, w] = xv.shape();
        if mv.shape() != [n, 1, h, w] {
            return Err(mismatch("mul_mask", xv, mv));
        }
        let plane = h * w;
        let mut out = xv.clone();
        for b in 0..n {
            let m = mv.item(b);
            for ch in 0..c {
                let start = (b * c + ch) * plane;
                for (v, mk) in out.data_mut()[start..start + plane].iter_mut().zip(m) {
                    *v *= mk;
                }
            }
        }
        Ok(self.push(out, Op::MulMask { x, mask }))
    }

    pub fn one_minus(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| 1.0 - v);
        self.push(out, Op::OneMinus(x))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let out = self.value(x).scale(s);
        self.push(out, Op::Scale(x, s))
    }

    /// Channel-axis concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.value(parts[0]).shape();
        let mut total_c = 0;
        for &p in parts {
            let s = self.value(p).shape();
            if s[0] != first[0] || s[2] != first[2] || s[3] != first[3] {
                return Err(mismatch("concat", self.value(parts[0]), self.value(p)));
            }
            total_c += s[1];
        }
        let [n, _, h, w] = first;
        let mut out = Tensor::zeros([n, total_c, h, w]);
        let item = total_c * h * w;
        for b in 0..n {
            let mut offset = b * item;
            for &p in parts {
                let src = self.value(p).item(b);
                out.data_mut()[offset..offset + src.len()].copy_from_slice(src);
                offset += src.len();
            }
        }
        Ok(self.push(out, Op::Concat(parts.to_vec())))
    }

    /// Bilinear resample (half-pixel centres) of every plane.
    pub fn resize(&mut self, x: Var, out_h: usize, out_w: usize) -> Var {
        let xv = self.value(x);
        let [n, c, h, w] = xv.shape();
        let ys = bilinear_taps(h, out_h);
        let xs = bilinear_taps(w, out_w);
        let mut out = Tensor::zeros([n, c, out_h, out_w]);
        let op = out_h * out_w;
        for b in 0..n {
            for ch in 0..c {
                let dst = &mut out.data_mut()[(b * c + ch) * op..(b * c + ch + 1) * op];
                kernels::resize_plane(xv.channel_plane(b, ch), w, &ys, &xs, dst);
            }
        }
        self.push(out, Op::Resize(x))
    }

    pub fn upsample2x(&mut self, x: Var) -> Var {
        let s = self.value(x).shape();
        self.resize(x, 2 * s[2], 2 * s[3])
    }

    /// Channel-mean map divided by its spatial maximum, shrunk by
    /// `1 / (1 + eps)`; an all-zero map when that maximum is not positive.
    ///
    /// The ratio is taken between channel sums, which cancels the channel
    /// count and keeps the map exactly invariant to input scaling whenever
    /// the scaled sums are representable.
    pub fn p_map(&mut self, x: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let [n, c, h, w] = xv.shape();
        let plane = h * w;
        let mut sums = Tensor::zeros([n, 1, h, w]);
        for b in 0..n {
            let dst = sums.item_mut(b);
            for ch in 0..c {
                for (d, v) in dst.iter_mut().zip(xv.channel_plane(b, ch)) {
                    *d += v;
                }
            }
        }
        let shrink = 1.0 / (1.0 + eps);
        let mut out = Tensor::zeros([n, 1, h, w]);
        let mut denom = Vec::with_capacity(n);
        let mut argmax = Vec::with_capacity(n);
        let mut margin = f64::INFINITY;
        for b in 0..n {
            let m = sums.item(b);
            let (idx, max) = m
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
            let second = m
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != idx)
                .fold(f64::NEG_INFINITY, |acc, (_, &v)| acc.max(v));
            if plane > 1 {
                margin = margin.min((max - second) / c as f64);
            }
            margin = margin.min(max.abs() / c as f64);
            if max > 0.0 {
                for (o, v) in out.item_mut(b).iter_mut().zip(m) {
                    *o = (v / max) * shrink;
                }
                denom.push(max);
                argmax.push(Some(idx));
            } else {
                denom.push(0.0);
                argmax.push(None);
            }
        }
        self.kink_margin = self.kink_margin.min(margin);
        self.push(
            out,
            Op::PMap {
                x,
                sums,
                denom,
                shrink,
                argmax,
            },
        )
    }

    /// Spatial softmax of the channel-mean of squares, multiplied by `rescale`.
    pub fn q_map(&mut self, x: Var, rescale: f64) -> Var {
        let xv = self.value(x);
        let [n, c, h, w] = xv.shape();
        let mut probs = Tensor::zeros([n, 1, h, w]);
        for b in 0..n {
            let dst = probs.item_mut(b);
            for ch in 0..c {
                for (d, v) in dst.iter_mut().zip(xv.channel_plane(b, ch)) {
                    *d += v * v;
                }
            }
            dst.iter_mut().for_each(|d| *d /= c as f64);
            let max = dst.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for d in dst.iter_mut() {
                *d = (*d - max).exp();
                total += *d;
            }
            dst.iter_mut().for_each(|d| *d /= total);
        }
        let out = probs.scale(rescale);
        self.push(
            out,
            Op::QMap {
                x,
                probs,
                rescale,
            },
        )
    }

    /// Scalar node whose value is supplied by the caller together with its
    /// gradient with respect to each input.
    pub fn scalar(&mut self, value: f64, inputs: Vec<(Var, Tensor)>) -> Result<Var> {
        for (v, g) in &inputs {
            if self.value(*v).shape() != g.shape() {
                return Err(mismatch("scalar", self.value(*v), g));
            }
        }
        Ok(self.push(Tensor::full([1, 1, 1, 1], value), Op::Scalar(inputs)))
    }

    /// `Σ x ⊙ weights` as a scalar node.
    pub fn weighted_sum(&mut self, x: Var, weights: &Tensor) -> Result<Var> {
        let value = self.value(x).dot(weights);
        self.scalar(value, vec![(x, weights.clone())])
    }

    /// Reverse sweep from a scalar `root`.
    pub fn backward(&self, root: Var) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(self.value(root).shape(), 1.0));
        let mut scratch = Vec::new();
        for i in (0..=root.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            self.propagate(i, &dy, &mut grads, &mut scratch);
            grads[i] = Some(dy);
        }
        Gradients { grads }
    }

    fn propagate(
        &self,
        i: usize,
        dy: &Tensor,
        grads: &mut [Option<Tensor>],
        scratch: &mut Vec<f64>,
    ) {
        fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        }
        fn slot<'a>(grads: &'a mut [Option<Tensor>], v: Var, shape: [usize; 4]) -> &'a mut Tensor {
            grads[v.0].get_or_insert_with(|| Tensor::zeros(shape))
        }
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Conv {
                x,
                w,
                b,
                stride,
                pad,
            } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let xs = xv.shape();
                let ws = wv.shape();
                let geom = ConvGeom {
                    in_c: xs[1],
                    in_h: xs[2],
                    in_w: xs[3],
                    out_c: ws[0],
                    kernel: ws[2],
                    stride: *stride,
                    pad: *pad,
                };
                let mut dx = Tensor::zeros(xs);
                let mut dw = Tensor::zeros(ws);
                let mut db = vec![0.0; ws[0]];
                for n in 0..xs[0] {
                    kernels::conv_backward(
                        &geom,
                        xv.item(n),
                        wv.data(),
                        dy.item(n),
                        Some(dx.item_mut(n)),
                        dw.data_mut(),
                        Some(&mut db),
                        scratch,
                    );
                }
                acc(grads, *x, dx);
                acc(grads, *w, dw);
                if let Some(b) = b {
                    acc(grads, *b, Tensor::from_vec(self.value(*b).shape(), db).unwrap());
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let [n, c, h, w] = xhat.shape();
                let plane = h * w;
                let m = (n * plane) as f64;
                let gv = self.value(*gamma).data();
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for b in 0..n {
                    for ch in 0..c {
                        let start = (b * c + ch) * plane;
                        for k in start..start + plane {
                            dgamma[ch] += dy.data()[k] * xhat.data()[k];
                            dbeta[ch] += dy.data()[k];
                        }
                    }
                }
                let mut dx = Tensor::zeros(xhat.shape());
                for b in 0..n {
                    for ch in 0..c {
                        let start = (b * c + ch) * plane;
                        let scale = gv[ch] * inv_std[ch] / m;
                        for k in start..start + plane {
                            dx.data_mut()[k] = scale
                                * (m * dy.data()[k] - dbeta[ch] - xhat.data()[k] * dgamma[ch]);
                        }
                    }
                }
                acc(grads, *x, dx);
                let cs = self.value(*gamma).shape();
                acc(grads, *gamma, Tensor::from_vec(cs, dgamma).unwrap());
                acc(grads, *beta, Tensor::from_vec(cs, dbeta).unwrap());
            }
            Op::Affine {
                x,
                gamma,
                beta,
                mean,
                inv_std,
            } => {
                let xv = self.value(*x);
                let [n, c, h, w] = xv.shape();
                let plane = h * w;
                let gv = self.value(*gamma).data();
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                let mut dx = Tensor::zeros(xv.shape());
                for b in 0..n {
                    for ch in 0..c {
                        let start = (b * c + ch) * plane;
                        for k in start..start + plane {
                            let g = dy.data()[k];
                            dgamma[ch] += g * (xv.data()[k] - mean[ch]) * inv_std[ch];
                            dbeta[ch] += g;
                            dx.data_mut()[k] = g * gv[ch] * inv_std[ch];
                        }
                    }
                }
                acc(grads, *x, dx);
                let cs = self.value(*gamma).shape();
                acc(grads, *gamma, Tensor::from_vec(cs, dgamma).unwrap());
                acc(grads, *beta, Tensor::from_vec(cs, dbeta).unwrap());
            }
            Op::Relu(x) => {
                let g = dy.zip_map(&node.value, |g, y| if y > 0.0 { g } else { 0.0 });
                acc(grads, *x, g);
            }
            Op::Sigmoid(x) => {
                let g = dy.zip_map(&node.value, |g, y| g * y * (1.0 - y));
                acc(grads, *x, g);
            }
            Op::Add(a, b) => {
                acc(grads, *a, dy.clone());
                acc(grads, *b, dy.clone());
            }
            Op::Mul(a, b) => {
                let ga = dy.zip_map(self.value(*b), |g, v| g * v);
                let gb = dy.zip_map(self.value(*a), |g, v| g * v);
                acc(grads, *a, ga);
                acc(grads, *b, gb);
            }
            Op::MulMask { x, mask } => {
                let xv = self.value(*x);
                let mv = self.value(*mask);
                let [n, c, h, w] = xv.shape();
                let plane = h * w;
                let mut dx = dy.clone();
                let mut dm = Tensor::zeros(mv.shape());
                for b in 0..n {
                    for ch in 0..c {
                        let start = (b * c + ch) * plane;
                        for p in 0..plane {
                            let k = start + p;
                            dm.data_mut()[b * plane + p] += dy.data()[k] * xv.data()[k];
                            dx.data_mut()[k] *= mv.data()[b * plane + p];
                        }
                    }
                }
                acc(grads, *x, dx);
                acc(grads, *mask, dm);
            }
            Op::OneMinus(x) => acc(grads, *x, dy.scale(-1.0)),
            Op::Scale(x, s) => acc(grads, *x, dy.scale(*s)),
            Op::Concat(parts) => {
                let [n, total_c, h, w] = dy.shape();
                let plane = h * w;
                let mut offset_c = 0;
                for &p in parts {
                    let ps = self.value(p).shape();
                    let mut g = Tensor::zeros(ps);
                    for b in 0..n {
                        let src = (b * total_c + offset_c) * plane;
                        g.item_mut(b)
                            .copy_from_slice(&dy.data()[src..src + ps[1] * plane]);
                    }
                    offset_c += ps[1];
                    acc(grads, p, g);
                }
            }
            Op::Resize(x) => {
                let xs = self.value(*x).shape();
                let [n, c, oh, ow] = dy.shape();
                let ys = bilinear_taps(xs[2], oh);
                let xt = bilinear_taps(xs[3], ow);
                let dx = slot(grads, *x, xs);
                let ip = xs[2] * xs[3];
                for b in 0..n {
                    for ch in 0..c {
                        let dst = &mut dx.data_mut()[(b * c + ch) * ip..(b * c + ch + 1) * ip];
                        kernels::resize_plane_adjoint(
                            dy.channel_plane(b, ch),
                            xs[3],
                            &ys,
                            &xt,
                            dst,
                        );
                    }
                }
            }
            Op::PMap {
                x,
                sums,
                denom,
                shrink,
                argmax,
            } => {
                let xs = self.value(*x).shape();
                let [n, c, h, w] = xs;
                let plane = h * w;
                let mut dsum = Tensor::zeros(sums.shape());
                for b in 0..n {
                    let Some(idx) = argmax[b] else { continue };
                    let d = denom[b];
                    let g = dy.item(b);
                    let m = sums.item(b);
                    let dst = dsum.item_mut(b);
                    let mut dmax = 0.0;
                    for p in 0..plane {
                        dst[p] = shrink * g[p] / d;
                        dmax -= shrink * g[p] * m[p] / (d * d);
                    }
                    dst[idx] += dmax;
                }
                let dx = slot(grads, *x, xs);
                for b in 0..n {
                    let ds = dsum.item(b);
                    for ch in 0..c {
                        let start = (b * c + ch) * plane;
                        for p in 0..plane {
                            dx.data_mut()[start + p] += ds[p];
                        }
                    }
                }
            }
            Op::QMap { x, probs, rescale } => {
                let xv = self.value(*x);
                let [n, c, h, w] = xv.shape();
                let plane = h * w;
                let mut dx = Tensor::zeros(xv.shape());
                for b in 0..n {
                    let q = probs.item(b);
                    let g = dy.item(b);
                    let inner: f64 = g.iter().zip(q).map(|(g, q)| g * q).sum::<f64>() * rescale;
                    let ds: Vec<f64> = g
                        .iter()
                        .zip(q)
                        .map(|(g, q)| q * (g * rescale - inner))
                        .collect();
                    for ch in 0..c {
                        let start = (b * c + ch) * plane;
                        for p in 0..plane {
                            dx.data_mut()[start + p] =
                                ds[p] * 2.0 * xv.data()[start + p] / c as f64;
                        }
                    }
                }
                acc(grads, *x, dx);
            }
            Op::Scalar(inputs) => {
                let g0 = dy.data()[0];
                for (v, g) in inputs {
                    acc(grads, *v, g.scale(g0));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_tracks_kink_margin() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_vec([1, 1, 1, 3], vec![-0.5, 0.2, 2.0]).unwrap());
        g.relu(x);
        assert!((g.kink_margin() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn add_rejects_shape_mismatch() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::zeros([1, 1, 2, 2]));
        let b = g.leaf(Tensor::zeros([1, 2, 2, 2]));
        assert!(matches!(g.add(a, b), Err(Error::Shape(_))));
    }

    #[test]
    fn concat_backward_splits_gradient() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::full([1, 1, 1, 2], 1.0));
        let b = g.leaf(Tensor::full([1, 2, 1, 2], 2.0));
        let c = g.concat(&[a, b]).unwrap();
        let w = Tensor::from_vec([1, 3, 1, 2], (1..=6).map(f64::from).collect()).unwrap();
        let s = g.weighted_sum(c, &w).unwrap();
        let grads = g.backward(s);
        assert_eq!(grads.get(a).unwrap().data(), &[1.0, 2.0]);
        assert_eq!(grads.get(b).unwrap().data(), &[3.0, 4.0, 5.0, 6.0]);
    }
}
