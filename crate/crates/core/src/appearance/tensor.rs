//! Minimal reverse-mode tape over CHW tensors: just the ops the two networks use.

use rayon::prelude::*;

use crate::math::{sigmoid, softplus};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "tensor shape/data mismatch");
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// (channels, height, width) of a rank-3 tensor.
    pub fn chw(&self) -> (usize, usize, usize) {
        (self.shape[0], self.shape[1], self.shape[2])
    }
}

pub type NodeId = usize;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv { x: NodeId, w: NodeId, b: NodeId },
    Silu(NodeId),
    Softplus(NodeId),
    Sigmoid(NodeId),
    AvgPool { x: NodeId, factor: usize },
    Resize(NodeId),
    Concat(NodeId, NodeId),
    /// Broadcast a [C] vector (or row `row` of a [N, C] table) to [C, H, W].
    Broadcast { v: NodeId, row: usize },
    Mul(NodeId, NodeId),
}

#[derive(Default)]
pub struct Graph {
    values: Vec<Tensor>,
    ops: Vec<Op>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.values[id]
    }

    fn push(&mut self, t: Tensor, op: Op) -> NodeId {
        self.values.push(t);
        self.ops.push(op);
        self.values.len() - 1
    }

    pub fn leaf(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Leaf)
    }

    /// Stride-1 convolution with zero "same" padding; odd square kernels.
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        let out = conv_forward(&self.values[x], &self.values[w], &self.values[b]);
        self.push(out, Op::Conv { x, w, b })
    }

    pub fn silu(&mut self, x: NodeId) -> NodeId {
        let t = map(&self.values[x], |v| v * sigmoid(v));
        self.push(t, Op::Silu(x))
    }

    pub fn softplus(&mut self, x: NodeId) -> NodeId {
        let t = map(&self.values[x], softplus);
        self.push(t, Op::Softplus(x))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let t = map(&self.values[x], sigmoid);
        self.push(t, Op::Sigmoid(x))
    }

    /// Box average over factor×factor windows; edge windows average what exists.
    pub fn avg_pool(&mut self, x: NodeId, factor: usize) -> NodeId {
        let (c, h, w) = self.values[x].chw();
        let (oh, ow) = (h.div_ceil(factor), w.div_ceil(factor));
        let src = &self.values[x].data;
        let mut out = Tensor::zeros(&[c, oh, ow]);
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let (y1, x1) = (((oy + 1) * factor).min(h), ((ox + 1) * factor).min(w));
                    let mut s = 0.0;
                    for y in oy * factor..y1 {
                        for xx in ox * factor..x1 {
                            s += src[(ch * h + y) * w + xx];
                        }
                    }
                    out.data[(ch * oh + oy) * ow + ox] = s / ((y1 - oy * factor) * (x1 - ox * factor)) as f64;
                }
            }
        }
        self.push(out, Op::AvgPool { x, factor })
    }

    /// Bilinear resize to an explicit size (half-pixel centers, edge clamped).
    pub fn resize(&mut self, x: NodeId, oh: usize, ow: usize) -> NodeId {
        let (c, h, w) = self.values[x].chw();
        let src = &self.values[x].data;
        let mut out = Tensor::zeros(&[c, oh, ow]);
        let ys = taps(h, oh);
        let xs = taps(w, ow);
        for ch in 0..c {
            for (oy, &(y0, y1, ty)) in ys.iter().enumerate() {
                for (ox, &(x0, x1, tx)) in xs.iter().enumerate() {
                    let p = |y: usize, xx: usize| src[(ch * h + y) * w + xx];
                    let top = p(y0, x0) * (1.0 - tx) + p(y0, x1) * tx;
                    let bot = p(y1, x0) * (1.0 - tx) + p(y1, x1) * tx;
                    out.data[(ch * oh + oy) * ow + ox] = top * (1.0 - ty) + bot * ty;
                }
            }
        }
        self.push(out, Op::Resize(x))
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ca, h, w) = self.values[a].chw();
        let (cb, hb, wb) = self.values[b].chw();
        assert_eq!((h, w), (hb, wb), "concat spatial mismatch");
        let mut data = self.values[a].data.clone();
        data.extend_from_slice(&self.values[b].data);
        self.push(Tensor::from_vec(&[ca + cb, h, w], data), Op::Concat(a, b))
    }

    pub fn broadcast(&mut self, v: NodeId, row: usize, h: usize, w: usize) -> NodeId {
        let t = &self.values[v];
        let c = *t.shape.last().unwrap();
        let vals = &t.data[row * c..(row + 1) * c];
        let mut out = Tensor::zeros(&[c, h, w]);
        for (ch, val) in vals.iter().enumerate() {
            out.data[ch * h * w..(ch + 1) * h * w].fill(*val);
        }
        self.push(out, Op::Broadcast { v, row })
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let t = Tensor::from_vec(
            &self.values[a].shape,
            self.values[a].data.iter().zip(&self.values[b].data).map(|(x, y)| x * y).collect(),
        );
        self.push(t, Op::Mul(a, b))
    }

    /// Gradients of every node given the gradient of `out`.
    pub fn backward(&self, out: NodeId, grad: Tensor) -> Vec<Option<Tensor>> {
        let mut grads: Vec<Option<Tensor>> = vec![None; self.values.len()];
        grads[out] = Some(grad);
        for id in (0..=out).rev() {
            let Some(g) = grads[id].take() else { continue };
            match &self.ops[id] {
                Op::Leaf => {}
                Op::Conv { x, w, b } => {
                    let (gx, gw, gb) = conv_backward(&self.values[*x], &self.values[*w], &g);
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *w, gw);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Silu(x) => {
                    let xv = &self.values[*x];
                    let d = zip(xv, &g, |v, gv| {
                        let s = sigmoid(v);
                        gv * (s + v * s * (1.0 - s))
                    });
                    accumulate(&mut grads, *x, d);
                }
                Op::Softplus(x) => {
                    let d = zip(&self.values[*x], &g, |v, gv| gv * sigmoid(v));
                    accumulate(&mut grads, *x, d);
                }
                Op::Sigmoid(x) => {
                    let d = zip(&self.values[id], &g, |s, gv| gv * s * (1.0 - s));
                    accumulate(&mut grads, *x, d);
                }
                Op::AvgPool { x, factor } => {
                    let (c, h, w) = self.values[*x].chw();
                    let (_, oh, ow) = g.chw();
                    let mut d = Tensor::zeros(&[c, h, w]);
                    for ch in 0..c {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let (y1, x1) = (((oy + 1) * factor).min(h), ((ox + 1) * factor).min(w));
                                let n = ((y1 - oy * factor) * (x1 - ox * factor)) as f64;
                                let gv = g.data[(ch * oh + oy) * ow + ox] / n;
                                for y in oy * factor..y1 {
                                    for xx in ox * factor..x1 {
                                        d.data[(ch * h + y) * w + xx] += gv;
                                    }
                                }
                            }
                        }
                    }
                    accumulate(&mut grads, *x, d);
                }
                Op::Resize(x) => {
                    let (c, h, w) = self.values[*x].chw();
                    let (_, oh, ow) = g.chw();
                    let ys = taps(h, oh);
                    let xs = taps(w, ow);
                    let mut d = Tensor::zeros(&[c, h, w]);
                    for ch in 0..c {
                        for (oy, &(y0, y1, ty)) in ys.iter().enumerate() {
                            for (ox, &(x0, x1, tx)) in xs.iter().enumerate() {
                                let gv = g.data[(ch * oh + oy) * ow + ox];
                                let mut add = |y: usize, xx: usize, k: f64| d.data[(ch * h + y) * w + xx] += k * gv;
                                add(y0, x0, (1.0 - ty) * (1.0 - tx));
                                add(y0, x1, (1.0 - ty) * tx);
                                add(y1, x0, ty * (1.0 - tx));
                                add(y1, x1, ty * tx);
                            }
                        }
                    }
                    accumulate(&mut grads, *x, d);
                }
                Op::Concat(a, b) => {
                    let na = self.values[*a].len();
                    let ga = Tensor::from_vec(&self.values[*a].shape, g.data[..na].to_vec());
                    let gb = Tensor::from_vec(&self.values[*b].shape, g.data[na..].to_vec());
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Broadcast { v, row } => {
                    let (c, h, w) = g.chw();
                    let mut d = Tensor::zeros(&self.values[*v].shape);
                    for ch in 0..c {
                        d.data[row * c + ch] = g.data[ch * h * w..(ch + 1) * h * w].iter().sum();
                    }
                    accumulate(&mut grads, *v, d);
                }
                Op::Mul(a, b) => {
                    let ga = zip(&self.values[*b], &g, |v, gv| v * gv);
                    let gb = zip(&self.values[*a], &g, |v, gv| v * gv);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
            }
            grads[id] = Some(g);
        }
        grads
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
    match &mut grads[id] {
        Some(t) => t.data.iter_mut().zip(&g.data).for_each(|(a, b)| *a += b),
        slot => *slot = Some(g),
    }
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::from_vec(&t.shape, t.data.iter().map(|v| f(*v)).collect())
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::from_vec(&a.shape, a.data.iter().zip(&b.data).map(|(x, y)| f(*x, *y)).collect())
}

/// Source taps (i0, i1, t) for each output index of a half-pixel bilinear resize.
fn taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let s = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (s.floor() as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

fn conv_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    let (c, h, wd) = x.chw();
    let (o, k) = (w.shape[0], w.shape[2]);
    assert_eq!(w.shape[1], c, "conv input channels");
    let p = k / 2;
    let plane = h * wd;
    let data: Vec<f64> = (0..o)
        .into_par_iter()
        .flat_map_iter(|oc| {
            let mut out = vec![b.data[oc]; plane];
            for ic in 0..c {
                let src = &x.data[ic * plane..(ic + 1) * plane];
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = w.data[((oc * c + ic) * k + ky) * k + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        for y in 0..h {
                            let sy = y as isize + ky as isize - p as isize;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            let (x0, x1) = col_range(wd, kx, p);
                            let srow = &src[sy as usize * wd..];
                            let orow = &mut out[y * wd..(y + 1) * wd];
                            for xx in x0..x1 {
                                orow[xx] += wv * srow[xx + kx - p];
                            }
                        }
                    }
                }
            }
            out
        })
        .collect();
    Tensor::from_vec(&[o, h, wd], data)
}

/// Output columns whose tap at kernel column kx stays inside the row.
#[inline]
fn col_range(w: usize, kx: usize, p: usize) -> (usize, usize) {
    let x0 = p.saturating_sub(kx);
    let x1 = (w + p).saturating_sub(kx).min(w);
    (x0, x1)
}

fn conv_backward(x: &Tensor, w: &Tensor, g: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (c, h, wd) = x.chw();
    let (o, k) = (w.shape[0], w.shape[2]);
    let p = k / 2;
    let plane = h * wd;
    let gb: Vec<f64> = (0..o).map(|oc| g.data[oc * plane..(oc + 1) * plane].iter().sum()).collect();
    let gw: Vec<f64> = (0..o)
        .into_par_iter()
        .flat_map_iter(|oc| {
            let go = &g.data[oc * plane..(oc + 1) * plane];
            let mut out = vec![0.0; c * k * k];
            for ic in 0..c {
                let src = &x.data[ic * plane..(ic + 1) * plane];
                for ky in 0..k {
                    for kx in 0..k {
                        let mut s = 0.0;
                        let (x0, x1) = col_range(wd, kx, p);
                        for y in 0..h {
                            let sy = y as isize + ky as isize - p as isize;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            let srow = &src[sy as usize * wd..];
                            let grow = &go[y * wd..];
                            for xx in x0..x1 {
                                s += grow[xx] * srow[xx + kx - p];
                            }
                        }
                        out[(ic * k + ky) * k + kx] = s;
                    }
                }
            }
            out
        })
        .collect();
    let gx: Vec<f64> = (0..c)
        .into_par_iter()
        .flat_map_iter(|ic| {
            let mut out = vec![0.0; plane];
            for oc in 0..o {
                let go = &g.data[oc * plane..(oc + 1) * plane];
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = w.data[((oc * c + ic) * k + ky) * k + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        let (x0, x1) = col_range(wd, kx, p);
                        for y in 0..h {
                            let sy = y as isize + ky as isize - p as isize;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            let sy = sy as usize;
                            for xx in x0..x1 {
                                out[sy * wd + xx + kx - p] += wv * go[y * wd + xx];
                            }
                        }
                    }
                }
            }
            out
        })
        .collect();
    (
        Tensor::from_vec(&[c, h, wd], gx),
        Tensor::from_vec(&w.shape, gw),
        Tensor::from_vec(&[o], gb),
    )
}
