//! Decoupled appearance CNN, transient-mask UNet and the photometric losses
//! that tie them to the rendered image.

mod ssim;
pub mod tensor;

pub use ssim::{dssim, ssim, ssim_with_grad};
pub use tensor::{Graph, NodeId, Tensor};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::img::Image;
use crate::math::logit;
use crate::scene::NetworkParams;

pub const EMBEDDING_DIM: usize = 32;
pub const APPEARANCE_CHANNELS: usize = 16;
pub const APPEARANCE_BLOCKS: usize = 4;
pub const MAX_POOL: usize = 16;
pub const UNET_WIDTHS: [usize; 3] = [8, 16, 16];
/// Weight of the D-SSIM term in the masked RGB loss.
pub const LAMBDA_DSSIM: f64 = 0.25;
/// Weight of the mask regularizer.
pub const LAMBDA_MASK: f64 = 0.8;

/// Parameter storage shared by both networks.
pub trait Network {
    fn tensors(&self) -> &[Tensor];
    fn tensors_mut(&mut self) -> &mut [Tensor];

    fn num_params(&self) -> usize {
        self.tensors().iter().map(Tensor::len).sum()
    }

    fn to_params(&self) -> NetworkParams {
        self.tensors().iter().map(|t| (t.shape.clone(), t.data.clone())).collect()
    }

    fn load_params(&mut self, p: &NetworkParams) -> Result<()> {
        let ts = self.tensors_mut();
        if p.len() != ts.len() || ts.iter().zip(p).any(|(t, (s, _))| &t.shape != s) {
            return Err(Error::Checkpoint("network parameter shapes do not match the model".into()));
        }
        for (t, (_, d)) in ts.iter_mut().zip(p) {
            t.data.copy_from_slice(d);
        }
        Ok(())
    }
}

fn conv_params(rng: &mut ChaCha8Rng, out: usize, inp: usize, k: usize) -> [Tensor; 2] {
    let bound = (6.0 / (inp * k * k) as f64).sqrt();
    let w = (0..out * inp * k * k).map(|_| rng.random_range(-bound..bound)).collect();
    [Tensor::from_vec(&[out, inp, k, k], w), Tensor::zeros(&[out])]
}

pub fn image_to_tensor(img: &Image) -> Tensor {
    let (w, h, c) = (img.width, img.height, img.channels);
    let mut t = Tensor::zeros(&[c, h, w]);
    for i in 0..w * h {
        for ch in 0..c {
            t.data[ch * w * h + i] = img.data[i * c + ch];
        }
    }
    t
}

pub fn tensor_to_image(t: &Tensor) -> Image {
    let (c, h, w) = t.chw();
    let mut img = Image::new(w, h, c);
    for i in 0..w * h {
        for ch in 0..c {
            img.data[i * c + ch] = t.data[ch * w * h + i];
        }
    }
    img
}

/// Pooling factor for the appearance input: 16, or the largest power of two
/// not above min(H, W)/2 for images smaller than 16 pixels on a side.
pub fn pool_factor(width: usize, height: usize) -> usize {
    let m = width.min(height);
    if m >= MAX_POOL {
        return MAX_POOL;
    }
    let mut f = 1;
    while f * 2 <= m / 2 {
        f *= 2;
    }
    f
}

/// Per-image embedding plus a small CNN mapping the pooled render to a
/// positive per-pixel multiplier T.
#[derive(Clone, Debug, PartialEq)]
pub struct AppearanceModel {
    /// [embeddings (N×32), (weight, bias) × blocks, head weight, head bias]
    pub tensors: Vec<Tensor>,
}

pub struct AppearancePass {
    graph: Graph,
    input: NodeId,
    output: NodeId,
    /// T, same size as the rendered image.
    pub transform: Image,
}

impl AppearanceModel {
    pub fn new(num_images: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let emb = (0..num_images * EMBEDDING_DIM).map(|_| rng.random_range(-0.5..0.5)).collect();
        let mut tensors = vec![Tensor::from_vec(&[num_images, EMBEDDING_DIM], emb)];
        let mut inp = 3 + EMBEDDING_DIM;
        for _ in 0..APPEARANCE_BLOCKS {
            tensors.extend(conv_params(&mut rng, APPEARANCE_CHANNELS, inp, 3));
            inp = APPEARANCE_CHANNELS;
        }
        // zero head with softplus⁻¹(1) bias: T ≡ 1 at start
        tensors.push(Tensor::zeros(&[3, APPEARANCE_CHANNELS, 1, 1]));
        tensors.push(Tensor::from_vec(&[3], vec![(std::f64::consts::E - 1.0).ln(); 3]));
        Self { tensors }
    }

    pub fn num_images(&self) -> usize {
        self.tensors[0].shape[0]
    }

    pub fn forward(&self, rendered: &Image, embedding_id: usize) -> AppearancePass {
        let (w, h) = (rendered.width, rendered.height);
        let factor = pool_factor(w, h);
        let levels = factor.trailing_zeros() as usize;
        let size = |l: usize| (h.div_ceil(1 << l), w.div_ceil(1 << l));
        let mut g = Graph::new();
        let input = g.leaf(image_to_tensor(rendered));
        let params: Vec<NodeId> = self.tensors.iter().map(|t| g.leaf(t.clone())).collect();
        let pooled = g.avg_pool(input, factor);
        let (ph, pw) = size(levels);
        let emb = g.broadcast(params[0], embedding_id, ph, pw);
        let mut x = g.concat(pooled, emb);
        let mut cur = levels;
        for b in 0..APPEARANCE_BLOCKS {
            let level = levels.saturating_sub(b);
            if level != cur {
                let (th, tw) = size(level);
                x = g.resize(x, th, tw);
                cur = level;
            }
            let conv = g.conv2d(x, params[1 + 2 * b], params[2 + 2 * b]);
            x = g.silu(conv);
        }
        if cur != 0 {
            x = g.resize(x, h, w);
        }
        let n = params.len();
        let head = g.conv2d(x, params[n - 2], params[n - 1]);
        let output = g.softplus(head);
        let transform = tensor_to_image(g.value(output));
        AppearancePass {
            graph: g,
            input,
            output,
            transform,
        }
    }

    pub fn transform(&self, rendered: &Image, embedding_id: usize) -> Image {
        self.forward(rendered, embedding_id).transform
    }

    /// Parameter gradients and the gradient with respect to the rendered input.
    pub fn backward(&self, pass: &AppearancePass, grad_transform: &Image) -> (Vec<Tensor>, Image) {
        let grads = pass.graph.backward(pass.output, image_to_tensor(grad_transform));
        let params = (0..self.tensors.len())
            .map(|k| {
                grads[pass.input + 1 + k]
                    .clone()
                    .unwrap_or_else(|| Tensor::zeros(&self.tensors[k].shape))
            })
            .collect();
        let input = grads[pass.input]
            .as_ref()
            .map(tensor_to_image)
            .unwrap_or_else(|| Image::new(grad_transform.width, grad_transform.height, 3));
        (params, input)
    }
}

impl Network for AppearanceModel {
    fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }
    fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }
}

/// Three-level encoder–decoder producing a static/transient mask in (0, 1).
#[derive(Clone, Debug, PartialEq)]
pub struct TransientMaskModel {
    /// enc1, enc2, bottleneck, dec2, dec1, head; (weight, bias) each.
    pub tensors: Vec<Tensor>,
}

pub struct MaskPass {
    graph: Graph,
    output: NodeId,
    params_start: NodeId,
    /// One value per pixel.
    pub mask: Vec<f64>,
}

impl TransientMaskModel {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [c1, c2, c3] = UNET_WIDTHS;
        let mut tensors = Vec::new();
        tensors.extend(conv_params(&mut rng, c1, 3, 3));
        tensors.extend(conv_params(&mut rng, c2, c1, 3));
        tensors.extend(conv_params(&mut rng, c3, c2, 3));
        tensors.extend(conv_params(&mut rng, c2, c3 + c2, 3));
        tensors.extend(conv_params(&mut rng, c1, c2 + c1, 3));
        // zero head with logit(0.99) bias: M ≈ 0.99 at start
        tensors.push(Tensor::zeros(&[1, c1, 1, 1]));
        tensors.push(Tensor::from_vec(&[1], vec![logit(0.99)]));
        Self { tensors }
    }

    pub fn forward(&self, image: &Image) -> MaskPass {
        let (w, h) = (image.width, image.height);
        let mut g = Graph::new();
        let input = g.leaf(image_to_tensor(image));
        let params_start = input + 1;
        let p: Vec<NodeId> = self.tensors.iter().map(|t| g.leaf(t.clone())).collect();
        let block = |g: &mut Graph, x: NodeId, k: usize| {
            let c = g.conv2d(x, p[2 * k], p[2 * k + 1]);
            g.silu(c)
        };
        let e1 = block(&mut g, input, 0);
        let d1 = g.avg_pool(e1, 2);
        let e2 = block(&mut g, d1, 1);
        let d2 = g.avg_pool(e2, 2);
        let e3 = block(&mut g, d2, 2);
        let (h2, w2) = (h.div_ceil(2), w.div_ceil(2));
        let u2 = g.resize(e3, h2, w2);
        let c2 = g.concat(u2, e2);
        let x2 = block(&mut g, c2, 3);
        let u1 = g.resize(x2, h, w);
        let c1 = g.concat(u1, e1);
        let x1 = block(&mut g, c1, 4);
        let head = g.conv2d(x1, p[10], p[11]);
        let output = g.sigmoid(head);
        let mask = g.value(output).data.clone();
        MaskPass {
            graph: g,
            output,
            params_start,
            mask,
        }
    }

    pub fn mask(&self, image: &Image) -> Vec<f64> {
        self.forward(image).mask
    }

    pub fn backward(&self, pass: &MaskPass, grad_mask: &[f64]) -> Vec<Tensor> {
        let shape = pass.graph.value(pass.output).shape.clone();
        let grads = pass.graph.backward(pass.output, Tensor::from_vec(&shape, grad_mask.to_vec()));
        (0..self.tensors.len())
            .map(|k| {
                grads[pass.params_start + k]
                    .clone()
                    .unwrap_or_else(|| Tensor::zeros(&self.tensors[k].shape))
            })
            .collect()
    }
}

impl Network for TransientMaskModel {
    fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }
    fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }
}

/// Masked photometric loss and its gradients.
#[derive(Clone, Debug)]
pub struct RgbLoss {
    pub value: f64,
    pub l1: f64,
    pub dssim: f64,
    /// With respect to the appearance-transformed image.
    pub d_transformed: Image,
    /// With respect to the raw render (D-SSIM path only).
    pub d_rendered: Image,
    /// With respect to the mask; empty when no mask was given.
    pub d_mask: Vec<f64>,
}

/// (1 − λ₁)·L1(M⊙I_a, M⊙I_gt) + λ₁·D-SSIM(M⊙I_r, M⊙I_gt), with L1 averaged over
/// all pixels and channels. `mask` is one value per pixel; `None` means all ones.
pub fn masked_rgb_loss(rendered: &Image, transformed: &Image, gt: &Image, mask: Option<&[f64]>) -> RgbLoss {
    let (w, h, c) = (gt.width, gt.height, gt.channels);
    let n = (w * h * c) as f64;
    let m = |i: usize| mask.map_or(1.0, |m| m[i]);
    let mut d_transformed = Image::new(w, h, c);
    let mut d_mask = if mask.is_some() { vec![0.0; w * h] } else { Vec::new() };
    let mut l1 = 0.0;
    for i in 0..w * h {
        let mi = m(i);
        for ch in 0..c {
            let k = i * c + ch;
            let diff = transformed.data[k] - gt.data[k];
            l1 += (mi * diff).abs();
            let s = if diff > 0.0 {
                1.0
            } else if diff < 0.0 {
                -1.0
            } else {
                0.0
            };
            d_transformed.data[k] = (1.0 - LAMBDA_DSSIM) * s * mi.abs() / n;
            if mask.is_some() {
                d_mask[i] += (1.0 - LAMBDA_DSSIM) * diff.abs() * mi.signum() / n;
            }
        }
    }
    l1 /= n;
    let x = Image::from_data(w, h, c, (0..w * h * c).map(|k| m(k / c) * rendered.data[k]).collect());
    let y = Image::from_data(w, h, c, (0..w * h * c).map(|k| m(k / c) * gt.data[k]).collect());
    let (s, gx, gy) = ssim_with_grad(&x, &y);
    let dssim = (1.0 - s) * 0.5;
    let mut d_rendered = Image::new(w, h, c);
    for k in 0..w * h * c {
        let i = k / c;
        let ds_dx = -0.5 * LAMBDA_DSSIM * gx.data[k];
        let ds_dy = -0.5 * LAMBDA_DSSIM * gy.data[k];
        d_rendered.data[k] = ds_dx * m(i);
        if mask.is_some() {
            d_mask[i] += ds_dx * rendered.data[k] + ds_dy * gt.data[k];
        }
    }
    RgbLoss {
        value: (1.0 - LAMBDA_DSSIM) * l1 + LAMBDA_DSSIM * dssim,
        l1,
        dssim,
        d_transformed,
        d_rendered,
        d_mask,
    }
}

/// λ₂ · mean(1 − M) and its gradient.
pub fn mask_reg_loss(mask: &[f64]) -> (f64, Vec<f64>) {
    if mask.is_empty() {
        return (0.0, Vec::new());
    }
    let n = mask.len() as f64;
    let v = LAMBDA_MASK * mask.iter().map(|m| 1.0 - m).sum::<f64>() / n;
    (v, vec![-LAMBDA_MASK / n; mask.len()])
}

/// I_a = T ⊙ I_r.
pub fn apply_transform(transform: &Image, rendered: &Image) -> Image {
    assert!(transform.same_shape(rendered), "transform shape mismatch");
    let data = transform.data.iter().zip(&rendered.data).map(|(t, r)| t * r).collect();
    Image::from_data(rendered.width, rendered.height, rendered.channels, data)
}

/// Wraps a per-pixel mask as a one-channel image.
pub fn mask_image(mask: &[f64], width: usize, height: usize) -> Image {
    Image::from_data(width, height, 1, mask.to_vec())
}
