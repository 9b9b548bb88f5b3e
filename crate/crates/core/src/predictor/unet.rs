//! Shared-encoder U-Net with one decoder per ensemble head.
//!
//! ```text
//! x (1, H, W) ── enc1 3x3 ─ e1 (c1, H, W) ─────────────────────┐ skip
//!                enc2 5x5/2 ─ e2 (c2, H/2, W/2) ───────┐ skip   │
//!                enc3 5x5/2 ─ e3 (c3, H/4, W/4)        │        │
//! per head, per orientation q:                         │        │
//!   [e3 | onehot(q)] ─ dec3 5x5 ─ d3 (c2) ─ up2x ─ [u3 | e2] ─ dec2 5x5 ─ d2 (c1)
//!                                           ─ up2x ─ [u2 | e1] ─ dec1 3x3 ─ logit
//! ```
//!
//! All hidden layers use ReLU. Concatenations are never materialized: each
//! part is convolved with its own slice of the layer's input channels.

use rand_distr::{Distribution, Uniform};

use super::layers::{
    add_bias, bias_backward, conv_accum, conv_backward, relu, relu_backward, upsample2x,
    upsample2x_backward, upsample_source_rect, ConvShape, Feat, Rect,
};
use super::ConvWidths;
use crate::rng;
use crate::types::{ActionSpec, GridShape, Scene};

#[derive(Debug, Clone, Copy)]
struct Layer {
    shape: ConvShape,
    /// offset of the weights inside the layer's parameter block
    offset: usize,
}

impl Layer {
    const fn len(&self) -> usize {
        self.shape.weights() + self.shape.cout
    }

    fn weights<'a>(&self, block: &'a [f64]) -> &'a [f64] {
        &block[self.offset..self.offset + self.shape.weights()]
    }

    fn bias<'a>(&self, block: &'a [f64]) -> &'a [f64] {
        let start = self.offset + self.shape.weights();
        &block[start..start + self.shape.cout]
    }

    fn split_grad<'a>(&self, block: &'a mut [f64]) -> (&'a mut [f64], &'a mut [f64]) {
        let (w, b) = block[self.offset..self.offset + self.len()].split_at_mut(self.shape.weights());
        (w, b)
    }
}

fn stack(shapes: [ConvShape; 3]) -> ([Layer; 3], usize) {
    let mut offset = 0;
    let layers = shapes.map(|shape| {
        let layer = Layer { shape, offset };
        offset += layer.len();
        layer
    });
    (layers, offset)
}

/// Encoder activations for one scene (post-ReLU).
#[derive(Debug, Clone)]
pub struct Encoded {
    x: Feat,
    e1: Feat,
    e2: Feat,
    e3: Feat,
}

#[derive(Debug, Clone)]
pub struct UNet {
    grid: GridShape,
    orientations: usize,
    enc: [Layer; 3],
    dec: [Layer; 3],
    enc_len: usize,
    head_len: usize,
}

impl UNet {
    pub fn new(grid: GridShape, orientations: usize, widths: ConvWidths) -> Self {
        let ConvWidths { stem: c1, down: c2, bottleneck: c3 } = widths;
        let (enc, enc_len) = stack([
            ConvShape { cin: 1, cout: c1, k: 3, stride: 1 },
            ConvShape { cin: c1, cout: c2, k: 5, stride: 2 },
            ConvShape { cin: c2, cout: c3, k: 5, stride: 2 },
        ]);
        let (dec, head_len) = stack([
            ConvShape { cin: c3 + orientations, cout: c2, k: 5, stride: 1 },
            ConvShape { cin: 2 * c2, cout: c1, k: 5, stride: 1 },
            ConvShape { cin: 2 * c1, cout: 1, k: 3, stride: 1 },
        ]);
        Self { grid, orientations, enc, dec, enc_len, head_len }
    }

    pub fn param_count(&self, heads: usize) -> usize {
        self.enc_len + heads * self.head_len
    }

    fn head_range(&self, head: usize) -> std::ops::Range<usize> {
        let start = self.enc_len + head * self.head_len;
        start..start + self.head_len
    }

    /// He-uniform initialization, `±sqrt(6 / fan_in)`; the encoder and each head
    /// draw from independent sub-streams of `seed`.
    pub fn init(&self, params: &mut [f64], heads: usize, seed: u64) {
        let fill = |block: &mut [f64], layers: &[Layer; 3], tag: u64| {
            let mut stream = rng::stream(seed, tag);
            for layer in layers {
                let fan_in = (layer.shape.cin * layer.shape.k * layer.shape.k) as f64;
                let bound = (6.0 / fan_in).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                for v in &mut block[layer.offset..layer.offset + layer.len()] {
                    *v = dist.sample(&mut stream);
                }
            }
        };
        fill(&mut params[..self.enc_len], &self.enc, 0);
        for h in 0..heads {
            let range = self.head_range(h);
            fill(&mut params[range], &self.dec, 1 + h as u64);
        }
    }

    fn dims(&self) -> [(usize, usize); 3] {
        let (h, w) = (self.grid.height, self.grid.width);
        [(h, w), (h / 2, w / 2), (h / 4, w / 4)]
    }

    pub fn encode(&self, params: &[f64], scene: &Scene) -> Encoded {
        let block = &params[..self.enc_len];
        let [(h1, w1), (h2, w2), (h3, w3)] = self.dims();
        let [l1, l2, l3] = self.enc;
        // heights are in [0, 1]; centre them so the flat background reads as 0
        let x = Feat {
            c: 1,
            h: h1,
            w: w1,
            data: scene.heights().iter().map(|&v| 2.0 * v - 1.0).collect(),
        };
        let run = |input: &Feat, layer: Layer, h: usize, w: usize| {
            let mut out = Feat::zeros(layer.shape.cout, h, w);
            let full = Rect::full(h, w);
            add_bias(&mut out, full, layer.bias(block));
            conv_accum(&mut out, full, input, layer.weights(block), layer.shape, 0);
            relu(&mut out, full);
            out
        };
        let e1 = run(&x, l1, h1, w1);
        let e2 = run(&e1, l2, h2, w2);
        let e3 = run(&e2, l3, h3, w3);
        Encoded { x, e1, e2, e3 }
    }

    /// Logits for every orientation of one head, `Q x H x W`.
    pub fn head_logits(&self, params: &[f64], head: usize, enc: &Encoded) -> Vec<f64> {
        let block = &params[self.head_range(head)];
        let [(h1, w1), (h2, w2), (h3, w3)] = self.dims();
        let [l3, l2, l1] = self.dec;
        let c3 = self.enc[2].shape.cout;
        let c2 = l3.shape.cout;
        let c1 = l2.shape.cout;
        let (full1, full2, full3) = (Rect::full(h1, w1), Rect::full(h2, w2), Rect::full(h3, w3));

        // orientation-independent parts, computed once per head
        let mut base3 = Feat::zeros(c2, h3, w3);
        add_bias(&mut base3, full3, l3.bias(block));
        conv_accum(&mut base3, full3, &enc.e3, l3.weights(block), l3.shape, 0);
        let mut base2 = Feat::zeros(c1, h2, w2);
        add_bias(&mut base2, full2, l2.bias(block));
        conv_accum(&mut base2, full2, &enc.e2, l2.weights(block), l2.shape, c2);
        let mut base1 = Feat::zeros(1, h1, w1);
        add_bias(&mut base1, full1, l1.bias(block));
        conv_accum(&mut base1, full1, &enc.e1, l1.weights(block), l1.shape, c1);

        let ones = Feat::ones(1, h3, w3);
        let mut out = Vec::with_capacity(self.orientations * h1 * w1);
        for q in 0..self.orientations {
            let mut d3 = base3.clone();
            conv_accum(&mut d3, full3, &ones, l3.weights(block), l3.shape, c3 + q);
            relu(&mut d3, full3);
            let mut u3 = Feat::zeros(c2, h2, w2);
            upsample2x(&d3, &mut u3, full2);
            let mut d2 = base2.clone();
            conv_accum(&mut d2, full2, &u3, l2.weights(block), l2.shape, 0);
            relu(&mut d2, full2);
            let mut u2 = Feat::zeros(c1, h1, w1);
            upsample2x(&d2, &mut u2, full1);
            let mut logit = base1.clone();
            conv_accum(&mut logit, full1, &u2, l1.weights(block), l1.shape, 0);
            out.extend_from_slice(&logit.data);
        }
        out
    }

    /// Adds the gradient of `sum_h weight[h] * dloss(logit_h)` for one
    /// transition into `grad`, evaluating decoders only on the receptive
    /// field of the acted-upon pixel. `dloss` maps a logit to its loss and
    /// derivative. Returns the weighted loss.
    pub fn accumulate<F>(&self, params: &[f64], grad: &mut [f64], scene: &Scene, action: ActionSpec, head_weights: &[f64], dloss: F) -> f64
    where
        F: Fn(f64) -> (f64, f64),
    {
        let enc = self.encode(params, scene);
        let [(h1, w1), (h2, w2), (h3, w3)] = self.dims();
        let [l3, l2, l1] = self.dec;
        let c3 = self.enc[2].shape.cout;
        let c2 = l3.shape.cout;
        let c1 = l2.shape.cout;
        let q = action.orient;

        // receptive-field windows, from the output pixel inwards
        let r0 = Rect::pixel(action.row, action.col);
        let r1 = l1.shape.input_rect(r0, h1, w1);
        let r2 = upsample_source_rect(r1, h2, w2);
        let r3 = l2.shape.input_rect(r2, h2, w2);
        let r4 = upsample_source_rect(r3, h3, w3);

        let ones = Feat::ones(1, h3, w3);
        let mut g_e1 = Feat::zeros(enc.e1.c, h1, w1);
        let mut g_e2 = Feat::zeros(enc.e2.c, h2, w2);
        let mut g_e3 = Feat::zeros(c3, h3, w3);
        let mut total = 0.0;

        for (head, &weight) in head_weights.iter().enumerate() {
            if weight == 0.0 {
                continue;
            }
            let range = self.head_range(head);
            let block = &params[range.clone()];

            let mut d3 = Feat::zeros(c2, h3, w3);
            add_bias(&mut d3, r4, l3.bias(block));
            conv_accum(&mut d3, r4, &enc.e3, l3.weights(block), l3.shape, 0);
            conv_accum(&mut d3, r4, &ones, l3.weights(block), l3.shape, c3 + q);
            relu(&mut d3, r4);
            let mut u3 = Feat::zeros(c2, h2, w2);
            upsample2x(&d3, &mut u3, r3);
            let mut d2 = Feat::zeros(c1, h2, w2);
            add_bias(&mut d2, r2, l2.bias(block));
            conv_accum(&mut d2, r2, &u3, l2.weights(block), l2.shape, 0);
            conv_accum(&mut d2, r2, &enc.e2, l2.weights(block), l2.shape, c2);
            relu(&mut d2, r2);
            let mut u2 = Feat::zeros(c1, h1, w1);
            upsample2x(&d2, &mut u2, r1);
            let mut logit = Feat::zeros(1, h1, w1);
            add_bias(&mut logit, r0, l1.bias(block));
            conv_accum(&mut logit, r0, &u2, l1.weights(block), l1.shape, 0);
            conv_accum(&mut logit, r0, &enc.e1, l1.weights(block), l1.shape, c1);

            let (loss, dlogit) = dloss(logit.at(0, action.row, action.col));
            total += weight * loss;
            let dz = weight * dlogit;
            if dz == 0.0 {
                continue;
            }

            let gblock = &mut grad[range];
            let mut g_logit = Feat::zeros(1, h1, w1);
            g_logit.data[action.row * w1 + action.col] = dz;

            let (gw, gb) = l1.split_grad(gblock);
            let mut g_u2 = Feat::zeros(c1, h1, w1);
            conv_backward(&g_logit, r0, &u2, l1.weights(block), gw, l1.shape, 0, Some(&mut g_u2));
            conv_backward(&g_logit, r0, &enc.e1, l1.weights(block), gw, l1.shape, c1, Some(&mut g_e1));
            bias_backward(&g_logit, r0, gb);

            let mut g_d2 = Feat::zeros(c1, h2, w2);
            upsample2x_backward(&g_u2, &mut g_d2, r1);
            relu_backward(&mut g_d2, &d2, r2);
            let (gw, gb) = l2.split_grad(gblock);
            let mut g_u3 = Feat::zeros(c2, h2, w2);
            conv_backward(&g_d2, r2, &u3, l2.weights(block), gw, l2.shape, 0, Some(&mut g_u3));
            conv_backward(&g_d2, r2, &enc.e2, l2.weights(block), gw, l2.shape, c2, Some(&mut g_e2));
            bias_backward(&g_d2, r2, gb);

            let mut g_d3 = Feat::zeros(c2, h3, w3);
            upsample2x_backward(&g_u3, &mut g_d3, r3);
            relu_backward(&mut g_d3, &d3, r4);
            let (gw, gb) = l3.split_grad(gblock);
            conv_backward(&g_d3, r4, &enc.e3, l3.weights(block), gw, l3.shape, 0, Some(&mut g_e3));
            conv_backward(&g_d3, r4, &ones, l3.weights(block), gw, l3.shape, c3 + q, None);
            bias_backward(&g_d3, r4, gb);
        }

        // shared encoder, full frame
        let block = &params[..self.enc_len];
        let gblock = &mut grad[..self.enc_len];
        let [e1l, e2l, e3l] = self.enc;
        let (full1, full2, full3) = (Rect::full(h1, w1), Rect::full(h2, w2), Rect::full(h3, w3));

        relu_backward(&mut g_e3, &enc.e3, full3);
        let (gw, gb) = e3l.split_grad(gblock);
        conv_backward(&g_e3, full3, &enc.e2, e3l.weights(block), gw, e3l.shape, 0, Some(&mut g_e2));
        bias_backward(&g_e3, full3, gb);

        relu_backward(&mut g_e2, &enc.e2, full2);
        let (gw, gb) = e2l.split_grad(gblock);
        conv_backward(&g_e2, full2, &enc.e1, e2l.weights(block), gw, e2l.shape, 0, Some(&mut g_e1));
        bias_backward(&g_e2, full2, gb);

        relu_backward(&mut g_e1, &enc.e1, full1);
        let (gw, gb) = e1l.split_grad(gblock);
        conv_backward(&g_e1, full1, &enc.x, e1l.weights(block), gw, e1l.shape, 0, None);
        bias_backward(&g_e1, full1, gb);

        total
    }
}
