//! Encoder–decoder network with skip connections mapping the stacked
//! `[ψ, φ, obstacles, targets]` images to a one-channel successor-feature
//! image.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::nn::{
    avg_pool2, avg_pool2_backward, concat, conv_backward, conv_forward, leaky_relu_backward, leaky_relu_inplace, split, upsample2,
    upsample2_backward, Map, Real,
};
use crate::error::{Error, Result};
use crate::rng::sub_rng;

/// Index of the φ channel in the stacked input.
pub const PHI_CHANNEL: usize = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    /// Number of resolutions; the bottleneck runs at `d / 2^(levels-1)`.
    pub levels: usize,
    pub base_width: usize,
    pub kernel: usize,
    pub in_channels: usize,
    pub leaky_slope: f64,
    /// Adds the φ input channel to the output, so the network only has to
    /// model the discounted future part of the successor feature.
    pub phi_residual: bool,
    /// Scale of the output-head initialization relative to the fan-in rule.
    pub head_init_scale: f64,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            levels: 3,
            base_width: 16,
            kernel: 3,
            in_channels: 4,
            leaky_slope: 0.01,
            phi_residual: true,
            head_init_scale: 0.1,
        }
    }
}

impl Architecture {
    pub fn miniature() -> Self {
        Self {
            base_width: 4,
            ..Self::default()
        }
    }

    pub fn supports(&self, d: usize) -> bool {
        let f = 1 << (self.levels - 1);
        d >= f && d % f == 0
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvSpec {
    cin: usize,
    cout: usize,
    k: usize,
    w: usize,
    b: usize,
}

impl ConvSpec {
    fn weight<'a, T>(&self, p: &'a [T]) -> &'a [T] {
        &p[self.w..self.w + self.cout * self.cin * self.k * self.k]
    }

    fn bias<'a, T>(&self, p: &'a [T]) -> &'a [T] {
        &p[self.b..self.b + self.cout]
    }
}

#[derive(Clone, Debug)]
pub struct UNet {
    arch: Architecture,
    enc: Vec<[ConvSpec; 2]>,
    dec: Vec<[ConvSpec; 2]>,
    head: ConvSpec,
    manifest: Vec<ParamEntry>,
    num_params: usize,
}

/// Activations kept from a forward pass for the backward pass.
pub struct Tape<T> {
    enc_in: Vec<Map<T>>,
    enc: Vec<[Map<T>; 2]>,
    dec_in: Vec<Map<T>>,
    dec: Vec<[Map<T>; 2]>,
}

impl UNet {
    pub fn new(arch: Architecture) -> Self {
        assert!(arch.levels >= 1 && arch.base_width >= 1 && arch.kernel % 2 == 1);
        let mut manifest = Vec::new();
        let mut offset = 0;
        let mut conv = |name: String, cin: usize, cout: usize, k: usize| {
            let w = offset;
            manifest.push(ParamEntry {
                name: format!("{name}.weight"),
                shape: vec![cout, cin, k, k],
                offset: w,
            });
            offset += cout * cin * k * k;
            let b = offset;
            manifest.push(ParamEntry {
                name: format!("{name}.bias"),
                shape: vec![cout],
                offset: b,
            });
            offset += cout;
            ConvSpec { cin, cout, k, w, b }
        };
        let width = |l: usize| arch.base_width << l;
        let k = arch.kernel;
        let mut enc = Vec::new();
        for l in 0..arch.levels {
            let cin = if l == 0 { arch.in_channels } else { width(l - 1) };
            enc.push([
                conv(format!("enc{l}.conv0"), cin, width(l), k),
                conv(format!("enc{l}.conv1"), width(l), width(l), k),
            ]);
        }
        let mut dec = Vec::new();
        for l in 0..arch.levels.saturating_sub(1) {
            let cin = width(l + 1) + width(l);
            dec.push([
                conv(format!("dec{l}.conv0"), cin, width(l), k),
                conv(format!("dec{l}.conv1"), width(l), width(l), k),
            ]);
        }
        let head = conv("head".into(), width(0), 1, 1);
        Self {
            arch,
            enc,
            dec,
            head,
            manifest,
            num_params: offset,
        }
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn manifest(&self) -> &[ParamEntry] {
        &self.manifest
    }

    pub fn num_params(&self) -> usize {
        self.num_params
    }

    /// He-normal hidden layers, scaled fan-in head, zero biases.
    pub fn init<T: Real>(&self, seed: u64) -> Vec<T> {
        let mut rng = sub_rng(seed, "init", &[]);
        let mut p = vec![T::ZERO; self.num_params];
        let hidden = self.enc.iter().chain(&self.dec).flat_map(|c| c.iter().copied());
        for spec in hidden {
            let std = (2.0 / (spec.cin * spec.k * spec.k) as f64).sqrt();
            for v in &mut p[spec.w..spec.b] {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v = T::from_f64(z * std);
            }
        }
        let std = self.arch.head_init_scale / (self.head.cin as f64).sqrt();
        for v in &mut p[self.head.w..self.head.b] {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v = T::from_f64(z * std);
        }
        p
    }

    pub fn check_input<T: Real>(&self, x: &Map<T>) -> Result<()> {
        if x.c != self.arch.in_channels || x.h != x.w || !self.arch.supports(x.h) {
            return Err(Error::Shape(format!(
                "input {}x{}x{} incompatible with {} channels and {} levels",
                x.c, x.h, x.w, self.arch.in_channels, self.arch.levels
            )));
        }
        Ok(())
    }

    fn conv_act<T: Real>(&self, spec: &ConvSpec, p: &[T], x: &Map<T>) -> Map<T> {
        let mut y = conv_forward(x, spec.weight(p), spec.bias(p), spec.cout, spec.k);
        leaky_relu_inplace(&mut y, T::from_f64(self.arch.leaky_slope));
        y
    }

    fn run<T: Real>(&self, p: &[T], x: &Map<T>, keep: bool) -> (Map<T>, Option<Tape<T>>) {
        let levels = self.arch.levels;
        let mut tape = Tape {
            enc_in: Vec::new(),
            enc: Vec::new(),
            dec_in: Vec::new(),
            dec: Vec::new(),
        };
        let mut skips: Vec<Map<T>> = Vec::with_capacity(levels);
        let mut cur = x.clone();
        for l in 0..levels {
            let input = if l == 0 { cur } else { avg_pool2(&cur) };
            let a0 = self.conv_act(&self.enc[l][0], p, &input);
            let a1 = self.conv_act(&self.enc[l][1], p, &a0);
            if keep {
                tape.enc_in.push(input);
                tape.enc.push([a0, a1.clone()]);
            }
            cur = a1.clone();
            skips.push(a1);
        }
        let mut up = skips.pop().expect("at least one level");
        for l in (0..levels - 1).rev() {
            let cat = concat(&upsample2(&up), &skips[l]);
            let a0 = self.conv_act(&self.dec[l][0], p, &cat);
            let a1 = self.conv_act(&self.dec[l][1], p, &a0);
            if keep {
                tape.dec_in.push(cat);
                tape.dec.push([a0, a1.clone()]);
            }
            up = a1;
        }
        let mut out = conv_forward(&up, self.head.weight(p), self.head.bias(p), 1, 1);
        if self.arch.phi_residual {
            for (o, v) in out.data.iter_mut().zip(x.channel(PHI_CHANNEL)) {
                *o += *v;
            }
        }
        if keep {
            // decoder activations were pushed deepest-first
            tape.dec_in.reverse();
            tape.dec.reverse();
            (out, Some(tape))
        } else {
            (out, None)
        }
    }

    pub fn forward<T: Real>(&self, p: &[T], x: &Map<T>) -> Map<T> {
        self.run(p, x, false).0
    }

    pub fn forward_tape<T: Real>(&self, p: &[T], x: &Map<T>) -> (Map<T>, Tape<T>) {
        let (out, tape) = self.run(p, x, true);
        (out, tape.expect("tape requested"))
    }

    pub fn forward_batch<T: Real>(&self, p: &[T], xs: &[Map<T>]) -> Vec<Map<T>> {
        xs.par_iter().map(|x| self.forward(p, x)).collect()
    }

    /// Accumulates `∂L/∂θ` into `grad` given `∂L/∂out`.
    pub fn backward<T: Real>(&self, p: &[T], tape: &Tape<T>, dout: &Map<T>, grad: &mut [T]) {
        let levels = self.arch.levels;
        let slope = T::from_f64(self.arch.leaky_slope);
        let head_in = if levels > 1 { &tape.dec[0][1] } else { &tape.enc[0][1] };
        let (hw, hb) = grad_slices(grad, &self.head);
        let mut d_up = conv_backward(head_in, dout, self.head.weight(p), 1, hw, hb, true).expect("dx");

        let mut d_enc_out: Vec<Option<Map<T>>> = vec![None; levels];
        for l in 0..levels - 1 {
            let [a0, a1] = &tape.dec[l];
            leaky_relu_backward(a1, &mut d_up, slope);
            let spec = &self.dec[l][1];
            let (gw, gb) = grad_slices(grad, spec);
            let mut d_a0 = conv_backward(a0, &d_up, spec.weight(p), spec.k, gw, gb, true).expect("dx");
            leaky_relu_backward(a0, &mut d_a0, slope);
            let spec = &self.dec[l][0];
            let (gw, gb) = grad_slices(grad, spec);
            let d_cat = conv_backward(&tape.dec_in[l], &d_a0, spec.weight(p), spec.k, gw, gb, true).expect("dx");
            let deeper = self.arch.base_width << (l + 1);
            let (d_upsampled, d_skip) = split(d_cat, deeper);
            accumulate(&mut d_enc_out[l], d_skip);
            d_up = upsample2_backward(&d_upsampled);
        }
        accumulate(&mut d_enc_out[levels - 1], d_up);

        for l in (0..levels).rev() {
            let mut d = d_enc_out[l].take().expect("gradient reaches every level");
            let [a0, a1] = &tape.enc[l];
            leaky_relu_backward(a1, &mut d, slope);
            let spec = &self.enc[l][1];
            let (gw, gb) = grad_slices(grad, spec);
            let mut d_a0 = conv_backward(a0, &d, spec.weight(p), spec.k, gw, gb, true).expect("dx");
            leaky_relu_backward(a0, &mut d_a0, slope);
            let spec = &self.enc[l][0];
            let (gw, gb) = grad_slices(grad, spec);
            let d_in = conv_backward(&tape.enc_in[l], &d_a0, spec.weight(p), spec.k, gw, gb, l > 0);
            if let Some(d_in) = d_in {
                accumulate(&mut d_enc_out[l - 1], avg_pool2_backward(&d_in));
            }
        }
    }
}

fn accumulate<T: Real>(slot: &mut Option<Map<T>>, v: Map<T>) {
    match slot {
        Some(m) => m.add_assign(&v),
        None => *slot = Some(v),
    }
}

fn grad_slices<'a, T>(grad: &'a mut [T], spec: &ConvSpec) -> (&'a mut [T], &'a mut [T]) {
    let wlen = spec.cout * spec.cin * spec.k * spec.k;
    let (head, tail) = grad.split_at_mut(spec.b);
    (&mut head[spec.w..spec.w + wlen], &mut tail[..spec.cout])
}
