use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::layers::{
    avg_pool2, avg_pool2_backward, timestep_embedding, upsample2, upsample2_backward, Activation, Conv, Dense, Tensor,
};
use super::loss::{loss_and_grad_f64, loss_f64};
use crate::diffusion::{ConditionedInput, Denoiser};
use crate::error::{Error, Result};
use crate::wavelet::WaveletCoeffs;

pub const IN_CHANNELS: usize = 24;
pub const OUT_CHANNELS: usize = 8;

/// Architecture of the U-shaped denoiser.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub base_channels: usize,
    /// Channel multiplier per scale; its length is the number of scales.
    pub channel_mult: Vec<usize>,
    pub res_blocks: usize,
    pub time_embed_dim: usize,
    pub activation: Activation,
}

impl NetConfig {
    /// Base 8, multipliers (1, 2, 2), one residual block per scale.
    pub fn desk() -> Self {
        NetConfig {
            base_channels: 8,
            channel_mult: vec![1, 2, 2],
            res_blocks: 1,
            time_embed_dim: 16,
            activation: Activation::Silu,
        }
    }

    /// Base 64, multipliers (1, 2, 2, 4, 4), two residual blocks per scale.
    pub fn full() -> Self {
        NetConfig {
            base_channels: 64,
            channel_mult: vec![1, 2, 2, 4, 4],
            res_blocks: 2,
            time_embed_dim: 128,
            activation: Activation::Silu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 || self.channel_mult.is_empty() || self.channel_mult.contains(&0) {
            return Err(Error::InvalidArgument(
                "base_channels and every channel multiplier must be positive".into(),
            ));
        }
        if self.time_embed_dim < 2 || self.time_embed_dim % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "time_embed_dim must be even and >= 2, got {}",
                self.time_embed_dim
            )));
        }
        Ok(())
    }

    pub fn scales(&self) -> usize {
        self.channel_mult.len()
    }

    /// Coefficient dims must be divisible by this on every axis.
    pub fn dims_divisor(&self) -> usize {
        1 << (self.scales() - 1)
    }

    fn channels(&self, level: usize) -> usize {
        self.base_channels * self.channel_mult[level]
    }
}

#[derive(Debug, Clone)]
struct ResBlock {
    conv1: Conv,
    temb: Dense,
    conv2: Conv,
    skip: Option<Conv>,
}

#[derive(Debug, Clone)]
struct Layout {
    in_conv: Conv,
    enc: Vec<Vec<ResBlock>>,
    /// `ups[l]` maps level `l + 1` channels to level `l` after upsampling.
    ups: Vec<Conv>,
    dec: Vec<Vec<ResBlock>>,
    out_conv: Conv,
    len: usize,
}

struct Alloc(usize);

impl Alloc {
    fn conv(&mut self, cin: usize, cout: usize, k: usize) -> Conv {
        let w = self.0;
        let c = Conv {
            cin,
            cout,
            k,
            w,
            b: w + cout * cin * k * k * k,
        };
        self.0 += c.param_len();
        c
    }

    fn dense(&mut self, nin: usize, nout: usize) -> Dense {
        let w = self.0;
        let d = Dense {
            nin,
            nout,
            w,
            b: w + nin * nout,
        };
        self.0 += d.param_len();
        d
    }

    fn block(&mut self, cin: usize, cout: usize, emb: usize) -> ResBlock {
        ResBlock {
            conv1: self.conv(cin, cout, 3),
            temb: self.dense(emb, cout),
            conv2: self.conv(cout, cout, 3),
            skip: (cin != cout).then(|| self.conv(cin, cout, 1)),
        }
    }
}

impl Layout {
    fn new(cfg: &NetConfig) -> Self {
        let mut a = Alloc(0);
        let e = cfg.time_embed_dim;
        let in_conv = a.conv(IN_CHANNELS, cfg.channels(0), 3);
        let mut enc = Vec::new();
        let mut prev = cfg.channels(0);
        for l in 0..cfg.scales() {
            let c = cfg.channels(l);
            let blocks = (0..cfg.res_blocks.max(1))
                .map(|i| a.block(if i == 0 { prev } else { c }, c, e))
                .collect();
            enc.push(blocks);
            prev = c;
        }
        let mut ups = Vec::new();
        let mut dec = Vec::new();
        for l in 0..cfg.scales() - 1 {
            ups.push(a.conv(cfg.channels(l + 1), cfg.channels(l), 1));
            dec.push(
                (0..cfg.res_blocks.max(1))
                    .map(|_| a.block(cfg.channels(l), cfg.channels(l), e))
                    .collect(),
            );
        }
        let out_conv = a.conv(cfg.channels(0), OUT_CHANNELS, 3);
        Layout {
            in_conv,
            enc,
            ups,
            dec,
            out_conv,
            len: a.0,
        }
    }

    fn convs(&self) -> Vec<(Conv, ConvRole)> {
        let mut out = vec![(self.in_conv, ConvRole::Plain)];
        let blocks = self.enc.iter().chain(&self.dec).flatten();
        for b in blocks {
            out.push((b.conv1, ConvRole::Plain));
            out.push((b.conv2, ConvRole::ResidualBranch));
            if let Some(s) = b.skip {
                out.push((s, ConvRole::Plain));
            }
        }
        out.extend(self.ups.iter().map(|&c| (c, ConvRole::Plain)));
        out.push((self.out_conv, ConvRole::Output));
        out
    }

    fn denses(&self) -> Vec<Dense> {
        self.enc.iter().chain(&self.dec).flatten().map(|b| b.temb).collect()
    }
}

#[derive(Clone, Copy, PartialEq)]
enum ConvRole {
    Plain,
    ResidualBranch,
    Output,
}

struct BlockCache {
    x: Tensor,
    a1: Tensor,
    h1: Tensor,
    a2: Tensor,
}

struct Cache {
    emb: Vec<f64>,
    input: Tensor,
    level_dims: Vec<[usize; 3]>,
    enc: Vec<Vec<BlockCache>>,
    up_in: Vec<Tensor>,
    dec: Vec<Vec<BlockCache>>,
    out_pre: Tensor,
    out_act: Tensor,
}

/// Small 3D U-Net predicting clean wavelet coefficients from the 24-channel
/// conditioned input. Parameters live in one flat vector with a gradient
/// vector of the same length.
#[derive(Debug, Clone)]
pub struct DenoiserNet {
    config: NetConfig,
    layout: Layout,
    params: Vec<f64>,
    grads: Vec<f64>,
}

impl DenoiserNet {
    /// Random initialization from `seed`: weights scaled by fan-in, biases
    /// zero, residual branches damped and the output layer all zero, so a
    /// fresh network predicts zeros.
    pub fn new(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut params = vec![0.0; layout.len];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (conv, role) in layout.convs() {
            let fan_in = (conv.cin * conv.k * conv.k * conv.k) as f64;
            let scale = match role {
                ConvRole::Plain => (1.0 / fan_in).sqrt(),
                ConvRole::ResidualBranch => 0.1 * (1.0 / fan_in).sqrt(),
                ConvRole::Output => 0.0,
            };
            for w in &mut params[conv.w..conv.w + conv.weight_len()] {
                *w = scale * rng.sample::<f64, _>(StandardNormal);
            }
        }
        for d in layout.denses() {
            let scale = (1.0 / d.nin as f64).sqrt();
            for w in &mut params[d.w..d.w + d.nin * d.nout] {
                *w = scale * rng.sample::<f64, _>(StandardNormal);
            }
        }
        let grads = vec![0.0; params.len()];
        Ok(DenoiserNet {
            config,
            layout,
            params,
            grads,
        })
    }

    pub fn from_params(config: NetConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.len {
            return Err(Error::Shape(format!(
                "architecture needs {} parameters, got {}",
                layout.len,
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidArgument("non-finite parameter".into()));
        }
        let grads = vec![0.0; params.len()];
        Ok(DenoiserNet {
            config,
            layout,
            params,
            grads,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Gradient accumulated by [`DenoiserNet::backward`] since the last [`DenoiserNet::zero_grad`].
    pub fn gradient(&self) -> &[f64] {
        &self.grads
    }

    pub fn zero_grad(&mut self) {
        self.grads.fill(0.0);
    }

    /// Sets every bias (including the timestep projections) to zero.
    pub fn zero_biases(&mut self) {
        let mut ranges: Vec<(usize, usize)> = self.layout.convs().iter().map(|(c, _)| (c.b, c.cout)).collect();
        ranges.extend(self.layout.denses().iter().map(|d| (d.b, d.nout)));
        ranges.extend(self.layout.denses().iter().map(|d| (d.w, d.nin * d.nout)));
        for (start, len) in ranges {
            self.params[start..start + len].fill(0.0);
        }
    }

    /// Biases of the eight output channels, in band order.
    pub fn output_bias_mut(&mut self) -> &mut [f64] {
        let c = self.layout.out_conv;
        &mut self.params[c.b..c.b + c.cout]
    }

    /// Sets every output-layer weight and bias to zero.
    pub fn zero_output_layer(&mut self) {
        let c = self.layout.out_conv;
        self.params[c.w..c.w + c.param_len()].fill(0.0);
    }

    fn check_input(&self, input: &ConditionedInput<'_>) -> Result<()> {
        let d = input.x_t.band_dims();
        let div = self.config.dims_divisor();
        if d.iter().any(|&n| n % div != 0) {
            return Err(Error::Shape(format!(
                "coefficient dims {d:?} must be divisible by {div} for {} scales",
                self.config.scales()
            )));
        }
        Ok(())
    }

    fn input_tensor(input: &ConditionedInput<'_>) -> Tensor {
        let dims = input.x_t.band_dims();
        let mut t = Tensor::zeros(IN_CHANNELS, dims);
        let n = t.voxels();
        for c in 0..IN_CHANNELS {
            for (d, &s) in t.data[c * n..(c + 1) * n].iter_mut().zip(input.channel(c)) {
                *d = s as f64;
            }
        }
        t
    }

    fn block_forward(&self, b: &ResBlock, x: Tensor, emb: &[f64]) -> (Tensor, BlockCache) {
        let act = self.config.activation;
        let p = &self.params;
        let a1 = act.forward(&x);
        let mut h1 = b.conv1.forward(p, &a1);
        let bias = b.temb.forward(p, emb);
        let n = h1.voxels();
        for (c, &bv) in bias.iter().enumerate() {
            for v in &mut h1.data[c * n..(c + 1) * n] {
                *v += bv;
            }
        }
        let a2 = act.forward(&h1);
        let h2 = b.conv2.forward(p, &a2);
        let mut out = match b.skip {
            Some(s) => s.forward(p, &x),
            None => x.clone(),
        };
        out.add_assign(&h2);
        (out, BlockCache { x, a1, h1, a2 })
    }

    fn block_backward(&mut self, b: &ResBlock, cache: &BlockCache, gout: &Tensor, emb: &[f64]) -> Tensor {
        let act = self.config.activation;
        let (p, g) = (&self.params, &mut self.grads);
        let ga2 = b.conv2.backward(p, g, &cache.a2, gout);
        let gh1 = act.backward(&cache.h1, &ga2);
        let n = gh1.voxels();
        let gbias: Vec<f64> = (0..gh1.channels)
            .map(|c| gh1.data[c * n..(c + 1) * n].iter().sum())
            .collect();
        b.temb.backward(g, emb, &gbias);
        let ga1 = b.conv1.backward(p, g, &cache.a1, &gh1);
        let mut gx = act.backward(&cache.x, &ga1);
        match b.skip {
            Some(s) => gx.add_assign(&s.backward(p, g, &cache.x, gout)),
            None => gx.add_assign(gout),
        }
        gx
    }

    fn run(&self, input: &ConditionedInput<'_>) -> (Tensor, Cache) {
        let layout = self.layout.clone();
        let emb = timestep_embedding(input.t, self.config.time_embed_dim);
        let x = Self::input_tensor(input);
        let mut h = layout.in_conv.forward(&self.params, &x);

        let scales = self.config.scales();
        let mut level_dims = vec![x.dims];
        for l in 1..scales {
            level_dims.push(level_dims[l - 1].map(|n| n / 2));
        }
        let mut enc = Vec::new();
        let mut skips = Vec::new();
        for l in 0..scales {
            let mut caches = Vec::new();
            for b in &layout.enc[l] {
                let (out, c) = self.block_forward(b, h, &emb);
                caches.push(c);
                h = out;
            }
            enc.push(caches);
            if l + 1 < scales {
                skips.push(h.clone());
                h = avg_pool2(&h);
            }
        }

        let mut up_in = vec![Tensor::zeros(0, [0; 3]); scales - 1];
        let mut dec: Vec<Vec<BlockCache>> = (0..scales - 1).map(|_| Vec::new()).collect();
        for l in (0..scales - 1).rev() {
            let up = upsample2(&h, level_dims[l]);
            h = layout.ups[l].forward(&self.params, &up);
            h.add_assign(&skips[l]);
            up_in[l] = up;
            for b in &layout.dec[l] {
                let (out, c) = self.block_forward(b, h, &emb);
                dec[l].push(c);
                h = out;
            }
        }

        let out_act = self.config.activation.forward(&h);
        let y = layout.out_conv.forward(&self.params, &out_act);
        let cache = Cache {
            emb,
            input: x,
            level_dims,
            enc,
            up_in,
            dec,
            out_pre: h,
            out_act,
        };
        (y, cache)
    }

    fn backprop(&mut self, cache: &Cache, gy: &Tensor) {
        let layout = self.layout.clone();
        let act = self.config.activation;
        let scales = self.config.scales();
        let emb = &cache.emb;

        let g_act = layout
            .out_conv
            .backward(&self.params, &mut self.grads, &cache.out_act, gy);
        let mut gh = act.backward(&cache.out_pre, &g_act);

        let mut g_skips = Vec::new();
        for l in 0..scales - 1 {
            for (b, c) in layout.dec[l].iter().zip(&cache.dec[l]).rev() {
                gh = self.block_backward(b, c, &gh, emb);
            }
            g_skips.push(gh.clone());
            let g_up = layout.ups[l].backward(&self.params, &mut self.grads, &cache.up_in[l], &gh);
            gh = upsample2_backward(&g_up, cache.level_dims[l + 1]);
        }

        for l in (0..scales).rev() {
            if l + 1 < scales {
                gh = avg_pool2_backward(&gh, cache.level_dims[l]);
                gh.add_assign(&g_skips[l]);
            }
            for (b, c) in layout.enc[l].iter().zip(&cache.enc[l]).rev() {
                gh = self.block_backward(b, c, &gh, emb);
            }
        }
        layout
            .in_conv
            .backward(&self.params, &mut self.grads, &cache.input, &gh);
    }

    /// Prediction in full precision, band-major.
    pub fn forward_f64(&self, input: &ConditionedInput<'_>) -> Result<Vec<f64>> {
        self.check_input(input)?;
        Ok(self.run(input).0.data)
    }

    pub fn forward(&self, input: &ConditionedInput<'_>) -> Result<WaveletCoeffs> {
        let y = self.forward_f64(input)?;
        input.x_t.with_data(y.into_iter().map(|v| v as f32).collect())
    }

    /// Training loss of the prediction for `input` against `x0`.
    pub fn loss(&self, input: &ConditionedInput<'_>, x0: &WaveletCoeffs, lambda: f64) -> Result<f64> {
        input.x_t.ensure_same_layout(x0)?;
        let y = self.forward_f64(input)?;
        let target: Vec<f64> = x0.data().iter().map(|&v| v as f64).collect();
        Ok(loss_f64(&y, &target, x0.band_len(), lambda))
    }

    /// Runs the network on `input`, adds the gradient of the loss against
    /// `x0` to the stored gradient and returns the loss.
    pub fn backward(&mut self, input: &ConditionedInput<'_>, x0: &WaveletCoeffs, lambda: f64) -> Result<f64> {
        input.x_t.ensure_same_layout(x0)?;
        self.check_input(input)?;
        let (y, cache) = self.run(input);
        let target: Vec<f64> = x0.data().iter().map(|&v| v as f64).collect();
        let (loss, gdata) = loss_and_grad_f64(&y.data, &target, x0.band_len(), lambda);
        let gy = Tensor { data: gdata, ..y };
        self.backprop(&cache, &gy);
        Ok(loss)
    }
}

impl Denoiser for DenoiserNet {
    fn predict_x0(&self, input: &ConditionedInput<'_>) -> Result<WaveletCoeffs> {
        self.forward(input)
    }
}
