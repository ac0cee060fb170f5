//! Dilated temporal-convolution response-timing model.
//!
//! Log-Mel frames pass through a stack of causal dilated convolution blocks
//! (conv, ReLU, residual, layer norm, max-pool), then a main model that is
//! either a self-attention encoder over the pooled sequence or a small MLP
//! over the time-averaged features. A linear head and a sigmoid give the
//! probability that the agent should respond now.

mod checkpoint;
pub mod layers;
pub mod params;
pub mod real;

pub use checkpoint::{load_checkpoint, save_checkpoint, ModelCheckpoint};
pub(crate) use checkpoint::{decode as decode_le, encode as encode_le};
pub use params::{AdamConfig, AdamState, Grads, ParamSet, Tensor};
pub use real::Real;

use crate::audio::FeatureMatrix;
use crate::error::{Error, Result};
use layers::{
    max_pool, max_pool_backward, mean_rows, mean_rows_backward, positional_encoding, relu, relu_backward,
    AttentionCache, CausalConv, LayerNorm, LayerNormCache, Linear, Mat, SelfAttention,
};
use params::Init;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MainModelKind {
    AttentionEncoder,
    Mlp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Input feature rows (mel bins).
    pub n_mels: usize,
    pub tcn_blocks: usize,
    pub channels: usize,
    pub kernel_size: usize,
    pub dilations: Vec<usize>,
    pub pool_stride: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub encoder_layers: usize,
    /// Hidden width of the encoder feed-forward sublayer.
    pub ff_hidden: usize,
    pub main_model: MainModelKind,
    pub optimizer: AdamConfig,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_mels: 64,
            tcn_blocks: 4,
            channels: 64,
            kernel_size: 3,
            dilations: vec![1, 2, 4, 8],
            pool_stride: 2,
            d_model: 64,
            n_heads: 4,
            encoder_layers: 2,
            ff_hidden: 128,
            main_model: MainModelKind::AttentionEncoder,
            optimizer: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_mels == 0 || self.channels == 0 || self.d_model == 0 {
            return fail("n_mels, channels and d_model must be positive".into());
        }
        if self.dilations.len() != self.tcn_blocks {
            return fail(format!(
                "dilations has {} entries but tcn_blocks is {}",
                self.dilations.len(),
                self.tcn_blocks
            ));
        }
        if self.dilations.iter().any(|&d| d == 0) {
            return fail("every dilation must be >= 1".into());
        }
        if self.kernel_size == 0 || self.kernel_size % 2 == 0 {
            return fail(format!("kernel_size must be odd, got {}", self.kernel_size));
        }
        if self.pool_stride == 0 {
            return fail("pool_stride must be >= 1".into());
        }
        if self.main_model == MainModelKind::AttentionEncoder {
            if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
                return fail(format!("d_model {} is not divisible by n_heads {}", self.d_model, self.n_heads));
            }
            if self.ff_hidden == 0 {
                return fail("ff_hidden must be positive".into());
            }
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0 && (0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2) && o.eps > 0.0) {
            return fail("optimizer settings out of range".into());
        }
        Ok(())
    }

    /// Sequence length reaching the main model for `frames` input frames.
    pub fn encoder_len(&self, frames: usize) -> usize {
        (0..self.tcn_blocks).fold(frames, |t, _| t / self.pool_stride)
    }

    /// Receptive field of the convolution stack, in input frames.
    pub fn receptive_field(&self) -> usize {
        let mut rf = 1;
        let mut rate = 1;
        for &d in &self.dilations {
            rf += (self.kernel_size - 1) * d * rate;
            rf += (self.pool_stride - 1) * rate;
            rate *= self.pool_stride;
        }
        rf
    }
}

#[derive(Clone, Debug)]
struct TcnBlock {
    conv: CausalConv,
    residual: Option<Linear>,
    norm: LayerNorm,
}

#[derive(Clone, Debug)]
struct EncoderLayer {
    ln1: LayerNorm,
    attn: SelfAttention,
    ln2: LayerNorm,
    ff1: Linear,
    ff2: Linear,
}

#[derive(Clone, Debug)]
enum Main {
    Attention {
        proj: Linear,
        layers: Vec<EncoderLayer>,
        final_ln: LayerNorm,
    },
    Mlp {
        fc1: Linear,
        fc2: Linear,
    },
}

#[derive(Clone, Debug)]
struct Arch {
    blocks: Vec<TcnBlock>,
    main: Main,
    head: Linear,
}

struct BlockCache<R> {
    input: Mat<R>,
    activated: Mat<R>,
    norm: LayerNormCache<R>,
    pre_pool_rows: usize,
    argmax: Vec<u32>,
}

struct EncoderCache<R> {
    ln1_out: Mat<R>,
    ln1: LayerNormCache<R>,
    attn: AttentionCache<R>,
    ln2_out: Mat<R>,
    ln2: LayerNormCache<R>,
    hidden: Mat<R>,
}

enum MainCache<R> {
    Attention {
        layers: Vec<EncoderCache<R>>,
        final_ln: LayerNormCache<R>,
        rows: usize,
    },
    Mlp {
        pooled: Mat<R>,
        h1: Mat<R>,
    },
}

/// Activations retained for one backward pass.
pub struct ForwardCache<R> {
    blocks: Vec<BlockCache<R>>,
    tcn_out: Mat<R>,
    main: MainCache<R>,
    head_in: Mat<R>,
    logit: R,
}

impl<R: Real> ForwardCache<R> {
    pub fn logit(&self) -> f64 {
        self.logit.f64()
    }
}

/// One weighted example of a training batch.
#[derive(Clone, Copy, Debug)]
pub struct TrainExample<'a> {
    pub x: &'a FeatureMatrix,
    pub y: u8,
    pub weight: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepOutcome {
    Applied { loss: f64 },
    /// The update was not applied; parameters and optimizer state are untouched.
    Skipped { loss: f64 },
}

impl StepOutcome {
    pub fn loss(&self) -> f64 {
        match *self {
            StepOutcome::Applied { loss } | StepOutcome::Skipped { loss } => loss,
        }
    }

    pub fn applied(&self) -> bool {
        matches!(self, StepOutcome::Applied { .. })
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of `sigmoid(z)` against `y`, stable for large `|z|`.
pub fn bce_with_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

#[derive(Clone, Debug)]
pub struct Model<R: Real = f32> {
    cfg: ModelConfig,
    arch: Arch,
    params: ParamSet<R>,
    adam: AdamState<R>,
    step_count: u64,
}

fn xavier(fan_in: usize, fan_out: usize) -> Init {
    Init::Uniform((6.0 / (fan_in + fan_out) as f64).sqrt())
}

fn he(fan_in: usize) -> Init {
    Init::Uniform((6.0 / fan_in as f64).sqrt())
}

impl<R: Real> Model<R> {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut p = ParamSet::default();
        let linear = |p: &mut ParamSet<R>, rng: &mut ChaCha8Rng, name: &str, i: usize, o: usize, bias: bool| Linear {
            w: p.add(format!("{name}.w"), &[i, o], xavier(i, o), rng),
            b: bias.then(|| p.add(format!("{name}.b"), &[o], Init::Zeros, rng)),
            inputs: i,
            outputs: o,
        };
        let layer_norm = |p: &mut ParamSet<R>, rng: &mut ChaCha8Rng, name: &str, width: usize| LayerNorm {
            gain: p.add(format!("{name}.g"), &[width], Init::Ones, rng),
            bias: p.add(format!("{name}.b"), &[width], Init::Zeros, rng),
            width,
        };

        let k = cfg.kernel_size;
        let c = cfg.channels;
        let mut blocks = Vec::with_capacity(cfg.tcn_blocks);
        for (i, &dilation) in cfg.dilations.iter().enumerate() {
            let inputs = if i == 0 { cfg.n_mels } else { c };
            let conv = CausalConv {
                w: p.add(format!("tcn.{i}.conv.w"), &[k, inputs, c], he(inputs * k), &mut rng),
                b: p.add(format!("tcn.{i}.conv.b"), &[c], Init::Zeros, &mut rng),
                kernel: k,
                dilation,
                inputs,
                outputs: c,
            };
            let residual = (inputs != c).then(|| linear(&mut p, &mut rng, &format!("tcn.{i}.res"), inputs, c, false));
            let norm = layer_norm(&mut p, &mut rng, &format!("tcn.{i}.ln"), c);
            blocks.push(TcnBlock { conv, residual, norm });
        }

        let d = cfg.d_model;
        let main = match cfg.main_model {
            MainModelKind::AttentionEncoder => {
                let proj = linear(&mut p, &mut rng, "proj", c, d, true);
                let mut layers = Vec::with_capacity(cfg.encoder_layers);
                for l in 0..cfg.encoder_layers {
                    let ln1 = layer_norm(&mut p, &mut rng, &format!("enc.{l}.ln1"), d);
                    let attn = SelfAttention {
                        q: linear(&mut p, &mut rng, &format!("enc.{l}.attn.q"), d, d, true),
                        k: linear(&mut p, &mut rng, &format!("enc.{l}.attn.k"), d, d, true),
                        v: linear(&mut p, &mut rng, &format!("enc.{l}.attn.v"), d, d, true),
                        o: linear(&mut p, &mut rng, &format!("enc.{l}.attn.o"), d, d, true),
                        heads: cfg.n_heads,
                        width: d,
                    };
                    let ln2 = layer_norm(&mut p, &mut rng, &format!("enc.{l}.ln2"), d);
                    let ff1 = linear(&mut p, &mut rng, &format!("enc.{l}.ff1"), d, cfg.ff_hidden, true);
                    let ff2 = linear(&mut p, &mut rng, &format!("enc.{l}.ff2"), cfg.ff_hidden, d, true);
                    layers.push(EncoderLayer { ln1, attn, ln2, ff1, ff2 });
                }
                let final_ln = layer_norm(&mut p, &mut rng, "enc.final_ln", d);
                Main::Attention { proj, layers, final_ln }
            }
            MainModelKind::Mlp => Main::Mlp {
                fc1: linear(&mut p, &mut rng, "mlp.fc1", c, d, true),
                fc2: linear(&mut p, &mut rng, "mlp.fc2", d, d, true),
            },
        };
        let head = linear(&mut p, &mut rng, "head", d, 1, true);
        let adam = AdamState::new(&p);
        Ok(Model {
            cfg,
            arch: Arch { blocks, main, head },
            params: p,
            adam,
            step_count: 0,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet<R> {
        &self.params
    }

    /// Direct parameter access for perturbation tests and checkpoint loading.
    pub fn params_mut(&mut self) -> &mut ParamSet<R> {
        &mut self.params
    }

    pub fn optimizer_state(&self) -> &AdamState<R> {
        &self.adam
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub(crate) fn restore_state(&mut self, params: ParamSet<R>, adam: AdamState<R>, step_count: u64) {
        self.params = params;
        self.adam = adam;
        self.step_count = step_count;
    }

    fn input_matrix(&self, x: &FeatureMatrix) -> Result<Mat<R>> {
        if x.n_mels() != self.cfg.n_mels {
            return Err(Error::Input(format!(
                "feature matrix has {} mel bins, model expects {}",
                x.n_mels(),
                self.cfg.n_mels
            )));
        }
        let frames = x.n_frames();
        if self.cfg.encoder_len(frames) == 0 {
            return Err(Error::Input(format!(
                "{frames} frames collapse to an empty sequence after {} pooling stages",
                self.cfg.tcn_blocks
            )));
        }
        // Transpose mel-major input into time-major activations.
        let mels = x.n_mels();
        let mut m = Mat::zeros(frames, mels);
        let vals = x.values();
        for f0 in (0..frames).step_by(32) {
            let f1 = (f0 + 32).min(frames);
            for mel in 0..mels {
                let src = &vals[mel * frames + f0..mel * frames + f1];
                for (f, v) in (f0..f1).zip(src) {
                    m.data[f * mels + mel] = R::c(*v as f64);
                }
            }
        }
        Ok(m)
    }

    /// Probability that the agent should respond, with the cache for backprop.
    pub fn forward(&self, x: &FeatureMatrix) -> Result<(f64, ForwardCache<R>)> {
        let input = self.input_matrix(x)?;
        let cache = self.forward_mat(input);
        Ok((sigmoid(cache.logit.f64()), cache))
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Result<f64> {
        self.forward(x).map(|(p, _)| p)
    }

    /// Smallest distance of any ReLU pre-activation from zero or any max-pool
    /// pair from a tie. Central differences are only meaningful when this is
    /// well above the perturbation size.
    pub fn kink_margin(&self, x: &FeatureMatrix) -> Result<f64> {
        let p = &self.params;
        let mut margin = f64::MAX;
        let mut h = self.input_matrix(x)?;
        for block in &self.arch.blocks {
            let pre = block.conv.forward(p, &h);
            margin = pre.data.iter().fold(margin, |m, v| m.min(v.f64().abs()));
            let mut act = pre;
            relu(&mut act);
            let mut sum = match &block.residual {
                Some(r) => r.forward(p, &h),
                None => h.clone(),
            };
            sum.add_assign(&act);
            let (n, _) = block.norm.forward(p, &sum);
            let s = self.cfg.pool_stride;
            for r in 0..n.rows / s {
                for c in 0..n.cols {
                    for a in 0..s {
                        for b in a + 1..s {
                            let gap = n.data[(r * s + a) * n.cols + c] - n.data[(r * s + b) * n.cols + c];
                            margin = margin.min(gap.f64().abs());
                        }
                    }
                }
            }
            h = max_pool(&n, s).0;
        }
        match &self.arch.main {
            Main::Attention { proj, layers, .. } => {
                let mut z = proj.forward(p, &h);
                z.add_assign(&positional_encoding(z.rows, z.cols));
                for layer in layers {
                    let (u, _) = layer.ln1.forward(p, &z);
                    z.add_assign(&layer.attn.forward(p, &u).0);
                    let (u2, _) = layer.ln2.forward(p, &z);
                    let pre = layer.ff1.forward(p, &u2);
                    margin = pre.data.iter().fold(margin, |m, v| m.min(v.f64().abs()));
                    let mut hid = pre;
                    relu(&mut hid);
                    z.add_assign(&layer.ff2.forward(p, &hid));
                }
            }
            Main::Mlp { fc1, fc2 } => {
                let avg = mean_rows(&h);
                let pooled = Mat { rows: 1, cols: avg.len(), data: avg };
                let pre1 = fc1.forward(p, &pooled);
                margin = pre1.data.iter().fold(margin, |m, v| m.min(v.f64().abs()));
                let mut h1 = pre1;
                relu(&mut h1);
                let pre2 = fc2.forward(p, &h1);
                margin = pre2.data.iter().fold(margin, |m, v| m.min(v.f64().abs()));
            }
        }
        Ok(margin)
    }

    fn forward_mat(&self, mut h: Mat<R>) -> ForwardCache<R> {
        let p = &self.params;
        let mut blocks = Vec::with_capacity(self.arch.blocks.len());
        for block in &self.arch.blocks {
            let mut act = block.conv.forward(p, &h);
            relu(&mut act);
            let total = match &block.residual {
                Some(res) => {
                    let mut r = res.forward(p, &h);
                    r.add_assign(&act);
                    r
                }
                None => layers::sum(&h, &act),
            };
            let (normed, norm) = block.norm.forward(p, &total);
            let (pooled, argmax) = max_pool(&normed, self.cfg.pool_stride);
            blocks.push(BlockCache {
                input: h,
                activated: act,
                norm,
                pre_pool_rows: normed.rows,
                argmax,
            });
            h = pooled;
        }
        let tcn_out = h;

        let (main, head_in) = match &self.arch.main {
            Main::Attention { proj, layers, final_ln } => {
                let mut z = proj.forward(p, &tcn_out);
                z.add_assign(&positional_encoding(z.rows, z.cols));
                let mut caches = Vec::with_capacity(layers.len());
                for layer in layers {
                    let (ln1_out, ln1) = layer.ln1.forward(p, &z);
                    let (attn_out, attn) = layer.attn.forward(p, &ln1_out);
                    let mut z_mid = z.clone();
                    z_mid.add_assign(&attn_out);
                    let (ln2_out, ln2) = layer.ln2.forward(p, &z_mid);
                    let mut hidden = layer.ff1.forward(p, &ln2_out);
                    relu(&mut hidden);
                    let ff = layer.ff2.forward(p, &hidden);
                    let mut z_out = z_mid.clone();
                    z_out.add_assign(&ff);
                    caches.push(EncoderCache {
                        ln1_out,
                        ln1,
                        attn,
                        ln2_out,
                        ln2,
                        hidden,
                    });
                    z = z_out;
                }
                let (zf, final_cache) = final_ln.forward(p, &z);
                let pooled = mean_rows(&zf);
                let rows = zf.rows;
                let head_in = Mat {
                    rows: 1,
                    cols: pooled.len(),
                    data: pooled,
                };
                (
                    MainCache::Attention {
                        layers: caches,
                        final_ln: final_cache,
                        rows,
                    },
                    head_in,
                )
            }
            Main::Mlp { fc1, fc2 } => {
                let avg = mean_rows(&tcn_out);
                let pooled = Mat {
                    rows: 1,
                    cols: avg.len(),
                    data: avg,
                };
                let mut h1 = fc1.forward(p, &pooled);
                relu(&mut h1);
                let mut h2 = fc2.forward(p, &h1);
                relu(&mut h2);
                (MainCache::Mlp { pooled, h1 }, h2)
            }
        };
        let logit = self.arch.head.forward(p, &head_in).data[0];
        ForwardCache {
            blocks,
            tcn_out,
            main,
            head_in,
            logit,
        }
    }

    /// Backpropagates `dL/dlogit` through a cached forward pass, accumulating
    /// into `grads`. Consumes the cache.
    pub fn backward(&self, cache: ForwardCache<R>, dlogit: R, grads: &mut Grads<R>) {
        let p = &self.params;
        let dout = Mat {
            rows: 1,
            cols: 1,
            data: vec![dlogit],
        };
        let dhead = self.arch.head.backward(p, &cache.head_in, &dout, grads);

        let mut dh = match (&self.arch.main, cache.main) {
            (Main::Attention { proj, layers, final_ln }, MainCache::Attention { layers: caches, final_ln: fcache, rows }) => {
                let dzf = mean_rows_backward(rows, &dhead.data);
                let mut dz = final_ln.backward(p, &fcache, &dzf, grads);
                for (layer, c) in layers.iter().zip(caches).rev() {
                    // z_out = z_mid + ff2(relu(ff1(ln2(z_mid))))
                    let mut dhidden = layer.ff2.backward(p, &c.hidden, &dz, grads);
                    relu_backward(&c.hidden, &mut dhidden);
                    let dln2 = layer.ff1.backward(p, &c.ln2_out, &dhidden, grads);
                    let mut dz_mid = layer.ln2.backward(p, &c.ln2, &dln2, grads);
                    dz_mid.add_assign(&dz);
                    // z_mid = z_in + attn(ln1(z_in))
                    let dln1 = layer.attn.backward(p, &c.ln1_out, &c.attn, &dz_mid, grads);
                    let mut dz_in = layer.ln1.backward(p, &c.ln1, &dln1, grads);
                    dz_in.add_assign(&dz_mid);
                    dz = dz_in;
                }
                proj.backward(p, &cache.tcn_out, &dz, grads)
            }
            (Main::Mlp { fc1, fc2 }, MainCache::Mlp { pooled, h1 }) => {
                let mut dh2 = dhead;
                relu_backward(&cache.head_in, &mut dh2);
                let mut dh1 = fc2.backward(p, &h1, &dh2, grads);
                relu_backward(&h1, &mut dh1);
                let dpooled = fc1.backward(p, &pooled, &dh1, grads);
                mean_rows_backward(cache.tcn_out.rows, &dpooled.data)
            }
            _ => unreachable!("cache built by a different architecture"),
        };

        for (i, (block, c)) in self.arch.blocks.iter().zip(cache.blocks).enumerate().rev() {
            let dnormed = max_pool_backward(c.pre_pool_rows, dh.cols, &c.argmax, &dh);
            let dsum = block.norm.backward(p, &c.norm, &dnormed, grads);
            if i == 0 {
                // The input features need no gradient.
                if let Some(res) = &block.residual {
                    res.backward_params(&c.input, &dsum, grads);
                }
                let mut dact = dsum;
                relu_backward(&c.activated, &mut dact);
                block.conv.backward_params(&c.input, &dact, grads);
                break;
            }
            let mut dx = match &block.residual {
                Some(res) => res.backward(p, &c.input, &dsum, grads),
                None => dsum.clone(),
            };
            let mut dact = dsum;
            relu_backward(&c.activated, &mut dact);
            dx.add_assign(&block.conv.backward(p, &c.input, &dact, grads));
            dh = dx;
        }
    }

    /// Weighted mean BCE over a batch and its exact parameter gradient.
    pub fn loss_and_grads(&self, batch: &[TrainExample<'_>]) -> Result<(f64, Grads<R>)> {
        self.loss_and_grads_reusing(batch, None)
    }

    /// As [`Model::loss_and_grads`], taking the forward pass of
    /// `batch[i]` from `reuse = Some((i, cache))`. The cache must come from
    /// the current parameters.
    fn loss_and_grads_reusing(&self, batch: &[TrainExample<'_>], mut reuse: Option<(usize, ForwardCache<R>)>) -> Result<(f64, Grads<R>)> {
        validate_batch(batch)?;
        let total: f64 = batch.iter().map(|e| e.weight).sum();
        let mut grads = Grads::zeros_like(&self.params);
        let mut loss = 0.0;
        for (i, ex) in batch.iter().enumerate() {
            let (prob, cache) = match reuse.take() {
                Some((j, cache)) if j == i => (sigmoid(cache.logit.f64()), cache),
                other => {
                    reuse = other;
                    self.forward(ex.x)?
                }
            };
            let y = ex.y as f64;
            let share = ex.weight / total;
            loss += share * bce_with_logit(cache.logit.f64(), y);
            self.backward(cache, R::c(share * (prob - y)), &mut grads);
        }
        Ok((loss, grads))
    }

    /// Weighted mean BCE without gradients.
    pub fn loss(&self, batch: &[TrainExample<'_>]) -> Result<f64> {
        validate_batch(batch)?;
        let total: f64 = batch.iter().map(|e| e.weight).sum();
        let mut loss = 0.0;
        for ex in batch {
            let input = self.input_matrix(ex.x)?;
            let cache = self.forward_mat(input);
            loss += ex.weight / total * bce_with_logit(cache.logit.f64(), ex.y as f64);
        }
        Ok(loss)
    }

    /// One optimizer step on a weighted batch. Non-finite losses or gradients
    /// leave the model untouched and are reported as [`StepOutcome::Skipped`].
    pub fn train_step(&mut self, batch: &[TrainExample<'_>]) -> Result<StepOutcome> {
        self.train_step_reusing(batch, None)
    }

    pub(crate) fn train_step_reusing(
        &mut self,
        batch: &[TrainExample<'_>],
        reuse: Option<(usize, ForwardCache<R>)>,
    ) -> Result<StepOutcome> {
        if batch.is_empty() {
            return Err(Error::Contract("train_step needs a non-empty batch".into()));
        }
        let (loss, grads) = self.loss_and_grads_reusing(batch, reuse)?;
        if !loss.is_finite() || !grads.all_finite() {
            return Ok(StepOutcome::Skipped { loss });
        }
        self.step_count += 1;
        self.adam.apply(&self.cfg.optimizer, self.step_count, &mut self.params, &grads);
        assert!(self.params.all_finite(), "non-finite parameter after update {}", self.step_count);
        Ok(StepOutcome::Applied { loss })
    }
}

fn validate_batch(batch: &[TrainExample<'_>]) -> Result<()> {
    for ex in batch {
        if !(ex.weight > 0.0 && ex.weight.is_finite()) {
            return Err(Error::Contract(format!("sample weight must be positive, got {}", ex.weight)));
        }
        if ex.y > 1 {
            return Err(Error::Contract(format!("label must be 0 or 1, got {}", ex.y)));
        }
    }
    Ok(())
}
