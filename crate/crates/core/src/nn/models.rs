//! The three window models and their losses with analytic gradients.
//!
//! Recurrent models work step-major: a batch `B x L x F` becomes `L` matrices
//! of `B x F`, and per-step heads run on the `L*B` rows stacked in step order.
//! The transformer works sample-major on `B*L` rows.

use ndarray::{concatenate, s, Array2, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{
    dropout_mask, positional_encoding, sigmoid, AttentionCache, Dense, FeedForward, FeedForwardCache,
    LayerNorm, LayerNormCache, Lstm, LstmStep, MultiHeadAttention,
};
use super::loss::{bce_with_logits, mse, mse_grad};
use super::params::ParamStore;
use super::{lit, shape_err, ModelConfig, ModelKind, Result, Scalar};

/// Dropout settings for a training pass.
pub struct DropoutCtx<'a> {
    pub rate: f64,
    pub rng: &'a mut ChaCha8Rng,
}

/// Weight of the adversarial term in the generator/encoder objective.
pub const ADVERSARIAL_WEIGHT: f64 = 0.1;

pub fn to_steps<T: Scalar>(x: &Array3<T>) -> Vec<Array2<T>> {
    x.axis_iter(Axis(1)).map(|v| v.to_owned()).collect()
}

pub fn stack<T: Scalar>(steps: &[Array2<T>]) -> Array2<T> {
    let views: Vec<_> = steps.iter().map(|s| s.view()).collect();
    concatenate(Axis(0), &views).expect("steps share a width")
}

pub fn unstack<T: Scalar>(a: &Array2<T>, n_steps: usize) -> Vec<Array2<T>> {
    let rows = a.nrows() / n_steps.max(1);
    (0..n_steps)
        .map(|t| a.slice(s![t * rows..(t + 1) * rows, ..]).to_owned())
        .collect()
}

/// Step-major stacked rows back to `B x L x C`.
fn stacked_to_batch<T: Scalar>(a: &Array2<T>, b: usize, l: usize) -> Array3<T> {
    Array3::from_shape_fn((b, l, a.ncols()), |(i, t, c)| a[[t * b + i, c]])
}

fn sample_major<T: Scalar>(x: &Array3<T>) -> Array2<T> {
    let (b, l, f) = x.dim();
    x.as_standard_layout()
        .into_owned()
        .into_shape_with_order((b * l, f))
        .expect("contiguous")
}

fn check_batch<T>(context: &'static str, x: &Array3<T>, features: usize) -> Result<()> {
    if x.dim().2 != features {
        return Err(shape_err(context, features, x.dim().2));
    }
    Ok(())
}

/// Stacked LSTM layers, dropout, and a per-step linear head.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqNet {
    pub lstms: Vec<Lstm>,
    pub head: Dense,
}

pub struct SeqNetCache<T> {
    steps: Vec<Vec<LstmStep<T>>>,
    mask: Option<Array2<T>>,
    hidden: Array2<T>,
    n_steps: usize,
}

impl SeqNet {
    pub fn new(prefix: &str, input: usize, hidden: usize, layers: usize, output: usize) -> Self {
        let lstms = (0..layers)
            .map(|k| Lstm::new(&format!("{prefix}.lstm{k}"), if k == 0 { input } else { hidden }, hidden))
            .collect();
        Self {
            lstms,
            head: Dense::new(&format!("{prefix}.head"), hidden, output),
        }
    }

    pub fn init<T: Scalar>(&self, p: &mut ParamStore<T>, rng: &mut ChaCha8Rng) {
        for l in &self.lstms {
            l.init(p, rng);
        }
        self.head.init(p, rng);
    }

    /// Returns the stacked `(L*B) x output` predictions.
    pub fn forward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        xs: &[Array2<T>],
        dropout: Option<&mut DropoutCtx<'_>>,
    ) -> Result<(Array2<T>, SeqNetCache<T>)> {
        let mut h = xs.to_vec();
        let mut steps = Vec::with_capacity(self.lstms.len());
        for l in &self.lstms {
            let (out, st) = l.forward_seq(p, &h)?;
            h = out;
            steps.push(st);
        }
        let mut hidden = stack(&h);
        let mask = dropout.filter(|d| d.rate > 0.0).map(|d| {
            let m = dropout_mask(hidden.nrows(), hidden.ncols(), d.rate, d.rng);
            hidden *= &m;
            m
        });
        let y = self.head.forward(p, &hidden)?;
        Ok((
            y,
            SeqNetCache {
                steps,
                mask,
                hidden,
                n_steps: xs.len(),
            },
        ))
    }

    /// Returns per-step input gradients.
    pub fn backward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        g: &mut ParamStore<T>,
        cache: &SeqNetCache<T>,
        dy: &Array2<T>,
    ) -> Vec<Array2<T>> {
        let mut dh = self.head.backward(p, g, &cache.hidden, dy);
        if let Some(m) = &cache.mask {
            dh *= m;
        }
        let mut d = unstack(&dh, cache.n_steps);
        for (l, st) in self.lstms.iter().zip(&cache.steps).rev() {
            d = l.backward_seq(p, g, st, &d);
        }
        d
    }
}

/// Stacked LSTM read out at the last step through a single logit.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqCritic {
    pub lstms: Vec<Lstm>,
    pub head: Dense,
}

pub struct SeqCriticCache<T> {
    steps: Vec<Vec<LstmStep<T>>>,
    last: Array2<T>,
}

impl SeqCritic {
    pub fn new(prefix: &str, input: usize, hidden: usize, layers: usize) -> Self {
        let lstms = (0..layers)
            .map(|k| Lstm::new(&format!("{prefix}.lstm{k}"), if k == 0 { input } else { hidden }, hidden))
            .collect();
        Self {
            lstms,
            head: Dense::new(&format!("{prefix}.head"), hidden, 1),
        }
    }

    pub fn init<T: Scalar>(&self, p: &mut ParamStore<T>, rng: &mut ChaCha8Rng) {
        for l in &self.lstms {
            l.init(p, rng);
        }
        self.head.init(p, rng);
    }

    /// Logits, `B x 1`.
    pub fn forward<T: Scalar>(&self, p: &ParamStore<T>, xs: &[Array2<T>]) -> Result<(Array2<T>, SeqCriticCache<T>)> {
        let mut h = xs.to_vec();
        let mut steps = Vec::with_capacity(self.lstms.len());
        for l in &self.lstms {
            let (out, st) = l.forward_seq(p, &h)?;
            h = out;
            steps.push(st);
        }
        let last = h
            .last()
            .cloned()
            .ok_or_else(|| shape_err("critic sequence", "at least one step", 0))?;
        let logits = self.head.forward(p, &last)?;
        Ok((logits, SeqCriticCache { steps, last }))
    }

    pub fn backward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        g: &mut ParamStore<T>,
        cache: &SeqCriticCache<T>,
        dlogits: &Array2<T>,
    ) -> Vec<Array2<T>> {
        let dlast = self.head.backward(p, g, &cache.last, dlogits);
        let n = cache.steps[0].len();
        let mut d: Vec<Array2<T>> = (0..n).map(|_| Array2::zeros(dlast.raw_dim())).collect();
        d[n - 1] = dlast;
        for (l, st) in self.lstms.iter().zip(&cache.steps).rev() {
            d = l.backward_seq(p, g, st, &d);
        }
        d
    }
}

/// Generator, discriminator and encoder of the adversarial model.
#[derive(Debug, Clone, PartialEq)]
pub struct Gan {
    pub generator: SeqNet,
    pub encoder: SeqNet,
    pub critic: SeqCritic,
    pub latent: usize,
    pub features: usize,
    pub outputs: usize,
}

pub const GENERATOR_PREFIX: &str = "gen.";
pub const ENCODER_PREFIX: &str = "enc.";
pub const CRITIC_PREFIX: &str = "disc.";

/// Losses of one generator/encoder pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GanLoss<T> {
    pub total: T,
    pub recon: T,
    pub adversarial: T,
}

impl Gan {
    fn new(cfg: &ModelConfig) -> Self {
        Self {
            generator: SeqNet::new("gen", cfg.latent_size, cfg.hidden_size, cfg.n_layers, cfg.input_size),
            encoder: SeqNet::new("enc", cfg.input_size, cfg.hidden_size, cfg.n_layers, cfg.latent_size),
            critic: SeqCritic::new("disc", cfg.input_size, cfg.hidden_size, cfg.n_layers),
            latent: cfg.latent_size,
            features: cfg.input_size,
            outputs: cfg.output_size,
        }
    }

    /// `G(E(x))`, stacked step-major, all features.
    pub fn reconstruct<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        x: &Array3<T>,
        dropout: Option<&mut DropoutCtx<'_>>,
    ) -> Result<(Array2<T>, SeqNetCache<T>, SeqNetCache<T>)> {
        check_batch("gan input", x, self.features)?;
        let l = x.dim().1;
        let (z, ecache) = self.encoder.forward(p, &to_steps(x), None)?;
        let (rec, gcache) = self.generator.forward(p, &unstack(&z, l), dropout)?;
        Ok((rec, ecache, gcache))
    }

    /// Discriminator probabilities for each window, `B x 1`.
    pub fn discriminate<T: Scalar>(&self, p: &ParamStore<T>, x: &Array3<T>) -> Result<Array2<T>> {
        check_batch("gan input", x, self.features)?;
        Ok(self.critic.forward(p, &to_steps(x))?.0.mapv(sigmoid))
    }

    pub fn generate<T: Scalar>(&self, p: &ParamStore<T>, noise: &Array3<T>) -> Result<Array3<T>> {
        check_batch("gan noise", noise, self.latent)?;
        let (b, l, _) = noise.dim();
        let (fake, _) = self.generator.forward(p, &to_steps(noise), None)?;
        Ok(stacked_to_batch(&fake, b, l))
    }

    /// Discriminator objective `BCE(D(x), 1) + BCE(D(G(noise)), 0)`; gradients
    /// cover the discriminator parameters only.
    pub fn critic_loss_and_grads<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        x: &Array3<T>,
        noise: &Array3<T>,
    ) -> Result<(T, ParamStore<T>)> {
        check_batch("gan input", x, self.features)?;
        check_batch("gan noise", noise, self.latent)?;
        let l = x.dim().1;
        let (fake, _) = self.generator.forward(p, &to_steps(noise), None)?;
        let (real_logits, real_cache) = self.critic.forward(p, &to_steps(x))?;
        let (fake_logits, fake_cache) = self.critic.forward(p, &unstack(&fake, l))?;
        let (l_real, d_real) = bce_with_logits(&real_logits, &Array2::ones(real_logits.raw_dim()))?;
        let (l_fake, d_fake) = bce_with_logits(&fake_logits, &Array2::zeros(fake_logits.raw_dim()))?;
        let mut g = critic_grads(p);
        self.critic.backward(p, &mut g, &real_cache, &d_real);
        self.critic.backward(p, &mut g, &fake_cache, &d_fake);
        Ok((l_real + l_fake, g))
    }

    /// Generator/encoder objective: reconstruction MSE of `G(E(x))` against
    /// `target` plus a weighted non-saturating adversarial term on
    /// `G(noise)`. Gradients exclude the discriminator.
    pub fn generator_loss_and_grads<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        x: &Array3<T>,
        target: &Array3<T>,
        noise: &Array3<T>,
        mut dropout: Option<&mut DropoutCtx<'_>>,
    ) -> Result<(GanLoss<T>, ParamStore<T>)> {
        check_batch("gan noise", noise, self.latent)?;
        let (b, l, _) = x.dim();
        let (rec, ecache, gcache) = self.reconstruct(p, x, dropout.as_deref_mut())?;
        let rec_out = rec.slice(s![.., 0..self.outputs]).to_owned();
        let tgt = stack(&to_steps(target));
        let l_rec = mse(&rec_out, &tgt)?;
        let mut d_rec = Array2::zeros(rec.raw_dim());
        d_rec.slice_mut(s![.., 0..self.outputs]).assign(&mse_grad(&rec_out, &tgt));

        let (fake, fake_gcache) = self.generator.forward(p, &to_steps(noise), dropout)?;
        let (logits, ccache) = self.critic.forward(p, &unstack(&fake, l))?;
        let (l_adv, d_logits) = bce_with_logits(&logits, &Array2::ones((b, 1)))?;
        let w: T = lit(ADVERSARIAL_WEIGHT);

        let mut g = p.zeros_like();
        let d_fake = self.critic.backward(p, &mut g, &ccache, &(d_logits * w));
        self.generator.backward(p, &mut g, &fake_gcache, &stack(&d_fake));
        let dz = self.generator.backward(p, &mut g, &gcache, &d_rec);
        self.encoder.backward(p, &mut g, &ecache, &stack(&dz));
        g.retain(|n| !n.starts_with(CRITIC_PREFIX));
        Ok((
            GanLoss {
                total: l_rec + w * l_adv,
                recon: l_rec,
                adversarial: l_adv,
            },
            g,
        ))
    }
}

fn critic_grads<T: Scalar>(p: &ParamStore<T>) -> ParamStore<T> {
    let mut g = ParamStore::new();
    for (name, t) in p.iter().filter(|(n, _)| n.starts_with(CRITIC_PREFIX)) {
        g.insert(name, Array2::zeros(t.raw_dim()));
    }
    g
}

#[derive(Debug, Clone, PartialEq)]
struct EncoderLayer {
    attn: MultiHeadAttention,
    ln1: LayerNorm,
    ffn: FeedForward,
    ln2: LayerNorm,
}

struct EncoderCache<T> {
    attn: AttentionCache<T>,
    ln1: LayerNormCache<T>,
    ffn: FeedForwardCache<T>,
    ln2: LayerNormCache<T>,
}

#[derive(Debug, Clone, PartialEq)]
struct DecoderLayer {
    self_attn: MultiHeadAttention,
    ln1: LayerNorm,
    cross: MultiHeadAttention,
    ln2: LayerNorm,
    ffn: FeedForward,
    ln3: LayerNorm,
}

struct DecoderCache<T> {
    self_attn: AttentionCache<T>,
    ln1: LayerNormCache<T>,
    cross: AttentionCache<T>,
    ln2: LayerNormCache<T>,
    ffn: FeedForwardCache<T>,
    ln3: LayerNormCache<T>,
}

/// Encoder/decoder transformer over windows with a linear forecast head.
#[derive(Debug, Clone, PartialEq)]
pub struct Tst {
    embed: Dense,
    encoders: Vec<EncoderLayer>,
    decoders: Vec<DecoderLayer>,
    head: Dense,
    width: usize,
    features: usize,
}

pub struct TstCache<T> {
    x: Array2<T>,
    enc: Vec<EncoderCache<T>>,
    dec: Vec<DecoderCache<T>>,
    mask: Option<Array2<T>>,
    hidden: Array2<T>,
    b: usize,
    l: usize,
}

/// Row `b*L + t` takes row `b*L + t - 1`; the first step of each sample is zero.
fn shift_down<T: Scalar>(a: &Array2<T>, b: usize, l: usize) -> Array2<T> {
    let mut out = Array2::zeros(a.raw_dim());
    for smp in 0..b {
        let base = smp * l;
        if l > 1 {
            out.slice_mut(s![base + 1..base + l, ..])
                .assign(&a.slice(s![base..base + l - 1, ..]));
        }
    }
    out
}

fn shift_up<T: Scalar>(a: &Array2<T>, b: usize, l: usize) -> Array2<T> {
    let mut out = Array2::zeros(a.raw_dim());
    for smp in 0..b {
        let base = smp * l;
        if l > 1 {
            out.slice_mut(s![base..base + l - 1, ..])
                .assign(&a.slice(s![base + 1..base + l, ..]));
        }
    }
    out
}

impl Tst {
    fn new(cfg: &ModelConfig) -> Self {
        let d = cfg.hidden_size;
        let h = cfg.n_heads;
        Self {
            embed: Dense::new("tst.embed", cfg.input_size, d),
            encoders: (0..cfg.n_layers)
                .map(|k| {
                    let p = format!("tst.enc{k}");
                    EncoderLayer {
                        attn: MultiHeadAttention::new(&format!("{p}.attn"), d, h),
                        ln1: LayerNorm::new(&format!("{p}.ln1"), d),
                        ffn: FeedForward::new(&format!("{p}.ffn"), d),
                        ln2: LayerNorm::new(&format!("{p}.ln2"), d),
                    }
                })
                .collect(),
            decoders: (0..cfg.n_layers)
                .map(|k| {
                    let p = format!("tst.dec{k}");
                    DecoderLayer {
                        self_attn: MultiHeadAttention::new(&format!("{p}.self"), d, h),
                        ln1: LayerNorm::new(&format!("{p}.ln1"), d),
                        cross: MultiHeadAttention::new(&format!("{p}.cross"), d, h),
                        ln2: LayerNorm::new(&format!("{p}.ln2"), d),
                        ffn: FeedForward::new(&format!("{p}.ffn"), d),
                        ln3: LayerNorm::new(&format!("{p}.ln3"), d),
                    }
                })
                .collect(),
            head: Dense::new("tst.head", d, cfg.output_size),
            width: d,
            features: cfg.input_size,
        }
    }

    fn init<T: Scalar>(&self, p: &mut ParamStore<T>, rng: &mut ChaCha8Rng) {
        self.embed.init(p, rng);
        for e in &self.encoders {
            e.attn.init(p, rng);
            e.ln1.init(p);
            e.ffn.init(p, rng);
            e.ln2.init(p);
        }
        for d in &self.decoders {
            d.self_attn.init(p, rng);
            d.ln1.init(p);
            d.cross.init(p, rng);
            d.ln2.init(p);
            d.ffn.init(p, rng);
            d.ln3.init(p);
        }
        self.head.init(p, rng);
    }

    /// Sample-major predictions, `(B*L) x output`.
    pub fn forward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        x: &Array3<T>,
        dropout: Option<&mut DropoutCtx<'_>>,
    ) -> Result<(Array2<T>, TstCache<T>)> {
        check_batch("transformer input", x, self.features)?;
        let (b, l, _) = x.dim();
        let xm = sample_major(x);
        let pe: Array2<T> = positional_encoding(l, self.width)?;
        let mut h = self.embed.forward(p, &xm)?;
        for smp in 0..b {
            let mut rows = h.slice_mut(s![smp * l..(smp + 1) * l, ..]);
            rows += &pe;
        }
        let mut enc = Vec::with_capacity(self.encoders.len());
        for layer in &self.encoders {
            let (a, attn) = layer.attn.forward(p, &h, &h, l, l, false)?;
            let (h1, ln1) = layer.ln1.forward(p, &(h + a))?;
            let (f, ffn) = layer.ffn.forward(p, &h1)?;
            let (h2, ln2) = layer.ln2.forward(p, &(h1 + f))?;
            h = h2;
            enc.push(EncoderCache { attn, ln1, ffn, ln2 });
        }
        let memory = h;
        let mut y = shift_down(&memory, b, l);
        let mut dec = Vec::with_capacity(self.decoders.len());
        for layer in &self.decoders {
            let (sa, self_attn) = layer.self_attn.forward(p, &y, &y, l, l, true)?;
            let (y1, ln1) = layer.ln1.forward(p, &(y + sa))?;
            let (c, cross) = layer.cross.forward(p, &y1, &memory, l, l, false)?;
            let (y2, ln2) = layer.ln2.forward(p, &(y1 + c))?;
            let (f, ffn) = layer.ffn.forward(p, &y2)?;
            let (y3, ln3) = layer.ln3.forward(p, &(y2 + f))?;
            y = y3;
            dec.push(DecoderCache {
                self_attn,
                ln1,
                cross,
                ln2,
                ffn,
                ln3,
            });
        }
        let mask = dropout.filter(|d| d.rate > 0.0).map(|d| {
            let m = dropout_mask(y.nrows(), y.ncols(), d.rate, d.rng);
            y *= &m;
            m
        });
        let out = self.head.forward(p, &y)?;
        Ok((
            out,
            TstCache {
                x: xm,
                enc,
                dec,
                mask,
                hidden: y,
                b,
                l,
            },
        ))
    }

    pub fn backward<T: Scalar>(&self, p: &ParamStore<T>, g: &mut ParamStore<T>, cache: &TstCache<T>, dout: &Array2<T>) {
        let (b, l) = (cache.b, cache.l);
        let mut dy = self.head.backward(p, g, &cache.hidden, dout);
        if let Some(m) = &cache.mask {
            dy *= m;
        }
        let mut d_memory: Array2<T> = Array2::zeros(dy.raw_dim());
        for (layer, c) in self.decoders.iter().zip(&cache.dec).rev() {
            let dr3 = layer.ln3.backward(p, g, &c.ln3, &dy);
            let dy2 = layer.ffn.backward(p, g, &c.ffn, &dr3) + &dr3;
            let dr2 = layer.ln2.backward(p, g, &c.ln2, &dy2);
            let (dq, dkv) = layer.cross.backward(p, g, &c.cross, &dr2);
            d_memory += &dkv;
            let dy1 = dq + &dr2;
            let dr1 = layer.ln1.backward(p, g, &c.ln1, &dy1);
            let (dq, dkv) = layer.self_attn.backward(p, g, &c.self_attn, &dr1);
            dy = dr1 + dq + dkv;
        }
        let mut dh = d_memory + shift_up(&dy, b, l);
        for (layer, c) in self.encoders.iter().zip(&cache.enc).rev() {
            let dr2 = layer.ln2.backward(p, g, &c.ln2, &dh);
            let dh1 = layer.ffn.backward(p, g, &c.ffn, &dr2) + &dr2;
            let dr1 = layer.ln1.backward(p, g, &c.ln1, &dh1);
            let (dq, dkv) = layer.attn.backward(p, g, &c.attn, &dr1);
            dh = dr1 + dq + dkv;
        }
        self.embed.backward(p, g, &cache.x, &dh);
    }
}

/// A configured architecture.
#[derive(Debug, Clone, PartialEq)]
pub enum Network {
    LstmRecon { net: SeqNet, features: usize },
    GanLstm(Gan),
    Tst(Tst),
}

impl Network {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(match cfg.kind {
            ModelKind::LstmRecon => Network::LstmRecon {
                net: SeqNet::new("lstm", cfg.input_size, cfg.hidden_size, cfg.n_layers, cfg.output_size),
                features: cfg.input_size,
            },
            ModelKind::GanLstm => Network::GanLstm(Gan::new(cfg)),
            ModelKind::Tst => Network::Tst(Tst::new(cfg)),
        })
    }

    /// Fresh parameters drawn from ChaCha stream 0 of `seed`.
    pub fn init<T: Scalar>(&self, seed: u64) -> ParamStore<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        match self {
            Network::LstmRecon { net, .. } => net.init(&mut p, &mut rng),
            Network::GanLstm(gan) => {
                gan.generator.init(&mut p, &mut rng);
                gan.critic.init(&mut p, &mut rng);
                gan.encoder.init(&mut p, &mut rng);
            }
            Network::Tst(t) => t.init(&mut p, &mut rng),
        }
        p
    }

    /// Model output for each window, `B x L x output`, with dropout off.
    pub fn predict<T: Scalar>(&self, p: &ParamStore<T>, x: &Array3<T>) -> Result<Array3<T>> {
        let (b, l, _) = x.dim();
        match self {
            Network::LstmRecon { net, features } => {
                check_batch("lstm input", x, *features)?;
                let (y, _) = net.forward(p, &to_steps(x), None)?;
                Ok(stacked_to_batch(&y, b, l))
            }
            Network::GanLstm(gan) => {
                let (rec, _, _) = gan.reconstruct(p, x, None)?;
                let out = rec.slice(s![.., 0..gan.outputs]).to_owned();
                Ok(stacked_to_batch(&out, b, l))
            }
            Network::Tst(t) => {
                let (y, _) = t.forward(p, x, None)?;
                let o = y.ncols();
                Ok(y.into_shape_with_order((b, l, o)).expect("sample-major rows"))
            }
        }
    }

    /// Reconstruction (or forecast) MSE against `target` (`B x L x output`)
    /// and its gradient. For the adversarial model this is the `G(E(x))`
    /// reconstruction term alone.
    pub fn loss_and_grads<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        x: &Array3<T>,
        target: &Array3<T>,
        dropout: Option<&mut DropoutCtx<'_>>,
    ) -> Result<(T, ParamStore<T>)> {
        let (b, l, _) = x.dim();
        if target.dim().0 != b || target.dim().1 != l {
            return Err(shape_err("target", (b, l), target.dim()));
        }
        let mut g = p.zeros_like();
        let loss = match self {
            Network::LstmRecon { net, features } => {
                check_batch("lstm input", x, *features)?;
                let (y, cache) = net.forward(p, &to_steps(x), dropout)?;
                let tgt = stack(&to_steps(target));
                let loss = mse(&y, &tgt)?;
                net.backward(p, &mut g, &cache, &mse_grad(&y, &tgt));
                loss
            }
            Network::GanLstm(gan) => {
                let (rec, ecache, gcache) = gan.reconstruct(p, x, dropout)?;
                let out = rec.slice(s![.., 0..gan.outputs]).to_owned();
                let tgt = stack(&to_steps(target));
                let loss = mse(&out, &tgt)?;
                let mut d = Array2::zeros(rec.raw_dim());
                d.slice_mut(s![.., 0..gan.outputs]).assign(&mse_grad(&out, &tgt));
                let dz = gan.generator.backward(p, &mut g, &gcache, &d);
                gan.encoder.backward(p, &mut g, &ecache, &stack(&dz));
                g.retain(|n| !n.starts_with(CRITIC_PREFIX));
                loss
            }
            Network::Tst(t) => {
                let (y, cache) = t.forward(p, x, dropout)?;
                let tgt = sample_major(target);
                let loss = mse(&y, &tgt)?;
                t.backward(p, &mut g, &cache, &mse_grad(&y, &tgt));
                loss
            }
        };
        Ok((loss, g))
    }
}
