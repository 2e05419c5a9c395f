//! Layers with explicit forward caches and backward passes.
//!
//! Row-batched convention: activations are `rows x features` matrices. Dense
//! weights are `out x in`; attention projections are `in x out` and applied on
//! the right.

use ndarray::{s, Array1, Array2, Axis, Zip};
use rand::Rng;

use super::params::{orthogonal, xavier_uniform, ParamStore};
use super::{lit, shape_err, NnError, Result, Scalar};

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

fn check_cols<T>(context: &'static str, x: &Array2<T>, want: usize) -> Result<()> {
    if x.ncols() != want {
        return Err(shape_err(context, want, x.ncols()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: String,
    pub b: String,
    pub input: usize,
    pub output: usize,
}

impl Dense {
    pub fn new(prefix: &str, input: usize, output: usize) -> Self {
        Self {
            w: format!("{prefix}.w"),
            b: format!("{prefix}.b"),
            input,
            output,
        }
    }

    pub fn init<T: Scalar, R: Rng + ?Sized>(&self, p: &mut ParamStore<T>, rng: &mut R) {
        p.insert(&self.w, xavier_uniform(self.output, self.input, rng));
        p.insert(&self.b, Array2::zeros((1, self.output)));
    }

    pub fn forward<T: Scalar>(&self, p: &ParamStore<T>, x: &Array2<T>) -> Result<Array2<T>> {
        check_cols("dense input", x, self.input)?;
        Ok(x.dot(&p[&self.w].t()) + &p[&self.b])
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        g: &mut ParamStore<T>,
        x: &Array2<T>,
        dy: &Array2<T>,
    ) -> Array2<T> {
        g.acc(&self.w, &dy.t().dot(x));
        g.acc(&self.b, &dy.sum_axis(Axis(0)).insert_axis(Axis(0)));
        dy.dot(&p[&self.w])
    }
}

/// LSTM layer; the four gate blocks are stacked in the order forget, input,
/// candidate, output.
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    pub w: String,
    pub u: String,
    pub b: String,
    pub input: usize,
    pub hidden: usize,
}

/// Values saved by one cell step for the backward pass.
#[derive(Debug, Clone)]
pub struct LstmStep<T> {
    pub x: Array2<T>,
    pub h_prev: Array2<T>,
    pub c_prev: Array2<T>,
    /// Activated gates, `rows x 4H`.
    pub gates: Array2<T>,
    pub tanh_c: Array2<T>,
}

impl Lstm {
    pub fn new(prefix: &str, input: usize, hidden: usize) -> Self {
        Self {
            w: format!("{prefix}.w"),
            u: format!("{prefix}.u"),
            b: format!("{prefix}.b"),
            input,
            hidden,
        }
    }

    /// Xavier input weights, orthogonal recurrent weights, forget bias 1.
    pub fn init<T: Scalar, R: Rng + ?Sized>(&self, p: &mut ParamStore<T>, rng: &mut R) {
        let h = self.hidden;
        let mut w = Array2::zeros((4 * h, self.input));
        let mut u = Array2::zeros((4 * h, h));
        for k in 0..4 {
            w.slice_mut(s![k * h..(k + 1) * h, ..])
                .assign(&xavier_uniform::<T, R>(h, self.input, rng));
            u.slice_mut(s![k * h..(k + 1) * h, ..]).assign(&orthogonal::<T, R>(h, rng));
        }
        let mut b = Array2::zeros((1, 4 * h));
        b.slice_mut(s![.., 0..h]).fill(T::one());
        p.insert(&self.w, w);
        p.insert(&self.u, u);
        p.insert(&self.b, b);
    }

    pub fn step<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        x: &Array2<T>,
        h: &Array2<T>,
        c: &Array2<T>,
    ) -> Result<(Array2<T>, Array2<T>, LstmStep<T>)> {
        check_cols("lstm input", x, self.input)?;
        check_cols("lstm hidden state", h, self.hidden)?;
        if c.dim() != h.dim() || x.nrows() != h.nrows() {
            return Err(shape_err("lstm state", h.dim(), (x.nrows(), c.dim())));
        }
        let hs = self.hidden;
        let mut z = x.dot(&p[&self.w].t()) + h.dot(&p[&self.u].t()) + &p[&self.b];
        z.slice_mut(s![.., 0..2 * hs]).mapv_inplace(sigmoid);
        z.slice_mut(s![.., 2 * hs..3 * hs]).mapv_inplace(|v| v.tanh());
        z.slice_mut(s![.., 3 * hs..]).mapv_inplace(sigmoid);
        let (c_new, tanh_c, h_new) = {
            let f = z.slice(s![.., 0..hs]);
            let i = z.slice(s![.., hs..2 * hs]);
            let g = z.slice(s![.., 2 * hs..3 * hs]);
            let o = z.slice(s![.., 3 * hs..]);
            let c_new = &f * c + &i * &g;
            let tanh_c = c_new.mapv(|v| v.tanh());
            let h_new = &o * &tanh_c;
            (c_new, tanh_c, h_new)
        };
        let cache = LstmStep {
            x: x.clone(),
            h_prev: h.clone(),
            c_prev: c.clone(),
            gates: z,
            tanh_c,
        };
        Ok((h_new, c_new, cache))
    }

    /// Backward through one step given gradients w.r.t. the new hidden and
    /// cell states. Returns `(dx, dh_prev, dc_prev)`.
    pub fn step_backward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        g: &mut ParamStore<T>,
        st: &LstmStep<T>,
        dh: &Array2<T>,
        dc: &Array2<T>,
    ) -> (Array2<T>, Array2<T>, Array2<T>) {
        let hs = self.hidden;
        let one = T::one();
        let f = st.gates.slice(s![.., 0..hs]);
        let i = st.gates.slice(s![.., hs..2 * hs]);
        let gg = st.gates.slice(s![.., 2 * hs..3 * hs]);
        let o = st.gates.slice(s![.., 3 * hs..]);

        let mut dc_total = dc.clone();
        Zip::from(&mut dc_total)
            .and(dh)
            .and(&o)
            .and(&st.tanh_c)
            .for_each(|d, &dh, &o, &t| *d += dh * o * (one - t * t));

        let mut dz = Array2::zeros(st.gates.raw_dim());
        Zip::from(dz.slice_mut(s![.., 0..hs]))
            .and(&dc_total)
            .and(&st.c_prev)
            .and(&f)
            .for_each(|d, &dc, &cp, &f| *d = dc * cp * f * (one - f));
        Zip::from(dz.slice_mut(s![.., hs..2 * hs]))
            .and(&dc_total)
            .and(&gg)
            .and(&i)
            .for_each(|d, &dc, &g, &i| *d = dc * g * i * (one - i));
        Zip::from(dz.slice_mut(s![.., 2 * hs..3 * hs]))
            .and(&dc_total)
            .and(&i)
            .and(&gg)
            .for_each(|d, &dc, &i, &g| *d = dc * i * (one - g * g));
        Zip::from(dz.slice_mut(s![.., 3 * hs..]))
            .and(dh)
            .and(&st.tanh_c)
            .and(&o)
            .for_each(|d, &dh, &t, &o| *d = dh * t * o * (one - o));

        let dc_prev = &dc_total * &f;
        g.acc(&self.w, &dz.t().dot(&st.x));
        g.acc(&self.u, &dz.t().dot(&st.h_prev));
        g.acc(&self.b, &dz.sum_axis(Axis(0)).insert_axis(Axis(0)));
        let dx = dz.dot(&p[&self.w]);
        let dh_prev = dz.dot(&p[&self.u]);
        (dx, dh_prev, dc_prev)
    }

    /// Runs the layer over a sequence of `rows x input` steps from zero state.
    pub fn forward_seq<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        xs: &[Array2<T>],
    ) -> Result<(Vec<Array2<T>>, Vec<LstmStep<T>>)> {
        let Some(first) = xs.first() else {
            return Ok((Vec::new(), Vec::new()));
        };
        let mut h = Array2::zeros((first.nrows(), self.hidden));
        let mut c = h.clone();
        let mut hs = Vec::with_capacity(xs.len());
        let mut steps = Vec::with_capacity(xs.len());
        for x in xs {
            let (h2, c2, st) = self.step(p, x, &h, &c)?;
            hs.push(h2.clone());
            steps.push(st);
            h = h2;
            c = c2;
        }
        Ok((hs, steps))
    }

    /// Backpropagation through time; `dhs[t]` is the loss gradient w.r.t. the
    /// output at step `t`. Returns the input gradients.
    pub fn backward_seq<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        g: &mut ParamStore<T>,
        steps: &[LstmStep<T>],
        dhs: &[Array2<T>],
    ) -> Vec<Array2<T>> {
        let mut dxs = vec![Array2::zeros((0, 0)); steps.len()];
        let Some(last) = steps.last() else {
            return dxs;
        };
        let mut dh_next = Array2::zeros(last.h_prev.raw_dim());
        let mut dc_next = dh_next.clone();
        for t in (0..steps.len()).rev() {
            let dh = &dhs[t] + &dh_next;
            let (dx, dh_prev, dc_prev) = self.step_backward(p, g, &steps[t], &dh, &dc_next);
            dxs[t] = dx;
            dh_next = dh_prev;
            dc_next = dc_prev;
        }
        dxs
    }
}

/// Inverted-dropout mask: zeros with probability `rate`, `1 / (1 - rate)`
/// elsewhere.
pub fn dropout_mask<T: Scalar, R: Rng + ?Sized>(rows: usize, cols: usize, rate: f64, rng: &mut R) -> Array2<T> {
    let keep: T = lit(1.0 / (1.0 - rate));
    Array2::from_shape_simple_fn((rows, cols), || {
        if rng.random::<f64>() < rate {
            T::zero()
        } else {
            keep
        }
    })
}

/// Multi-head scaled dot-product attention without biases. Each projection is
/// a `width x width` matrix whose column blocks belong to the heads.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadAttention {
    pub wq: String,
    pub wk: String,
    pub wv: String,
    pub wo: String,
    pub width: usize,
    pub heads: usize,
}

#[derive(Debug, Clone)]
pub struct AttentionCache<T> {
    xq: Array2<T>,
    xkv: Array2<T>,
    q: Array2<T>,
    k: Array2<T>,
    v: Array2<T>,
    /// Softmax weights, indexed `sample * heads + head`.
    probs: Vec<Array2<T>>,
    concat: Array2<T>,
    lq: usize,
    lk: usize,
}

impl MultiHeadAttention {
    pub fn new(prefix: &str, width: usize, heads: usize) -> Self {
        Self {
            wq: format!("{prefix}.wq"),
            wk: format!("{prefix}.wk"),
            wv: format!("{prefix}.wv"),
            wo: format!("{prefix}.wo"),
            width,
            heads,
        }
    }

    pub fn init<T: Scalar, R: Rng + ?Sized>(&self, p: &mut ParamStore<T>, rng: &mut R) {
        for name in [&self.wq, &self.wk, &self.wv, &self.wo] {
            p.insert(name, xavier_uniform(self.width, self.width, rng));
        }
    }

    /// Self-attention over a single sequence.
    pub fn self_attend<T: Scalar>(&self, p: &ParamStore<T>, x: &Array2<T>) -> Result<Array2<T>> {
        let l = x.nrows();
        if l == 0 {
            return Err(shape_err("attention input", "at least one row", 0));
        }
        Ok(self.forward(p, x, x, l, l, false)?.0)
    }

    /// `xq` holds `n` query sequences of `lq` rows stacked vertically, `xkv`
    /// the matching `n` key/value sequences of `lk` rows.
    pub fn forward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        xq: &Array2<T>,
        xkv: &Array2<T>,
        lq: usize,
        lk: usize,
        causal: bool,
    ) -> Result<(Array2<T>, AttentionCache<T>)> {
        check_cols("attention query", xq, self.width)?;
        check_cols("attention key", xkv, self.width)?;
        if self.heads == 0 || self.width % self.heads != 0 {
            return Err(NnError::BadConfig(format!(
                "width {} not divisible by {} heads",
                self.width, self.heads
            )));
        }
        if lq == 0 || lk == 0 || xq.nrows() % lq != 0 || xkv.nrows() % lk != 0 {
            return Err(shape_err("attention sequence length", (lq, lk), (xq.nrows(), xkv.nrows())));
        }
        let n = xq.nrows() / lq;
        if xkv.nrows() / lk != n || (causal && lq != lk) {
            return Err(shape_err("attention batch", n, xkv.nrows() / lk));
        }
        let dh = self.width / self.heads;
        let scale: T = lit(1.0 / (dh as f64).sqrt());
        let q = xq.dot(&p[&self.wq]);
        let k = xkv.dot(&p[&self.wk]);
        let v = xkv.dot(&p[&self.wv]);
        let mut concat = Array2::zeros((xq.nrows(), self.width));
        let mut probs = Vec::with_capacity(n * self.heads);
        for smp in 0..n {
            let (qr, kr) = (smp * lq..(smp + 1) * lq, smp * lk..(smp + 1) * lk);
            for h in 0..self.heads {
                let cols = h * dh..(h + 1) * dh;
                let qs = q.slice(s![qr.clone(), cols.clone()]);
                let ks = k.slice(s![kr.clone(), cols.clone()]);
                let vs = v.slice(s![kr.clone(), cols.clone()]);
                let mut scores = qs.dot(&ks.t()) * scale;
                if causal {
                    for i in 0..lq {
                        for j in i + 1..lk {
                            scores[[i, j]] = T::neg_infinity();
                        }
                    }
                }
                softmax_rows(&mut scores);
                concat.slice_mut(s![qr.clone(), cols]).assign(&scores.dot(&vs));
                probs.push(scores);
            }
        }
        let y = concat.dot(&p[&self.wo]);
        let cache = AttentionCache {
            xq: xq.clone(),
            xkv: xkv.clone(),
            q,
            k,
            v,
            probs,
            concat,
            lq,
            lk,
        };
        Ok((y, cache))
    }

    /// Returns `(d xq, d xkv)`; for self-attention the caller adds them.
    pub fn backward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        g: &mut ParamStore<T>,
        cache: &AttentionCache<T>,
        dy: &Array2<T>,
    ) -> (Array2<T>, Array2<T>) {
        let (lq, lk) = (cache.lq, cache.lk);
        let dh = self.width / self.heads;
        let scale: T = lit(1.0 / (dh as f64).sqrt());
        g.acc(&self.wo, &cache.concat.t().dot(dy));
        let dconcat = dy.dot(&p[&self.wo].t());
        let mut dq = Array2::zeros(cache.q.raw_dim());
        let mut dk = Array2::zeros(cache.k.raw_dim());
        let mut dv = Array2::zeros(cache.v.raw_dim());
        let n = cache.xq.nrows() / lq;
        for smp in 0..n {
            let (qr, kr) = (smp * lq..(smp + 1) * lq, smp * lk..(smp + 1) * lk);
            for h in 0..self.heads {
                let cols = h * dh..(h + 1) * dh;
                let pr = &cache.probs[smp * self.heads + h];
                let d_out = dconcat.slice(s![qr.clone(), cols.clone()]);
                let qs = cache.q.slice(s![qr.clone(), cols.clone()]);
                let ks = cache.k.slice(s![kr.clone(), cols.clone()]);
                let vs = cache.v.slice(s![kr.clone(), cols.clone()]);
                let dp = d_out.dot(&vs.t());
                dv.slice_mut(s![kr.clone(), cols.clone()]).assign(&pr.t().dot(&d_out));
                let row_dot = (&dp * pr).sum_axis(Axis(1)).insert_axis(Axis(1));
                let ds = (dp - &row_dot) * pr * scale;
                dq.slice_mut(s![qr.clone(), cols.clone()]).assign(&ds.dot(&ks));
                dk.slice_mut(s![kr.clone(), cols]).assign(&ds.t().dot(&qs));
            }
        }
        g.acc(&self.wq, &cache.xq.t().dot(&dq));
        g.acc(&self.wk, &cache.xkv.t().dot(&dk));
        g.acc(&self.wv, &cache.xkv.t().dot(&dv));
        let dxq = dq.dot(&p[&self.wq].t());
        let dxkv = dk.dot(&p[&self.wk].t()) + dv.dot(&p[&self.wv].t());
        (dxq, dxkv)
    }
}

fn softmax_rows<T: Scalar>(a: &mut Array2<T>) {
    for mut row in a.rows_mut() {
        let m = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
        row.mapv_inplace(|x| (x - m).exp());
        let sum = row.sum();
        row.mapv_inplace(|x| x / sum);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: String,
    pub beta: String,
    pub width: usize,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache<T> {
    xhat: Array2<T>,
    inv_std: Array1<T>,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl LayerNorm {
    pub fn new(prefix: &str, width: usize) -> Self {
        Self {
            gamma: format!("{prefix}.gamma"),
            beta: format!("{prefix}.beta"),
            width,
        }
    }

    pub fn init<T: Scalar>(&self, p: &mut ParamStore<T>) {
        p.insert(&self.gamma, Array2::ones((1, self.width)));
        p.insert(&self.beta, Array2::zeros((1, self.width)));
    }

    pub fn forward<T: Scalar>(&self, p: &ParamStore<T>, x: &Array2<T>) -> Result<(Array2<T>, LayerNormCache<T>)> {
        check_cols("layer norm input", x, self.width)?;
        let n: T = lit(self.width as f64);
        let eps: T = lit(LAYER_NORM_EPS);
        let mut xhat = x.clone();
        let mut inv_std = Array1::zeros(x.nrows());
        for (mut row, inv) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
            let mean = row.sum() / n;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().fold(T::zero(), |a, &v| a + v * v) / n;
            *inv = T::one() / (var + eps).sqrt();
            let s = *inv;
            row.mapv_inplace(|v| v * s);
        }
        let y = &xhat * &p[&self.gamma] + &p[&self.beta];
        Ok((y, LayerNormCache { xhat, inv_std }))
    }

    pub fn backward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        g: &mut ParamStore<T>,
        cache: &LayerNormCache<T>,
        dy: &Array2<T>,
    ) -> Array2<T> {
        g.acc(&self.gamma, &(dy * &cache.xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
        g.acc(&self.beta, &dy.sum_axis(Axis(0)).insert_axis(Axis(0)));
        let n: T = lit(self.width as f64);
        let mut dx = dy * &p[&self.gamma];
        for ((mut row, xh), &inv) in dx
            .rows_mut()
            .into_iter()
            .zip(cache.xhat.rows())
            .zip(cache.inv_std.iter())
        {
            let sum = row.sum();
            let dot = row.iter().zip(xh.iter()).fold(T::zero(), |a, (&d, &x)| a + d * x);
            Zip::from(&mut row)
                .and(&xh)
                .for_each(|d, &x| *d = inv / n * (n * *d - sum - x * dot));
        }
        dx
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

/// Tanh approximation of GELU.
pub fn gelu<T: Scalar>(x: T) -> T {
    let c: T = lit(GELU_C);
    let a: T = lit(0.044_715);
    let half: T = lit(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let c: T = lit(GELU_C);
    let a: T = lit(0.044_715);
    let half: T = lit(0.5);
    let three: T = lit(3.0);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + three * a * x * x)
}

/// Position-wise feed-forward block `width -> 2 width -> width` with GELU.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedForward {
    pub inner: Dense,
    pub outer: Dense,
}

#[derive(Debug, Clone)]
pub struct FeedForwardCache<T> {
    x: Array2<T>,
    pre: Array2<T>,
    act: Array2<T>,
}

impl FeedForward {
    pub fn new(prefix: &str, width: usize) -> Self {
        Self {
            inner: Dense::new(&format!("{prefix}.inner"), width, 2 * width),
            outer: Dense::new(&format!("{prefix}.outer"), 2 * width, width),
        }
    }

    pub fn init<T: Scalar, R: Rng + ?Sized>(&self, p: &mut ParamStore<T>, rng: &mut R) {
        self.inner.init(p, rng);
        self.outer.init(p, rng);
    }

    pub fn forward<T: Scalar>(&self, p: &ParamStore<T>, x: &Array2<T>) -> Result<(Array2<T>, FeedForwardCache<T>)> {
        let pre = self.inner.forward(p, x)?;
        let act = pre.mapv(gelu);
        let y = self.outer.forward(p, &act)?;
        Ok((
            y,
            FeedForwardCache {
                x: x.clone(),
                pre,
                act,
            },
        ))
    }

    pub fn backward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        g: &mut ParamStore<T>,
        cache: &FeedForwardCache<T>,
        dy: &Array2<T>,
    ) -> Array2<T> {
        let mut d = self.outer.backward(p, g, &cache.act, dy);
        Zip::from(&mut d).and(&cache.pre).for_each(|d, &x| *d *= gelu_grad(x));
        self.inner.backward(p, g, &cache.x, &d)
    }
}

/// Sinusoidal encoding: `PE[p, 2k] = sin(p / 10000^(2k/d))`,
/// `PE[p, 2k+1] = cos(p / 10000^(2k/d))`.
pub fn positional_encoding<T: Scalar>(len: usize, width: usize) -> Result<Array2<T>> {
    if width % 2 != 0 {
        return Err(NnError::OddWidth(width));
    }
    Ok(Array2::from_shape_fn((len, width), |(pos, j)| {
        let k2 = (j - j % 2) as f64;
        let angle = pos as f64 / 10_000f64.powf(k2 / width as f64);
        lit(if j % 2 == 0 { angle.sin() } else { angle.cos() })
    }))
}
