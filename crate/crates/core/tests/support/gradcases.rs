//! Analytic gradients against central finite differences in f64. Each case
//! returns the worst relative error over the entries it checked.

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use telewatch_core::nn::layers::{Dense, FeedForward, LayerNorm, Lstm, MultiHeadAttention};
use telewatch_core::nn::models::Network;
use telewatch_core::nn::{ModelConfig, ModelKind, ParamStore};

pub const STEP: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
pub const SEEDS: [u64; 3] = [1, 2, 3];

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-4)
}

fn random(shape: (usize, usize), rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || rng.random_range(-1.0..1.0))
}

#[derive(Debug, Default)]
pub struct Worst {
    pub rel_err: f64,
    pub checked: usize,
    pub at: String,
}

impl Worst {
    fn record(&mut self, err: f64, at: impl FnOnce() -> String) {
        self.checked += 1;
        if err > self.rel_err || self.checked == 1 {
            self.rel_err = err.max(self.rel_err);
            self.at = at();
        }
    }
}

/// Compares `grads` with central differences of `loss` on up to `per_tensor`
/// randomly chosen entries of each tensor.
fn check_params(
    worst: &mut Worst,
    label: &str,
    p: &ParamStore<f64>,
    grads: &ParamStore<f64>,
    loss: impl Fn(&ParamStore<f64>) -> f64,
    rng: &mut ChaCha8Rng,
    per_tensor: usize,
) {
    for (name, t) in p.iter() {
        let Some(g) = grads.get(name) else { continue };
        let picks: Vec<(usize, usize)> = if t.len() <= per_tensor {
            (0..t.nrows()).flat_map(|i| (0..t.ncols()).map(move |j| (i, j))).collect()
        } else {
            (0..per_tensor)
                .map(|_| (rng.random_range(0..t.nrows()), rng.random_range(0..t.ncols())))
                .collect()
        };
        for (i, j) in picks {
            let mut plus = p.clone();
            plus.get_mut(name).unwrap()[[i, j]] += STEP;
            let mut minus = p.clone();
            minus.get_mut(name).unwrap()[[i, j]] -= STEP;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * STEP);
            let analytic = g[[i, j]];
            worst.record(rel_err(analytic, numeric), || {
                format!("{label}: {name}[{i},{j}] analytic {analytic} numeric {numeric}")
            });
        }
    }
}

fn check_input(
    worst: &mut Worst,
    label: &str,
    x: &Array2<f64>,
    dx: &Array2<f64>,
    loss: impl Fn(&Array2<f64>) -> f64,
) {
    for i in 0..x.nrows() {
        for j in 0..x.ncols() {
            let mut plus = x.clone();
            plus[[i, j]] += STEP;
            let mut minus = x.clone();
            minus[[i, j]] -= STEP;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * STEP);
            worst.record(rel_err(dx[[i, j]], numeric), || {
                format!("{label}: input[{i},{j}] analytic {} numeric {numeric}", dx[[i, j]])
            });
        }
    }
}

fn weighted_sum(y: &Array2<f64>, w: &Array2<f64>) -> f64 {
    (y * w).sum()
}

pub fn dense_gradients(seed: u64) -> Worst {
    let mut w0 = Worst::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = Dense::new("d", 3, 2);
    let mut p = ParamStore::new();
    d.init(&mut p, &mut rng);
    let x = random((4, 3), &mut rng);
    let w = random((4, 2), &mut rng);
    let mut g = p.zeros_like();
    let dx = d.backward(&p, &mut g, &x, &w);
    check_params(&mut w0, "dense", &p, &g, |q| weighted_sum(&d.forward(q, &x).unwrap(), &w), &mut rng, 50);
    check_input(&mut w0, "dense", &x, &dx, |xx| weighted_sum(&d.forward(&p, xx).unwrap(), &w));
    w0
}

pub fn lstm_cell_gradients_of_hidden_sum(seed: u64) -> Worst {
    let mut w0 = Worst::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = Lstm::new("l", 2, 3);
    let mut p = ParamStore::new();
    l.init(&mut p, &mut rng);
    // small random params, including the biases
    for (_, t) in p.iter_mut() {
        t.mapv_inplace(|_| rng.random_range(-0.5..0.5));
    }
    let x = random((1, 2), &mut rng);
    let h = random((1, 3), &mut rng);
    let c = random((1, 3), &mut rng);
    let (_, _, st) = l.step(&p, &x, &h, &c).unwrap();
    let mut g = p.zeros_like();
    let (dx, dh, dc) = l.step_backward(&p, &mut g, &st, &Array2::ones((1, 3)), &Array2::zeros((1, 3)));
    let f = |q: &ParamStore<f64>, x: &Array2<f64>, h: &Array2<f64>, c: &Array2<f64>| {
        l.step(q, x, h, c).unwrap().0.sum()
    };
    check_params(&mut w0, "lstm cell", &p, &g, |q| f(q, &x, &h, &c), &mut rng, 100);
    check_input(&mut w0, "lstm cell x", &x, &dx, |v| f(&p, v, &h, &c));
    check_input(&mut w0, "lstm cell h", &h, &dh, |v| f(&p, &x, v, &c));
    check_input(&mut w0, "lstm cell c", &c, &dc, |v| f(&p, &x, &h, v));
    w0
}

pub fn lstm_through_time_gradients(seed: u64) -> Worst {
    let mut w0 = Worst::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = Lstm::new("l", 2, 3);
    let mut p = ParamStore::new();
    l.init(&mut p, &mut rng);
    let xs: Vec<Array2<f64>> = (0..4).map(|_| random((2, 2), &mut rng)).collect();
    let ws: Vec<Array2<f64>> = (0..4).map(|_| random((2, 3), &mut rng)).collect();
    let loss = |q: &ParamStore<f64>, xs: &[Array2<f64>]| {
        let (hs, _) = l.forward_seq(q, xs).unwrap();
        hs.iter().zip(&ws).map(|(h, w)| weighted_sum(h, w)).sum::<f64>()
    };
    let (_, steps) = l.forward_seq(&p, &xs).unwrap();
    let mut g = p.zeros_like();
    let dxs = l.backward_seq(&p, &mut g, &steps, &ws);
    check_params(&mut w0, "lstm bptt", &p, &g, |q| loss(q, &xs), &mut rng, 40);
    for t in 0..4 {
        check_input(&mut w0, "lstm bptt x", &xs[t], &dxs[t], |v| {
            let mut xs2 = xs.clone();
            xs2[t] = v.clone();
            loss(&p, &xs2)
        });
    }
    w0
}

pub fn attention_gradients(seed: u64) -> Worst {
    let mut w0 = Worst::default();
    for causal in [false, true] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = MultiHeadAttention::new("a", 4, 2);
        let mut p = ParamStore::new();
        a.init(&mut p, &mut rng);
        // two sequences of three tokens
        let xq = random((6, 4), &mut rng);
        let xkv = if causal { xq.clone() } else { random((6, 4), &mut rng) };
        let w = random((6, 4), &mut rng);
        let (_, cache) = a.forward(&p, &xq, &xkv, 3, 3, causal).unwrap();
        let mut g = p.zeros_like();
        let (dq, dkv) = a.backward(&p, &mut g, &cache, &w);
        let label = if causal { "causal attention" } else { "cross attention" };
        check_params(
            &mut w0,
            label,
            &p,
            &g,
            |q| weighted_sum(&a.forward(q, &xq, &xkv, 3, 3, causal).unwrap().0, &w),
            &mut rng,
            40,
        );
        if causal {
            let total = &dq + &dkv;
            check_input(&mut w0, label, &xq, &total, |v| {
                weighted_sum(&a.forward(&p, v, v, 3, 3, true).unwrap().0, &w)
            });
        } else {
            check_input(&mut w0, label, &xq, &dq, |v| {
                weighted_sum(&a.forward(&p, v, &xkv, 3, 3, false).unwrap().0, &w)
            });
            check_input(&mut w0, label, &xkv, &dkv, |v| {
                weighted_sum(&a.forward(&p, &xq, v, 3, 3, false).unwrap().0, &w)
            });
        }
    }
    w0
}

pub fn layer_norm_and_feed_forward_gradients(seed: u64) -> Worst {
    let mut w0 = Worst::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ln = LayerNorm::new("ln", 4);
    let ff = FeedForward::new("ff", 4);
    let mut p = ParamStore::new();
    ln.init(&mut p);
    ff.init(&mut p, &mut rng);
    for name in [&ln.gamma, &ln.beta] {
        p.get_mut(name).unwrap().mapv_inplace(|v| v + rng.random_range(-0.3..0.3));
    }
    let x = random((3, 4), &mut rng);
    let w = random((3, 4), &mut rng);

    let (_, c) = ln.forward(&p, &x).unwrap();
    let mut g = p.zeros_like();
    let dx = ln.backward(&p, &mut g, &c, &w);
    let mut only_ln = g.clone();
    only_ln.retain(|n| n.starts_with("ln."));
    check_params(&mut w0, "layer norm", &p, &only_ln, |q| weighted_sum(&ln.forward(q, &x).unwrap().0, &w), &mut rng, 20);
    check_input(&mut w0, "layer norm", &x, &dx, |v| weighted_sum(&ln.forward(&p, v).unwrap().0, &w));

    let (_, c) = ff.forward(&p, &x).unwrap();
    let mut g = p.zeros_like();
    let dx = ff.backward(&p, &mut g, &c, &w);
    g.retain(|n| n.starts_with("ff."));
    check_params(&mut w0, "feed forward", &p, &g, |q| weighted_sum(&ff.forward(q, &x).unwrap().0, &w), &mut rng, 20);
    check_input(&mut w0, "feed forward", &x, &dx, |v| weighted_sum(&ff.forward(&p, v).unwrap().0, &w));
    w0
}

fn model_config(kind: ModelKind, seed: u64) -> ModelConfig {
    ModelConfig {
        kind,
        input_size: 3,
        hidden_size: 4,
        n_layers: 2,
        output_size: 2,
        dropout: 0.0,
        seq_len: 4,
        seed,
        latent_size: 2,
        n_heads: 2,
    }
}

fn random3(shape: (usize, usize, usize), rng: &mut ChaCha8Rng) -> Array3<f64> {
    Array3::from_shape_simple_fn(shape, || rng.random_range(0.0..1.0))
}

pub fn reconstruction_objective_gradients(seed: u64) -> Worst {
    let mut w0 = Worst::default();
    for kind in ModelKind::ALL {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let net = Network::new(&model_config(kind, seed)).unwrap();
        let p = net.init::<f64>(seed);
        let x = random3((2, 4, 3), &mut rng);
        let y = random3((2, 4, 2), &mut rng);
        let (_, g) = net.loss_and_grads(&p, &x, &y, None).unwrap();
        check_params(
            &mut w0,
            kind.as_str(),
            &p,
            &g,
            |q| net.loss_and_grads(q, &x, &y, None).unwrap().0,
            &mut rng,
            12,
        );
    }
    w0
}

pub fn adversarial_objective_gradients(seed: u64) -> Worst {
    let mut w0 = Worst::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 200);
    let Network::GanLstm(gan) = Network::new(&model_config(ModelKind::GanLstm, seed)).unwrap() else {
        unreachable!()
    };
    let p = Network::GanLstm(gan.clone()).init::<f64>(seed);
    let x = random3((2, 4, 3), &mut rng);
    let y = random3((2, 4, 2), &mut rng);
    let z = random3((2, 4, 2), &mut rng);

    let (_, gd) = gan.critic_loss_and_grads(&p, &x, &z).unwrap();
    assert!(gd.names().all(|n| n.starts_with("disc.")));
    check_params(&mut w0, "critic", &p, &gd, |q| gan.critic_loss_and_grads(q, &x, &z).unwrap().0, &mut rng, 12);

    let (_, gg) = gan.generator_loss_and_grads(&p, &x, &y, &z, None).unwrap();
    assert!(gg.names().all(|n| !n.starts_with("disc.")));
    check_params(
        &mut w0,
        "generator",
        &p,
        &gg,
        |q| gan.generator_loss_and_grads(q, &x, &y, &z, None).unwrap().0.total,
        &mut rng,
        12,
    );
    w0
}

/// Every case with a short label, in a fixed order.
pub const CASES: &[(&str, fn(u64) -> Worst)] = &[
    ("dense", dense_gradients),
    ("lstm cell", lstm_cell_gradients_of_hidden_sum),
    ("lstm through time", lstm_through_time_gradients),
    ("attention", attention_gradients),
    ("layer norm + feed forward", layer_norm_and_feed_forward_gradients),
    ("model objectives (incl. positional head)", reconstruction_objective_gradients),
    ("adversarial objectives", adversarial_objective_gradients),
];
