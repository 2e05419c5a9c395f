use ndarray::{s, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use tracing::debug;

use super::models::{DropoutCtx, Network};
use super::optim::{clip_gradients, Adam};
use super::params::ParamStore;
use super::{shape_err, ModelConfig, NnError, OptimHyper, Result};
use crate::preprocess::WindowBatch;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub train: f64,
    pub val: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub config: ModelConfig,
    pub params: ParamStore<f32>,
    pub history: Vec<EpochLoss>,
}

impl TrainedModel {
    /// Freshly initialised parameters with no history.
    pub fn untrained(config: ModelConfig) -> Result<Self> {
        let params = Network::new(&config)?.init(config.seed);
        Ok(Self {
            config,
            params,
            history: Vec::new(),
        })
    }

    pub fn network(&self) -> Result<Network> {
        Network::new(&self.config)
    }
}

/// Training target of each window: the first `outputs` features of the
/// forecast targets when present, else of the window itself.
pub fn window_target(batch: &WindowBatch, outputs: usize) -> Array3<f32> {
    let src = batch.targets.as_ref().unwrap_or(&batch.data);
    src.slice(s![.., .., 0..outputs]).to_owned()
}

fn check_batch(config: &ModelConfig, batch: &WindowBatch) -> Result<()> {
    if batch.n_features() != config.input_size {
        return Err(shape_err("window features", config.input_size, batch.n_features()));
    }
    Ok(())
}

fn noise(rng: &mut ChaCha8Rng, shape: (usize, usize, usize)) -> Array3<f32> {
    Array3::from_shape_simple_fn(shape, || {
        let v: f64 = StandardNormal.sample(rng);
        v as f32
    })
}

fn finite(loss: f32, epoch: usize, batch: usize) -> Result<f64> {
    let loss = f64::from(loss);
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(NnError::NonFiniteLoss { epoch, batch, loss })
    }
}

/// Trains with sequential mini-batches (last partial batch kept). Parameters
/// come from ChaCha stream 0 of `config.seed`; dropout masks and adversarial
/// noise from stream 1, so a run is reproducible bit for bit.
pub fn train(
    config: &ModelConfig,
    hyper: &OptimHyper,
    train: &WindowBatch,
    val: &WindowBatch,
) -> Result<TrainedModel> {
    config.validate()?;
    hyper.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(NnError::EmptyBatch);
    }
    check_batch(config, train)?;
    check_batch(config, val)?;
    let net = Network::new(config)?;
    let mut model = TrainedModel {
        config: config.clone(),
        params: net.init(config.seed),
        history: Vec::with_capacity(hyper.epochs),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut adam = Adam::new();
    let mut adam_critic = Adam::new();
    let target = window_target(train, config.output_size);
    let n = train.len();
    let l = train.seq_len();

    for epoch in 0..hyper.epochs {
        let mut total = 0.0;
        for (bi, start) in (0..n).step_by(hyper.batch_size).enumerate() {
            let end = (start + hyper.batch_size).min(n);
            let x = train.data.slice(s![start..end, .., ..]).to_owned();
            let y = target.slice(s![start..end, .., ..]).to_owned();
            let loss = match &net {
                Network::GanLstm(gan) => {
                    let z = noise(&mut rng, (end - start, l, gan.latent));
                    let (ld, mut gd) = gan.critic_loss_and_grads(&model.params, &x, &z)?;
                    finite(ld, epoch, bi)?;
                    clip_gradients(&mut gd, hyper.max_grad_norm);
                    adam_critic.step(&mut model.params, &gd, hyper)?;

                    let z = noise(&mut rng, (end - start, l, gan.latent));
                    let mut drop = DropoutCtx {
                        rate: config.dropout,
                        rng: &mut rng,
                    };
                    let (lg, mut gg) = gan.generator_loss_and_grads(&model.params, &x, &y, &z, Some(&mut drop))?;
                    finite(lg.total, epoch, bi)?;
                    clip_gradients(&mut gg, hyper.max_grad_norm);
                    adam.step(&mut model.params, &gg, hyper)?;
                    finite(lg.recon, epoch, bi)?
                }
                _ => {
                    let mut drop = DropoutCtx {
                        rate: config.dropout,
                        rng: &mut rng,
                    };
                    let (loss, mut g) = net.loss_and_grads(&model.params, &x, &y, Some(&mut drop))?;
                    let loss = finite(loss, epoch, bi)?;
                    clip_gradients(&mut g, hyper.max_grad_norm);
                    adam.step(&mut model.params, &g, hyper)?;
                    loss
                }
            };
            total += loss * (end - start) as f64;
        }
        let train_loss = total / n as f64;
        let errors = window_errors(&net, &model.params, val, config.output_size)?;
        let val_loss = errors.iter().sum::<f64>() / errors.len() as f64;
        if !val_loss.is_finite() {
            return Err(NnError::NonFiniteLoss {
                epoch,
                batch: 0,
                loss: val_loss,
            });
        }
        debug!(epoch, train = train_loss, val = val_loss, kind = %config.kind, "epoch done");
        model.history.push(EpochLoss {
            train: train_loss,
            val: val_loss,
        });
    }
    Ok(model)
}

const EVAL_CHUNK: usize = 256;

/// Per-window, per-output-feature squared error averaged over time steps.
pub fn feature_errors(model: &TrainedModel, batch: &WindowBatch) -> Result<Vec<Vec<f64>>> {
    if batch.is_empty() {
        return Ok(Vec::new());
    }
    check_batch(&model.config, batch)?;
    let net = model.network()?;
    per_feature(&net, &model.params, batch, model.config.output_size)
}

fn per_feature(net: &Network, params: &ParamStore<f32>, batch: &WindowBatch, outputs: usize) -> Result<Vec<Vec<f64>>> {
    let target = window_target(batch, outputs);
    let l = batch.seq_len();
    let mut out = Vec::with_capacity(batch.len());
    for start in (0..batch.len()).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(batch.len());
        let x = batch.data.slice(s![start..end, .., ..]).to_owned();
        let pred = net.predict(params, &x)?;
        for w in 0..end - start {
            let errs = (0..outputs)
                .map(|f| {
                    (0..l)
                        .map(|t| {
                            let d = f64::from(pred[[w, t, f]]) - f64::from(target[[start + w, t, f]]);
                            d * d
                        })
                        .sum::<f64>()
                        / l as f64
                })
                .collect();
            out.push(errs);
        }
    }
    Ok(out)
}

fn window_errors(net: &Network, params: &ParamStore<f32>, batch: &WindowBatch, outputs: usize) -> Result<Vec<f64>> {
    Ok(per_feature(net, params, batch, outputs)?
        .into_iter()
        .map(|f| f.iter().sum::<f64>() / f.len() as f64)
        .collect())
}

/// Mean squared reconstruction error of each window over its output features,
/// in window order. Dropout is off, so this is a pure function of the model.
pub fn reconstruct_errors(model: &TrainedModel, batch: &WindowBatch) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Ok(Vec::new());
    }
    check_batch(&model.config, batch)?;
    window_errors(&model.network()?, &model.params, batch, model.config.output_size)
}
