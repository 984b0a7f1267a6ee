//! Mini-batch training loop.

use std::time::Instant;

use rayon::prelude::*;

use crate::datakit::Sample;
use crate::error::{Error, Result};
use crate::field::RealImage;
use crate::metrics::{quality, QualityReport};
use crate::net::forward::{net_forward, reconstruct};
use crate::net::params::{NetConfig, NetParams};
use crate::rng::{streams, SeededRng};
use crate::train::adam::{adam_update, AdamState};
use crate::train::backward::{backward, GradientSet};
use crate::train::log::EpochRecord;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub net: NetConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Multiplicative LR decay applied every `decay_every` epochs.
    pub decay: f64,
    pub decay_every: usize,
    pub seed: u64,
    /// Worker threads for per-sample gradients; 1 runs inline.
    pub threads: usize,
    /// Record wall-clock seconds per epoch; off gives reproducible logs.
    pub record_timing: bool,
}

impl TrainConfig {
    /// Batch 10, LR 1e-3 decayed by 0.95 every two epochs.
    pub fn new(net: NetConfig) -> Self {
        Self {
            net,
            epochs: 1,
            batch_size: 10,
            lr: 1e-3,
            decay: 0.95,
            decay_every: 2,
            seed: 0,
            threads: 1,
            record_timing: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        if self.batch_size == 0 {
            return Err(Error::arg("batch size must be >= 1"));
        }
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return Err(Error::arg(format!(
                "learning rate must be > 0, got {}",
                self.lr
            )));
        }
        if self.decay_every == 0 {
            return Err(Error::arg("decay interval must be >= 1"));
        }
        if self.threads == 0 {
            return Err(Error::arg("thread count must be >= 1"));
        }
        Ok(())
    }
}

/// `lr * decay^floor(epoch / decay_every)` for a 0-based epoch.
pub fn lr_schedule(epoch: usize, config: &TrainConfig) -> f64 {
    config.lr * config.decay.powi((epoch / config.decay_every) as i32)
}

/// Mean squared error over every pixel of every sample.
pub fn loss_mse(outputs: &[RealImage], truths: &[RealImage]) -> Result<f64> {
    if outputs.is_empty() {
        return Err(Error::arg("empty batch"));
    }
    if outputs.len() != truths.len() {
        return Err(Error::dim(format!(
            "{} outputs vs {} truths",
            outputs.len(),
            truths.len()
        )));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (o, t) in outputs.iter().zip(truths) {
        if o.shape() != t.shape() {
            return Err(Error::dim(format!("{:?} vs {:?}", o.shape(), t.shape())));
        }
        sum += o
            .data()
            .iter()
            .zip(t.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
        count += o.len();
    }
    Ok(sum / count as f64)
}

/// Loss and gradient for one training sample.
pub fn sample_gradient(params: &NetParams, sample: &Sample) -> Result<(f64, GradientSet)> {
    let (_, tape) = net_forward(&sample.measurement, &sample.masks, params, None)?;
    backward(params, &tape, &sample.masks, &sample.image)
}

/// Reconstruct each sample and score it against its ground truth.
pub fn evaluate(params: &NetParams, samples: &[Sample]) -> Result<Vec<QualityReport>> {
    samples
        .iter()
        .map(|s| {
            let x = reconstruct(&s.measurement, &s.masks, params, None)?;
            quality(&x, &s.image)
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: NetParams,
    pub adam: AdamState,
    pub history: Vec<EpochRecord>,
}

/// Train from a fresh initialization seeded by `config.seed`.
pub fn train(
    train_set: &[Sample],
    val_set: &[Sample],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let params = NetParams::init(config.net.clone(), config.seed)?;
    let adam = AdamState::new(&params, config.lr);
    train_with(params, adam, train_set, val_set, config, |_| {})
}

fn check_shapes(config: &NetConfig, samples: &[Sample]) -> Result<()> {
    for (i, s) in samples.iter().enumerate() {
        let (h, w) = s.image.shape();
        if (h, w) != (config.height, config.width) || s.masks.count() != config.mask_count {
            return Err(Error::dim(format!(
                "sample {i} is {h}x{w} with {} masks, network expects {}x{} with {} masks",
                s.masks.count(),
                config.height,
                config.width,
                config.mask_count
            )));
        }
    }
    Ok(())
}

/// Continue training `params`/`adam`; `on_epoch` sees each finished epoch.
pub fn train_with(
    mut params: NetParams,
    mut adam: AdamState,
    train_set: &[Sample],
    val_set: &[Sample],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::arg("training set is empty"));
    }
    if params.config() != &config.net {
        return Err(Error::State(
            "parameters do not match the network config".into(),
        ));
    }
    check_shapes(&config.net, train_set)?;
    check_shapes(&config.net, val_set)?;
    let pool = if config.threads > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(config.threads)
                .build()
                .map_err(|e| Error::State(format!("thread pool: {e}")))?,
        )
    } else {
        None
    };

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let started = Instant::now();
        adam.lr = lr_schedule(epoch, config);
        SeededRng::named(config.seed, streams::SHUFFLE, epoch as u64).shuffle(&mut order);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let per_sample: Vec<Result<(f64, GradientSet)>> = match &pool {
                Some(pool) => pool.install(|| {
                    batch
                        .par_iter()
                        .map(|&i| sample_gradient(&params, &train_set[i]))
                        .collect()
                }),
                None => batch
                    .iter()
                    .map(|&i| sample_gradient(&params, &train_set[i]))
                    .collect(),
            };
            // reduce in batch order so the result is independent of scheduling
            let mut total = GradientSet::zeros_like(&params);
            for r in per_sample {
                let (loss, g) = r?;
                loss_sum += loss;
                total.add_scaled(&g, 1.0)?;
            }
            total.scale(1.0 / batch.len() as f64);
            adam_update(&mut params, &total, &mut adam)?;
        }
        let (val_psnr, val_ssim) = if val_set.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let reports = evaluate(&params, val_set)?;
            let n = reports.len() as f64;
            (
                reports.iter().map(|r| r.psnr).sum::<f64>() / n,
                reports.iter().map(|r| r.ssim).sum::<f64>() / n,
            )
        };
        let record = EpochRecord {
            epoch: epoch + 1,
            lr: adam.lr,
            train_loss: loss_sum / train_set.len() as f64,
            val_psnr,
            val_ssim,
            seconds: if config.record_timing {
                started.elapsed().as_secs_f64()
            } else {
                0.0
            },
        };
        on_epoch(&record);
        history.push(record);
    }
    Ok(TrainOutcome {
        params,
        adam,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cdp::OperatorMode;
    use crate::datakit::{build_dataset, synth_manifest, Split, ALPHAS};
    use std::path::Path;

    fn toy(count: usize, seed: u64) -> Vec<Sample> {
        let m = synth_manifest(count, 16, 16, seed, &ALPHAS, Split::Train).unwrap();
        build_dataset(&m, Path::new(".")).unwrap()
    }

    fn toy_config() -> TrainConfig {
        let net = NetConfig::new(16, 16).with_stages(2).with_channels(2);
        TrainConfig {
            epochs: 2,
            batch_size: 3,
            seed: 5,
            record_timing: false,
            ..TrainConfig::new(net)
        }
    }

    #[test]
    fn schedule_values() {
        let c = TrainConfig::new(NetConfig::new(8, 8));
        assert_eq!(lr_schedule(0, &c), 1e-3);
        assert_eq!(lr_schedule(1, &c), 1e-3);
        assert!((lr_schedule(4, &c) - 9.025e-4).abs() < 1e-18);
        assert!(lr_schedule(5, &c) < lr_schedule(3, &c));
    }

    #[test]
    fn mse_examples() {
        let a = RealImage::filled(4, 4, 0.3);
        assert_eq!(
            loss_mse(std::slice::from_ref(&a), std::slice::from_ref(&a)).unwrap(),
            0.0
        );
        let b = RealImage::filled(4, 4, 0.4);
        assert!(
            (loss_mse(std::slice::from_ref(&a), std::slice::from_ref(&b)).unwrap() - 0.01).abs()
                < 1e-15
        );
        let c = RealImage::filled(4, 4, 0.3 + 0.03f64.sqrt());
        let pair = loss_mse(&[b, c], &[a.clone(), a]).unwrap();
        assert!((pair - 0.02).abs() < 1e-15);
        assert!(matches!(loss_mse(&[], &[]), Err(Error::Argument(_))));
    }

    #[test]
    fn zero_epochs_keeps_initialization() {
        let data = toy(4, 1);
        let cfg = TrainConfig {
            epochs: 0,
            ..toy_config()
        };
        let out = train(&data, &[], &cfg).unwrap();
        assert_eq!(
            out.params,
            NetParams::init(cfg.net.clone(), cfg.seed).unwrap()
        );
        assert!(out.history.is_empty());
    }

    #[test]
    fn empty_training_set_rejected() {
        assert!(matches!(
            train(&[], &[], &toy_config()),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn repeated_runs_are_bit_identical() {
        let data = toy(7, 2);
        let val = toy(2, 3);
        let a = train(&data, &val, &toy_config()).unwrap();
        let b = train(&data, &val, &toy_config()).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.history, b.history);
        assert_eq!(a.adam, b.adam);
        assert!(a.history.iter().all(|r| r.train_loss.is_finite()));
    }

    #[test]
    fn threaded_matches_single_threaded() {
        let data = toy(6, 4);
        let single = train(&data, &[], &toy_config()).unwrap();
        let multi = train(
            &data,
            &[],
            &TrainConfig {
                threads: 3,
                ..toy_config()
            },
        )
        .unwrap();
        assert_eq!(single.params, multi.params);
    }

    #[test]
    fn fixed_mode_leaves_operator_untouched() {
        let data = toy(5, 6);
        let mut cfg = toy_config();
        cfg.net = cfg.net.with_mode(OperatorMode::Fixed);
        let init = NetParams::init(cfg.net.clone(), cfg.seed).unwrap();
        let out = train(&data, &[], &cfg).unwrap();
        assert_eq!(out.params.operators(), init.operators());
        assert_ne!(out.params.stages(), init.stages());
    }

    #[test]
    fn training_reduces_loss() {
        let data = toy(10, 8);
        let cfg = TrainConfig {
            epochs: 6,
            batch_size: 5,
            lr: 5e-3,
            ..toy_config()
        };
        let out = train(&data, &[], &cfg).unwrap();
        let first = out.history[0].train_loss;
        let last = out.history.last().unwrap().train_loss;
        assert!(last < first, "{first} -> {last}");
    }

    #[test]
    fn shape_mismatch_rejected() {
        let data = toy(2, 1);
        let mut cfg = toy_config();
        cfg.net.height = 32;
        cfg.net.width = 32;
        assert!(matches!(train(&data, &[], &cfg), Err(Error::Dimension(_))));
    }
}
