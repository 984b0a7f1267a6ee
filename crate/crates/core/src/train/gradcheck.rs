//! Central finite-difference verification of the analytic gradients.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::cdp::{measure, MaskSet};
use crate::datakit::{synth_from_seed, Sample};
use crate::error::Result;
use crate::net::forward::{net_forward, reconstruct};
use crate::net::params::{NetConfig, NetParams};
use crate::rng::{streams, SeededRng};
use crate::train::backward::sample_loss;
use crate::train::trainer::sample_gradient;

/// Agreement between analytic and numeric gradients for one parameter group.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupError {
    pub group: &'static str,
    pub entries: usize,
    /// `max |analytic - numeric| / max(max |analytic|, max |numeric|)` over the group.
    pub relative_error: f64,
    pub largest_gradient: f64,
}

/// A small random problem: parameters moved off their initialization so every
/// path carries gradient, plus one noisy measured sample.
pub fn random_problem(config: NetConfig, seed: u64) -> Result<(NetParams, Sample)> {
    let mut params = NetParams::init(config.clone(), seed)?;
    let mut rng = SeededRng::named(seed, streams::CHECK, 0);
    for t in params.tensors_mut() {
        match t.group {
            "step" => t.data[0] = rng.uniform_range(0.05, 0.3),
            "threshold" => t.data[0] = rng.uniform_range(-2.0, 0.0),
            "conv.bias" => t.data.iter_mut().for_each(|v| *v = 0.1 * rng.normal()),
            "operator.forward" | "operator.adjoint" => {
                t.data.iter_mut().for_each(|v| *v += 0.05 * rng.normal())
            }
            _ => {}
        }
    }
    let (h, w) = (config.height, config.width);
    let image = synth_from_seed(seed, h, w)?;
    let masks = Arc::new(MaskSet::from_seed(seed, config.mask_count, h, w)?);
    let measurement = measure(
        &image,
        &masks,
        9.0,
        &mut SeededRng::named(seed, streams::NOISE, 0),
    )?;
    Ok((
        params,
        Sample {
            name: format!("check_{seed}"),
            image,
            measurement,
            masks,
        },
    ))
}

fn loss_at(params: &NetParams, sample: &Sample) -> Result<f64> {
    let x = reconstruct(&sample.measurement, &sample.masks, params, None)?;
    Ok(sample_loss(&x, &sample.image)?.0)
}

/// Compare every trainable scalar's analytic gradient against
/// `(L(theta + h) - L(theta - h)) / 2h`, grouped by parameter kind.
pub fn finite_difference_check(
    params: &NetParams,
    sample: &Sample,
    h: f64,
) -> Result<Vec<GroupError>> {
    let (_, grads) = sample_gradient(params, sample)?;
    let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.data.to_vec()).collect();
    let mut work = params.clone();
    // group -> (max abs diff, max magnitude, count)
    let mut acc: BTreeMap<&'static str, (f64, f64, usize)> = BTreeMap::new();
    let layout: Vec<(&'static str, bool, usize)> = params
        .tensors()
        .iter()
        .map(|t| (t.group, t.trainable, t.data.len()))
        .collect();
    for (ti, &(group, trainable, len)) in layout.iter().enumerate() {
        if !trainable {
            continue;
        }
        for (i, &a) in analytic[ti].iter().enumerate().take(len) {
            let original = work.tensors()[ti].data[i];
            work.tensors_mut()[ti].data[i] = original + h;
            let plus = loss_at(&work, sample)?;
            work.tensors_mut()[ti].data[i] = original - h;
            let minus = loss_at(&work, sample)?;
            work.tensors_mut()[ti].data[i] = original;
            let numeric = (plus - minus) / (2.0 * h);
            let e = acc.entry(group).or_insert((0.0, 0.0, 0));
            e.0 = e.0.max((a - numeric).abs());
            e.1 = e.1.max(a.abs()).max(numeric.abs());
            e.2 += 1;
        }
    }
    Ok(acc
        .into_iter()
        .map(|(group, (diff, mag, entries))| GroupError {
            group,
            entries,
            relative_error: if mag > 0.0 { diff / mag } else { diff },
            largest_gradient: mag,
        })
        .collect())
}

/// Analytic and numeric derivatives along one random unit direction over all
/// trainable scalars.
pub fn directional_check(
    params: &NetParams,
    sample: &Sample,
    h: f64,
    seed: u64,
) -> Result<(f64, f64)> {
    let (_, grads) = sample_gradient(params, sample)?;
    let mut rng = SeededRng::named(seed, streams::CHECK, 1);
    let mut direction: Vec<Vec<f64>> = params
        .tensors()
        .iter()
        .map(|t| {
            (0..t.data.len())
                .map(|_| if t.trainable { rng.normal() } else { 0.0 })
                .collect()
        })
        .collect();
    let norm = direction
        .iter()
        .flatten()
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    direction.iter_mut().flatten().for_each(|v| *v /= norm);
    let analytic: f64 = grads
        .tensors()
        .iter()
        .zip(&direction)
        .map(|(g, d)| g.data.iter().zip(d).map(|(a, b)| a * b).sum::<f64>())
        .sum();
    let shifted = |sign: f64| -> Result<f64> {
        let mut p = params.clone();
        for (t, d) in p.tensors_mut().into_iter().zip(&direction) {
            for (v, dv) in t.data.iter_mut().zip(d) {
                *v += sign * h * dv;
            }
        }
        loss_at(&p, sample)
    };
    let numeric = (shifted(1.0)? - shifted(-1.0)?) / (2.0 * h);
    Ok((analytic, numeric))
}

/// Loss and gradient norm at parameters whose output already equals the truth.
pub fn gradient_at_exact_output(config: NetConfig, seed: u64) -> Result<(f64, f64)> {
    let (mut params, mut sample) = random_problem(config, seed)?;
    params.zero_transforms();
    let (out, _) = net_forward(&sample.measurement, &sample.masks, &params, None)?;
    sample.image = out;
    let (loss, grads) = sample_gradient(&params, &sample)?;
    Ok((loss, grads.norm()))
}
