//! Built-in numerical self-tests: FFT, operator adjoints, gradients, ISTA, Adam.

use num_complex::Complex64;

use crate::baselines::{coordinate_descent, ista_solve, LassoProblem};
use crate::cdp::{MaskSet, MeasurementOperator, OperatorMode};
use crate::error::Result;
use crate::field::{fft2_unitary, ifft2_unitary, ComplexField};
use crate::net::params::{NetConfig, NetParams};
use crate::rng::{streams, SeededRng};
use crate::train::adam::{adam_update, AdamState};
use crate::train::backward::GradientSet;
use crate::train::gradcheck::{directional_check, finite_difference_check, random_problem};

/// Deliberate defects for exercising the failure path.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Perturb the learnable adjoint path so it no longer matches the forward path.
    Adjoint,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub error: f64,
    pub threshold: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.error <= self.threshold
    }
}

fn random_field(rng: &mut SeededRng, h: usize, w: usize) -> ComplexField {
    let data = (0..h * w)
        .map(|_| Complex64::new(rng.normal(), rng.normal()))
        .collect();
    ComplexField::new(h, w, data).expect("shape is consistent")
}

fn inner_stack(a: &[ComplexField], b: &[ComplexField]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.inner(y)).sum()
}

fn stack_norm(a: &[ComplexField]) -> f64 {
    a.iter().map(|c| c.norm().powi(2)).sum::<f64>().sqrt()
}

/// Worst normalized adjoint mismatch `|<Wx, z> - <x, W^H z>| / (|x| |z|)`.
pub fn adjoint_error(
    op: &MeasurementOperator,
    masks: &MaskSet,
    trials: u64,
    seed: u64,
) -> Result<f64> {
    let (h, w) = op.shape();
    let mut worst = 0.0f64;
    for t in 0..trials {
        let mut rng = SeededRng::named(seed, streams::CHECK, 100 + t);
        let x = random_field(&mut rng, h, w);
        let z: Vec<ComplexField> = (0..masks.count())
            .map(|_| random_field(&mut rng, h, w))
            .collect();
        let lhs = inner_stack(&op.apply(&x, masks)?, &z);
        let rhs = x.inner(&op.adjoint(&z, masks)?);
        worst = worst.max((lhs - rhs).norm() / (x.norm() * stack_norm(&z)));
    }
    Ok(worst)
}

/// Operator with random forward parameters and a matching untied adjoint path.
pub fn random_consistent_operator(
    mode: OperatorMode,
    h: usize,
    w: usize,
    seed: u64,
) -> Result<MeasurementOperator> {
    let mut op = MeasurementOperator::new(mode, h, w, false)?;
    if mode == OperatorMode::Fixed {
        return Ok(op);
    }
    let mut rng = SeededRng::named(seed, streams::CHECK, 2);
    for v in op.forward_tensor_mut() {
        *v += Complex64::new(0.3 * rng.normal(), 0.3 * rng.normal());
    }
    let fwd = op.forward_tensor().to_vec();
    let adj = op.adjoint_tensor_mut();
    match mode {
        OperatorMode::Structured => {
            for (a, f) in adj.iter_mut().zip(&fwd) {
                *a = f.conj();
            }
        }
        OperatorMode::Dense => {
            let n = h * w;
            for i in 0..n {
                for j in 0..n {
                    adj[i * n + j] = fwd[j * n + i].conj();
                }
            }
        }
        OperatorMode::Fixed => unreachable!(),
    }
    Ok(op)
}

fn check(name: &str, error: f64, threshold: f64) -> CheckResult {
    CheckResult {
        name: name.to_string(),
        error,
        threshold,
    }
}

fn fft_checks(trials: u64) -> Result<Vec<CheckResult>> {
    let (mut roundtrip, mut parseval) = (0.0f64, 0.0f64);
    for t in 0..trials {
        let mut rng = SeededRng::named(t, streams::CHECK, 3);
        let x = random_field(&mut rng, 16, 32);
        let fx = fft2_unitary(&x)?;
        let back = ifft2_unitary(&fx)?;
        let diff: f64 = back
            .data()
            .iter()
            .zip(x.data())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt();
        roundtrip = roundtrip.max(diff / x.norm());
        parseval = parseval.max((fx.norm() - x.norm()).abs() / x.norm());
    }
    Ok(vec![
        check("fft-roundtrip", roundtrip, 1e-12),
        check("fft-parseval", parseval, 1e-12),
    ])
}

fn isometry_check(trials: u64) -> Result<CheckResult> {
    let op = MeasurementOperator::new(OperatorMode::Fixed, 8, 8, false)?;
    let mut worst = 0.0f64;
    for t in 0..trials {
        let masks = MaskSet::from_seed(t, 4, 8, 8)?;
        let mut rng = SeededRng::named(t, streams::CHECK, 4);
        let x = random_field(&mut rng, 8, 8);
        let y = op.apply(&x, &masks)?;
        for c in &y {
            worst = worst.max((c.norm() - x.norm()).abs() / x.norm());
        }
        let energy = stack_norm(&y).powi(2);
        worst = worst.max((energy - 4.0 * x.norm().powi(2)).abs() / (4.0 * x.norm().powi(2)));
    }
    Ok(check("cdp-isometry", worst, 1e-12))
}

fn adjoint_checks(
    modes: &[OperatorMode],
    trials: u64,
    fault: Option<Fault>,
) -> Result<Vec<CheckResult>> {
    modes
        .iter()
        .map(|&mode| {
            let (h, w) = if mode == OperatorMode::Dense {
                (4, 8)
            } else {
                (8, 8)
            };
            let masks = MaskSet::from_seed(11, 4, h, w)?;
            let mut op = random_consistent_operator(mode, h, w, 12)?;
            if fault == Some(Fault::Adjoint) {
                if let Some(v) = op.adjoint_tensor_mut().first_mut() {
                    *v += Complex64::new(0.1, 0.0);
                }
            }
            let err = adjoint_error(&op, &masks, trials, 13)?;
            Ok(check(&format!("adjoint-{mode}"), err, 1e-12))
        })
        .collect()
}

fn gradient_checks() -> Result<Vec<CheckResult>> {
    let config = NetConfig::new(8, 8)
        .with_stages(2)
        .with_channels(2)
        .with_mask_count(2);
    let (params, sample) = random_problem(config, 21)?;
    let mut out: Vec<CheckResult> = finite_difference_check(&params, &sample, 1e-6)?
        .into_iter()
        .map(|g| check(&format!("gradient-{}", g.group), g.relative_error, 1e-5))
        .collect();
    let (a, n) = directional_check(&params, &sample, 1e-6, 22)?;
    out.push(check(
        "gradient-directional",
        (a - n).abs() / a.abs().max(n.abs()),
        1e-5,
    ));
    Ok(out)
}

/// Instance of the 8x16 LASSO check. Roughly one random instance in five needs
/// more than 5000 ISTA steps to get within 1e-6 of the optimum; this one does not.
pub const LASSO_SEED: u64 = 42;

fn ista_check() -> Result<Vec<CheckResult>> {
    let p = LassoProblem::random_gaussian(8, 16, 0.1, &mut SeededRng::new(LASSO_SEED, 0))?;
    let run = ista_solve(&p, &[0.0; 16], 5000, 1.0 / p.lipschitz())?;
    let increase = run
        .objective
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(0.0f64, f64::max);
    let oracle = p.objective(&coordinate_descent(&p, 200_000, 1e-15));
    let gap = (run.objective.last().copied().unwrap_or(f64::NAN) - oracle).abs();
    Ok(vec![
        check("ista-monotone", increase, 1e-12),
        check("ista-vs-coordinate-descent", gap, 1e-6),
    ])
}

fn adam_check() -> Result<CheckResult> {
    let config = NetConfig::new(2, 2).with_stages(1).with_channels(1);
    let mut worst = 0.0f64;
    for g in [1.0, 10.0, 100.0] {
        let mut p = NetParams::init(config.clone(), 0)?;
        let before = p.stage(0).step;
        let mut grads = GradientSet::zeros_like(&p);
        grads.0.stages_mut()[0].step = g;
        let mut st = AdamState::new(&p, 0.01);
        adam_update(&mut p, &grads, &mut st)?;
        worst = worst.max(((p.stage(0).step - before) + 0.01).abs() / 0.01);
    }
    Ok(check("adam-first-step", worst, 1e-6))
}

/// Run the suite. `quick` runs a strict subset.
pub fn run_checks(quick: bool, fault: Option<Fault>) -> Result<Vec<CheckResult>> {
    let trials = if quick { 10 } else { 100 };
    let mut out = fft_checks(trials)?;
    out.push(isometry_check(trials)?);
    if quick {
        out.extend(adjoint_checks(
            &[OperatorMode::Fixed, OperatorMode::Structured],
            trials,
            fault,
        )?);
        return Ok(out);
    }
    out.extend(adjoint_checks(
        &[
            OperatorMode::Fixed,
            OperatorMode::Structured,
            OperatorMode::Dense,
        ],
        trials,
        fault,
    )?);
    out.extend(gradient_checks()?);
    out.extend(ista_check()?);
    out.push(adam_check()?);
    Ok(out)
}
