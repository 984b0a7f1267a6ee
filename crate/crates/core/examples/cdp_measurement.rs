//! Build random phase masks, measure a synthetic image with the coded
//! diffraction operator, and look at what the noise model does.
//!
//! ```bash
//! cargo run --release --example cdp_measurement
//! ```

use learned_cdp::cdp::{magnitudes, measure, MaskSet, MeasurementOperator, OperatorMode};
use learned_cdp::datakit::synth_from_seed;
use learned_cdp::rng::{streams, SeededRng};

fn main() -> learned_cdp::Result<()> {
    let (h, w, j) = (32, 32, 4);
    let image = synth_from_seed(7, h, w)?;
    let masks = MaskSet::from_seed(11, j, h, w)?;

    // The physical operator stacks J unitary FFTs, so |Ax|^2 = J |x|^2.
    let op = MeasurementOperator::new(OperatorMode::Fixed, h, w, false)?;
    let stacked = op.apply(&image.to_complex(), &masks)?;
    let energy: f64 = stacked.iter().map(|c| c.norm().powi(2)).sum();
    println!(
        "|x|^2 = {:.6}   |Ax|^2 / J = {:.6}",
        image.norm().powi(2),
        energy / j as f64
    );

    let clean = magnitudes(&image, &masks)?;
    println!("{} magnitudes per image ({} masks)", clean.len(), j);
    for alpha in [0.0, 9.0, 27.0, 81.0] {
        let mut rng = SeededRng::named(1, streams::NOISE, 0);
        let y = measure(&image, &masks, alpha, &mut rng)?;
        let err: f64 = y
            .values()
            .iter()
            .zip(&clean)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let snr = 20.0 * (clean.iter().map(|v| v * v).sum::<f64>().sqrt() / err).log10();
        println!("alpha {alpha:>4}: |y - |Ax|| = {err:8.4}  measurement SNR {snr:6.2} dB");
    }
    Ok(())
}
