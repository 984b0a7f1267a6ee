//! PSNR and SSIM on progressively noisier copies of an image.
//!
//! ```bash
//! cargo run --release --example quality_metrics
//! ```

use learned_cdp::datakit::synth_from_seed;
use learned_cdp::field::RealImage;
use learned_cdp::metrics::quality;
use learned_cdp::rng::SeededRng;

fn main() -> learned_cdp::Result<()> {
    let clean = synth_from_seed(5, 64, 64)?;
    let mut rng = SeededRng::new(1, 0);
    for sigma in [0.0, 0.01, 0.03, 0.1, 0.3] {
        let noisy: Vec<f64> = clean
            .data()
            .iter()
            .map(|v| v + sigma * rng.normal())
            .collect();
        let q = quality(&RealImage::new(64, 64, noisy)?, &clean)?;
        println!(
            "sigma {sigma:<5} psnr {:>7.2} dB  ssim {:.4}",
            q.psnr, q.ssim
        );
    }
    Ok(())
}
