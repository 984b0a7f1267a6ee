//! Run an untrained unrolled network stage by stage and watch the
//! reconstruction error along the way.
//!
//! ```bash
//! cargo run --release --example unrolled_forward
//! ```

use learned_cdp::cdp::{measure, MaskSet};
use learned_cdp::datakit::synth_from_seed;
use learned_cdp::metrics::psnr;
use learned_cdp::net::{net_forward, NetConfig, NetParams};
use learned_cdp::rng::{streams, SeededRng};

fn main() -> learned_cdp::Result<()> {
    let (h, w) = (32, 32);
    let truth = synth_from_seed(21, h, w)?;
    let masks = MaskSet::from_seed(4, 4, h, w)?;
    let y = measure(
        &truth,
        &masks,
        9.0,
        &mut SeededRng::named(0, streams::NOISE, 0),
    )?;

    let config = NetConfig::new(h, w).with_stages(7).with_channels(8);
    let params = NetParams::init(config, 0)?;
    println!("{} trainable scalars", params.scalar_count());

    let (out, tape) = net_forward(&y, &masks, &params, None)?;
    for (k, stage) in tape.stages().iter().enumerate() {
        println!(
            "stage {k}: step {:.4}  threshold {:.4}  input psnr {:6.2} dB  after gradient step {:6.2} dB",
            params.stage(k).step,
            params.stage(k).threshold(),
            psnr(stage.input(), &truth)?,
            psnr(stage.gradient_point(), &truth)?
        );
    }
    println!("output psnr {:.2} dB", psnr(&out, &truth)?);
    Ok(())
}
