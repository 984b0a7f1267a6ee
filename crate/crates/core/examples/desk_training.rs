//! Train on 200 synthetic 32x32 images and compare a learned measurement
//! matrix against the fixed one.
//!
//! ```bash
//! cargo run --release --example desk_training -- [epochs] [alpha]
//! ```

use std::path::Path;

use learned_cdp::cdp::OperatorMode;
use learned_cdp::datakit::{build_dataset, synth_manifest, Split};
use learned_cdp::net::{NetConfig, NetParams};
use learned_cdp::train::{evaluate, train_with, AdamState, TrainConfig};

fn main() -> learned_cdp::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(10);
    let alpha: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(27.0);

    let train_set = build_dataset(
        &synth_manifest(200, 32, 32, 1, &[alpha], Split::Train)?,
        Path::new("."),
    )?;
    let val_set = build_dataset(
        &synth_manifest(20, 32, 32, 2, &[alpha], Split::Test)?,
        Path::new("."),
    )?;

    for mode in [OperatorMode::Structured, OperatorMode::Fixed] {
        let net = NetConfig::new(32, 32)
            .with_stages(7)
            .with_channels(8)
            .with_mask_count(4)
            .with_mode(mode);
        let config = TrainConfig {
            epochs,
            seed: 3,
            threads: std::thread::available_parallelism().map_or(1, |n| n.get()),
            ..TrainConfig::new(net.clone())
        };
        let params = NetParams::init(net, config.seed)?;
        let init = evaluate(&params, &val_set)?;
        let init_psnr = init.iter().map(|r| r.psnr).sum::<f64>() / init.len() as f64;
        println!("{mode} operator, alpha {alpha}, untrained val psnr {init_psnr:.2} dB");
        let adam = AdamState::new(&params, config.lr);
        train_with(params, adam, &train_set, &val_set, &config, |r| {
            println!(
                "  epoch {:>3}  lr {:.2e}  loss {:.5}  val psnr {:.2} dB  ssim {:.3}  {:.1}s",
                r.epoch, r.lr, r.train_loss, r.val_psnr, r.val_ssim, r.seconds
            );
        })?;
    }
    Ok(())
}
