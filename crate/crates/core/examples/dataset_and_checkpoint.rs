//! Write a synthetic dataset to disk, load it back, train briefly, and
//! round-trip the checkpoint.
//!
//! ```bash
//! cargo run --release --example dataset_and_checkpoint
//! ```

use learned_cdp::datakit::{load_dataset, write_synth_dataset, Split};
use learned_cdp::net::NetConfig;
use learned_cdp::train::{checkpoint_load, checkpoint_save, train, TrainConfig};

fn main() -> learned_cdp::Result<()> {
    let dir = std::env::temp_dir().join("learned-cdp-example");
    let manifest = write_synth_dataset(&dir, 12, 16, 16, 4, &[9.0, 27.0, 81.0], Split::Train)?;
    println!("{}", manifest.to_text());

    let (manifest, samples) = load_dataset(&dir)?;
    for s in &samples {
        println!(
            "{}  alpha {}  mask seed {}",
            s.name,
            s.measurement.alpha(),
            s.masks.seed()
        );
    }

    let net = NetConfig::new(manifest.height, manifest.width)
        .with_stages(3)
        .with_channels(4)
        .with_mask_count(manifest.mask_count);
    let config = TrainConfig {
        epochs: 2,
        batch_size: 4,
        ..TrainConfig::new(net)
    };
    let out = train(&samples, &[], &config)?;
    let path = dir.join("model.ckpt");
    checkpoint_save(&path, &out.params, &out.adam)?;
    let back = checkpoint_load(&path)?;
    println!(
        "checkpoint {} bytes, params identical: {}, adam step {}",
        std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0),
        back.params == out.params,
        back.adam.step()
    );
    Ok(())
}
