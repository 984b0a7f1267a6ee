//! Compare reverse-mode gradients against central finite differences for
//! every parameter group of a small network.
//!
//! ```bash
//! cargo run --release --example gradient_check
//! ```

use learned_cdp::cdp::OperatorMode;
use learned_cdp::net::NetConfig;
use learned_cdp::train::gradcheck::{directional_check, finite_difference_check, random_problem};

fn main() -> learned_cdp::Result<()> {
    for mode in [
        OperatorMode::Fixed,
        OperatorMode::Structured,
        OperatorMode::Dense,
    ] {
        let config = NetConfig::new(8, 8)
            .with_stages(2)
            .with_channels(2)
            .with_mask_count(2)
            .with_mode(mode);
        let (params, sample) = random_problem(config, 1)?;
        println!("{mode}:");
        for g in finite_difference_check(&params, &sample, 1e-6)? {
            println!(
                "  {:<18} {:>5} entries  max |grad| {:.3e}  rel. error {:.2e}",
                g.group, g.entries, g.largest_gradient, g.relative_error
            );
        }
        let (analytic, numeric) = directional_check(&params, &sample, 1e-6, 2)?;
        println!("  random direction: analytic {analytic:.9e}  numeric {numeric:.9e}");
    }
    Ok(())
}
