//! The three measurement-matrix modes and the adjoint identity
//! `<Wx, z> = <x, W^H z>` that ties the forward and backward paths together.
//!
//! ```bash
//! cargo run --release --example learnable_operator
//! ```

use learned_cdp::cdp::{MaskSet, OperatorMode};
use learned_cdp::selfcheck::{adjoint_error, random_consistent_operator};

fn main() -> learned_cdp::Result<()> {
    let (h, w) = (8, 8);
    let masks = MaskSet::from_seed(3, 4, h, w)?;
    for mode in [
        OperatorMode::Fixed,
        OperatorMode::Structured,
        OperatorMode::Dense,
    ] {
        let op = random_consistent_operator(mode, h, w, 5)?;
        println!(
            "{mode:<10} learnable {:<5} forward scalars {:>5}  adjoint error {:.2e}",
            mode.is_learnable(),
            2 * op.forward_tensor().len(),
            adjoint_error(&op, &masks, 20, 9)?
        );
    }

    // An untied adjoint path is free to drift away from the true adjoint.
    let mut op = random_consistent_operator(OperatorMode::Structured, h, w, 5)?;
    for v in op.adjoint_tensor_mut().iter_mut().step_by(7) {
        *v *= 1.1;
    }
    println!(
        "structured with perturbed adjoint path: adjoint error {:.2e}",
        adjoint_error(&op, &masks, 20, 9)?
    );
    Ok(())
}
