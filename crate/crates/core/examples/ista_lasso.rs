//! Solve a small LASSO problem with ISTA and check it against coordinate
//! descent.
//!
//! ```bash
//! cargo run --release --example ista_lasso
//! ```

use learned_cdp::baselines::{coordinate_descent, ista_solve, LassoProblem};
use learned_cdp::rng::SeededRng;

fn main() -> learned_cdp::Result<()> {
    let p = LassoProblem::random_gaussian(8, 16, 0.1, &mut SeededRng::new(42, 0))?;
    let run = ista_solve(&p, &vec![0.0; p.cols()], 5000, 1.0 / p.lipschitz())?;
    for k in [0, 1, 10, 100, 1000, 5000] {
        println!("step {k:>5}: objective {:.12}", run.objective[k]);
    }
    let cd = coordinate_descent(&p, 200_000, 1e-15);
    println!("coordinate descent optimum {:.12}", p.objective(&cd));
    let support: Vec<usize> = (0..p.cols()).filter(|&i| run.solution[i] != 0.0).collect();
    println!("ISTA support {support:?}");
    Ok(())
}
