//! Karcher flow on a random cloud of SPD matrices.

use spdim::frechet::{frechet_mean, karcher_gradient, FrechetConfig};
use spdim::random::{random_invertible, random_spd, substream, Purpose};

fn main() -> spdim::Result<()> {
    let mut rng = substream(3, 0, Purpose::Fixture);
    let set: Vec<_> = (0..50).map(|_| random_spd(4, 1.5, &mut rng)).collect();
    let cfg = FrechetConfig::default();
    let r = frechet_mean(&set, &cfg)?;
    println!(
        "converged in {} iterations, gradient norm {:.2e}, variance {:.4}",
        r.iterations, r.final_grad_norm, r.variance
    );
    println!("mean =\n{}", r.mean.as_matrix());
    println!(
        "‖grad‖ at the mean = {:.2e}",
        karcher_gradient(&r.mean, &set)?.frobenius_norm()
    );

    // Congruence moves the mean the same way.
    let a = random_invertible(4, &mut rng);
    let moved: Vec<_> = set
        .iter()
        .map(|c| c.congruence(&a))
        .collect::<spdim::Result<_>>()?;
    let m2 = frechet_mean(&moved, &cfg)?.mean;
    let expected = r.mean.congruence(&a)?;
    println!(
        "‖mean(ACAᵀ) − A mean Aᵀ‖ / ‖A mean Aᵀ‖ = {:.2e}",
        (m2.as_matrix() - expected.as_matrix()).norm() / expected.as_matrix().norm()
    );
    Ok(())
}
