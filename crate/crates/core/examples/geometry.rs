//! AIRM basics on a pair of random SPD matrices: distance, geodesic,
//! Riemannian log/exp and parallel transport.

use spdim::random::{random_invertible, random_spd, substream, Purpose};
use spdim::spd::{
    airm_distance, airm_inner, exp_map, geodesic, log_map, parallel_transport, upper,
};

fn main() -> spdim::Result<()> {
    let mut rng = substream(1, 0, Purpose::Fixture);
    let a = random_spd(3, 1.0, &mut rng);
    let b = random_spd(3, 1.0, &mut rng);

    let d = airm_distance(&a, &b)?;
    println!("δ(A, B) = {d:.6}");

    let w = random_invertible(3, &mut rng);
    let dw = airm_distance(&a.congruence(&w)?, &b.congruence(&w)?)?;
    println!("δ(WAWᵀ, WBWᵀ) = {dw:.6}");

    for t in [0.0, 0.25, 0.5, 1.0, 1.5] {
        let g = geodesic(&a, &b, t)?;
        println!(
            "t = {t:<4} δ(A, A #_t B) = {:.6}{}",
            airm_distance(&a, &g.point)?,
            if g.extrapolated {
                "  (extrapolated)"
            } else {
                ""
            }
        );
    }

    let s = log_map(&a, &b)?;
    let back = exp_map(&a, &s)?;
    println!(
        "‖Exp_A(Log_A B) − B‖_F = {:.2e}",
        (back.as_matrix() - b.as_matrix()).norm()
    );

    let moved = parallel_transport(&s, &a, &b)?;
    println!(
        "‖Log_A B‖ at A = {:.6}, transported to B = {:.6}",
        airm_inner(&a, &s, &s)?.sqrt(),
        airm_inner(&b, &moved, &moved)?.sqrt()
    );
    println!("upper(log B) = {:?}", upper(&b.log()).coords());
    Ok(())
}
