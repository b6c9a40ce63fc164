//! Moment checks on the random generators.

use risphase::linalg::C64;
use risphase::model::noise_matrix;
use risphase::phase::random_phases;
use risphase::rng::{item_rng, label, rng_from_seed};

#[test]
fn complex_noise_has_the_requested_second_moments() {
    let sigma2 = 0.37;
    let n = noise_matrix(200, 1000, sigma2, &mut rng_from_seed(5));
    let count = n.len() as f64;
    let mean: C64 = n.iter().sum::<C64>() / count;
    let power = n.iter().map(|z| z.norm_sqr()).sum::<f64>() / count;
    let re = n.iter().map(|z| z.re * z.re).sum::<f64>() / count;
    let pseudo: C64 = n.iter().map(|z| z * z).sum::<C64>() / count;
    // 2e5 draws: standard errors are about sigma2 / 450.
    assert!(mean.norm() < 5e-3, "mean {mean}");
    assert!((power - sigma2).abs() < 5e-3, "power {power}");
    assert!((re - sigma2 / 2.0).abs() < 5e-3, "real-part power {re}");
    assert!(pseudo.norm() < 5e-3, "pseudo-covariance {pseudo}");
}

#[test]
fn random_phases_are_uniform_on_the_circle() {
    let v = random_phases(999, 100, &mut rng_from_seed(8)).unwrap();
    let entries: Vec<C64> = v.matrix().rows(1, 999).iter().copied().collect();
    let count = entries.len() as f64;
    let first: C64 = entries.iter().sum::<C64>() / count;
    let second: C64 = entries.iter().map(|z| z * z).sum::<C64>() / count;
    assert!(first.norm() < 1e-2 && second.norm() < 1e-2, "{first} {second}");
}

#[test]
fn item_streams_are_reproducible_and_distinct() {
    use rand::RngCore;
    let draw = |i| item_rng(9, label("stream"), i).next_u64();
    assert_eq!(draw(3), draw(3));
    let mut all: Vec<u64> = (0..10_000).map(draw).collect();
    all.sort_unstable();
    all.dedup();
    assert_eq!(all.len(), 10_000);
    assert_ne!(item_rng(9, label("other"), 0).next_u64(), draw(0));
}
