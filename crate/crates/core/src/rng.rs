use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::array::Array;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Array of i.i.d. `N(0, std^2)` draws.
pub fn gaussian(shape: &[usize], std: f64, rng: &mut Rng) -> Array {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * std
        })
        .collect();
    Array::new(shape.to_vec(), data).expect("length matches shape")
}

/// Array of i.i.d. uniform draws on `[lo, hi)`.
pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut Rng) -> Array {
    use rand::Rng as _;
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Array::new(shape.to_vec(), data).expect("length matches shape")
}
