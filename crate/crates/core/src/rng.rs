//! Seeded, splittable random streams.
//!
//! A run seed plus a (purpose, epoch, index) triple names an independent
//! ChaCha stream, so masks and shuffles never depend on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Init = 1,
    Shuffle = 2,
    Mask = 3,
    Subsample = 4,
    Synthetic = 5,
}

pub fn stream(seed: u64, purpose: Purpose, epoch: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 56) ^ (epoch << 32) ^ (index & 0xffff_ffff));
    rng
}
