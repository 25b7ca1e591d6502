//! Seed derivation for reproducible parallel Monte Carlo.
//!
//! Every `(domain, path, mode)` triple owns an independent ChaCha8 stream
//! keyed by the master seed, so results do not depend on how paths are
//! scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Independent uses of the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Simulation,
    LimitLaw,
    TailBound,
    Probe,
    Perturbation,
}

impl Domain {
    fn tag(self) -> u64 {
        match self {
            Domain::Simulation => 0x5349_4d55,
            Domain::LimitLaw => 0x4c49_4d49,
            Domain::TailBound => 0x5441_494c,
            Domain::Probe => 0x5052_4f42,
            Domain::Perturbation => 0x5045_5254,
        }
    }
}

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// The stream for one path and one mode (or component) within a domain.
pub fn stream(master: u64, domain: Domain, path: u64, component: u64) -> ChaCha8Rng {
    let key = splitmix64(master ^ splitmix64(domain.tag()));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream((path << 16) | (component & 0xffff));
    rng
}

/// Standard normal draws from one stream.
pub struct NormalStream {
    rng: ChaCha8Rng,
}

impl NormalStream {
    pub fn new(master: u64, domain: Domain, path: u64, component: u64) -> Self {
        Self {
            rng: stream(master, domain, path, component),
        }
    }

    pub fn next_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}
