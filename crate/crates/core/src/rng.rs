//! Seed derivation. Every random component draws from its own ChaCha stream
//! keyed by `(master seed, instance index, component tag)`, so sweeps are
//! order-independent and changing one knob (e.g. the target pretraining
//! error) leaves the other components of an instance untouched.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// One round of the splitmix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for instance `index` under `master`.
pub fn instance_seed(master: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// Component streams of a single instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    GroundTruth,
    IdSubspace,
    TrainingData,
    Perturbation,
    HeadInit,
    Auxiliary,
}

impl Component {
    fn tag(self) -> u64 {
        match self {
            Component::GroundTruth => 1,
            Component::IdSubspace => 2,
            Component::TrainingData => 3,
            Component::Perturbation => 4,
            Component::HeadInit => 5,
            Component::Auxiliary => 6,
        }
    }
}

pub fn component_rng(seed: u64, component: Component) -> StreamRng {
    StreamRng::seed_from_u64(splitmix64(seed ^ splitmix64(component.tag())))
}

pub fn rng_from_seed(seed: u64) -> StreamRng {
    StreamRng::seed_from_u64(seed)
}
