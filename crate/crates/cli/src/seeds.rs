//! Named random substreams derived from the one scenario seed.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{Map, Value};

/// FNV-1a, fixed so stream numbers never change between builds.
fn stream_id(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

pub struct Seeds {
    pub master: u64,
    used: Map<String, Value>,
}

impl Seeds {
    pub fn new(master: u64) -> Self {
        Seeds { master, used: Map::new() }
    }

    /// Seed for the substream `name`; the same name always gives the same value.
    pub fn stream(&mut self, name: &str) -> u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master);
        rng.set_stream(stream_id(name));
        let seed = rng.next_u64();
        self.used.insert(name.to_string(), Value::from(seed));
        seed
    }

    pub fn used(&self) -> Map<String, Value> {
        self.used.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_stable_and_distinct() {
        let mut s = Seeds::new(7);
        let a = s.stream("trajectories");
        assert_eq!(a, Seeds::new(7).stream("trajectories"));
        assert_ne!(a, s.stream("detections"));
        assert_ne!(a, Seeds::new(8).stream("trajectories"));
        assert_eq!(s.used().len(), 2);
    }
}
