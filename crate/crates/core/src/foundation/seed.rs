//! Hierarchical seeding.
//!
//! A [`RandomSeed`] is a root seed plus a path of child indices. Every task in
//! a campaign (a site, a cavity, a pixel, a protocol trial) gets its own path,
//! so the stream a task sees depends only on its position in the hierarchy and
//! never on which worker thread ran it or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// The generator handed out by [`RandomSeed::rng`].
pub type SimRng = ChaCha8Rng;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RandomSeed {
    pub root: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub path: Vec<u64>,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RandomSeed {
    pub fn new(root: u64) -> Self {
        RandomSeed {
            root,
            path: Vec::new(),
        }
    }

    pub fn child(&self, index: u64) -> Self {
        let mut path = Vec::with_capacity(self.path.len() + 1);
        path.extend_from_slice(&self.path);
        path.push(index);
        RandomSeed {
            root: self.root,
            path,
        }
    }

    /// Named sub-stream; `tag` is hashed so distinct purposes never collide
    /// with numeric children used for indexing.
    pub fn stream(&self, tag: &str) -> Self {
        let h = tag
            .bytes()
            .fold(0xCBF2_9CE4_8422_2325u64, |h, b| {
                (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3)
            });
        self.child(h | (1 << 63))
    }

    fn key(&self) -> [u8; 32] {
        let mut state = splitmix64(self.root);
        for (depth, &idx) in self.path.iter().enumerate() {
            state = splitmix64(state ^ splitmix64(idx.wrapping_add((depth as u64 + 1) << 56)));
        }
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            state = splitmix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        key
    }

    pub fn rng(&self) -> SimRng {
        ChaCha8Rng::from_seed(self.key())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn draw(seed: &RandomSeed) -> Vec<u64> {
        let mut rng = seed.rng();
        (0..8).map(|_| rng.random()).collect()
    }

    #[test]
    fn same_path_same_stream() {
        let a = RandomSeed::new(7).child(3).child(1);
        let b = RandomSeed::new(7).child(3).child(1);
        assert_eq!(draw(&a), draw(&b));
    }

    #[test]
    fn paths_are_distinct() {
        let root = RandomSeed::new(7);
        let streams = [
            draw(&root),
            draw(&root.child(0)),
            draw(&root.child(1)),
            draw(&root.child(0).child(1)),
            draw(&root.child(1).child(0)),
            draw(&RandomSeed::new(8)),
            draw(&root.stream("pixels")),
        ];
        for i in 0..streams.len() {
            for j in (i + 1)..streams.len() {
                assert_ne!(streams[i], streams[j], "{i} vs {j}");
            }
        }
    }
}
