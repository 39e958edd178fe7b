//! Keyed random streams.
//!
//! Every random quantity in the engine is drawn from a ChaCha8 stream addressed
//! by a [`StreamKey`] and a stream index. Keys are derived by mixing tags into
//! a root seed, so a draw depends only on *what* it is for (level, outer
//! sample, particle, path) and never on how many other draws were made before
//! it or on which worker made them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hierarchical seed material.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamKey(u64);

impl StreamKey {
    pub fn root(seed: u64) -> Self {
        StreamKey(splitmix64(seed ^ 0x6d6c_646c_6d63_0001))
    }

    /// Derive an independent key for a tagged sub-purpose.
    pub fn child(self, tag: u64) -> Self {
        StreamKey(splitmix64(
            self.0 ^ splitmix64(tag.wrapping_add(0x5851_f42d_4c95_7f2d)),
        ))
    }

    pub fn raw(self) -> u64 {
        self.0
    }

    /// Generator for stream `index` under this key.
    pub fn rng(self, index: u64) -> ChaCha8Rng {
        let mut seed = [0u8; 32];
        let mut z = self.0;
        for chunk in seed.chunks_exact_mut(8) {
            z = splitmix64(z);
            chunk.copy_from_slice(&z.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(index);
        rng
    }
}

/// Randomness for one realization of a particle system (`ω_{1:P}`) together
/// with the key of the decoupled-path streams (`ω̄`) paired with it.
///
/// Particle `p` of the block reads sub-stream `offset + p`, so any contiguous
/// range of sub-streams can be handed to a smaller simulation unchanged.
/// Wiener increments are generated at `fine_steps` resolution and summed in
/// blocks when a coarser simulation consumes them.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RandomBlock {
    particles: StreamKey,
    paths: StreamKey,
    offset: usize,
    len: usize,
    fine_steps: usize,
}

impl RandomBlock {
    pub fn new(key: StreamKey, num_streams: usize, fine_steps: usize) -> Self {
        RandomBlock {
            particles: key.child(1),
            paths: key.child(2),
            offset: 0,
            len: num_streams,
            fine_steps,
        }
    }

    /// Contiguous sub-range `start..start+len` of this block's particle streams.
    pub fn range(&self, start: usize, len: usize) -> Self {
        assert!(start + len <= self.len, "sub-stream range out of block");
        RandomBlock {
            offset: self.offset + start,
            len,
            ..*self
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn fine_steps(&self) -> usize {
        self.fine_steps
    }

    pub fn particle_stream(&self, p: usize) -> ChaCha8Rng {
        assert!(p < self.len);
        self.particles.rng((self.offset + p) as u64)
    }

    /// Stream `ω̄^{(j)}` of the decoupled paths attached to this block.
    pub fn path_stream(&self, j: usize) -> ChaCha8Rng {
        self.paths.rng(j as u64)
    }
}

/// Fill `out` with i.i.d. `N(0, dt)` increments.
pub fn fill_increments<R: rand::Rng + ?Sized>(rng: &mut R, dt: f64, out: &mut [f64]) {
    let scale = dt.sqrt();
    for v in out.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *v = scale * z;
    }
}

/// Sum `factor` consecutive time steps of a `(steps, dim)` row-major increment
/// array into `out`, which must hold `(steps / factor) * dim` entries.
pub fn coarsen_increments(fine: &[f64], dim: usize, factor: usize, out: &mut [f64]) {
    debug_assert_eq!(fine.len() % (dim * factor), 0);
    debug_assert_eq!(out.len() * factor, fine.len());
    for (n, coarse) in out.chunks_exact_mut(dim).enumerate() {
        let base = n * factor * dim;
        for (k, c) in coarse.iter_mut().enumerate() {
            let mut acc = fine[base + k];
            for m in 1..factor {
                acc += fine[base + m * dim + k];
            }
            *c = acc;
        }
    }
}
