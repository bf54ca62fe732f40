//! Pinned pseudo-random generator used for every seeded decision.
//!
//! The generator is PCG32 (PCG-XSH-RR, 64-bit LCG state, 32-bit output) with
//! the reference seeding procedure: `state = 0; inc = (stream << 1) | 1;
//! step; state += seed; step`. Each step is
//! `state = state * 6364136223846793005 + inc` and the output is
//! `rotr32(((old >> 18) ^ old) >> 27, old >> 59)`.
//!
//! Test vector: `Pcg32::new(42, 54)` yields `0xa15c02b7, 0x7b47f409,
//! 0xba1d3330, 0x83d2f293, 0xbfa4784b, 0xcbed606e`.
//!
//! Bounded draws use rejection sampling with threshold
//! `(2^32 - bound) % bound`, then `r % bound`. Shuffles are Fisher-Yates from
//! the last index down: for `i = n-1 ..= 1`, swap `i` with `bounded(i + 1)`.

const MULTIPLIER: u64 = 6364136223846793005;

#[derive(Debug, Clone)]
pub struct Pcg32 {
    state: u64,
    inc: u64,
}

impl Pcg32 {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = Pcg32 {
            state: 0,
            inc: (stream << 1) | 1,
        };
        rng.step();
        rng.state = rng.state.wrapping_add(seed);
        rng.step();
        rng
    }

    fn step(&mut self) {
        self.state = self.state.wrapping_mul(MULTIPLIER).wrapping_add(self.inc);
    }

    pub fn next_u32(&mut self) -> u32 {
        let old = self.state;
        self.step();
        let xorshifted = (((old >> 18) ^ old) >> 27) as u32;
        let rot = (old >> 59) as u32;
        xorshifted.rotate_right(rot)
    }

    /// Uniform integer in `0..bound`. `bound` must be nonzero.
    pub fn bounded(&mut self, bound: u32) -> u32 {
        assert!(bound > 0, "bound must be positive");
        let threshold = bound.wrapping_neg() % bound;
        loop {
            let r = self.next_u32();
            if r >= threshold {
                return r % bound;
            }
        }
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.bounded((i + 1) as u32) as usize;
            items.swap(i, j);
        }
    }
}

/// 64-bit FNV-1a, used to derive per-key PRNG streams from strings.
pub fn fnv1a(text: &str) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for byte in text.bytes() {
        hash ^= u64::from(byte);
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}
