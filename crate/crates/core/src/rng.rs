//! Deterministic pseudo-random utilities.
//!
//! Every random quantity in the toolkit (knot restarts, measurement noise)
//! is derived from a single master seed through counter-based mixing, so
//! that runs are exactly reproducible and independent consumers never share
//! a stream.

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// One round of the splitmix64 output function.
#[inline]
pub fn mix(z: u64) -> u64 {
    let mut z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive an independent child seed from a master seed and a stream label.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    mix(master ^ h)
}

/// Small deterministic generator for sequential draws.
#[derive(Clone, Debug)]
pub struct SmallRng {
    state: u64,
}

impl SmallRng {
    pub fn new(seed: u64) -> Self {
        Self { state: mix(seed) }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix(self.state)
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }
}

/// Stateless standard Gaussian indexed by `(seed, index, channel)`.
///
/// Evaluating the same triple always produces the same deviate, which lets
/// a sample-and-hold noise process be queried at arbitrary times without
/// carrying generator state through an adaptive integrator.
pub fn gauss_at(seed: u64, index: u64, channel: u32) -> f64 {
    let base = mix(seed ^ mix(index).wrapping_add(u64::from(channel).wrapping_mul(GOLDEN)));
    let a = mix(base);
    let b = mix(base ^ GOLDEN);
    // Box-Muller on two uniforms; u1 kept strictly positive.
    let u1 = ((a >> 11) as f64 + 1.0) * (1.0 / ((1u64 << 53) as f64 + 1.0));
    let u2 = (b >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
