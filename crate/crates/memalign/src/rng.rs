//! Explicitly specified pseudo-random generator so that corpora, model
//! initialization, and shuffles reproduce bit-for-bit across
//! implementations: SplitMix64 state evolution, doubles from the top 53
//! bits, normals via the cosine branch of Box-Muller.

/// SplitMix64 generator. The state advances by the golden-ratio increment
/// and each output is the finalizer mix of the new state.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform double in [0, 1): the top 53 bits of the next output scaled
    /// by 2^-53.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * 2f64.powi(-53)
    }

    /// Uniform integer in [0, n). Uses the low-bias modulo reduction; the
    /// bias is below n / 2^64 and irrelevant next to the determinism
    /// requirement. Panics if n is 0.
    pub fn next_below(&mut self, n: usize) -> usize {
        assert!(n > 0, "next_below requires n > 0");
        (self.next_u64() % n as u64) as usize
    }

    /// Standard normal via Box-Muller, cosine branch only. u1 = 1 - next_f64
    /// keeps the logarithm argument in (0, 1].
    pub fn next_normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Fills a buffer with standard normals, one draw pair per entry.
    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for v in out.iter_mut() {
            *v = self.next_normal();
        }
    }

    /// In-place Fisher-Yates shuffle of indices 0..len, high index downward,
    /// partner chosen with next_below.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_below(i + 1);
            items.swap(i, j);
        }
    }
}

/// Derives an independent stream seed for a named purpose. XOR with a fixed
/// tag keeps distinct purposes on distinct streams for every base seed.
pub fn derive_seed(base: u64, tag: u64) -> u64 {
    base ^ tag
}

/// Stream tags for every derived generator in the crate. Each constant is
/// the ASCII of a four-letter purpose name.
pub mod tags {
    /// Ground-truth renderer parameters, derived from the corpus seed.
    pub const RENDERER: u64 = 0x7265_6e64; // "rend"
    /// Decoder initialization before pretraining.
    pub const DECODER_INIT: u64 = 0x6465_6330; // "dec0"
    /// Memory bank initialization.
    pub const MFVA_INIT: u64 = 0x6d66_7661; // "mfva"
    /// Affine face-projection initialization (memory bypass mode).
    pub const PROJ_INIT: u64 = 0x7072_6f6a; // "proj"
    /// Pretraining batch sampling.
    pub const PRETRAIN: u64 = 0x7072_6574; // "pret"
    /// Main-phase batch sampling.
    pub const TRAIN: u64 = 0x7472_616e; // "tran"
    /// Random-matching homogeneity shuffles.
    pub const SHR: u64 = 0x7368_7231; // "shr1"
    /// Random-matching diversity shuffles.
    pub const SDR: u64 = 0x7364_7231; // "sdr1"
    /// Gradient-check configuration sampling.
    pub const GRADCHECK: u64 = 0x6763_686b; // "gchk"
}
