//! Reproducible random-number infrastructure.
//!
//! [`RngStream`] is a counter-based generator: a `(seed, stream id)` pair
//! addresses an independent ChaCha8 keystream and the counter is the word
//! position within it. Streams are plain values; child streams are derived
//! by hashing a label into a new stream id, never by sharing state.

mod normal;
mod sobol;
mod sobol_table;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use normal::{normal_cdf, normal_pdf, normal_quantile, normals_from_uniforms};
pub use sobol::{SobolSampler, MAX_SOBOL_DIM};

/// Seeded, splittable random stream.
///
/// Every uniform, normal or exponential variate consumes exactly one 64-bit
/// output, i.e. advances [`RngStream::counter`] by two 32-bit words.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    id: u64,
    core: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, id: u64) -> Self {
        let mut core = ChaCha8Rng::seed_from_u64(seed);
        core.set_stream(id);
        Self { seed, id, core }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    /// Number of 32-bit words consumed so far.
    pub fn counter(&self) -> u128 {
        self.core.get_word_pos()
    }

    /// Child stream for `label`; the parent is not advanced.
    pub fn derive(&self, label: u64) -> Self {
        Self::new(self.seed, mix64(self.id ^ mix64(label.wrapping_add(0x9e37_79b9_7f4a_7c15))))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.core.next_u64()
    }

    /// Uniform on the open interval `(0, 1)` with 53 bits of resolution.
    pub fn uniform(&mut self) -> f64 {
        ((self.core.next_u64() >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Standard normal variate by inversion of one uniform.
    pub fn standard_normal(&mut self) -> f64 {
        normal::quantile_as241(self.uniform())
    }

    pub fn fill_standard_normals(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.standard_normal();
        }
    }

    pub fn standard_normals(&mut self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        self.fill_standard_normals(&mut out);
        out
    }

    /// Exponential variate with the given rate.
    pub fn exponential(&mut self, rate: f64) -> f64 {
        -self.uniform().ln() / rate
    }
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Shape of the auxiliary normal block driving one ensemble filter run.
///
/// The block is time-major. A head slice per member holds the pseudo-observation
/// noise for an initial observation (when present) followed by the initial-state
/// normals. Each later observation step holds, per member, `[shift: d_y | evolution: m]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockLayout {
    pub members: usize,
    pub head: usize,
    pub steps: usize,
    pub obs_dim: usize,
    pub evolution: usize,
}

impl BlockLayout {
    pub fn step_width(&self) -> usize {
        self.obs_dim + self.evolution
    }

    pub fn len(&self) -> usize {
        self.members * (self.head + self.steps * self.step_width())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Per-member slice range of the head region.
    pub fn head_range(&self, member: usize) -> std::ops::Range<usize> {
        let start = member * self.head;
        start..start + self.head
    }

    /// Per-member slice range for observation step `step` (1-based).
    pub fn step_range(&self, step: usize, member: usize) -> std::ops::Range<usize> {
        debug_assert!(step >= 1 && step <= self.steps);
        let w = self.step_width();
        let start = self.members * self.head + ((step - 1) * self.members + member) * w;
        start..start + w
    }
}

/// The full collection of standard normals consumed by one ensemble filter run.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalBlock {
    layout: BlockLayout,
    values: Vec<f64>,
}

impl NormalBlock {
    /// Fresh block of iid standard normals.
    pub fn sample(layout: BlockLayout, stream: &mut RngStream) -> Self {
        Self {
            layout,
            values: stream.standard_normals(layout.len()),
        }
    }

    pub fn from_values(layout: BlockLayout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::DimensionMismatch {
                what: "normal block",
                expected: layout.len(),
                got: values.len(),
            });
        }
        Ok(Self { layout, values })
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Crank–Nicolson move `u* = sqrt(1 - s^2) u + s z`, `z ~ N(0, I)`.
pub fn crank_nicolson(u: &NormalBlock, sigma_u: f64, stream: &mut RngStream) -> Result<NormalBlock> {
    if !(0.0..=1.0).contains(&sigma_u) {
        return Err(Error::InvalidArgument(format!(
            "crank-nicolson step must lie in [0, 1], got {sigma_u}"
        )));
    }
    let rho = (1.0 - sigma_u * sigma_u).sqrt();
    let values = u
        .values
        .iter()
        .map(|&x| rho * x + sigma_u * stream.standard_normal())
        .collect();
    Ok(NormalBlock {
        layout: u.layout,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout(len: usize) -> BlockLayout {
        BlockLayout {
            members: len,
            head: 1,
            steps: 0,
            obs_dim: 1,
            evolution: 0,
        }
    }

    #[test]
    fn empty_request_is_empty() {
        let mut s = RngStream::new(1, 2);
        assert!(s.standard_normals(0).is_empty());
        assert_eq!(s.counter(), 0);
    }

    #[test]
    fn split_calls_match_single_call() {
        let mut a = RngStream::new(42, 7);
        let mut b = RngStream::new(42, 7);
        let mut split = a.standard_normals(13);
        split.extend(a.standard_normals(13));
        assert_eq!(split, b.standard_normals(26));
        assert_eq!(a.counter(), 52);
    }

    #[test]
    fn streams_are_distinct() {
        let mut a = RngStream::new(42, 0);
        let mut b = RngStream::new(42, 1);
        let mut c = RngStream::new(43, 0);
        let x = a.next_u64();
        assert_ne!(x, b.next_u64());
        assert_ne!(x, c.next_u64());
        let parent = RngStream::new(5, 5);
        assert_eq!(parent.derive(3).next_u64(), parent.derive(3).next_u64());
        assert_ne!(parent.derive(3).next_u64(), parent.derive(4).next_u64());
    }

    #[test]
    fn million_normals_have_unit_moments() {
        let mut s = RngStream::new(2024, 0);
        let n = 1_000_000;
        let xs = s.standard_normals(n);
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 0.004, "mean {mean}");
        assert!((0.99..=1.01).contains(&var), "var {var}");
    }

    #[test]
    fn uniforms_are_open_interval() {
        let mut s = RngStream::new(0, 0);
        assert!((0..100_000).map(|_| s.uniform()).all(|u| u > 0.0 && u < 1.0));
    }

    #[test]
    fn crank_nicolson_degenerate_cases() {
        let mut s = RngStream::new(9, 9);
        let u = NormalBlock::sample(layout(1000), &mut s);
        let same = crank_nicolson(&u, 0.0, &mut s).unwrap();
        assert_eq!(same, u);
        let fresh = crank_nicolson(&u, 1.0, &mut s).unwrap();
        let corr: f64 = u.values().iter().zip(fresh.values()).map(|(a, b)| a * b).sum::<f64>() / 1000.0;
        assert!(corr.abs() < 0.15);
        assert!(crank_nicolson(&u, 1.5, &mut s).is_err());
        assert!(crank_nicolson(&u, -0.1, &mut s).is_err());
    }

    #[test]
    fn crank_nicolson_from_zero_has_step_variance() {
        let n = 100_000;
        let zero = NormalBlock::from_values(layout(n), vec![0.0; n]).unwrap();
        let mut s = RngStream::new(31, 0);
        let moved = crank_nicolson(&zero, 0.1, &mut s).unwrap();
        let var = moved.values().iter().map(|x| x * x).sum::<f64>() / n as f64;
        assert!((var - 0.01).abs() < 0.0003, "var {var}");
    }

    #[test]
    fn block_layout_indexes_are_disjoint_and_cover() {
        let l = BlockLayout {
            members: 3,
            head: 2,
            steps: 4,
            obs_dim: 1,
            evolution: 2,
        };
        let mut used = vec![0u8; l.len()];
        for i in 0..3 {
            for k in l.head_range(i) {
                used[k] += 1;
            }
            for t in 1..=4 {
                for k in l.step_range(t, i) {
                    used[k] += 1;
                }
            }
        }
        assert!(used.iter().all(|&c| c == 1));
    }
}
