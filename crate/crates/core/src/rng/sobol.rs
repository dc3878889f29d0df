//! Sobol low-discrepancy points with optional random linear scrambling plus
//! a digital shift.

use nalgebra::DMatrix;

use super::sobol_table::DIRECTIONS;
use super::RngStream;
use crate::error::{Error, Result};

const BITS: usize = 32;

/// Largest supported dimension.
pub const MAX_SOBOL_DIM: usize = DIRECTIONS.len();

/// Generator of successive Sobol points in Gray-code order.
///
/// Point coordinates are `(k + 0.5) / 2^32` for the 32-bit integer `k`, so
/// every coordinate lies strictly inside `(0, 1)` while each point stays in
/// the same elementary dyadic box as the exact net point.
#[derive(Clone, Debug)]
pub struct SobolSampler {
    dim: usize,
    scramble_seed: Option<u64>,
    directions: Vec<[u32; BITS]>,
    current: Vec<u32>,
    index: u64,
}

impl SobolSampler {
    /// Unscrambled sequence; the first `2^m` points form a `(t, m, s)`-net.
    pub fn new(dim: usize) -> Result<Self> {
        Self::build(dim, None)
    }

    /// Scrambled with a seeded random linear matrix scramble and digital shift.
    pub fn scrambled(dim: usize, seed: u64) -> Result<Self> {
        Self::build(dim, Some(seed))
    }

    fn build(dim: usize, scramble_seed: Option<u64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("sobol dimension must be >= 1".into()));
        }
        if dim > MAX_SOBOL_DIM {
            return Err(Error::SobolDimension {
                requested: dim,
                max: MAX_SOBOL_DIM,
            });
        }
        let mut directions: Vec<[u32; BITS]> = (0..dim).map(direction_numbers).collect();
        let mut current = vec![0u32; dim];
        if let Some(seed) = scramble_seed {
            let mut rng = RngStream::new(seed, 0x5eed_5cab);
            for (v, start) in directions.iter_mut().zip(current.iter_mut()) {
                let rows = random_lower_triangular(&mut rng);
                for d in v.iter_mut() {
                    *d = apply_matrix(&rows, *d);
                }
                *start = rng.next_u64() as u32;
            }
        }
        Ok(Self {
            dim,
            scramble_seed,
            directions,
            current,
            index: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn scramble_seed(&self) -> Option<u64> {
        self.scramble_seed
    }

    /// Index of the next point to be emitted.
    pub fn index(&self) -> u64 {
        self.index
    }

    /// Writes the next point into `out` (length `dim`).
    pub fn next_point(&mut self, out: &mut [f64]) {
        assert_eq!(out.len(), self.dim, "output slice must match sampler dimension");
        for (o, &k) in out.iter_mut().zip(&self.current) {
            *o = (k as f64 + 0.5) / 4_294_967_296.0;
        }
        // Gray-code update: flip the direction indexed by the lowest zero bit.
        let bit = (!self.index).trailing_zeros() as usize;
        assert!(bit < BITS, "sobol sequence exhausted after 2^32 points");
        for (c, v) in self.current.iter_mut().zip(&self.directions) {
            *c ^= v[bit];
        }
        self.index += 1;
    }

    /// The next `n` points as an `n x dim` matrix.
    pub fn points(&mut self, n: usize) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(n, self.dim);
        let mut row = vec![0.0; self.dim];
        for i in 0..n {
            self.next_point(&mut row);
            for (j, &v) in row.iter().enumerate() {
                out[(i, j)] = v;
            }
        }
        out
    }
}

fn direction_numbers(dim: usize) -> [u32; BITS] {
    let mut v = [0u32; BITS];
    if dim == 0 {
        for (k, d) in v.iter_mut().enumerate() {
            *d = 1 << (BITS - 1 - k);
        }
        return v;
    }
    let (poly, init) = DIRECTIONS[dim];
    let degree = (32 - poly.leading_zeros() - 1) as usize;
    let mut m = [0u32; BITS];
    m[..degree].copy_from_slice(&init[..degree]);
    for k in degree..BITS {
        let mut next = m[k - degree] ^ (m[k - degree] << degree);
        for j in 1..degree {
            if (poly >> (degree - j)) & 1 == 1 {
                next ^= m[k - j] << j;
            }
        }
        m[k] = next;
    }
    for k in 0..BITS {
        v[k] = m[k] << (BITS - 1 - k);
    }
    v
}

// Row k (k = 0 is the most significant output bit) keeps input bit k and mixes in
// random more-significant bits, so the map is invertible and preserves nets.
fn random_lower_triangular(rng: &mut RngStream) -> [u32; BITS] {
    let mut rows = [0u32; BITS];
    for (k, row) in rows.iter_mut().enumerate() {
        let own = 1u32 << (BITS - 1 - k);
        let higher = if k == 0 { 0 } else { !0u32 << (BITS - k) };
        *row = own | (rng.next_u64() as u32 & higher);
    }
    rows
}

fn apply_matrix(rows: &[u32; BITS], x: u32) -> u32 {
    let mut out = 0u32;
    for (k, row) in rows.iter().enumerate() {
        out |= ((row & x).count_ones() & 1) << (BITS - 1 - k);
    }
    out
}
