//! Sparse symmetric test matrices and their row-partitioned product.
//!
//! [`MatrixSpec`] generates a matrix on the fly from a seed: row `i` couples
//! to `i ± d (mod n)` for a fixed set of seeded offsets `d`, with values
//! derived from a hash of the unordered index pair, so every rank can build
//! its own rows without seeing the others.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aft::ProcessGroup;
use crate::error::{CommError, CraftError, Result};

/// Anything that can hand out rows of a symmetric matrix.
pub trait Operator {
    fn n(&self) -> usize;

    /// Nonzeros of row `i` as `(column, value)`, sorted by column.
    fn row(&self, i: usize) -> Vec<(usize, f64)>;

    fn dense(&self) -> Vec<Vec<f64>> {
        (0..self.n())
            .map(|i| {
                let mut r = vec![0.0; self.n()];
                for (j, v) in self.row(i) {
                    r[j] = v;
                }
                r
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixSpec {
    pub n: usize,
    /// Nonzeros per row: the diagonal plus two per offset. Even values are
    /// rounded down to the next odd count.
    pub nnz_per_row: usize,
    pub seed: u64,
}

impl MatrixSpec {
    pub fn new(n: usize, nnz_per_row: usize, seed: u64) -> Self {
        MatrixSpec { n, nnz_per_row, seed }
    }

    /// Distinct offsets in `1..(n+1)/2`, so `i + d` and `i - d` never meet.
    pub fn offsets(&self) -> Vec<usize> {
        let span = self.n.div_ceil(2);
        if span <= 1 {
            return Vec::new();
        }
        let want = (self.nnz_per_row.saturating_sub(1) / 2).min(span - 1);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut d: Vec<usize> = rand::seq::index::sample(&mut rng, span - 1, want).into_iter().map(|x| x + 1).collect();
        d.sort_unstable();
        d
    }

    fn value(&self, a: usize, b: usize) -> f64 {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let h = mix(self.seed ^ mix(lo as u64) ^ mix(hi as u64).rotate_left(17));
        let unit = (h >> 11) as f64 / (1u64 << 53) as f64;
        if lo == hi {
            4.0 * unit - 2.0
        } else {
            2.0 * unit - 1.0
        }
    }
}

/// splitmix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Operator for MatrixSpec {
    fn n(&self) -> usize {
        self.n
    }

    fn row(&self, i: usize) -> Vec<(usize, f64)> {
        let n = self.n;
        let mut cols = vec![i];
        for d in self.offsets() {
            cols.push((i + d) % n);
            cols.push((i + n - d) % n);
        }
        cols.sort_unstable();
        cols.dedup();
        cols.into_iter().map(|j| (j, self.value(i, j))).collect()
    }
}

/// An explicit dense symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix(pub Vec<Vec<f64>>);

impl Operator for DenseMatrix {
    fn n(&self) -> usize {
        self.0.len()
    }

    fn row(&self, i: usize) -> Vec<(usize, f64)> {
        self.0[i].iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(j, v)| (j, *v)).collect()
    }
}

/// Rows of `rank` when `n` rows are split into `parts` contiguous blocks,
/// the first `n % parts` blocks one row longer.
pub fn block_range(n: usize, parts: usize, rank: usize) -> Range<usize> {
    let base = n / parts;
    let extra = n % parts;
    let start = rank * base + rank.min(extra);
    start..start + base + usize::from(rank < extra)
}

fn owner(n: usize, parts: usize, i: usize) -> usize {
    (0..parts).find(|&r| block_range(n, parts, r).contains(&i)).expect("row in range")
}

/// The local rows of a matrix plus the halo exchange plan of one rank.
#[derive(Debug, Clone)]
pub struct LocalMatrix {
    pub n: usize,
    pub range: Range<usize>,
    rows: Vec<Vec<(usize, f64)>>,
    /// (peer rank, my global indices it needs)
    sends: Vec<(usize, Vec<usize>)>,
    /// (peer rank, its global indices I need)
    recvs: Vec<(usize, Vec<usize>)>,
}

impl LocalMatrix {
    pub fn new(op: &dyn Operator, parts: usize, rank: usize) -> Self {
        let n = op.n();
        let range = block_range(n, parts, rank);
        let rows: Vec<_> = range.clone().map(|i| op.row(i)).collect();
        let mut recvs: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
        let mut sends: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
        for (i, row) in range.clone().zip(&rows) {
            for &(j, _) in row {
                if !range.contains(&j) {
                    let peer = owner(n, parts, j);
                    recvs.entry(peer).or_default().insert(j);
                    // the pattern is symmetric: the peer's row j needs my i
                    sends.entry(peer).or_default().insert(i);
                }
            }
        }
        let flatten = |m: BTreeMap<usize, BTreeSet<usize>>| m.into_iter().map(|(p, s)| (p, s.into_iter().collect())).collect();
        LocalMatrix { n, range, rows, sends: flatten(sends), recvs: flatten(recvs) }
    }

    pub fn local_len(&self) -> usize {
        self.range.len()
    }

    /// `y = A x` for the local rows, exchanging halo values under `tag`.
    pub fn matvec(&self, group: &ProcessGroup, x: &[f64], tag: u64) -> Result<Vec<f64>> {
        debug_assert_eq!(x.len(), self.local_len());
        let start = self.range.start;
        for (peer, idx) in &self.sends {
            let mut bytes = Vec::with_capacity(idx.len() * 8);
            for &i in idx {
                bytes.extend_from_slice(&x[i - start].to_le_bytes());
            }
            group.send(*peer, tag, bytes)?;
        }
        let mut halo: BTreeMap<usize, f64> = BTreeMap::new();
        for (peer, idx) in &self.recvs {
            let bytes = group.recv(*peer, tag)?;
            if bytes.len() != idx.len() * 8 {
                return Err(CraftError::Comm(CommError::Protocol(format!(
                    "halo from rank {peer}: {} bytes for {} values",
                    bytes.len(),
                    idx.len()
                ))));
            }
            for (&i, chunk) in idx.iter().zip(bytes.chunks_exact(8)) {
                halo.insert(i, f64::from_le_bytes(chunk.try_into().expect("8 bytes")));
            }
        }
        Ok(self
            .rows
            .iter()
            .map(|row| {
                row.iter()
                    .map(|&(j, a)| a * if self.range.contains(&j) { x[j - start] } else { halo[&j] })
                    .sum()
            })
            .collect())
    }
}
