//! Seeded derivation of the block-diagonal orthonormal-frame encoding key.
//!
//! A key is a partition of the feature space into blocks, one random
//! orthonormal frame per block, and a feature permutation. It is a pure
//! function of `(seed, plan)`, so every party that holds the shared seed
//! derives a bitwise-identical key without any communication.

use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::householder_orthonormalize;
use crate::rng::KeyStream;

/// Default number of plaintext features per block.
pub const DEFAULT_BLOCK_SIZE: usize = 64;
/// Default number of extra ambient dimensions per block.
pub const DEFAULT_REDUNDANCY: usize = 1;
/// Orthonormality tolerance for a valid key.
pub const ORTHONORMAL_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KeyError {
    #[error("feature count must be at least 1")]
    ZeroFeatures,
    #[error("block size must be at least 1")]
    ZeroBlockSize,
    #[error(
        "redundancy per block must be at least 1 so the encoded width exceeds the feature count"
    )]
    ZeroRedundancy,
    #[error("invalid frame plan: {0}")]
    InvalidPlan(String),
    #[error("random draw for block {block} was numerically rank-deficient twice")]
    DegenerateDraw { block: usize },
    #[error("invalid seed: {0}")]
    InvalidSeed(String),
}

/// 32-byte shared secret. `Debug` never prints the bytes.
#[derive(Clone, PartialEq, Eq)]
pub struct Seed([u8; 32]);

impl Seed {
    pub fn new(bytes: [u8; 32]) -> Self {
        Self(bytes)
    }

    pub fn from_hex(s: &str) -> Result<Self, KeyError> {
        let bytes = hex::decode(s.trim()).map_err(|e| KeyError::InvalidSeed(e.to_string()))?;
        let arr: [u8; 32] = bytes.try_into().map_err(|v: Vec<u8>| {
            KeyError::InvalidSeed(format!("expected 32 bytes, got {}", v.len()))
        })?;
        Ok(Self(arr))
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

impl fmt::Debug for Seed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Seed(<redacted>)")
    }
}

/// One block of the partition: `width` plaintext features embedded in a
/// `dim`-dimensional complex space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub width: usize,
    pub dim: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FramePlan {
    features: usize,
    blocks: Vec<Block>,
}

impl FramePlan {
    /// Validates an explicit partition.
    pub fn new(blocks: Vec<Block>) -> Result<Self, KeyError> {
        if blocks.is_empty() {
            return Err(KeyError::InvalidPlan("no blocks".into()));
        }
        for (i, b) in blocks.iter().enumerate() {
            if b.width == 0 {
                return Err(KeyError::InvalidPlan(format!("block {i} has zero width")));
            }
            if b.width > b.dim {
                return Err(KeyError::InvalidPlan(format!(
                    "block {i}: width {} exceeds ambient dimension {}",
                    b.width, b.dim
                )));
            }
        }
        let features = blocks.iter().map(|b| b.width).sum();
        let plan = Self { features, blocks };
        if plan.redundancy() == 0 {
            return Err(KeyError::ZeroRedundancy);
        }
        Ok(plan)
    }

    /// Plaintext feature count `f`.
    pub fn features(&self) -> usize {
        self.features
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    /// Total redundancy `k = Σ (dim - width)`.
    pub fn redundancy(&self) -> usize {
        self.blocks.iter().map(|b| b.dim - b.width).sum()
    }

    /// Encoded width `f + k`.
    pub fn encoded_width(&self) -> usize {
        self.blocks.iter().map(|b| b.dim).sum()
    }

    /// Per-row multiply-add count of blockwise encoding, `Σ width·dim`.
    pub fn encode_cost(&self) -> usize {
        self.blocks.iter().map(|b| b.width * b.dim).sum()
    }
}

/// Splits `features` into blocks of `block_size` (the last one takes the
/// remainder) and gives each block `redundancy` extra dimensions.
pub fn derive_plan(
    features: usize,
    block_size: usize,
    redundancy: usize,
) -> Result<FramePlan, KeyError> {
    if features == 0 {
        return Err(KeyError::ZeroFeatures);
    }
    if block_size == 0 {
        return Err(KeyError::ZeroBlockSize);
    }
    if redundancy == 0 {
        return Err(KeyError::ZeroRedundancy);
    }
    let mut blocks = Vec::with_capacity(features.div_ceil(block_size));
    let mut left = features;
    while left > 0 {
        let width = left.min(block_size);
        blocks.push(Block {
            width,
            dim: width + redundancy,
        });
        left -= width;
    }
    FramePlan::new(blocks)
}

/// A `dim x width` complex matrix with orthonormal columns, stored
/// column-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    dim: usize,
    width: usize,
    entries: Vec<Complex64>,
}

impl Frame {
    /// Wraps raw column-major entries without checking orthonormality.
    pub fn from_column_major(dim: usize, width: usize, entries: Vec<Complex64>) -> Self {
        assert_eq!(entries.len(), dim * width, "frame buffer has wrong length");
        Self {
            dim,
            width,
            entries,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn column(&self, c: usize) -> &[Complex64] {
        &self.entries[c * self.dim..(c + 1) * self.dim]
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.entries[col * self.dim + row]
    }

    pub fn entries(&self) -> &[Complex64] {
        &self.entries
    }

    /// Max entry of `|O†O - I|`.
    pub fn orthonormality_residual(&self) -> f64 {
        let mut worst = 0.0f64;
        for a in 0..self.width {
            let ca = self.column(a);
            for b in a..self.width {
                let s: Complex64 = ca
                    .iter()
                    .zip(self.column(b))
                    .map(|(x, y)| x.conj() * y)
                    .sum();
                let target = if a == b {
                    Complex64::new(1.0, 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                };
                worst = worst.max((s - target).norm());
            }
        }
        worst
    }

    /// True when both frames hold the same bits.
    pub fn bitwise_eq(&self, other: &Frame) -> bool {
        self.dim == other.dim
            && self.width == other.width
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|(a, b)| a.re.to_bits() == b.re.to_bits() && a.im.to_bits() == b.im.to_bits())
    }
}

/// Draws a Haar-random orthonormal `dim x width` frame from `stream`.
///
/// Entries are drawn column-major, one complex Gaussian per entry, then
/// orthonormalized by Householder QR with positive real diagonal. A
/// rank-deficient draw is retried once with fresh draws.
pub fn gen_frame(stream: &mut KeyStream, dim: usize, width: usize) -> Result<Frame, KeyError> {
    assert!(width >= 1 && width <= dim, "frame needs 1 <= width <= dim");
    for _ in 0..2 {
        let raw: Vec<Complex64> = (0..dim * width)
            .map(|_| stream.next_complex_gaussian())
            .collect();
        if let Ok(q) = householder_orthonormalize(dim, width, raw) {
            return Ok(Frame {
                dim,
                width,
                entries: q,
            });
        }
    }
    Err(KeyError::DegenerateDraw { block: 0 })
}

/// Feature permutation: encoded position `c` reads plaintext feature `map[c]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn identity(f: usize) -> Self {
        Self((0..f).collect())
    }

    /// Wraps a mapping without validation; see [`Permutation::is_bijection`].
    pub fn from_vec_unchecked(map: Vec<usize>) -> Self {
        Self(map)
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_bijection(&self) -> bool {
        let mut seen = vec![false; self.0.len()];
        for &i in &self.0 {
            if i >= seen.len() || seen[i] {
                return false;
            }
            seen[i] = true;
        }
        true
    }
}

/// Fisher–Yates shuffle of `[0, f)`: for `i` from `f-1` down to `1`, swap
/// position `i` with a uniform position in `[0, i]`.
pub fn gen_permutation(stream: &mut KeyStream, f: usize) -> Permutation {
    let mut map: Vec<usize> = (0..f).collect();
    for i in (1..f).rev() {
        let j = stream.next_below(i as u64 + 1) as usize;
        map.swap(i, j);
    }
    Permutation(map)
}

/// The per-cohort secret: one frame per block plus the feature permutation.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodingKey {
    plan: FramePlan,
    frames: Vec<Frame>,
    sigma: Permutation,
}

impl EncodingKey {
    /// Assembles a key from parts without validation; run [`verify_key`]
    /// before trusting it.
    pub fn from_parts(plan: FramePlan, frames: Vec<Frame>, sigma: Permutation) -> Self {
        Self {
            plan,
            frames,
            sigma,
        }
    }

    pub fn plan(&self) -> &FramePlan {
        &self.plan
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn permutation(&self) -> &Permutation {
        &self.sigma
    }

    pub fn encoded_width(&self) -> usize {
        self.plan.encoded_width()
    }

    pub fn bitwise_eq(&self, other: &EncodingKey) -> bool {
        self.plan == other.plan
            && self.sigma == other.sigma
            && self.frames.len() == other.frames.len()
            && self
                .frames
                .iter()
                .zip(&other.frames)
                .all(|(a, b)| a.bitwise_eq(b))
    }

    /// Dense `(f+k) x f` matrix `Γ` (block diagonal, before permutation),
    /// row-major. Only meant for tests and small debug exports.
    pub fn dense_gamma(&self) -> Vec<Complex64> {
        let f = self.plan.features();
        let rows = self.plan.encoded_width();
        let mut g = vec![Complex64::new(0.0, 0.0); rows * f];
        let (mut r0, mut c0) = (0, 0);
        for fr in &self.frames {
            for c in 0..fr.width() {
                for r in 0..fr.dim() {
                    g[(r0 + r) * f + c0 + c] = fr.get(r, c);
                }
            }
            r0 += fr.dim();
            c0 += fr.width();
        }
        g
    }
}

/// Builds the key: one ChaCha20 stream from `seed`, frames in block order,
/// then the permutation.
pub fn build_key(seed: &Seed, plan: &FramePlan) -> Result<EncodingKey, KeyError> {
    let mut stream = KeyStream::from_seed(*seed.as_bytes());
    let mut frames = Vec::with_capacity(plan.blocks().len());
    for (i, b) in plan.blocks().iter().enumerate() {
        let frame = gen_frame(&mut stream, b.dim, b.width).map_err(|e| match e {
            KeyError::DegenerateDraw { .. } => KeyError::DegenerateDraw { block: i },
            other => other,
        })?;
        frames.push(frame);
    }
    let sigma = gen_permutation(&mut stream, plan.features());
    Ok(EncodingKey {
        plan: plan.clone(),
        frames,
        sigma,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValidationReport {
    /// Max entry of `|Γ†Γ - I_f|`.
    pub max_residual: f64,
    pub permutation_valid: bool,
    pub plan_consistent: bool,
    pub failures: Vec<String>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Checks orthonormality, permutation validity and plan consistency.
///
/// `Γ` is block diagonal, so `Γ†Γ` is block diagonal with blocks `O_i†O_i`
/// and its off-diagonal blocks vanish identically.
pub fn verify_key(key: &EncodingKey) -> ValidationReport {
    let mut failures = Vec::new();
    let plan = &key.plan;

    let mut plan_consistent = key.frames.len() == plan.blocks().len();
    if !plan_consistent {
        failures.push(format!(
            "plan has {} blocks but key has {} frames",
            plan.blocks().len(),
            key.frames.len()
        ));
    }
    for (i, (fr, b)) in key.frames.iter().zip(plan.blocks()).enumerate() {
        if fr.dim() != b.dim || fr.width() != b.width {
            plan_consistent = false;
            failures.push(format!(
                "frame {i} is {}x{}, plan expects {}x{}",
                fr.dim(),
                fr.width(),
                b.dim,
                b.width
            ));
        }
    }
    if plan.redundancy() == 0 {
        plan_consistent = false;
        failures.push("plan has zero redundancy".into());
    }

    let max_residual = key
        .frames
        .iter()
        .map(Frame::orthonormality_residual)
        .fold(0.0, f64::max);
    if !(max_residual <= ORTHONORMAL_TOL) {
        failures.push(format!(
            "orthonormality residual {max_residual:e} exceeds {ORTHONORMAL_TOL:e}"
        ));
    }

    let permutation_valid = key.sigma.len() == plan.features() && key.sigma.is_bijection();
    if !permutation_valid {
        failures.push("permutation is not a bijection on the feature indices".into());
    }

    ValidationReport {
        max_residual,
        permutation_valid,
        plan_consistent,
        failures,
    }
}
