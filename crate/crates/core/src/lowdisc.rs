//! Base-2 Sobol nets and their randomizations.
//!
//! Points are generated in Gray-code order with `W = 32` fractional bits.
//! Raw points keep their exact dyadic values `k / 2^32` (index 0 is the
//! origin); downstream quantile transforms clamp away from the boundary.

use std::fmt;
use std::ops::Range;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::rng::{counter_bits, hash_words, mix64};
use crate::{Error, Result};

/// Number of fractional bits per coordinate.
pub const BITS: u32 = 32;
const SCALE: f64 = 4_294_967_296.0; // 2^32

const BUNDLED_DIRECTIONS: &str = include_str!("../assets/new-joe-kuo-6.256.txt");

/// Primitive polynomial and initial direction integers for one dimension.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectionEntry {
    pub dim: usize,
    pub degree: u32,
    pub poly: u32,
    pub m: Vec<u32>,
}

/// A table of Sobol direction numbers in Joe–Kuo layout.
///
/// Dimension 1 is implicit (van der Corput, all `m_i = 1`); `entries[k]`
/// describes dimension `k + 2`.
#[derive(Debug, Clone)]
pub struct DirectionNumbers {
    entries: Vec<DirectionEntry>,
    vectors: Vec<[u32; BITS as usize]>,
}

impl DirectionNumbers {
    /// Parse Joe–Kuo text: whitespace-separated `d s a m_1 … m_s`, one
    /// dimension per line, starting at `d = 2`. A header line and blank lines
    /// are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<DirectionEntry> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line_no = lineno + 1;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            if fields[0].parse::<u64>().is_err() {
                if entries.is_empty() {
                    // header such as "d s a m_i"
                    continue;
                }
                return Err(parse_err(line_no, "expected a dimension number"));
            }
            let nums: Vec<u64> = fields
                .iter()
                .map(|f| f.parse::<u64>())
                .collect::<Result<_, _>>()
                .map_err(|e| parse_err(line_no, &format!("invalid integer: {e}")))?;
            if nums.len() < 3 {
                return Err(parse_err(line_no, "expected at least `d s a`"));
            }
            let (dim, degree, poly) = (nums[0] as usize, nums[1], nums[2]);
            let expected_dim = entries.len() + 2;
            if dim != expected_dim {
                return Err(parse_err(
                    line_no,
                    &format!("dimension {dim} out of sequence (expected {expected_dim})"),
                ));
            }
            if degree == 0 || degree >= BITS as u64 {
                return Err(parse_err(line_no, &format!("unsupported degree {degree}")));
            }
            let m: Vec<u64> = nums[3..].to_vec();
            if m.len() as u64 != degree {
                return Err(parse_err(
                    line_no,
                    &format!("expected {degree} direction integers, found {}", m.len()),
                ));
            }
            if poly >= 1 << (degree - 1) {
                return Err(parse_err(line_no, "polynomial code exceeds degree"));
            }
            for (i, &mi) in m.iter().enumerate() {
                let i = i as u32 + 1;
                if mi % 2 == 0 || mi >= 1u64 << i {
                    return Err(parse_err(
                        line_no,
                        &format!("m_{i} = {mi} must be odd and below 2^{i}"),
                    ));
                }
            }
            entries.push(DirectionEntry {
                dim,
                degree: degree as u32,
                poly: poly as u32,
                m: m.into_iter().map(|v| v as u32).collect(),
            });
        }
        Ok(Self::from_entries(entries))
    }

    fn from_entries(entries: Vec<DirectionEntry>) -> Self {
        let mut vectors = Vec::with_capacity(entries.len() + 1);
        let mut first = [0u32; BITS as usize];
        for (i, v) in first.iter_mut().enumerate() {
            *v = 1 << (BITS - 1 - i as u32);
        }
        vectors.push(first);
        for e in &entries {
            vectors.push(direction_vector(e));
        }
        Self { entries, vectors }
    }

    /// Table shipped with the crate (Joe–Kuo `new-joe-kuo-6`, 256 dimensions).
    pub fn bundled() -> &'static DirectionNumbers {
        static TABLE: OnceLock<DirectionNumbers> = OnceLock::new();
        TABLE.get_or_init(|| {
            DirectionNumbers::parse(BUNDLED_DIRECTIONS).expect("bundled direction numbers parse")
        })
    }

    /// Largest supported dimension.
    pub fn max_dim(&self) -> usize {
        self.entries.len() + 1
    }

    /// Entry for dimension `dim` (2-based); dimension 1 has none.
    pub fn entry(&self, dim: usize) -> Option<&DirectionEntry> {
        dim.checked_sub(2).and_then(|k| self.entries.get(k))
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        if d > self.max_dim() {
            return Err(Error::Capability(format!(
                "dimension {d} exceeds direction-number table (max {})",
                self.max_dim()
            )));
        }
        Ok(())
    }
}

fn parse_err(line: usize, msg: &str) -> Error {
    Error::Parse {
        line,
        message: msg.to_string(),
    }
}

fn direction_vector(e: &DirectionEntry) -> [u32; BITS as usize] {
    let s = e.degree as usize;
    let mut v = [0u32; BITS as usize];
    for i in 0..s {
        v[i] = e.m[i] << (BITS as usize - 1 - i);
    }
    for i in s..BITS as usize {
        v[i] = v[i - s] ^ (v[i - s] >> s);
        for k in 1..s {
            if (e.poly >> (s - 1 - k)) & 1 == 1 {
                v[i] ^= v[i - k];
            }
        }
    }
    v
}

/// Provenance of a point set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointKind {
    Mc,
    SobolRaw,
    SobolScrambled,
    SobolShifted,
}

impl PointKind {
    pub fn name(self) -> &'static str {
        match self {
            PointKind::Mc => "mc",
            PointKind::SobolRaw => "sobol_raw",
            PointKind::SobolScrambled => "sobol_scrambled",
            PointKind::SobolShifted => "sobol_shifted",
        }
    }

    pub fn is_sobol(self) -> bool {
        !matches!(self, PointKind::Mc)
    }
}

impl fmt::Display for PointKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// `n × d` points in `[0,1)^d`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    n: usize,
    d: usize,
    values: Vec<f64>,
    kind: PointKind,
    seed: u64,
    indices: Range<u64>,
}

impl PointSet {
    /// Wrap externally generated points (kind `Mc`, seed 0).
    pub fn from_values(n: usize, d: usize, values: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("point set needs n >= 1".into()));
        }
        if values.len() != n * d {
            return Err(Error::dim(n * d, values.len()));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..1.0).contains(*v)) {
            return Err(Error::Domain(format!("point coordinate {v} outside [0, 1)")));
        }
        Ok(Self {
            n,
            d,
            values,
            kind: PointKind::Mc,
            seed: 0,
            indices: 0..n as u64,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn kind(&self) -> PointKind {
        self.kind
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Generating index range; `[0, n)` for Sobol kinds.
    pub fn indices(&self) -> Range<u64> {
        self.indices.clone()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    pub fn points(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.values.chunks_exact(self.d.max(1)).take(self.n)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// Coordinate `j` of every point.
    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.values[i * self.d + j]).collect()
    }
}

#[inline]
fn to_bits(v: f64) -> u32 {
    (v * SCALE) as u32
}

#[inline]
fn from_bits(k: u32) -> f64 {
    k as f64 / SCALE
}

/// First `n` points (index 0 included) of the `d`-dimensional Sobol sequence.
pub fn sobol_raw(n: usize, d: usize, dirs: &DirectionNumbers) -> Result<PointSet> {
    dirs.check_dim(d)?;
    if n == 0 {
        return Err(Error::InvalidArgument("point set needs n >= 1".into()));
    }
    if n as u64 > 1u64 << BITS {
        return Err(Error::Capability(format!(
            "at most 2^{BITS} Sobol points supported, requested {n}"
        )));
    }
    let mut values = Vec::with_capacity(n * d);
    let mut x = vec![0u32; d];
    values.extend(x.iter().map(|&k| from_bits(k)));
    for i in 1..n {
        let c = (i as u64).trailing_zeros() as usize;
        for (j, xj) in x.iter_mut().enumerate() {
            *xj ^= dirs.vectors[j][c];
        }
        values.extend(x.iter().map(|&k| from_bits(k)));
    }
    Ok(PointSet {
        n,
        d,
        values,
        kind: PointKind::SobolRaw,
        seed: 0,
        indices: 0..n as u64,
    })
}

fn require_raw(ps: &PointSet, op: &str) -> Result<()> {
    if ps.kind != PointKind::SobolRaw {
        return Err(Error::InvalidArgument(format!(
            "{op} requires a raw Sobol point set, got {}",
            ps.kind
        )));
    }
    Ok(())
}

fn dim_seed(seed: u64, j: usize) -> u64 {
    hash_words(&[seed, j as u64])
}

/// Random digital shift: XOR every coordinate with a per-dimension uniform
/// 32-bit word derived from `seed`.
pub fn digital_shift(ps: &PointSet, seed: u64) -> Result<PointSet> {
    require_raw(ps, "digital_shift")?;
    let shifts: Vec<u32> = (0..ps.d).map(|j| (dim_seed(seed, j) >> 32) as u32).collect();
    Ok(apply_shift(ps, &shifts, seed))
}

fn apply_shift(ps: &PointSet, shifts: &[u32], seed: u64) -> PointSet {
    let values = ps
        .values
        .chunks_exact(ps.d)
        .flat_map(|p| p.iter().zip(shifts).map(|(&v, &s)| from_bits(to_bits(v) ^ s)))
        .collect();
    PointSet {
        values,
        kind: PointKind::SobolShifted,
        seed,
        ..ps.clone()
    }
}

/// Nested uniform (Owen) scrambling.
///
/// The flip applied to bit `k` of coordinate `j` is a pseudo-random bit keyed
/// by `(seed, j, k, the k leading bits of the unscrambled value)`, which is a
/// lazily evaluated random permutation tree.
pub fn owen_scramble(ps: &PointSet, seed: u64) -> Result<PointSet> {
    require_raw(ps, "owen_scramble")?;
    if !ps.n.is_power_of_two() {
        return Err(Error::InvalidArgument(format!(
            "owen_scramble requires n to be a power of two, got {}",
            ps.n
        )));
    }
    let seeds: Vec<u64> = (0..ps.d).map(|j| dim_seed(seed, j)).collect();
    Ok(scramble_with(ps, seed, |j, level, prefix| {
        let key = ((level as u64) << 32) | prefix as u64;
        mix64(seeds[j].wrapping_add(key.wrapping_mul(0x9e37_79b9_7f4a_7c15))) >> 63 == 1
    }))
}

/// Scramble with an explicit flip rule `(dim, level, prefix) -> flip?`.
fn scramble_with<F>(ps: &PointSet, seed: u64, flip: F) -> PointSet
where
    F: Fn(usize, u32, u32) -> bool,
{
    let d = ps.d;
    let values = ps
        .values
        .iter()
        .enumerate()
        .map(|(idx, &v)| {
            let j = idx % d;
            let bits = to_bits(v);
            let mut out = 0u32;
            for level in 0..BITS {
                let pos = BITS - 1 - level;
                let prefix = if level == 0 { 0 } else { bits >> (BITS - level) };
                let bit = (bits >> pos) & 1;
                let f = flip(j, level, prefix) as u32;
                out |= (bit ^ f) << pos;
            }
            from_bits(out)
        })
        .collect();
    PointSet {
        values,
        kind: PointKind::SobolScrambled,
        seed,
        ..ps.clone()
    }
}

/// I.i.d. uniforms keyed by `(seed, replicate = 0, index, dim)`.
pub fn mc_points(n: usize, d: usize, seed: u64) -> Result<PointSet> {
    mc_points_replicate(n, d, seed, 0)
}

/// I.i.d. uniforms keyed by `(seed, replicate, index, dim)`.
pub fn mc_points_replicate(n: usize, d: usize, seed: u64, replicate: u64) -> Result<PointSet> {
    if n == 0 {
        return Err(Error::InvalidArgument("point set needs n >= 1".into()));
    }
    let mut values = Vec::with_capacity(n * d);
    for i in 0..n {
        for j in 0..d {
            values.push(from_bits(counter_bits(seed, replicate, i as u64, j as u64)));
        }
    }
    Ok(PointSet {
        n,
        d,
        values,
        kind: PointKind::Mc,
        seed,
        indices: 0..n as u64,
    })
}

/// Convenience: a point set of the requested kind from the bundled table.
pub fn generate(kind: PointKind, n: usize, d: usize, seed: u64) -> Result<PointSet> {
    match kind {
        PointKind::Mc => mc_points(n, d, seed),
        PointKind::SobolRaw => sobol_raw(n, d, DirectionNumbers::bundled()),
        PointKind::SobolScrambled => {
            owen_scramble(&sobol_raw(n, d, DirectionNumbers::bundled())?, seed)
        }
        PointKind::SobolShifted => {
            digital_shift(&sobol_raw(n, d, DirectionNumbers::bundled())?, seed)
        }
    }
}

/// Like [`generate`] but accepts any `n` for scrambled nets by scrambling the
/// next power of two and keeping the first `n` points.
pub fn generate_any(kind: PointKind, n: usize, d: usize, seed: u64) -> Result<PointSet> {
    if kind == PointKind::SobolScrambled && !n.is_power_of_two() {
        let full = generate(kind, n.next_power_of_two(), d, seed)?;
        return Ok(PointSet {
            n,
            values: full.values[..n * d].to_vec(),
            indices: 0..n as u64,
            ..full
        });
    }
    generate(kind, n, d, seed)
}
