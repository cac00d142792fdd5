//! Haar dictionary construction.
//!
//! Blocks are coded as flat n²-vectors, so the dictionary is built from 1D
//! Haar atoms: the constant scaling atom plus Haar wavelets at every
//! requested level and translation, generated on the next power of two
//! above n² and truncated back to n² samples. Truncation can destroy
//! completeness, so if the surviving atoms do not span the block space the
//! canonical basis is appended. Every column is unit norm and the final
//! column rank always equals n².

use std::path::Path;
use std::sync::OnceLock;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DictionaryError {
    #[error("block side must be an odd integer >= 3, got {0}")]
    InvalidBlockSide(usize),
    #[error("levels must be in 1..={max}, got {got}")]
    LevelsOutOfRange { got: usize, max: usize },
    #[error("dictionary dump I/O failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed dictionary dump: {0}")]
    MalformedDump(String),
}

/// Unit-norm atom matrix spanning the n²-dimensional block space.
///
/// Atoms are stored column-major: atom `j` occupies
/// `atoms[j*dim..(j+1)*dim]`.
#[derive(Debug)]
pub struct Dictionary {
    n: usize,
    dim: usize,
    atoms: Vec<f64>,
    k: usize,
    gram: OnceLock<Vec<f64>>,
}

impl PartialEq for Dictionary {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.dim == other.dim && self.atoms == other.atoms
    }
}

/// Relative pivot cutoff for the numerical rank.
const RANK_CUTOFF: f64 = 1e-10;
/// Atoms whose truncation falls below this norm are discarded.
const TRUNCATION_NORM_MIN: f64 = 1e-9;
/// Columns equal elementwise within this tolerance are duplicates.
const DEDUP_TOL: f64 = 1e-12;

fn next_pow2(m: usize) -> usize {
    m.next_power_of_two()
}

impl Dictionary {
    /// Block side length n.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Signal dimension n².
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of atoms.
    pub fn len(&self) -> usize {
        self.k
    }

    pub fn is_empty(&self) -> bool {
        self.k == 0
    }

    /// Atom `j` as a slice of length `dim`.
    #[inline]
    pub fn atom(&self, j: usize) -> &[f64] {
        &self.atoms[j * self.dim..(j + 1) * self.dim]
    }

    /// The full column-major atom matrix.
    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    /// Deepest valid decomposition level for block side `n`.
    pub fn max_levels(n: usize) -> usize {
        next_pow2(n * n).trailing_zeros() as usize
    }

    /// Default decomposition depth: 5 when the padded length allows it.
    pub fn default_levels(n: usize) -> usize {
        Self::max_levels(n).min(5)
    }

    /// Gram matrix DᵀD, k×k row-major, built lazily and cached.
    pub(crate) fn gram(&self) -> &[f64] {
        self.gram.get_or_init(|| {
            let k = self.k;
            let mut g = vec![0.0; k * k];
            for i in 0..k {
                let ai = self.atom(i);
                for j in i..k {
                    let dot = dot(ai, self.atom(j));
                    g[i * k + j] = dot;
                    g[j * k + i] = dot;
                }
            }
            g
        })
    }

    /// Writes the text dump: header `SCKDICT n k`, then one atom per line
    /// (dim whitespace-separated values, shortest round-trip notation).
    pub fn write_text(&self, path: &Path) -> Result<(), DictionaryError> {
        let mut out = String::new();
        out.push_str(&format!("SCKDICT {} {}\n", self.n, self.k));
        for j in 0..self.k {
            let col: Vec<String> = self.atom(j).iter().map(|v| format!("{v}")).collect();
            out.push_str(&col.join(" "));
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    /// Reads a dictionary from the text dump format.
    pub fn read_text(path: &Path) -> Result<Self, DictionaryError> {
        let text = std::fs::read_to_string(path)?;
        let mut tokens = text.split_ascii_whitespace();
        if tokens.next() != Some("SCKDICT") {
            return Err(DictionaryError::MalformedDump("missing SCKDICT magic".into()));
        }
        let n: usize = tokens
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| DictionaryError::MalformedDump("bad n".into()))?;
        let k: usize = tokens
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| DictionaryError::MalformedDump("bad k".into()))?;
        let dim = n * n;
        let mut atoms = Vec::with_capacity(dim * k);
        for t in tokens {
            let v: f64 = t
                .parse()
                .map_err(|_| DictionaryError::MalformedDump(format!("bad value {t}")))?;
            atoms.push(v);
        }
        if atoms.len() != dim * k {
            return Err(DictionaryError::MalformedDump(format!(
                "expected {} values, got {}",
                dim * k,
                atoms.len()
            )));
        }
        Ok(Self {
            n,
            dim,
            atoms,
            k,
            gram: OnceLock::new(),
        })
    }

    /// Test-support constructor from explicit column-major atoms.
    pub fn from_atoms(n: usize, atoms: Vec<f64>) -> Self {
        let dim = n * n;
        assert!(dim > 0 && atoms.len().is_multiple_of(dim));
        let k = atoms.len() / dim;
        Self {
            n,
            dim,
            atoms,
            k,
            gram: OnceLock::new(),
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Builds the Haar dictionary for odd block side `n >= 3` at the given
/// decomposition depth (`1..=max_levels(n)`).
pub fn build_haar(n: usize, levels: usize) -> Result<Dictionary, DictionaryError> {
    if n < 3 || n.is_multiple_of(2) {
        return Err(DictionaryError::InvalidBlockSide(n));
    }
    let dim = n * n;
    let padded = next_pow2(dim);
    let max_levels = Dictionary::max_levels(n);
    if levels < 1 || levels > max_levels {
        return Err(DictionaryError::LevelsOutOfRange {
            got: levels,
            max: max_levels,
        });
    }

    let mut columns: Vec<Vec<f64>> = Vec::new();

    // Scaling atom: the constant over the padded length.
    let scale = 1.0 / (padded as f64).sqrt();
    columns.push(vec![scale; padded]);

    // Haar wavelets: level j has support 2^j, positive first half,
    // negative second half, one atom per translation.
    for level in 1..=levels {
        let width = 1usize << level;
        let half = width / 2;
        let amp = 1.0 / (width as f64).sqrt();
        for t in 0..padded / width {
            let mut atom = vec![0.0; padded];
            for i in 0..half {
                atom[t * width + i] = amp;
                atom[t * width + half + i] = -amp;
            }
            columns.push(atom);
        }
    }

    // Truncate to the first dim samples, drop vanished atoms, renormalize.
    let mut survivors: Vec<Vec<f64>> = Vec::new();
    for col in columns {
        let mut truncated = col[..dim].to_vec();
        let nrm = norm(&truncated);
        if nrm < TRUNCATION_NORM_MIN {
            continue;
        }
        truncated.iter_mut().for_each(|v| *v /= nrm);
        survivors.push(truncated);
    }

    dedup_columns(&mut survivors);

    // Completeness fallback: truncation may have destroyed the span, in
    // which case the canonical basis restores it.
    if rank_of_columns(&survivors, dim) < dim {
        for i in 0..dim {
            let mut e = vec![0.0; dim];
            e[i] = 1.0;
            survivors.push(e);
        }
        dedup_columns(&mut survivors);
    }

    let k = survivors.len();
    let mut atoms = Vec::with_capacity(dim * k);
    for col in &survivors {
        atoms.extend_from_slice(col);
    }
    let dict = Dictionary {
        n,
        dim,
        atoms,
        k,
        gram: OnceLock::new(),
    };
    debug_assert_eq!(rank(&dict), dim);
    Ok(dict)
}

fn dedup_columns(cols: &mut Vec<Vec<f64>>) {
    let mut kept: Vec<Vec<f64>> = Vec::with_capacity(cols.len());
    'outer: for col in cols.drain(..) {
        for prev in &kept {
            if col
                .iter()
                .zip(prev)
                .all(|(a, b)| (a - b).abs() <= DEDUP_TOL)
            {
                continue 'outer;
            }
        }
        kept.push(col);
    }
    *cols = kept;
}

/// Numerical column rank via Gaussian elimination with partial pivoting.
/// A pivot counts if its magnitude exceeds `RANK_CUTOFF` times the largest
/// absolute entry of the input matrix.
pub fn rank(dict: &Dictionary) -> usize {
    let cols: Vec<&[f64]> = (0..dict.len()).map(|j| dict.atom(j)).collect();
    rank_of_slices(&cols, dict.dim())
}

fn rank_of_columns(cols: &[Vec<f64>], dim: usize) -> usize {
    let slices: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
    rank_of_slices(&slices, dim)
}

fn rank_of_slices(cols: &[&[f64]], dim: usize) -> usize {
    let k = cols.len();
    if k == 0 || dim == 0 {
        return 0;
    }
    // Work on the transpose (k rows of length dim): row echelon over rows.
    let mut rows: Vec<Vec<f64>> = cols.iter().map(|c| c.to_vec()).collect();
    let scale = rows
        .iter()
        .flat_map(|r| r.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return 0;
    }
    let cutoff = RANK_CUTOFF * scale;

    let mut rank = 0;
    let mut row = 0;
    for col in 0..dim {
        if row >= k {
            break;
        }
        // Partial pivoting: largest entry in this column at or below `row`.
        let (pivot_idx, pivot_val) = (row..k)
            .map(|r| (r, rows[r][col].abs()))
            .fold((row, 0.0), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
        if pivot_val <= cutoff {
            continue;
        }
        rows.swap(row, pivot_idx);
        let (pivot_row, rest) = {
            let (a, b) = rows.split_at_mut(row + 1);
            (&a[row], b)
        };
        let p = pivot_row[col];
        for r in rest.iter_mut() {
            let factor = r[col] / p;
            if factor != 0.0 {
                for c in col..dim {
                    r[c] -= factor * pivot_row[c];
                }
            }
        }
        row += 1;
        rank += 1;
    }
    rank
}
