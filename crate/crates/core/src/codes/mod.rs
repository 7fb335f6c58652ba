//! Binary linear outer codes.
//!
//! A [`LinearCode`] carries a systematic generator matrix, a full-rank
//! parity-check matrix and the Tanner graph of that parity-check matrix.
//! Bits map to symbols as `0 ↦ +√E`, `1 ↦ −√E`.

mod alist;
mod gf2;
mod qc;
mod tanner;

use ndarray::Array2;

pub use alist::{load_alist, parse_alist, to_alist, write_alist};
pub use gf2::Gf2Matrix;
pub use tanner::TannerGraph;

use crate::{Error, Result};

/// Largest `k` for which [`enumerate_codebook`] lists all `2^k` words.
pub const DEFAULT_CODEBOOK_CAP: usize = 20;

#[derive(Clone, Debug)]
pub struct LinearCode {
    name: String,
    g: Gf2Matrix,
    gt: Gf2Matrix,
    h: Gf2Matrix,
    systematic: Vec<usize>,
    graph: TannerGraph,
}

impl LinearCode {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn k(&self) -> usize {
        self.g.ncols()
    }

    pub fn d(&self) -> usize {
        self.g.nrows()
    }

    pub fn rate(&self) -> f64 {
        self.k() as f64 / self.d() as f64
    }

    /// `d × k` generator matrix.
    pub fn generator(&self) -> &Gf2Matrix {
        &self.g
    }

    /// `(d − k) × d` parity-check matrix.
    pub fn parity(&self) -> &Gf2Matrix {
        &self.h
    }

    /// Codeword positions that carry the message bits, in message order.
    pub fn systematic_positions(&self) -> &[usize] {
        &self.systematic
    }

    pub fn graph(&self) -> &TannerGraph {
        &self.graph
    }

    pub fn girth(&self) -> Option<usize> {
        self.graph.girth()
    }

    /// `c = G·u mod 2`.
    pub fn encode(&self, u: &[u8]) -> Result<Vec<u8>> {
        if u.len() != self.k() {
            return Err(Error::Dimension(format!("message has {} bits, code expects {}", u.len(), self.k())));
        }
        let mut words = vec![0u64; self.gt.row_words(0).len()];
        for (j, &b) in u.iter().enumerate() {
            if b & 1 == 1 {
                for (w, g) in words.iter_mut().zip(self.gt.row_words(j)) {
                    *w ^= g;
                }
            }
        }
        Ok((0..self.d()).map(|i| ((words[i / 64] >> (i % 64)) & 1) as u8).collect())
    }

    pub fn is_codeword(&self, c: &[u8]) -> bool {
        c.len() == self.d() && self.h.mul_vec(c).iter().all(|&s| s == 0)
    }

    /// Message bits read off the systematic positions.
    pub fn extract_message(&self, c: &[u8]) -> Vec<u8> {
        self.systematic.iter().map(|&p| c[p]).collect()
    }

    /// Class label per coordinate: two coordinates share a label iff their
    /// generator rows are equal, i.e. iff they carry the same bit in every
    /// codeword.
    pub fn coordinate_classes(&self) -> Vec<usize> {
        let mut reps: Vec<&[u64]> = Vec::new();
        (0..self.d())
            .map(|i| {
                let row = self.g.row_words(i);
                match reps.iter().position(|r| *r == row) {
                    Some(c) => c,
                    None => {
                        reps.push(row);
                        reps.len() - 1
                    }
                }
            })
            .collect()
    }

    /// Whether some pair of coordinates always carries the same bit.
    pub fn has_repeated_coordinates(&self) -> bool {
        let classes = self.coordinate_classes();
        classes.iter().max().is_some_and(|&m| m + 1 < classes.len())
    }
}

/// Maps bits to symbols: `0 ↦ +√E`, `1 ↦ −√E`.
pub fn bpsk_map(c: &[u8], energy: f64) -> Result<Vec<f64>> {
    if !(energy > 0.0) {
        return Err(Error::InvalidParameter(format!("energy must be positive, got {energy}")));
    }
    let a = energy.sqrt();
    Ok(c.iter().map(|&b| if b & 1 == 0 { a } else { -a }).collect())
}

/// Builds a systematic code from a parity-check matrix.
///
/// Dependent rows of `h` are dropped with a warning. The free columns of
/// the row-reduced matrix become the systematic positions, so codewords
/// stay in the original bit order.
pub fn generator_from_parity(h: &Gf2Matrix) -> Result<LinearCode> {
    code_from_parity("custom", h)
}

pub fn code_from_parity(name: &str, h: &Gf2Matrix) -> Result<LinearCode> {
    if h.is_zero() {
        return Err(Error::ZeroParityMatrix);
    }
    let d = h.ncols();
    let keep = h.independent_rows();
    if keep.len() < h.nrows() {
        log::warn!(
            "{name}: dropped {} linearly dependent parity checks ({} remain)",
            h.nrows() - keep.len(),
            keep.len()
        );
    }
    let h = h.select_rows(&keep);
    let (reduced, pivots) = h.rref();
    let rank = pivots.len();
    if rank >= d {
        return Err(Error::NoInformationBits { rank, d });
    }
    let mut is_pivot = vec![false; d];
    for &p in &pivots {
        is_pivot[p] = true;
    }
    let free: Vec<usize> = (0..d).filter(|&j| !is_pivot[j]).collect();
    let mut g = Gf2Matrix::zeros(d, free.len());
    for (col, &f) in free.iter().enumerate() {
        g.set(f, col, true);
        for (row, &p) in pivots.iter().enumerate() {
            if reduced.get(row, f) {
                g.set(p, col, true);
            }
        }
    }
    Ok(assemble(name, g, h, free))
}

fn assemble(name: &str, g: Gf2Matrix, h: Gf2Matrix, systematic: Vec<usize>) -> LinearCode {
    debug_assert!(h.mul(&g).is_zero());
    let graph = TannerGraph::from_parity(&h);
    let gt = g.transpose();
    LinearCode { name: name.to_string(), g, gt, h, systematic, graph }
}

/// The (7,4) Hamming code with columns of `H` the binary numbers 1..7.
pub fn hamming74() -> LinearCode {
    let h = Gf2Matrix::from_rows(&[[1, 0, 1, 0, 1, 0, 1], [0, 1, 1, 0, 0, 1, 1], [0, 0, 0, 1, 1, 1, 1]]);
    code_from_parity("hamming74", &h).expect("hamming parity matrix is valid")
}

/// No outer code: `k = d`, empty parity-check matrix.
pub fn uncoded(d: usize) -> LinearCode {
    assert!(d > 0);
    let name = if d == 1 { "uncoded".to_string() } else { format!("uncoded-{d}") };
    assemble(&name, Gf2Matrix::identity(d), Gf2Matrix::zeros(0, d), (0..d).collect())
}

/// Length-`d` repetition code, checks `c_j + c_{j+1} = 0`.
pub fn repetition(d: usize) -> LinearCode {
    assert!(d >= 2);
    let mut h = Gf2Matrix::zeros(d - 1, d);
    for i in 0..d - 1 {
        h.set(i, i, true);
        h.set(i, i + 1, true);
    }
    code_from_parity(&format!("repetition-{d}"), &h).expect("repetition parity matrix is valid")
}

/// Rate-1/2, length-648 quasi-cyclic LDPC code.
pub fn ldpc648_r12() -> LinearCode {
    let h = qc::expand(&qc::RATE_1_2, qc::LIFT);
    code_from_parity("ldpc648r12", &h).expect("base matrix is valid")
}

/// Rate-5/6, length-648 quasi-cyclic LDPC code.
pub fn ldpc648_r56() -> LinearCode {
    let h = qc::expand(&qc::RATE_5_6, qc::LIFT);
    code_from_parity("ldpc648r56", &h).expect("base matrix is valid")
}

fn cyclic_incidence(n: usize, set: &[usize]) -> Gf2Matrix {
    let mut h = Gf2Matrix::zeros(n, n);
    for i in 0..n {
        for &s in set {
            h.set(i, (i + s) % n, true);
        }
    }
    h
}

/// Line-point incidence matrix of PG(2,4): 21 checks of weight 5 on 21
/// bits, girth 6. Only 10 of the rows are independent.
pub fn pg24_parity() -> Gf2Matrix {
    cyclic_incidence(21, &[0, 1, 4, 14, 16])
}

/// Incidence matrix of the Fano plane: 7 checks of weight 3, girth 6.
pub fn fano_parity() -> Gf2Matrix {
    cyclic_incidence(7, &[0, 1, 3])
}

/// Cycle code of a simple graph: one bit per edge, one check per vertex.
/// The Tanner girth is twice the graph girth.
pub fn cycle_code_parity(vertices: usize, edges: &[(usize, usize)]) -> Gf2Matrix {
    let mut h = Gf2Matrix::zeros(vertices, edges.len());
    for (e, &(a, b)) in edges.iter().enumerate() {
        h.set(a, e, true);
        h.set(b, e, true);
    }
    h
}

/// Petersen graph edges (girth 5).
pub fn petersen_edges() -> Vec<(usize, usize)> {
    let mut e = Vec::new();
    for i in 0..5 {
        e.push((i, (i + 1) % 5));
        e.push((i, i + 5));
        e.push((i + 5, (i + 2) % 5 + 5));
    }
    e
}

/// Heawood graph edges (girth 6).
pub fn heawood_edges() -> Vec<(usize, usize)> {
    let mut e = Vec::new();
    for i in 0..14 {
        e.push((i, (i + 1) % 14));
        if i % 2 == 0 {
            e.push((i, (i + 5) % 14));
        }
    }
    e
}

/// Looks up a code by name, or loads an alist file.
///
/// Names: `hamming74`, `uncoded`, `uncoded-D`, `repetition`, `repetition-D`,
/// `ldpc648r12`, `ldpc648r56`, `pg21`, `fano`, `petersen`, `heawood`.
pub fn code_by_id(id: &str) -> Result<LinearCode> {
    let num = |s: &str| -> Result<usize> {
        s.parse()
            .ok()
            .filter(|&v| v > 0)
            .ok_or_else(|| Error::InvalidParameter(format!("bad length in code id {id:?}")))
    };
    match id {
        "hamming74" => Ok(hamming74()),
        "uncoded" => Ok(uncoded(1)),
        "repetition" => Ok(repetition(2)),
        "ldpc648r12" => Ok(ldpc648_r12()),
        "ldpc648r56" => Ok(ldpc648_r56()),
        "pg21" => code_from_parity("pg21", &pg24_parity()),
        "fano" => code_from_parity("fano", &fano_parity()),
        "petersen" => code_from_parity("petersen", &cycle_code_parity(10, &petersen_edges())),
        "heawood" => code_from_parity("heawood", &cycle_code_parity(14, &heawood_edges())),
        _ => {
            if let Some(n) = id.strip_prefix("uncoded-") {
                return Ok(uncoded(num(n)?));
            }
            if let Some(n) = id.strip_prefix("repetition-") {
                let n = num(n)?;
                if n < 2 {
                    return Err(Error::InvalidParameter("repetition length must be at least 2".into()));
                }
                return Ok(repetition(n));
            }
            let path = std::path::Path::new(id);
            if path.is_file() {
                let (h, _) = load_alist(path)?;
                return code_from_parity(id, &h);
            }
            Err(Error::InvalidParameter(format!("unknown code {id:?} (not a known name or an alist file)")))
        }
    }
}

/// All `2^k` codewords as BPSK symbol vectors.
#[derive(Clone, Debug)]
pub struct Codebook {
    energy: f64,
    words: Array2<f64>,
}

impl Codebook {
    pub fn energy(&self) -> f64 {
        self.energy
    }

    pub fn len(&self) -> usize {
        self.words.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.words.nrows() == 0
    }

    pub fn d(&self) -> usize {
        self.words.ncols()
    }

    /// One word per row; row `m` encodes the message whose bit `j` is bit
    /// `j` of the integer `m`.
    pub fn words(&self) -> &Array2<f64> {
        &self.words
    }

    pub fn word(&self, m: usize) -> ndarray::ArrayView1<'_, f64> {
        self.words.row(m)
    }
}

pub fn enumerate_codebook(code: &LinearCode, energy: f64) -> Result<Codebook> {
    enumerate_codebook_capped(code, energy, DEFAULT_CODEBOOK_CAP)
}

pub fn enumerate_codebook_capped(code: &LinearCode, energy: f64, cap: usize) -> Result<Codebook> {
    let k = code.k();
    if k > cap {
        return Err(Error::CodebookTooLarge { k, cap });
    }
    let d = code.d();
    let mut words = Array2::zeros((1 << k, d));
    let mut u = vec![0u8; k];
    for m in 0..(1usize << k) {
        for (j, b) in u.iter_mut().enumerate() {
            *b = ((m >> j) & 1) as u8;
        }
        let x = bpsk_map(&code.encode(&u)?, energy)?;
        words.row_mut(m).assign(&ndarray::ArrayView1::from(&x));
    }
    Ok(Codebook { energy, words })
}
