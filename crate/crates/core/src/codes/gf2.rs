//! Dense GF(2) matrices with bit-packed rows.

use std::fmt;

const WORD: usize = 64;

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Gf2Matrix {
    rows: usize,
    cols: usize,
    words: usize,
    data: Vec<u64>,
}

impl Gf2Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        let words = cols.div_ceil(WORD).max(1);
        Self { rows, cols, words, data: vec![0; rows * words] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, true);
        }
        m
    }

    /// Builds a matrix from 0/1 entries; any nonzero value counts as 1.
    pub fn from_rows<R: AsRef<[u8]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut m = Self::zeros(rows.len(), cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            assert_eq!(r.len(), cols, "ragged rows");
            for (j, &v) in r.iter().enumerate() {
                if v != 0 {
                    m.set(i, j, true);
                }
            }
        }
        m
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        debug_assert!(i < self.rows && j < self.cols);
        (self.data[i * self.words + j / WORD] >> (j % WORD)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        let w = &mut self.data[i * self.words + j / WORD];
        let bit = 1u64 << (j % WORD);
        if v {
            *w |= bit;
        } else {
            *w &= !bit;
        }
    }

    pub fn row_words(&self, i: usize) -> &[u64] {
        &self.data[i * self.words..(i + 1) * self.words]
    }

    fn xor_row_into(&mut self, src: usize, dst: usize) {
        let (w, base_s, base_d) = (self.words, src * self.words, dst * self.words);
        for k in 0..w {
            let v = self.data[base_s + k];
            self.data[base_d + k] ^= v;
        }
    }

    fn swap_rows(&mut self, a: usize, b: usize) {
        if a != b {
            for k in 0..self.words {
                self.data.swap(a * self.words + k, b * self.words + k);
            }
        }
    }

    pub fn row_weight(&self, i: usize) -> usize {
        self.row_words(i).iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&w| w == 0)
    }

    /// Column indices of the ones in row `i`.
    pub fn row_support(&self, i: usize) -> Vec<usize> {
        (0..self.cols).filter(|&j| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                if self.get(i, j) {
                    t.set(j, i, true);
                }
            }
        }
        t
    }

    /// Product over GF(2).
    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "inner dimensions differ");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                if self.get(i, k) {
                    for w in 0..other.words {
                        out.data[i * out.words + w] ^= other.data[k * other.words + w];
                    }
                }
            }
        }
        out
    }

    /// Matrix-vector product over GF(2).
    pub fn mul_vec(&self, v: &[u8]) -> Vec<u8> {
        assert_eq!(v.len(), self.cols, "vector length differs from column count");
        (0..self.rows)
            .map(|i| (0..self.cols).fold(0u8, |acc, j| acc ^ (u8::from(self.get(i, j)) & (v[j] & 1))))
            .collect()
    }

    /// Reduced row echelon form. Returns the reduced matrix and the pivot
    /// column of each nonzero row.
    pub fn rref(&self) -> (Self, Vec<usize>) {
        let mut m = self.clone();
        let mut pivots = Vec::new();
        let mut r = 0;
        for c in 0..self.cols {
            if r == m.rows {
                break;
            }
            let Some(p) = (r..m.rows).find(|&i| m.get(i, c)) else {
                continue;
            };
            m.swap_rows(p, r);
            for i in 0..m.rows {
                if i != r && m.get(i, c) {
                    m.xor_row_into(r, i);
                }
            }
            pivots.push(c);
            r += 1;
        }
        (m, pivots)
    }

    pub fn rank(&self) -> usize {
        self.rref().1.len()
    }

    /// Indices of a maximal linearly independent subset of rows, chosen
    /// greedily in row order.
    pub fn independent_rows(&self) -> Vec<usize> {
        let mut basis: Vec<(usize, Vec<u64>)> = Vec::new();
        let mut keep = Vec::new();
        for i in 0..self.rows {
            let mut v = self.row_words(i).to_vec();
            for (lead, b) in &basis {
                if (v[lead / WORD] >> (lead % WORD)) & 1 == 1 {
                    for (x, y) in v.iter_mut().zip(b) {
                        *x ^= y;
                    }
                }
            }
            if let Some(lead) = leading_bit(&v) {
                basis.push((lead, v));
                keep.push(i);
            }
        }
        keep
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut m = Self::zeros(idx.len(), self.cols);
        for (new, &old) in idx.iter().enumerate() {
            m.data[new * m.words..(new + 1) * m.words].copy_from_slice(self.row_words(old));
        }
        m
    }

    pub fn to_rows(&self) -> Vec<Vec<u8>> {
        (0..self.rows).map(|i| (0..self.cols).map(|j| u8::from(self.get(i, j))).collect()).collect()
    }
}

fn leading_bit(v: &[u64]) -> Option<usize> {
    v.iter().enumerate().find(|(_, &w)| w != 0).map(|(k, &w)| k * WORD + w.trailing_zeros() as usize)
}

impl fmt::Debug for Gf2Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Gf2Matrix {}x{}", self.rows, self.cols)?;
        for i in 0..self.rows.min(32) {
            let line: String = (0..self.cols.min(96)).map(|j| if self.get(i, j) { '1' } else { '0' }).collect();
            writeln!(f, "  {line}")?;
        }
        Ok(())
    }
}
