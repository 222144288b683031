//! Compressed sparse row 0/1 matrices over entity ids.

/// Square-or-rectangular boolean pattern matrix; row `i` lists the sorted
/// column indices holding a 1.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    indptr: Vec<usize>,
    indices: Vec<u32>,
}

impl CsrMatrix {
    pub fn empty(n_rows: usize, n_cols: usize) -> Self {
        CsrMatrix {
            n_rows,
            n_cols,
            indptr: vec![0; n_rows + 1],
            indices: Vec::new(),
        }
    }

    /// Builds the pattern from `(row, col)` pairs. Duplicates collapse to a single 1.
    pub fn from_pairs(n_rows: usize, n_cols: usize, pairs: impl IntoIterator<Item = (u32, u32)>) -> Self {
        let mut pairs: Vec<(u32, u32)> = pairs.into_iter().collect();
        pairs.sort_unstable();
        pairs.dedup();
        let mut indptr = vec![0usize; n_rows + 1];
        for &(r, c) in &pairs {
            assert!(
                (r as usize) < n_rows && (c as usize) < n_cols,
                "entry ({r}, {c}) out of bounds"
            );
            indptr[r as usize + 1] += 1;
        }
        for i in 0..n_rows {
            indptr[i + 1] += indptr[i];
        }
        let indices = pairs.into_iter().map(|(_, c)| c).collect();
        CsrMatrix {
            n_rows,
            n_cols,
            indptr,
            indices,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[u32] {
        &self.indices[self.indptr[i]..self.indptr[i + 1]]
    }

    pub fn contains(&self, row: usize, col: u32) -> bool {
        row < self.n_rows && self.row(row).binary_search(&col).is_ok()
    }

    /// Iterates every nonzero as `(row, col)` in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        (0..self.n_rows).flat_map(move |r| self.row(r).iter().map(move |&c| (r as u32, c)))
    }

    pub fn transpose(&self) -> CsrMatrix {
        CsrMatrix::from_pairs(self.n_cols, self.n_rows, self.iter().map(|(r, c)| (c, r)))
    }

    /// Boolean product pattern; used in tests and for reachability checks.
    pub fn bool_product(&self, other: &CsrMatrix) -> CsrMatrix {
        assert_eq!(self.n_cols, other.n_rows);
        let mut pairs = Vec::new();
        let mut seen = vec![false; other.n_cols];
        let mut touched = Vec::new();
        for r in 0..self.n_rows {
            for &mid in self.row(r) {
                for &c in other.row(mid as usize) {
                    if !seen[c as usize] {
                        seen[c as usize] = true;
                        touched.push(c);
                    }
                }
            }
            for c in touched.drain(..) {
                seen[c as usize] = false;
                pairs.push((r as u32, c));
            }
        }
        CsrMatrix::from_pairs(self.n_rows, other.n_cols, pairs)
    }
}
