//! Strided matrix views over flat buffers, and a bounds-checked front end to
//! the gemm microkernels.

use super::Scalar;

/// A `rows × cols` matrix laid over a flat buffer starting at `offset`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct View {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl View {
    /// Contiguous row-major matrix.
    pub fn dense(rows: usize, cols: usize) -> Self {
        Self {
            offset: 0,
            rows,
            cols,
            rs: cols,
            cs: 1,
        }
    }

    /// The same storage read as its transpose.
    pub fn t(self) -> Self {
        Self {
            offset: self.offset,
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }

    fn last_index(&self) -> usize {
        self.offset + (self.rows - 1) * self.rs + (self.cols - 1) * self.cs
    }

    fn fits(&self, len: usize) -> bool {
        self.rows == 0 || self.cols == 0 || self.last_index() < len
    }

    /// True when distinct (row, col) pairs map to distinct elements.
    fn injective(&self) -> bool {
        self.rows <= 1
            || self.cols <= 1
            || (self.cs >= 1 && self.rs >= self.cols * self.cs)
            || (self.rs >= 1 && self.cs >= self.rows * self.rs)
    }
}

/// `c = a·b + beta·c`. Read views may overlap; the write view may not.
pub(crate) fn gemm<T: Scalar>(a: &[T], av: View, b: &[T], bv: View, beta: T, c: &mut [T], cv: View) {
    assert_eq!(av.cols, bv.rows, "gemm inner extent");
    assert_eq!(av.rows, cv.rows, "gemm output rows");
    assert_eq!(bv.cols, cv.cols, "gemm output cols");
    assert!(av.fits(a.len()) && bv.fits(b.len()) && cv.fits(c.len()), "gemm view out of bounds");
    assert!(cv.injective(), "gemm output view aliases itself");
    if cv.rows == 0 || cv.cols == 0 {
        return;
    }
    // SAFETY: every view was checked to lie inside its buffer and the
    // output view addresses each element at most once.
    unsafe {
        T::gemm(
            av.rows,
            av.cols,
            bv.cols,
            a.as_ptr().add(av.offset),
            av.rs as isize,
            av.cs as isize,
            b.as_ptr().add(bv.offset),
            bv.rs as isize,
            bv.cs as isize,
            beta,
            c.as_mut_ptr().add(cv.offset),
            cv.rs as isize,
            cv.cs as isize,
        );
    }
}
