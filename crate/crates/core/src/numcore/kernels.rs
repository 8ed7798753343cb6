//! Raw dense kernels shared by the forward and backward passes.
//!
//! Matrices are described as strided views into flat slices so that
//! transposes and time shifts never copy.

/// Strided view of an `rows × cols` matrix inside a flat buffer.
#[derive(Clone, Copy, Debug)]
pub(crate) struct View {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl View {
    pub fn row_major(offset: usize, rows: usize, cols: usize) -> Self {
        Self {
            offset,
            rows,
            cols,
            rs: cols,
            cs: 1,
        }
    }

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
        if self.rows == 0 || self.cols == 0 {
            return self.offset;
        }
        self.offset + (self.rows - 1) * self.rs + (self.cols - 1) * self.cs
    }
}

/// `c += a · b` over strided views.
pub(crate) fn gemm_acc(a: &[f64], av: View, b: &[f64], bv: View, c: &mut [f64], cv: View) {
    assert_eq!(av.cols, bv.rows, "gemm inner dimension");
    assert_eq!(av.rows, cv.rows, "gemm output rows");
    assert_eq!(bv.cols, cv.cols, "gemm output cols");
    if cv.rows == 0 || cv.cols == 0 {
        return;
    }
    if av.cols == 0 {
        return;
    }
    assert!(av.last_index() < a.len(), "gemm view a out of bounds");
    assert!(bv.last_index() < b.len(), "gemm view b out of bounds");
    assert!(cv.last_index() < c.len(), "gemm view c out of bounds");
    // SAFETY: every element addressed by the three views was bounds-checked
    // above, and `c` is a unique borrow that cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            av.rows,
            av.cols,
            bv.cols,
            1.0,
            a.as_ptr().add(av.offset),
            av.rs as isize,
            av.cs as isize,
            b.as_ptr().add(bv.offset),
            bv.rs as isize,
            bv.cs as isize,
            1.0,
            c.as_mut_ptr().add(cv.offset),
            cv.rs as isize,
            cv.cs as isize,
        );
    }
}

/// Geometry of a batched causal convolution `[B, I, T] -> [B, O, T]`
/// with kernel `[O, I, K]`; tap `j` reads `x[t - dilation * j]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub batch: usize,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub t: usize,
    pub dilation: usize,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.cin * self.k
    }

    fn cols(&self) -> usize {
        self.batch * self.t
    }

    /// `col[(i·K + j), (b·T + t)] = x[b, i, t − d·j]`, zero before the start.
    fn im2col(&self, x: &[f64]) -> Vec<f64> {
        let (t_len, cols) = (self.t, self.cols());
        let mut col = vec![0.0; self.rows() * cols];
        for i in 0..self.cin {
            for j in 0..self.k {
                let shift = j * self.dilation;
                if shift >= t_len {
                    continue;
                }
                let row = (i * self.k + j) * cols;
                for b in 0..self.batch {
                    let src = &x[(b * self.cin + i) * t_len..][..t_len - shift];
                    col[row + b * t_len + shift..row + (b + 1) * t_len].copy_from_slice(src);
                }
            }
        }
        col
    }

    /// Inverse scatter of [`Self::im2col`], accumulating into `dx`.
    fn col2im_acc(&self, col: &[f64], dx: &mut [f64]) {
        let (t_len, cols) = (self.t, self.cols());
        for i in 0..self.cin {
            for j in 0..self.k {
                let shift = j * self.dilation;
                if shift >= t_len {
                    continue;
                }
                let row = (i * self.k + j) * cols;
                for b in 0..self.batch {
                    let dst = &mut dx[(b * self.cin + i) * t_len..][..t_len - shift];
                    let src = &col[row + b * t_len + shift..row + (b + 1) * t_len];
                    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
                }
            }
        }
    }

    /// `[B, O, T]` to `[O, B·T]`.
    fn to_channel_major(&self, y: &[f64]) -> Vec<f64> {
        let t_len = self.t;
        let mut out = vec![0.0; y.len()];
        for b in 0..self.batch {
            for o in 0..self.cout {
                out[o * self.cols() + b * t_len..][..t_len].copy_from_slice(&y[(b * self.cout + o) * t_len..][..t_len]);
            }
        }
        out
    }
}

pub(crate) fn conv_forward(g: ConvGeom, x: &[f64], w: &[f64], bias: Option<&[f64]>, out: &mut [f64]) {
    let cols = g.cols();
    let col = g.im2col(x);
    let mut tmp = vec![0.0; g.cout * cols];
    gemm_acc(
        w,
        View::row_major(0, g.cout, g.rows()),
        &col,
        View::row_major(0, g.rows(), cols),
        &mut tmp,
        View::row_major(0, g.cout, cols),
    );
    let t_len = g.t;
    for b in 0..g.batch {
        for o in 0..g.cout {
            let bo = bias.map_or(0.0, |bias| bias[o]);
            let dst = &mut out[(b * g.cout + o) * t_len..][..t_len];
            let src = &tmp[o * cols + b * t_len..][..t_len];
            dst.iter_mut().zip(src).for_each(|(d, s)| *d = s + bo);
        }
    }
}

/// Accumulates gradients of a causal convolution given the output gradient.
pub(crate) fn conv_backward(
    g: ConvGeom,
    x: &[f64],
    w: &[f64],
    dout: &[f64],
    dx: Option<&mut [f64]>,
    dw: Option<&mut [f64]>,
    dbias: Option<&mut [f64]>,
) {
    let cols = g.cols();
    let dy = g.to_channel_major(dout);
    let dyv = View::row_major(0, g.cout, cols);
    if let Some(dbias) = dbias {
        for (o, db) in dbias.iter_mut().enumerate() {
            *db += dy[o * cols..(o + 1) * cols].iter().sum::<f64>();
        }
    }
    if let Some(dw) = dw {
        let col = g.im2col(x);
        gemm_acc(
            &dy,
            dyv,
            &col,
            View::row_major(0, g.rows(), cols).t(),
            dw,
            View::row_major(0, g.cout, g.rows()),
        );
    }
    if let Some(dx) = dx {
        let mut dcol = vec![0.0; g.rows() * cols];
        gemm_acc(
            w,
            View::row_major(0, g.cout, g.rows()).t(),
            &dy,
            dyv,
            &mut dcol,
            View::row_major(0, g.rows(), cols),
        );
        g.col2im_acc(&dcol, dx);
    }
}

/// Numerically stable `log Σ exp(v)`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}
