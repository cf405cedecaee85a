use super::Scalar;

/// A matrix operand: buffer plus logical row/column strides.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a, T> {
    pub data: &'a [T],
    pub rs: usize,
    pub cs: usize,
}

impl<'a, T> MatRef<'a, T> {
    /// Row-major `rows x cols`, optionally viewed transposed.
    pub fn row_major(data: &'a [T], cols: usize, transposed: bool) -> Self {
        if transposed {
            Self { data, rs: 1, cs: cols }
        } else {
            Self { data, rs: cols, cs: 1 }
        }
    }

    fn max_index(&self, rows: usize, cols: usize) -> usize {
        (rows - 1) * self.rs + (cols - 1) * self.cs
    }
}

/// Output operand of [`gemm`].
pub(crate) struct MatMut<'a, T> {
    pub data: &'a mut [T],
    pub rs: usize,
    pub cs: usize,
}

impl<'a, T> MatMut<'a, T> {
    pub fn row_major(data: &'a mut [T], cols: usize, transposed: bool) -> Self {
        if transposed {
            Self { data, rs: 1, cs: cols }
        } else {
            Self { data, rs: cols, cs: 1 }
        }
    }
}

/// `c = a * b + beta * c` with `a: m x k`, `b: k x n`, `c: m x n`.
pub(crate) fn gemm<T: Scalar>(m: usize, k: usize, n: usize, a: MatRef<T>, b: MatRef<T>, beta: T, c: MatMut<T>) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                let v = &mut c.data[i * c.rs + j * c.cs];
                *v = beta * *v;
            }
        }
        return;
    }
    assert!(a.max_index(m, k) < a.data.len(), "gemm: lhs out of bounds");
    assert!(b.max_index(k, n) < b.data.len(), "gemm: rhs out of bounds");
    assert!((m - 1) * c.rs + (n - 1) * c.cs < c.data.len(), "gemm: output out of bounds");
    // SAFETY: bounds of every strided access were checked above.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.data.as_mut_ptr(),
            c.rs as isize,
            c.cs as isize,
        )
    }
}

/// Geometry of a valid, stride-1 2d convolution for one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        self.h - self.kh + 1
    }
    pub fn out_w(&self) -> usize {
        self.w - self.kw + 1
    }
    pub fn patch(&self) -> usize {
        self.c_in * self.kh * self.kw
    }
    pub fn out_len(&self) -> usize {
        self.out_h() * self.out_w()
    }
}

/// Unfolds one `[c, h, w]` sample into `[c*kh*kw, oh*ow]`.
pub(crate) fn im2col<T: Scalar>(x: &[T], g: ConvGeom, cols: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let ol = oh * ow;
    for c in 0..g.c_in {
        for di in 0..g.kh {
            for dj in 0..g.kw {
                let row = (c * g.kh + di) * g.kw + dj;
                let dst = &mut cols[row * ol..(row + 1) * ol];
                for i in 0..oh {
                    let src = &x[c * g.h * g.w + (i + di) * g.w + dj..][..ow];
                    dst[i * ow..(i + 1) * ow].copy_from_slice(src);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates column gradients back into `dx`.
pub(crate) fn col2im_add<T: Scalar>(cols: &[T], g: ConvGeom, dx: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let ol = oh * ow;
    for c in 0..g.c_in {
        for di in 0..g.kh {
            for dj in 0..g.kw {
                let row = (c * g.kh + di) * g.kw + dj;
                let src = &cols[row * ol..(row + 1) * ol];
                for i in 0..oh {
                    let dst = &mut dx[c * g.h * g.w + (i + di) * g.w + dj..][..ow];
                    for (d, s) in dst.iter_mut().zip(&src[i * ow..(i + 1) * ow]) {
                        *d = *d + *s;
                    }
                }
            }
        }
    }
}
