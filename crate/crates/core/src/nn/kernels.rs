//! Dense kernels behind the graph ops. Matrix products go through
//! `matrixmultiply::sgemm`, which is deterministic for fixed shapes.

/// Row/column strides of a row-major `rows`×`cols` matrix, optionally read
/// transposed.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    pub data: &'a [f32],
    pub rows: usize,
    pub cols: usize,
    pub transposed: bool,
}

impl<'a> MatRef<'a> {
    pub fn new(data: &'a [f32], rows: usize, cols: usize) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self {
            data,
            rows,
            cols,
            transposed: false,
        }
    }

    pub fn t(self) -> Self {
        Self {
            transposed: !self.transposed,
            ..self
        }
    }

    /// Logical shape after the optional transpose.
    fn shape(&self) -> (usize, usize) {
        if self.transposed {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.cols as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

/// `out = a·b + beta·out` with `out` row-major `m`×`n`.
pub(crate) fn gemm(a: MatRef<'_>, b: MatRef<'_>, beta: f32, out: &mut [f32]) {
    let (m, k) = a.shape();
    let (k2, n) = b.shape();
    assert_eq!(k, k2, "inner dimensions differ");
    assert_eq!(out.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        out.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: shapes and strides above describe buffers of exactly the
    // asserted lengths; `out` does not alias the inputs.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_hw(&self) -> (usize, usize) {
        (
            (self.h + 2 * self.pad - self.k) / self.stride + 1,
            (self.w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    pub fn patch_len(&self) -> usize {
        self.cin * self.k * self.k
    }

    /// Unfolds one image `[cin, h, w]` into `[cin·k·k, ho·wo]`.
    pub fn im2col(&self, x: &[f32], cols: &mut [f32]) {
        let (ho, wo) = self.out_hw();
        let p = ho * wo;
        for ci in 0..self.cin {
            let plane = &x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = (ci * self.k + ki) * self.k + kj;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for oh in 0..ho {
                        let ih = (oh * self.stride + ki) as isize - self.pad as isize;
                        let line = &mut dst[oh * wo..(oh + 1) * wo];
                        if ih < 0 || ih >= self.h as isize {
                            line.fill(0.0);
                            continue;
                        }
                        let src = &plane[ih as usize * self.w..(ih as usize + 1) * self.w];
                        for (ow, v) in line.iter_mut().enumerate() {
                            let iw = (ow * self.stride + kj) as isize - self.pad as isize;
                            *v = if iw < 0 || iw >= self.w as isize {
                                0.0
                            } else {
                                src[iw as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`im2col`](Self::im2col): scatters-adds columns into `dx`.
    pub fn col2im(&self, cols: &[f32], dx: &mut [f32]) {
        let (ho, wo) = self.out_hw();
        let p = ho * wo;
        for ci in 0..self.cin {
            let plane = &mut dx[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = (ci * self.k + ki) * self.k + kj;
                    let src = &cols[row * p..(row + 1) * p];
                    for oh in 0..ho {
                        let ih = (oh * self.stride + ki) as isize - self.pad as isize;
                        if ih < 0 || ih >= self.h as isize {
                            continue;
                        }
                        let dst = &mut plane[ih as usize * self.w..(ih as usize + 1) * self.w];
                        for ow in 0..wo {
                            let iw = (ow * self.stride + kj) as isize - self.pad as isize;
                            if iw >= 0 && iw < self.w as isize {
                                dst[iw as usize] += src[oh * wo + ow];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Convolution of a batch `[n, cin, h, w]` with weights `[cout, cin, k, k]`.
pub(crate) fn conv2d_forward(x: &[f32], n: usize, geom: ConvGeom, w: &[f32], cout: usize) -> Vec<f32> {
    let (ho, wo) = geom.out_hw();
    let p = ho * wo;
    let kk = geom.patch_len();
    let in_len = geom.cin * geom.h * geom.w;
    let mut out = vec![0.0; n * cout * p];
    let mut cols = vec![0.0; kk * p];
    for i in 0..n {
        geom.im2col(&x[i * in_len..(i + 1) * in_len], &mut cols);
        gemm(
            MatRef::new(w, cout, kk),
            MatRef::new(&cols, kk, p),
            0.0,
            &mut out[i * cout * p..(i + 1) * cout * p],
        );
    }
    out
}

/// Gradients of the convolution; either output may be skipped.
pub(crate) fn conv2d_backward(
    x: &[f32],
    n: usize,
    geom: ConvGeom,
    w: &[f32],
    cout: usize,
    dy: &[f32],
    want_dx: bool,
    want_dw: bool,
) -> (Option<Vec<f32>>, Option<Vec<f32>>) {
    let (ho, wo) = geom.out_hw();
    let p = ho * wo;
    let kk = geom.patch_len();
    let in_len = geom.cin * geom.h * geom.w;
    let mut dx = want_dx.then(|| vec![0.0; n * in_len]);
    let mut dw = want_dw.then(|| vec![0.0; cout * kk]);
    let mut cols = vec![0.0; kk * p];
    let mut dcols = vec![0.0; kk * p];
    for i in 0..n {
        let dyi = MatRef::new(&dy[i * cout * p..(i + 1) * cout * p], cout, p);
        if let Some(dw) = dw.as_mut() {
            geom.im2col(&x[i * in_len..(i + 1) * in_len], &mut cols);
            gemm(dyi, MatRef::new(&cols, kk, p).t(), 1.0, dw);
        }
        if let Some(dx) = dx.as_mut() {
            gemm(MatRef::new(w, cout, kk).t(), dyi, 0.0, &mut dcols);
            geom.col2im(&dcols, &mut dx[i * in_len..(i + 1) * in_len]);
        }
    }
    (dx, dw)
}
