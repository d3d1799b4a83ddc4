//! Raw volumetric kernels on flat slices.
//!
//! Convolutions are lowered to GEMM through an im2col buffer. The buffer is
//! built for a band of output depth slices at a time so its size stays bounded
//! at large grids; results do not depend on the band size.

use super::error::TensorError;
use super::scalar::Real;

/// Upper bound on im2col buffer elements per band.
const COL_BUDGET: usize = 1 << 22;

/// Geometry of a 3-D convolution from an "image" grid to an output grid.
///
/// A transposed convolution reuses the geometry of the convolution it is the
/// adjoint of: `input` is then the large (upsampled) grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels: usize,
    pub input: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub output: [usize; 3],
}

/// `floor((n + 2p - k) / s) + 1`, or `None` when the kernel does not fit.
pub fn conv_output_extent(n: usize, k: usize, s: usize, p: usize) -> Option<usize> {
    if s == 0 || k == 0 || n + 2 * p < k {
        return None;
    }
    Some((n + 2 * p - k) / s + 1)
}

/// `(n - 1) * s - 2p + k`, or `None` when the padding eats the whole extent.
pub fn conv_transpose_output_extent(n: usize, k: usize, s: usize, p: usize) -> Option<usize> {
    if s == 0 || k == 0 || n == 0 {
        return None;
    }
    ((n - 1) * s + k).checked_sub(2 * p).filter(|&e| e > 0)
}

impl ConvGeometry {
    pub fn new(
        op: &'static str,
        channels: usize,
        input: [usize; 3],
        kernel: [usize; 3],
        stride: [usize; 3],
        padding: [usize; 3],
    ) -> Result<Self, TensorError> {
        let mut output = [0; 3];
        for a in 0..3 {
            output[a] = conv_output_extent(input[a], kernel[a], stride[a], padding[a]).ok_or_else(|| {
                TensorError::InvalidArgument {
                    op,
                    reason: format!(
                        "kernel {kernel:?} with stride {stride:?} and padding {padding:?} does not fit spatial extents {input:?}"
                    ),
                }
            })?;
        }
        Ok(ConvGeometry { channels, input, kernel, stride, padding, output })
    }

    pub fn kernel_volume(&self) -> usize {
        self.kernel.iter().product()
    }

    /// Rows of the im2col matrix: `channels * kd * kh * kw`.
    pub fn rows(&self) -> usize {
        self.channels * self.kernel_volume()
    }

    pub fn input_volume(&self) -> usize {
        self.input.iter().product()
    }

    pub fn output_volume(&self) -> usize {
        self.output.iter().product()
    }

    fn out_plane(&self) -> usize {
        self.output[1] * self.output[2]
    }

    fn band_depth(&self) -> usize {
        let per_slice = self.rows() * self.out_plane();
        (COL_BUDGET / per_slice.max(1)).clamp(1, self.output[0])
    }

    fn bands(&self) -> impl Iterator<Item = (usize, usize)> {
        let step = self.band_depth();
        let depth = self.output[0];
        (0..depth).step_by(step).map(move |d0| (d0, (d0 + step).min(depth)))
    }
}

/// Gathers receptive fields of output slices `od0..od1` into `col`
/// (`rows x cols`, row-major, cols = slices * out_plane).
fn im2col<F: Real>(g: &ConvGeometry, x: &[F], od0: usize, od1: usize, col: &mut [F]) {
    let [id, ih, iw] = g.input;
    let [kd, kh, kw] = g.kernel;
    let [sd, sh, sw] = g.stride;
    let [pd, ph, pw] = g.padding;
    let [_, oh, ow] = g.output;
    let cols = (od1 - od0) * oh * ow;
    let mut row = 0;
    for c in 0..g.channels {
        let xc = &x[c * id * ih * iw..(c + 1) * id * ih * iw];
        for a in 0..kd {
            for b in 0..kh {
                for e in 0..kw {
                    let dst = &mut col[row * cols..(row + 1) * cols];
                    let mut p = 0;
                    for od in od0..od1 {
                        let zd = (od * sd + a) as isize - pd as isize;
                        for y in 0..oh {
                            let zh = (y * sh + b) as isize - ph as isize;
                            let out_row = &mut dst[p..p + ow];
                            p += ow;
                            if zd < 0 || zd >= id as isize || zh < 0 || zh >= ih as isize {
                                out_row.fill(F::zero());
                                continue;
                            }
                            let base = (zd as usize * ih + zh as usize) * iw;
                            for (x_out, slot) in out_row.iter_mut().enumerate() {
                                let zw = (x_out * sw + e) as isize - pw as isize;
                                *slot = if zw < 0 || zw >= iw as isize { F::zero() } else { xc[base + zw as usize] };
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Scatter-adds `col` back onto the image grid; adjoint of [`im2col`].
fn col2im_add<F: Real>(g: &ConvGeometry, col: &[F], od0: usize, od1: usize, x: &mut [F]) {
    let [id, ih, iw] = g.input;
    let [kd, kh, kw] = g.kernel;
    let [sd, sh, sw] = g.stride;
    let [pd, ph, pw] = g.padding;
    let [_, oh, ow] = g.output;
    let cols = (od1 - od0) * oh * ow;
    let mut row = 0;
    for c in 0..g.channels {
        let xc = &mut x[c * id * ih * iw..(c + 1) * id * ih * iw];
        for a in 0..kd {
            for b in 0..kh {
                for e in 0..kw {
                    let src = &col[row * cols..(row + 1) * cols];
                    let mut p = 0;
                    for od in od0..od1 {
                        let zd = (od * sd + a) as isize - pd as isize;
                        for y in 0..oh {
                            let zh = (y * sh + b) as isize - ph as isize;
                            let in_row = &src[p..p + ow];
                            p += ow;
                            if zd < 0 || zd >= id as isize || zh < 0 || zh >= ih as isize {
                                continue;
                            }
                            let base = (zd as usize * ih + zh as usize) * iw;
                            for (x_out, &v) in in_row.iter().enumerate() {
                                let zw = (x_out * sw + e) as isize - pw as isize;
                                if zw >= 0 && zw < iw as isize {
                                    xc[base + zw as usize] += v;
                                }
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Stride-1 convolutions whose `Cin * Cout` stays at or below this skip
/// im2col. Each channel is zero-padded once and the output is computed in
/// the padded row pitch, so every kernel tap becomes one long contiguous
/// update; the few columns that wrap across rows are discarded.
const DIRECT_MAX_PAIRS: usize = 1024;

fn use_direct(g: &ConvGeometry, cout: usize) -> bool {
    g.stride == [1; 3] && g.channels * cout <= DIRECT_MAX_PAIRS
}

/// Padded-pitch layout shared by the direct kernels.
struct Padded {
    pitch: [usize; 2],
    volume: usize,
    /// Span of the output in padded pitch.
    span: usize,
    /// Start of each kernel tap, in padded coordinates.
    offsets: Vec<usize>,
}

impl Padded {
    fn new(g: &ConvGeometry) -> Self {
        let p = [0, 1, 2].map(|a| g.input[a] + 2 * g.padding[a]);
        let pitch = [p[1] * p[2], p[2]];
        let [od, oh, ow] = g.output;
        let span = (od - 1) * pitch[0] + (oh - 1) * pitch[1] + ow;
        let [kd, kh, kw] = g.kernel;
        let mut offsets = Vec::with_capacity(kd * kh * kw);
        for a in 0..kd {
            for b in 0..kh {
                for e in 0..kw {
                    offsets.push(a * pitch[0] + b * pitch[1] + e);
                }
            }
        }
        Padded { pitch, volume: p[0] * pitch[0], span, offsets }
    }

    /// Copies a dense `extent` volume into `dst`, shifted by `shift`.
    fn scatter<F: Real>(&self, src: &[F], extent: [usize; 3], shift: [usize; 3], dst: &mut [F]) {
        let [d, h, w] = extent;
        for z in 0..d {
            for y in 0..h {
                let o = (z + shift[0]) * self.pitch[0] + (y + shift[1]) * self.pitch[1] + shift[2];
                dst[o..o + w].copy_from_slice(&src[(z * h + y) * w..(z * h + y + 1) * w]);
            }
        }
    }

    /// Inverse of [`Padded::scatter`].
    fn gather<F: Real>(&self, src: &[F], extent: [usize; 3], shift: [usize; 3], dst: &mut [F]) {
        let [d, h, w] = extent;
        for z in 0..d {
            for y in 0..h {
                let o = (z + shift[0]) * self.pitch[0] + (y + shift[1]) * self.pitch[1] + shift[2];
                dst[(z * h + y) * w..(z * h + y + 1) * w].copy_from_slice(&src[o..o + w]);
            }
        }
    }

    fn pad_channels<F: Real>(&self, g: &ConvGeometry, x: &[F], channels: usize) -> Vec<F> {
        let v = g.input_volume();
        let mut out = vec![F::zero(); channels * self.volume];
        for c in 0..channels {
            self.scatter(&x[c * v..(c + 1) * v], g.input, g.padding, &mut out[c * self.volume..(c + 1) * self.volume]);
        }
        out
    }

    /// Output channels laid out in padded pitch with zeros in the wrapped
    /// columns.
    fn spread_output<F: Real>(&self, g: &ConvGeometry, y: &[F], channels: usize) -> Vec<F> {
        let v = g.output_volume();
        let mut out = vec![F::zero(); channels * self.span];
        let mut tmp = vec![F::zero(); self.volume];
        for c in 0..channels {
            self.scatter(&y[c * v..(c + 1) * v], g.output, [0; 3], &mut tmp);
            out[c * self.span..(c + 1) * self.span].copy_from_slice(&tmp[..self.span]);
        }
        out
    }
}

// The inner loops are compiled twice and picked at runtime. No fused
// multiply-add is enabled, so both versions round identically.
macro_rules! multiversion {
    ($(#[$m:meta])* fn $name:ident<F: Real>($($arg:ident: $ty:ty),*) -> $ret:ty $body:block) => {
        $(#[$m])*
        #[inline]
        fn $name<F: Real>($($arg: $ty),*) -> $ret {
            #[inline(always)]
            fn imp<F: Real>($($arg: $ty),*) -> $ret $body
            #[cfg(target_arch = "x86_64")]
            {
                #[target_feature(enable = "avx2")]
                unsafe fn wide<F: Real>($($arg: $ty),*) -> $ret {
                    imp($($arg),*)
                }
                if std::is_x86_feature_detected!("avx2") {
                    // SAFETY: the feature was detected on this CPU.
                    return unsafe { wide($($arg),*) };
                }
            }
            imp($($arg),*)
        }
    };
}

multiversion! {
    fn axpy<F: Real>(y: &mut [F], alpha: F, x: &[F]) -> () {
        for (yv, &xv) in y.iter_mut().zip(x) {
            *yv += alpha * xv;
        }
    }
}

/// Dot product with eight independent partial sums, combined in a fixed
/// order. Left to baseline codegen; the wide build of this loop measured
/// slower.
#[inline]
fn dot8<F: Real>(a: &[F], b: &[F]) -> F {
    let mut acc = [F::zero(); 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = F::zero();
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += *x * *y;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

fn direct_forward<F: Real>(g: &ConvGeometry, batch: usize, x: &[F], w: &[F], bias: Option<&[F]>, cout: usize) -> Vec<F> {
    let cin = g.channels;
    let kvol = g.kernel_volume();
    let vin = g.input_volume();
    let vout = g.output_volume();
    let pd = Padded::new(g);
    let mut y = vec![F::zero(); batch * cout * vout];
    let mut acc = vec![F::zero(); pd.volume];
    for s in 0..batch {
        let xp = pd.pad_channels(g, &x[s * cin * vin..(s + 1) * cin * vin], cin);
        for co in 0..cout {
            let b = bias.map_or(F::zero(), |b| b[co]);
            acc[..pd.span].fill(b);
            for ci in 0..cin {
                let xc = &xp[ci * pd.volume..(ci + 1) * pd.volume];
                for (t, &off) in pd.offsets.iter().enumerate() {
                    axpy(&mut acc[..pd.span], w[(co * cin + ci) * kvol + t], &xc[off..off + pd.span]);
                }
            }
            pd.gather(&acc, g.output, [0; 3], &mut y[(s * cout + co) * vout..(s * cout + co + 1) * vout]);
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
fn direct_backward<F: Real>(
    g: &ConvGeometry,
    batch: usize,
    x: &[F],
    w: &[F],
    cout: usize,
    dy: &[F],
    mut dx: Option<&mut Vec<F>>,
    mut dw: Option<&mut Vec<F>>,
) {
    let cin = g.channels;
    let kvol = g.kernel_volume();
    let vin = g.input_volume();
    let vout = g.output_volume();
    let pd = Padded::new(g);
    let mut dxp = vec![F::zero(); pd.volume];
    for s in 0..batch {
        let dys = pd.spread_output(g, &dy[s * cout * vout..(s + 1) * cout * vout], cout);
        if let Some(dx) = dx.as_deref_mut() {
            for ci in 0..cin {
                dxp.fill(F::zero());
                for co in 0..cout {
                    let dyc = &dys[co * pd.span..(co + 1) * pd.span];
                    for (t, &off) in pd.offsets.iter().enumerate() {
                        axpy(&mut dxp[off..off + pd.span], w[(co * cin + ci) * kvol + t], dyc);
                    }
                }
                pd.gather(&dxp, g.input, g.padding, &mut dx[(s * cin + ci) * vin..(s * cin + ci + 1) * vin]);
            }
        }
        if let Some(dw) = dw.as_deref_mut() {
            let xp = pd.pad_channels(g, &x[s * cin * vin..(s + 1) * cin * vin], cin);
            for co in 0..cout {
                let dyc = &dys[co * pd.span..(co + 1) * pd.span];
                for ci in 0..cin {
                    let xc = &xp[ci * pd.volume..(ci + 1) * pd.volume];
                    for (t, &off) in pd.offsets.iter().enumerate() {
                        dw[(co * cin + ci) * kvol + t] += dot8(dyc, &xc[off..off + pd.span]);
                    }
                }
            }
        }
    }
}

/// Direct convolution: `x [n, Cin, in]`, `w [Cout, Cin, k]` → `y [n, Cout, out]`.
pub fn conv3d_forward<F: Real>(
    g: &ConvGeometry,
    batch: usize,
    x: &[F],
    w: &[F],
    bias: Option<&[F]>,
    cout: usize,
) -> Vec<F> {
    conv3d_forward_via(g, batch, x, w, bias, cout, use_direct(g, cout))
}

fn conv3d_forward_via<F: Real>(
    g: &ConvGeometry,
    batch: usize,
    x: &[F],
    w: &[F],
    bias: Option<&[F]>,
    cout: usize,
    direct: bool,
) -> Vec<F> {
    if direct {
        return direct_forward(g, batch, x, w, bias, cout);
    }
    let rows = g.rows();
    let vin = g.channels * g.input_volume();
    let vout = g.output_volume();
    let plane = g.out_plane();
    let mut y = vec![F::zero(); batch * cout * vout];
    let mut col = vec![F::zero(); rows * g.band_depth() * plane];
    for s in 0..batch {
        let xs = &x[s * vin..(s + 1) * vin];
        let ys = &mut y[s * cout * vout..(s + 1) * cout * vout];
        for (d0, d1) in g.bands() {
            let cols = (d1 - d0) * plane;
            im2col(g, xs, d0, d1, &mut col[..rows * cols]);
            F::gemm(
                cout,
                rows,
                cols,
                F::one(),
                w,
                rows as isize,
                1,
                &col[..rows * cols],
                cols as isize,
                1,
                F::zero(),
                &mut ys[d0 * plane..],
                vout as isize,
                1,
            );
        }
        if let Some(b) = bias {
            for (co, &bv) in b.iter().enumerate() {
                ys[co * vout..(co + 1) * vout].iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    y
}

/// Gradients of [`conv3d_forward`]; each requested output is returned fresh.
#[allow(clippy::too_many_arguments)]
pub fn conv3d_backward<F: Real>(
    g: &ConvGeometry,
    batch: usize,
    x: &[F],
    w: &[F],
    cout: usize,
    dy: &[F],
    want_dx: bool,
    want_dw: bool,
    want_db: bool,
) -> (Option<Vec<F>>, Option<Vec<F>>, Option<Vec<F>>) {
    conv3d_backward_via(g, batch, x, w, cout, dy, [want_dx, want_dw, want_db], use_direct(g, cout))
}

#[allow(clippy::type_complexity)]
fn conv3d_backward_via<F: Real>(
    g: &ConvGeometry,
    batch: usize,
    x: &[F],
    w: &[F],
    cout: usize,
    dy: &[F],
    [want_dx, want_dw, want_db]: [bool; 3],
    direct: bool,
) -> (Option<Vec<F>>, Option<Vec<F>>, Option<Vec<F>>) {
    let rows = g.rows();
    let vin = g.channels * g.input_volume();
    let vout = g.output_volume();
    let plane = g.out_plane();
    let mut dx = want_dx.then(|| vec![F::zero(); batch * vin]);
    let mut dw = want_dw.then(|| vec![F::zero(); cout * rows]);
    let db = want_db.then(|| {
        let mut db = vec![F::zero(); cout];
        for s in 0..batch {
            for (co, slot) in db.iter_mut().enumerate() {
                let off = (s * cout + co) * vout;
                *slot += dy[off..off + vout].iter().copied().sum::<F>();
            }
        }
        db
    });
    if dx.is_none() && dw.is_none() {
        return (dx, dw, db);
    }
    if direct {
        direct_backward(g, batch, x, w, cout, dy, dx.as_mut(), dw.as_mut());
        return (dx, dw, db);
    }
    let cap = rows * g.band_depth() * plane;
    let mut col = vec![F::zero(); if dw.is_some() { cap } else { 0 }];
    let mut dcol = vec![F::zero(); if dx.is_some() { cap } else { 0 }];
    for s in 0..batch {
        let xs = &x[s * vin..(s + 1) * vin];
        let dys = &dy[s * cout * vout..(s + 1) * cout * vout];
        for (d0, d1) in g.bands() {
            let cols = (d1 - d0) * plane;
            let dy_band = &dys[d0 * plane..];
            if let Some(dw) = dw.as_mut() {
                im2col(g, xs, d0, d1, &mut col[..rows * cols]);
                F::gemm(
                    cout,
                    cols,
                    rows,
                    F::one(),
                    dy_band,
                    vout as isize,
                    1,
                    &col[..rows * cols],
                    1,
                    cols as isize,
                    F::one(),
                    dw,
                    rows as isize,
                    1,
                );
            }
            if let Some(dx) = dx.as_mut() {
                F::gemm(
                    rows,
                    cout,
                    cols,
                    F::one(),
                    w,
                    1,
                    rows as isize,
                    dy_band,
                    vout as isize,
                    1,
                    F::zero(),
                    &mut dcol[..rows * cols],
                    cols as isize,
                    1,
                );
                col2im_add(g, &dcol[..rows * cols], d0, d1, &mut dx[s * vin..(s + 1) * vin]);
            }
        }
    }
    (dx, dw, db)
}

/// Transposed convolution: adjoint of the convolution described by `g`.
///
/// `x [n, Cin_t, g.output]`, `w [Cin_t, g.channels, k]` → `y [n, g.channels, g.input]`.
pub fn conv_transpose3d_forward<F: Real>(
    g: &ConvGeometry,
    batch: usize,
    x: &[F],
    w: &[F],
    bias: Option<&[F]>,
    cin: usize,
) -> Vec<F> {
    let rows = g.rows();
    let vbig = g.input_volume();
    let vsmall = g.output_volume();
    let plane = g.out_plane();
    let cout = g.channels;
    let mut y = vec![F::zero(); batch * cout * vbig];
    let mut col = vec![F::zero(); rows * g.band_depth() * plane];
    for s in 0..batch {
        let xs = &x[s * cin * vsmall..(s + 1) * cin * vsmall];
        let ys = &mut y[s * cout * vbig..(s + 1) * cout * vbig];
        for (d0, d1) in g.bands() {
            let cols = (d1 - d0) * plane;
            F::gemm(
                rows,
                cin,
                cols,
                F::one(),
                w,
                1,
                rows as isize,
                &xs[d0 * plane..],
                vsmall as isize,
                1,
                F::zero(),
                &mut col[..rows * cols],
                cols as isize,
                1,
            );
            col2im_add(g, &col[..rows * cols], d0, d1, ys);
        }
        if let Some(b) = bias {
            for (co, &bv) in b.iter().enumerate() {
                ys[co * vbig..(co + 1) * vbig].iter_mut().for_each(|v| *v += bv);
            }
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
pub fn conv_transpose3d_backward<F: Real>(
    g: &ConvGeometry,
    batch: usize,
    x: &[F],
    w: &[F],
    cin: usize,
    dy: &[F],
    want_dx: bool,
    want_dw: bool,
    want_db: bool,
) -> (Option<Vec<F>>, Option<Vec<F>>, Option<Vec<F>>) {
    let rows = g.rows();
    let vbig = g.input_volume();
    let vsmall = g.output_volume();
    let plane = g.out_plane();
    let cout = g.channels;
    let mut dx = want_dx.then(|| vec![F::zero(); batch * cin * vsmall]);
    let mut dw = want_dw.then(|| vec![F::zero(); cin * rows]);
    let db = want_db.then(|| {
        let mut db = vec![F::zero(); cout];
        for s in 0..batch {
            for (co, slot) in db.iter_mut().enumerate() {
                let off = (s * cout + co) * vbig;
                *slot += dy[off..off + vbig].iter().copied().sum::<F>();
            }
        }
        db
    });
    if dx.is_none() && dw.is_none() {
        return (dx, dw, db);
    }
    let mut dcol = vec![F::zero(); rows * g.band_depth() * plane];
    for s in 0..batch {
        let xs = &x[s * cin * vsmall..(s + 1) * cin * vsmall];
        let dys = &dy[s * cout * vbig..(s + 1) * cout * vbig];
        for (d0, d1) in g.bands() {
            let cols = (d1 - d0) * plane;
            im2col(g, dys, d0, d1, &mut dcol[..rows * cols]);
            if let Some(dx) = dx.as_mut() {
                let dxs = &mut dx[s * cin * vsmall..(s + 1) * cin * vsmall];
                F::gemm(
                    cin,
                    rows,
                    cols,
                    F::one(),
                    w,
                    rows as isize,
                    1,
                    &dcol[..rows * cols],
                    cols as isize,
                    1,
                    F::zero(),
                    &mut dxs[d0 * plane..],
                    vsmall as isize,
                    1,
                );
            }
            if let Some(dw) = dw.as_mut() {
                F::gemm(
                    cin,
                    cols,
                    rows,
                    F::one(),
                    &xs[d0 * plane..],
                    vsmall as isize,
                    1,
                    &dcol[..rows * cols],
                    1,
                    cols as isize,
                    F::one(),
                    dw,
                    rows as isize,
                    1,
                );
            }
        }
    }
    (dx, dw, db)
}

/// 2×2×2 max pooling with stride 2 over `planes` independent volumes.
/// Returns pooled values and, per output, the flat in-volume argmax
/// (first occurrence in scan order on ties).
pub fn maxpool2_forward<F: Real>(x: &[F], planes: usize, dims: [usize; 3]) -> (Vec<F>, Vec<u32>) {
    let [d, h, w] = dims;
    let [od, oh, ow] = [d / 2, h / 2, w / 2];
    let vin = d * h * w;
    let vout = od * oh * ow;
    let mut out = Vec::with_capacity(planes * vout);
    let mut arg = Vec::with_capacity(planes * vout);
    for p in 0..planes {
        let xp = &x[p * vin..(p + 1) * vin];
        for z in 0..od {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut best = F::neg_infinity();
                    let mut best_ix = 0usize;
                    let mut first = true;
                    for a in 0..2 {
                        for b in 0..2 {
                            for c in 0..2 {
                                let ix = ((2 * z + a) * h + 2 * y + b) * w + 2 * xo + c;
                                let v = xp[ix];
                                if first || v > best {
                                    best = v;
                                    best_ix = ix;
                                    first = false;
                                }
                            }
                        }
                    }
                    out.push(best);
                    arg.push(best_ix as u32);
                }
            }
        }
    }
    (out, arg)
}

pub fn maxpool2_backward<F: Real>(dy: &[F], arg: &[u32], planes: usize, dims: [usize; 3]) -> Vec<F> {
    let vin = dims.iter().product::<usize>();
    let vout = vin / 8;
    let mut dx = vec![F::zero(); planes * vin];
    for p in 0..planes {
        for o in 0..vout {
            dx[p * vin + arg[p * vout + o] as usize] += dy[p * vout + o];
        }
    }
    dx
}

/// Per-plane standardization. Returns `(y, inv_std)`.
pub fn instance_norm_forward<F: Real>(x: &[F], planes: usize, volume: usize, eps: f64) -> (Vec<F>, Vec<F>) {
    let mut y = vec![F::zero(); x.len()];
    let mut inv = Vec::with_capacity(planes);
    for p in 0..planes {
        let xs = &x[p * volume..(p + 1) * volume];
        let mean = xs.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / volume as f64;
        let var = xs
            .iter()
            .map(|v| {
                let d = v.to_f64_lossy() - mean;
                d * d
            })
            .sum::<f64>()
            / volume as f64;
        let istd = 1.0 / (var + eps).sqrt();
        for (o, v) in y[p * volume..(p + 1) * volume].iter_mut().zip(xs) {
            *o = F::lit((v.to_f64_lossy() - mean) * istd);
        }
        inv.push(F::lit(istd));
    }
    (y, inv)
}

/// `dx = inv_std * (dy - mean(dy) - y * mean(dy * y))` per plane, with `y`
/// the normalized output.
pub fn instance_norm_backward<F: Real>(y: &[F], inv_std: &[F], dy: &[F], volume: usize) -> Vec<F> {
    let mut dx = vec![F::zero(); y.len()];
    for (p, &istd) in inv_std.iter().enumerate() {
        let r = p * volume..(p + 1) * volume;
        let (ys, dys) = (&y[r.clone()], &dy[r.clone()]);
        let n = volume as f64;
        let mean_dy = dys.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / n;
        let mean_dyy = dys
            .iter()
            .zip(ys)
            .map(|(a, b)| a.to_f64_lossy() * b.to_f64_lossy())
            .sum::<f64>()
            / n;
        let istd = istd.to_f64_lossy();
        for ((o, &g), &yv) in dx[r].iter_mut().zip(dys).zip(ys) {
            *o = F::lit(istd * (g.to_f64_lossy() - mean_dy - yv.to_f64_lossy() * mean_dyy));
        }
    }
    dx
}
