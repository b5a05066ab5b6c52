//! Pure math kernels. The tape's forward and backward rules and the
//! untraced inference path both call into these, so a kernel bug cannot hide
//! on one side only.
//!
//! All kernels assume finite inputs (enforced at module boundaries) and use a
//! fixed accumulation order, so outputs are bit-identical across runs.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{strides_of, Tensor};

// ---------------------------------------------------------------------------
// matmul family
// ---------------------------------------------------------------------------

/// c[m×n] = a[m×k] · b[k×n].
///
/// ikj loop order; rows of `a` that are exactly zero are skipped, which is
/// bit-neutral for finite operands (adding ±0 to a +0 accumulator yields +0).
/// Spike-valued operands are mostly zeros, so the skip carries the SNN load.
pub fn matmul_raw<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (kk, &av) in a_row.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let b_row = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o = *o + av * bv;
            }
        }
    }
    out
}

/// c[m×n] = aᵀ[m×k] · b[k×n] where a is stored as [k×m].
pub fn matmul_tn_raw<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for kk in 0..k {
        let a_row = &a[kk * m..(kk + 1) * m];
        let b_row = &b[kk * n..(kk + 1) * n];
        for (i, &av) in a_row.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let out_row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o = *o + av * bv;
            }
        }
    }
    out
}

/// c[m×n] = a[m×k] · bᵀ[k×n] where b is stored as [n×k].
pub fn matmul_nt_raw<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (j, o) in out_row.iter_mut().enumerate() {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = T::zero();
            for (&av, &bv) in a_row.iter().zip(b_row) {
                acc = acc + av * bv;
            }
            *o = acc;
        }
    }
    out
}

pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() != 2 || sb.len() != 2 {
        return Err(Error::dim(format!("matmul needs 2-d operands, got {sa:?} and {sb:?}")));
    }
    if sa[1] != sb[0] {
        return Err(Error::dim(format!("matmul inner dims disagree: {sa:?} vs {sb:?}")));
    }
    let (m, k, n) = (sa[0], sa[1], sb[1]);
    Tensor::new(vec![m, n], matmul_raw(a.data(), b.data(), m, k, n))
}

// ---------------------------------------------------------------------------
// conv2d (cross-correlation) via im2col
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn infer(x_shape: &[usize], k_shape: &[usize], stride: usize, pad: usize) -> Result<Self> {
        if x_shape.len() != 4 || k_shape.len() != 4 {
            return Err(Error::dim(format!(
                "conv2d needs 4-d input and kernel, got {x_shape:?} and {k_shape:?}"
            )));
        }
        let (batch, c_in, h, w) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
        let (c_out, kc, kh, kw) = (k_shape[0], k_shape[1], k_shape[2], k_shape[3]);
        if kc != c_in {
            return Err(Error::dim(format!(
                "conv2d kernel expects {kc} input channels, input has {c_in}"
            )));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::dim(format!("conv2d kernel extents must be odd, got {kh}x{kw}")));
        }
        if stride == 0 {
            return Err(Error::dim("conv2d stride must be positive"));
        }
        let h_num = (h + 2 * pad).checked_sub(kh);
        let w_num = (w + 2 * pad).checked_sub(kw);
        let (h_num, w_num) = match (h_num, w_num) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(Error::dim(format!(
                    "conv2d output extent non-positive for input {h}x{w}, kernel {kh}x{kw}, pad {pad}"
                )))
            }
        };
        let (oh, ow) = (h_num / stride + 1, w_num / stride + 1);
        Ok(ConvGeom { batch, c_in, h, w, c_out, kh, kw, stride, pad, oh, ow })
    }

    fn cols_rows(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn cols_cols(&self) -> usize {
        self.oh * self.ow
    }
}

/// One image (c_in,h,w) → column matrix (c_in·kh·kw, oh·ow), zero padding.
fn im2col<T: Scalar>(img: &[T], g: &ConvGeom, cols: &mut [T]) {
    let n = g.cols_cols();
    for c in 0..g.c_in {
        let plane = &img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for dy in 0..g.kh {
            for dx in 0..g.kw {
                let row = (c * g.kh + dy) * g.kw + dx;
                let dst = &mut cols[row * n..(row + 1) * n];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + dy) as isize - g.pad as isize;
                    let dst_row = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        for v in dst_row.iter_mut() {
                            *v = T::zero();
                        }
                        continue;
                    }
                    let src_row = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in dst_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + dx) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-add of a column matrix back to image layout (adjoint of im2col).
fn col2im_add<T: Scalar>(cols: &[T], g: &ConvGeom, img: &mut [T]) {
    let n = g.cols_cols();
    for c in 0..g.c_in {
        let plane = &mut img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for dy in 0..g.kh {
            for dx in 0..g.kw {
                let row = (c * g.kh + dy) * g.kw + dx;
                let src = &cols[row * n..(row + 1) * n];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + dy) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let src_row = &src[oy * g.ow..(oy + 1) * g.ow];
                    for (ox, &v) in src_row.iter().enumerate() {
                        let ix = (ox * g.stride + dx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst_row[ix as usize] = dst_row[ix as usize] + v;
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let g = ConvGeom::infer(x.shape(), kernel.shape(), stride, pad)?;
    let mut out = vec![T::zero(); g.batch * g.c_out * g.oh * g.ow];
    let mut cols = vec![T::zero(); g.cols_rows() * g.cols_cols()];
    let img_len = g.c_in * g.h * g.w;
    let out_len = g.c_out * g.oh * g.ow;
    for b in 0..g.batch {
        im2col(&x.data()[b * img_len..(b + 1) * img_len], &g, &mut cols);
        let prod = matmul_raw(kernel.data(), &cols, g.c_out, g.cols_rows(), g.cols_cols());
        out[b * out_len..(b + 1) * out_len].copy_from_slice(&prod);
    }
    Tensor::new(vec![g.batch, g.c_out, g.oh, g.ow], out)
}

/// Gradients of conv2d w.r.t. input and kernel given upstream grad `gout`.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    gout: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let g = ConvGeom::infer(x.shape(), kernel.shape(), stride, pad)?;
    let img_len = g.c_in * g.h * g.w;
    let out_len = g.c_out * g.oh * g.ow;
    let mut gx = vec![T::zero(); x.numel()];
    let mut gk = vec![T::zero(); kernel.numel()];
    let mut cols = vec![T::zero(); g.cols_rows() * g.cols_cols()];
    for b in 0..g.batch {
        let gb = &gout.data()[b * out_len..(b + 1) * out_len];
        // kernel grad: g_b [c_out × (oh·ow)] · cols_bᵀ
        im2col(&x.data()[b * img_len..(b + 1) * img_len], &g, &mut cols);
        let gk_b = matmul_nt_raw(gb, &cols, g.c_out, g.cols_cols(), g.cols_rows());
        for (dst, src) in gk.iter_mut().zip(&gk_b) {
            *dst = *dst + *src;
        }
        // input grad: Kᵀ · g_b, scattered back through the padding map
        let gcols = matmul_tn_raw(kernel.data(), gb, g.cols_rows(), g.c_out, g.cols_cols());
        col2im_add(&gcols, &g, &mut gx[b * img_len..(b + 1) * img_len]);
    }
    Ok((Tensor::new(x.shape().to_vec(), gx)?, Tensor::new(kernel.shape().to_vec(), gk)?))
}

// ---------------------------------------------------------------------------
// pooling
// ---------------------------------------------------------------------------

pub fn avgpool2d<T: Scalar>(x: &Tensor<T>, k: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::dim(format!("avgpool2d needs a 4-d input, got {s:?}")));
    }
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    if k == 0 || h % k != 0 || w % k != 0 {
        return Err(Error::dim(format!("avgpool2d window {k} must divide spatial dims {h}x{w}")));
    }
    let (oh, ow) = (h / k, w / k);
    let inv = T::from_f64(1.0 / (k * k) as f64);
    let mut out = vec![T::zero(); b * c * oh * ow];
    for bc in 0..b * c {
        let plane = &x.data()[bc * h * w..(bc + 1) * h * w];
        let dst = &mut out[bc * oh * ow..(bc + 1) * oh * ow];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = T::zero();
                for dy in 0..k {
                    for dx in 0..k {
                        acc = acc + plane[(oy * k + dy) * w + ox * k + dx];
                    }
                }
                dst[oy * ow + ox] = acc * inv;
            }
        }
    }
    Tensor::new(vec![b, c, oh, ow], out)
}

pub fn avgpool2d_backward<T: Scalar>(x_shape: &[usize], gout: &Tensor<T>, k: usize) -> Tensor<T> {
    let (h, w) = (x_shape[2], x_shape[3]);
    let (oh, ow) = (h / k, w / k);
    let inv = T::from_f64(1.0 / (k * k) as f64);
    let mut gx = vec![T::zero(); x_shape.iter().product()];
    for bc in 0..x_shape[0] * x_shape[1] {
        let src = &gout.data()[bc * oh * ow..(bc + 1) * oh * ow];
        let dst = &mut gx[bc * h * w..(bc + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let g = src[oy * ow + ox] * inv;
                for dy in 0..k {
                    for dx in 0..k {
                        let idx = (oy * k + dy) * w + ox * k + dx;
                        dst[idx] = dst[idx] + g;
                    }
                }
            }
        }
    }
    Tensor::new(x_shape.to_vec(), gx).expect("pool backward shape")
}

// ---------------------------------------------------------------------------
// broadcasting elementwise
// ---------------------------------------------------------------------------

/// Result shape of broadcasting `a` against `b` (numpy rules: right-aligned,
/// extents equal or 1).
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let ea = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let eb = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = if ea == eb {
            ea
        } else if ea == 1 {
            eb
        } else if eb == 1 {
            ea
        } else {
            return Err(Error::dim(format!("cannot broadcast {a:?} with {b:?}")));
        };
    }
    Ok(out)
}

/// Strides into a tensor of shape `shape` when iterated as `out_shape`
/// (0 stride along broadcast axes).
fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let strides = strides_of(shape);
    let offset = out_shape.len() - shape.len();
    let mut out = vec![0; out_shape.len()];
    for i in 0..shape.len() {
        out[offset + i] = if shape[i] == 1 { 0 } else { strides[i] };
    }
    out
}

pub fn binary_broadcast<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Tensor::new(a.shape().to_vec(), data);
    }
    let out_shape = broadcast_shape(a.shape(), b.shape())?;
    let numel: usize = out_shape.iter().product();
    let sa = broadcast_strides(a.shape(), &out_shape);
    let sb = broadcast_strides(b.shape(), &out_shape);
    let mut coords = vec![0usize; out_shape.len()];
    let (mut ia, mut ib) = (0usize, 0usize);
    let mut data = Vec::with_capacity(numel);
    for _ in 0..numel {
        data.push(f(a.data()[ia], b.data()[ib]));
        // odometer increment
        for d in (0..out_shape.len()).rev() {
            coords[d] += 1;
            ia += sa[d];
            ib += sb[d];
            if coords[d] < out_shape[d] {
                break;
            }
            coords[d] = 0;
            ia -= sa[d] * out_shape[d];
            ib -= sb[d] * out_shape[d];
        }
    }
    Tensor::new(out_shape, data)
}

/// Sum `grad` down to `target_shape` (adjoint of broadcasting).
pub fn reduce_to_shape<T: Scalar>(grad: &Tensor<T>, target_shape: &[usize]) -> Tensor<T> {
    if grad.shape() == target_shape {
        return grad.clone();
    }
    let out_shape = grad.shape().to_vec();
    let numel: usize = out_shape.iter().product();
    let st = broadcast_strides(target_shape, &out_shape);
    let mut out = Tensor::<T>::zeros(target_shape);
    let data = out.data_mut();
    let mut coords = vec![0usize; out_shape.len()];
    let mut it = 0usize;
    for i in 0..numel {
        data[it] = data[it] + grad.data()[i];
        for d in (0..out_shape.len()).rev() {
            coords[d] += 1;
            it += st[d];
            if coords[d] < out_shape[d] {
                break;
            }
            coords[d] = 0;
            it -= st[d] * out_shape[d];
        }
    }
    out
}

// ---------------------------------------------------------------------------
// activations, softmax, losses
// ---------------------------------------------------------------------------

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Numerically stable logistic function.
pub fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

/// Row-wise softmax over the last axis, with max subtraction.
pub fn softmax_last<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let n = *x
        .shape()
        .last()
        .ok_or_else(|| Error::dim("softmax needs at least 1-d input"))?;
    let mut out = vec![T::zero(); x.numel()];
    for (row_out, row) in out.chunks_mut(n).zip(x.data().chunks(n)) {
        let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
        let mut denom = T::zero();
        for (o, &v) in row_out.iter_mut().zip(row) {
            let e = (v - max).exp();
            *o = e;
            denom = denom + e;
        }
        for o in row_out.iter_mut() {
            *o = *o / denom;
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Row-wise log-sum-exp over the last axis.
pub fn logsumexp_rows<T: Scalar>(x: &Tensor<T>) -> Vec<T> {
    let n = *x.shape().last().expect("logsumexp on 0-d");
    x.data()
        .chunks(n)
        .map(|row| {
            let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
            let sum = row.iter().map(|&v| (v - max).exp()).fold(T::zero(), |a, e| a + e);
            max + sum.ln()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t64(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let eye = t64(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let v = t64(&[2, 1], &[3.0, 4.0]);
        assert_eq!(matmul(&eye, &v).unwrap().data(), &[3.0, 4.0]);
    }

    #[test]
    fn matmul_hand_case() {
        let a = t64(&[1, 2], &[1.0, 2.0]);
        let b = t64(&[2, 1], &[3.0, 4.0]);
        assert_eq!(matmul(&a, &b).unwrap().data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let a = t64(&[2, 3], &[0.0; 6]);
        let b = t64(&[2, 2], &[0.0; 4]);
        let err = matmul(&a, &b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[2, 2]"), "{err}");
    }

    #[test]
    fn transposed_matmuls_agree_with_plain() {
        let a = t64(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = t64(&[3, 4], &(0..12).map(|i| i as f64 * 0.5 - 2.0).collect::<Vec<_>>());
        // aᵀ·b via matmul_tn equals transposing first
        let at = t64(&[2, 3], &[1.0, 3.0, 5.0, 2.0, 4.0, 6.0]);
        let want = matmul(&at, &b).unwrap();
        let got = matmul_tn_raw(a.data(), b.data(), 2, 3, 4);
        assert_eq!(want.data(), &got[..]);
        // a·bᵀ via matmul_nt
        let a2 = t64(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let bt_rows = t64(&[4, 3], &(0..12).map(|i| i as f64).collect::<Vec<_>>());
        let b2 = t64(&[3, 4], &[0.0, 3.0, 6.0, 9.0, 1.0, 4.0, 7.0, 10.0, 2.0, 5.0, 8.0, 11.0]);
        let want2 = matmul(&a2, &b2).unwrap();
        let got2 = matmul_nt_raw(a2.data(), bt_rows.data(), 2, 3, 4);
        assert_eq!(want2.data(), &got2[..]);
    }

    #[test]
    fn conv_one_by_one_identity() {
        let x = t64(&[1, 1, 3, 3], &(0..9).map(|i| i as f64).collect::<Vec<_>>());
        let k = t64(&[1, 1, 1, 1], &[1.0]);
        let y = conv2d(&x, &k, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn conv_impulse_spreads_to_plateau() {
        // single-pixel impulse, 3x3 all-ones kernel, pad 1 → 3x3 plateau of ones
        let mut img = vec![0.0; 25];
        img[12] = 1.0; // center of 5x5
        let x = t64(&[1, 1, 5, 5], &img);
        let k = t64(&[1, 1, 3, 3], &[1.0; 9]);
        let y = conv2d(&x, &k, 1, 1).unwrap();
        assert_eq!(y.shape(), &[1, 1, 5, 5]);
        for yy in 0..5 {
            for xx in 0..5 {
                let want = if (1..=3).contains(&yy) && (1..=3).contains(&xx) { 1.0 } else { 0.0 };
                assert_eq!(y.data()[yy * 5 + xx], want, "at ({yy},{xx})");
            }
        }
    }

    #[test]
    fn conv_rejects_bad_geometry() {
        let x = t64(&[1, 1, 2, 2], &[0.0; 4]);
        let k = t64(&[1, 1, 3, 3], &[0.0; 9]);
        assert!(conv2d(&x, &k, 1, 0).is_err()); // output extent would be 0
        let k_even = t64(&[1, 1, 2, 2], &[0.0; 4]);
        assert!(conv2d(&x, &k_even, 1, 1).is_err()); // even kernel
    }

    #[test]
    fn avgpool_hand_case() {
        let x = t64(&[1, 1, 2, 2], &[1.0, 3.0, 5.0, 7.0]);
        let y = avgpool2d(&x, 2).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[4.0]);
        let g = avgpool2d_backward(&[1, 1, 2, 2], &t64(&[1, 1, 1, 1], &[8.0]), 2);
        assert_eq!(g.data(), &[2.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn broadcast_shapes() {
        assert_eq!(broadcast_shape(&[2, 1, 4], &[3, 1]).unwrap(), vec![2, 3, 4]);
        assert_eq!(broadcast_shape(&[5], &[2, 5]).unwrap(), vec![2, 5]);
        assert!(broadcast_shape(&[2, 3], &[4, 3]).is_err());
    }

    #[test]
    fn broadcast_mul_and_reduce_roundtrip() {
        let a = t64(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = t64(&[2, 1], &[10.0, 100.0]);
        let y = binary_broadcast(&a, &b, |x, y| x * y).unwrap();
        assert_eq!(y.data(), &[10.0, 20.0, 300.0, 400.0]);
        let red = reduce_to_shape(&y, &[2, 1]);
        assert_eq!(red.data(), &[30.0, 700.0]);
    }

    #[test]
    fn sigmoid_is_stable_and_symmetric() {
        assert_eq!(sigmoid_scalar(0.0f64), 0.5);
        assert!(sigmoid_scalar(-800.0f64) >= 0.0);
        assert!(sigmoid_scalar(800.0f64) <= 1.0);
        let s = sigmoid_scalar(3.0f64) + sigmoid_scalar(-3.0f64);
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = t64(&[2, 3], &[1.0, 2.0, 3.0, 1000.0, 1001.0, 1002.0]);
        let s = softmax_last(&x).unwrap();
        for row in s.data().chunks(3) {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
        // max subtraction keeps huge logits finite
        assert!(s.all_finite());
    }
}
