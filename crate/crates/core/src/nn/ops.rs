//! Forward and backward kernels for the layer primitives.
//!
//! Kernels operate on raw [`Tensor`]s and know nothing about the tape; the
//! [`Graph`](super::graph::Graph) wires them together.

use rand::Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// `out[b, j] = sum_i x[b, i] * w[i, j] + bias[j]`
pub fn dense_forward(x: &Tensor, w: &Tensor, bias: &Tensor) -> Result<Tensor> {
    if x.rank() != 2 || w.rank() != 2 || x.shape()[1] != w.shape()[0] {
        return Err(Error::dim("dense", x.shape(), w.shape()));
    }
    let (batch, in_dim, out_dim) = (x.shape()[0], w.shape()[0], w.shape()[1]);
    if bias.shape() != [out_dim] {
        return Err(Error::dim("dense bias", w.shape(), bias.shape()));
    }
    let (xd, wd, bd) = (x.data(), w.data(), bias.data());
    let mut out = vec![0.0; batch * out_dim];
    for b in 0..batch {
        let row = &mut out[b * out_dim..(b + 1) * out_dim];
        row.copy_from_slice(bd);
        for i in 0..in_dim {
            let xv = xd[b * in_dim + i];
            let wrow = &wd[i * out_dim..(i + 1) * out_dim];
            for (o, &wv) in row.iter_mut().zip(wrow) {
                *o += xv * wv;
            }
        }
    }
    Tensor::new(vec![batch, out_dim], out)
}

/// Returns `(dx, dw, dbias)`; `dx` is skipped when `need_dx` is false.
pub fn dense_backward(
    x: &Tensor,
    w: &Tensor,
    dout: &Tensor,
    need_dx: bool,
) -> (Option<Tensor>, Tensor, Tensor) {
    let (batch, in_dim, out_dim) = (x.shape()[0], w.shape()[0], w.shape()[1]);
    let (xd, wd, gd) = (x.data(), w.data(), dout.data());
    let mut dw = vec![0.0; in_dim * out_dim];
    let mut db = vec![0.0; out_dim];
    for b in 0..batch {
        let grow = &gd[b * out_dim..(b + 1) * out_dim];
        for (acc, &g) in db.iter_mut().zip(grow) {
            *acc += g;
        }
        for i in 0..in_dim {
            let xv = xd[b * in_dim + i];
            let dwrow = &mut dw[i * out_dim..(i + 1) * out_dim];
            for (acc, &g) in dwrow.iter_mut().zip(grow) {
                *acc += xv * g;
            }
        }
    }
    let dx = need_dx.then(|| {
        let mut dx = vec![0.0; batch * in_dim];
        for b in 0..batch {
            let grow = &gd[b * out_dim..(b + 1) * out_dim];
            for i in 0..in_dim {
                let wrow = &wd[i * out_dim..(i + 1) * out_dim];
                dx[b * in_dim + i] = wrow.iter().zip(grow).map(|(w, g)| w * g).sum();
            }
        }
        Tensor::new(vec![batch, in_dim], dx).expect("shape")
    });
    (
        dx,
        Tensor::new(vec![in_dim, out_dim], dw).expect("shape"),
        Tensor::from_vec(db),
    )
}

struct ConvGeometry {
    batch: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

fn conv_geometry(x: &Tensor, k: &Tensor, stride: usize) -> Result<ConvGeometry> {
    if x.rank() != 4 || k.rank() != 4 || x.shape()[1] != k.shape()[1] {
        return Err(Error::dim("conv2d", x.shape(), k.shape()));
    }
    if stride == 0 {
        return Err(Error::Config("conv2d stride must be positive".into()));
    }
    let (batch, c_in, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (c_out, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
    if kh == 0 || kw == 0 || kh > h || kw > w {
        return Err(Error::dim("conv2d kernel", x.shape(), k.shape()));
    }
    Ok(ConvGeometry {
        batch,
        c_in,
        h,
        w,
        c_out,
        kh,
        kw,
        oh: (h - kh) / stride + 1,
        ow: (w - kw) / stride + 1,
    })
}

/// Output spatial size of a valid convolution.
pub fn conv_output_size(input: usize, kernel: usize, stride: usize) -> Option<usize> {
    (kernel >= 1 && stride >= 1 && kernel <= input).then(|| (input - kernel) / stride + 1)
}

/// Valid (unpadded) cross-correlation, NCHW layout.
pub fn conv2d_forward(x: &Tensor, k: &Tensor, bias: &Tensor, stride: usize) -> Result<Tensor> {
    let ConvGeometry {
        batch,
        c_in,
        h,
        w,
        c_out,
        kh,
        kw,
        oh,
        ow,
    } = conv_geometry(x, k, stride)?;
    if bias.shape() != [c_out] {
        return Err(Error::dim("conv2d bias", k.shape(), bias.shape()));
    }
    let (xd, kd, bd) = (x.data(), k.data(), bias.data());
    let mut out = vec![0.0; batch * c_out * oh * ow];
    for b in 0..batch {
        for co in 0..c_out {
            let plane = &mut out[((b * c_out + co) * oh) * ow..((b * c_out + co + 1) * oh) * ow];
            plane.iter_mut().for_each(|v| *v = bd[co]);
            for ci in 0..c_in {
                let xin = &xd[((b * c_in + ci) * h) * w..((b * c_in + ci + 1) * h) * w];
                for ky in 0..kh {
                    for kx in 0..kw {
                        let kv = kd[((co * c_in + ci) * kh + ky) * kw + kx];
                        for oy in 0..oh {
                            let xrow = &xin[(oy * stride + ky) * w..];
                            let orow = &mut plane[oy * ow..(oy + 1) * ow];
                            for (ox, o) in orow.iter_mut().enumerate() {
                                *o += kv * xrow[ox * stride + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![batch, c_out, oh, ow], out)
}

/// Returns `(dx, dkernel, dbias)`.
pub fn conv2d_backward(
    x: &Tensor,
    k: &Tensor,
    stride: usize,
    dout: &Tensor,
    need_dx: bool,
) -> (Option<Tensor>, Tensor, Tensor) {
    let ConvGeometry {
        batch,
        c_in,
        h,
        w,
        c_out,
        kh,
        kw,
        oh,
        ow,
    } = conv_geometry(x, k, stride).expect("validated in forward");
    let (xd, kd, gd) = (x.data(), k.data(), dout.data());
    let mut dk = vec![0.0; k.len()];
    let mut db = vec![0.0; c_out];
    let mut dx = if need_dx { vec![0.0; x.len()] } else { Vec::new() };
    for b in 0..batch {
        for co in 0..c_out {
            let gplane = &gd[((b * c_out + co) * oh) * ow..((b * c_out + co + 1) * oh) * ow];
            db[co] += gplane.iter().sum::<f64>();
            for ci in 0..c_in {
                let base = ((b * c_in + ci) * h) * w;
                let xin = &xd[base..base + h * w];
                for ky in 0..kh {
                    for kx in 0..kw {
                        let kidx = ((co * c_in + ci) * kh + ky) * kw + kx;
                        let mut acc = 0.0;
                        for oy in 0..oh {
                            let xrow = &xin[(oy * stride + ky) * w..];
                            let grow = &gplane[oy * ow..(oy + 1) * ow];
                            for (ox, g) in grow.iter().enumerate() {
                                acc += g * xrow[ox * stride + kx];
                            }
                        }
                        dk[kidx] += acc;
                        if need_dx {
                            let kv = kd[kidx];
                            for oy in 0..oh {
                                let grow = &gplane[oy * ow..(oy + 1) * ow];
                                let off = base + (oy * stride + ky) * w + kx;
                                for (ox, g) in grow.iter().enumerate() {
                                    dx[off + ox * stride] += kv * g;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    (
        need_dx.then(|| Tensor::new(x.shape().to_vec(), dx).expect("shape")),
        Tensor::new(k.shape().to_vec(), dk).expect("shape"),
        Tensor::from_vec(db),
    )
}

/// Per-feature batch statistics: population mean and variance (ddof = 0).
pub fn batch_moments(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let (batch, feat) = (x.shape()[0], x.shape()[1]);
    let mut mean = vec![0.0; feat];
    let mut var = vec![0.0; feat];
    if batch == 0 {
        return (mean, var);
    }
    for b in 0..batch {
        for (m, v) in mean.iter_mut().zip(x.row(b)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= batch as f64);
    for b in 0..batch {
        for ((s, v), m) in var.iter_mut().zip(x.row(b)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    var.iter_mut().for_each(|s| *s /= batch as f64);
    (mean, var)
}

/// Normalizes `x` with the supplied moments and applies the affine
/// transform. Returns `(output, normalized, inv_std)`.
pub fn batchnorm_apply(
    x: &Tensor,
    mean: &[f64],
    var: &[f64],
    scale: &Tensor,
    shift: &Tensor,
    eps: f64,
) -> Result<(Tensor, Tensor, Vec<f64>)> {
    if x.rank() != 2 || scale.shape() != [x.shape()[1]] || shift.shape() != scale.shape() {
        return Err(Error::dim("batchnorm", x.shape(), scale.shape()));
    }
    let (batch, feat) = (x.shape()[0], x.shape()[1]);
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut xhat = vec![0.0; batch * feat];
    let mut out = vec![0.0; batch * feat];
    for b in 0..batch {
        for j in 0..feat {
            let idx = b * feat + j;
            let n = (x.data()[idx] - mean[j]) * inv_std[j];
            xhat[idx] = n;
            out[idx] = scale.data()[j] * n + shift.data()[j];
        }
    }
    Ok((
        Tensor::new(vec![batch, feat], out)?,
        Tensor::new(vec![batch, feat], xhat)?,
        inv_std,
    ))
}

/// Backward of train-mode batch norm. Returns `(dx, dscale, dshift)`.
pub fn batchnorm_train_backward(
    xhat: &Tensor,
    inv_std: &[f64],
    scale: &Tensor,
    dout: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let (batch, feat) = (xhat.shape()[0], xhat.shape()[1]);
    let n = batch as f64;
    let mut dscale = vec![0.0; feat];
    let mut dshift = vec![0.0; feat];
    for b in 0..batch {
        for j in 0..feat {
            let idx = b * feat + j;
            dscale[j] += dout.data()[idx] * xhat.data()[idx];
            dshift[j] += dout.data()[idx];
        }
    }
    let mut dx = vec![0.0; batch * feat];
    for j in 0..feat {
        // With dxhat = dout * scale: sum(dxhat) = scale * dshift and
        // sum(dxhat * xhat) = scale * dscale.
        let g = scale.data()[j];
        let sum_dxhat = g * dshift[j];
        let sum_dxhat_xhat = g * dscale[j];
        for b in 0..batch {
            let idx = b * feat + j;
            let dxhat = dout.data()[idx] * g;
            dx[idx] =
                inv_std[j] / n * (n * dxhat - sum_dxhat - xhat.data()[idx] * sum_dxhat_xhat);
        }
    }
    (
        Tensor::new(vec![batch, feat], dx).expect("shape"),
        Tensor::from_vec(dscale),
        Tensor::from_vec(dshift),
    )
}

/// Backward of eval-mode batch norm (fixed moments, so the map is affine).
pub fn batchnorm_eval_backward(
    xhat: &Tensor,
    inv_std: &[f64],
    scale: &Tensor,
    dout: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let (batch, feat) = (xhat.shape()[0], xhat.shape()[1]);
    let mut dscale = vec![0.0; feat];
    let mut dshift = vec![0.0; feat];
    let mut dx = vec![0.0; batch * feat];
    for b in 0..batch {
        for j in 0..feat {
            let idx = b * feat + j;
            let g = dout.data()[idx];
            dscale[j] += g * xhat.data()[idx];
            dshift[j] += g;
            dx[idx] = g * scale.data()[j] * inv_std[j];
        }
    }
    (
        Tensor::new(vec![batch, feat], dx).expect("shape"),
        Tensor::from_vec(dscale),
        Tensor::from_vec(dshift),
    )
}

pub fn relu_forward(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

pub fn relu_backward(x: &Tensor, dout: &Tensor) -> Tensor {
    let data = x
        .data()
        .iter()
        .zip(dout.data())
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(x.shape().to_vec(), data).expect("shape")
}

/// Inverted-dropout mask: each entry is `0` with probability `p`, else
/// `1 / (1 - p)`.
pub fn dropout_mask<R: Rng + ?Sized>(len: usize, p: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!("dropout rate {p} outside [0, 1)")));
    }
    let keep = 1.0 / (1.0 - p);
    Ok((0..len)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect())
}

/// `[B, C, H, W] -> [B, C]`
pub fn global_avg_pool_forward(x: &Tensor) -> Result<Tensor> {
    if x.rank() != 4 {
        return Err(Error::dim("global_avg_pool", x.shape(), &[0, 0, 0, 0]));
    }
    let (batch, ch) = (x.shape()[0], x.shape()[1]);
    let area = x.shape()[2] * x.shape()[3];
    let out = x
        .data()
        .chunks(area.max(1))
        .take(batch * ch)
        .map(|plane| plane.iter().sum::<f64>() / area as f64)
        .collect();
    Tensor::new(vec![batch, ch], out)
}

pub fn global_avg_pool_backward(input_shape: &[usize], dout: &Tensor) -> Tensor {
    let area = input_shape[2] * input_shape[3];
    let mut dx = Vec::with_capacity(input_shape.iter().product());
    for &g in dout.data() {
        dx.extend(std::iter::repeat_n(g / area as f64, area));
    }
    Tensor::new(input_shape.to_vec(), dx).expect("shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn dense_identity() {
        let x = t(&[1, 2], &[1.0, 2.0]);
        let w = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let out = dense_forward(&x, &w, &Tensor::zeros(&[2])).unwrap();
        assert_eq!(out.data(), &[1.0, 2.0]);
    }

    #[test]
    fn dense_hand_example() {
        // out_j = sum_i x_i W[i][j] + b_j with W = [[1,2],[3,4]], x = [1,1]
        let x = t(&[1, 2], &[1.0, 1.0]);
        let w = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = t(&[2], &[0.5, -0.5]);
        let out = dense_forward(&x, &w, &b).unwrap();
        assert_eq!(out.data(), &[4.5, 5.5]);
    }

    #[test]
    fn dense_matrix_vector_example() {
        // y = A x + b with A = [[1,2],[3,4]]; weights are stored [in, out], i.e. A^T.
        let x = t(&[1, 2], &[1.0, 1.0]);
        let w = t(&[2, 2], &[1.0, 3.0, 2.0, 4.0]);
        let b = t(&[2], &[0.5, -0.5]);
        let out = dense_forward(&x, &w, &b).unwrap();
        assert_eq!(out.data(), &[3.5, 6.5]);
    }

    #[test]
    fn dense_empty_batch() {
        let out = dense_forward(&Tensor::zeros(&[0, 3]), &Tensor::zeros(&[3, 5]), &Tensor::zeros(&[5]))
            .unwrap();
        assert_eq!(out.shape(), &[0, 5]);
    }

    #[test]
    fn dense_shape_mismatch_names_both() {
        let err = dense_forward(&Tensor::zeros(&[1, 3]), &Tensor::zeros(&[2, 2]), &Tensor::zeros(&[2]))
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[1, 3]") && msg.contains("[2, 2]"), "{msg}");
    }

    #[test]
    fn conv_identity_kernel() {
        let x = t(&[1, 1, 3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]);
        let k = t(&[1, 1, 1, 1], &[1.0]);
        let out = conv2d_forward(&x, &k, &Tensor::zeros(&[1]), 1).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn conv_all_ones() {
        let x = Tensor::full(&[1, 1, 2, 2], 1.0);
        let k = Tensor::full(&[1, 1, 2, 2], 1.0);
        let out = conv2d_forward(&x, &k, &Tensor::zeros(&[1]), 1).unwrap();
        assert_eq!(out.shape(), &[1, 1, 1, 1]);
        assert_eq!(out.data(), &[4.0]);
    }

    #[test]
    fn conv_stride_two_shape() {
        let x = Tensor::full(&[1, 1, 4, 4], 1.0);
        let k = Tensor::full(&[1, 1, 2, 2], 1.0);
        let out = conv2d_forward(&x, &k, &Tensor::zeros(&[1]), 2).unwrap();
        assert_eq!(out.shape(), &[1, 1, 2, 2]);
    }

    #[test]
    fn conv_kernel_larger_than_input() {
        let x = Tensor::full(&[1, 1, 2, 2], 1.0);
        let k = Tensor::full(&[1, 1, 3, 3], 1.0);
        assert!(matches!(
            conv2d_forward(&x, &k, &Tensor::zeros(&[1]), 1),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn batchnorm_two_values() {
        let x = t(&[2, 1], &[1.0, 3.0]);
        let (mean, var) = batch_moments(&x);
        let (out, _, _) =
            batchnorm_apply(&x, &mean, &var, &Tensor::full(&[1], 1.0), &Tensor::zeros(&[1]), 1e-5)
                .unwrap();
        // (x - 2) / sqrt(1 + 1e-5)
        let expected = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert!((out.data()[0] + expected).abs() < 1e-15);
        assert!((out.data()[1] - expected).abs() < 1e-15);
        assert!((expected - 0.999995).abs() < 1e-6);
    }

    #[test]
    fn batchnorm_constant_batch_is_zero() {
        let x = t(&[3, 1], &[5.0, 5.0, 5.0]);
        let (mean, var) = batch_moments(&x);
        let (out, _, _) =
            batchnorm_apply(&x, &mean, &var, &Tensor::full(&[1], 1.0), &Tensor::zeros(&[1]), 1e-5)
                .unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn relu_definition() {
        let out = relu_forward(&Tensor::from_vec(vec![-1.0, 0.0, 2.0]));
        assert_eq!(out.data(), &[0.0, 0.0, 2.0]);
        let neg = relu_forward(&Tensor::from_vec(vec![-3.0, -0.5]));
        assert!(neg.data().iter().all(|&v| v == 0.0));
        let pos = Tensor::from_vec(vec![0.1, 7.0]);
        assert_eq!(relu_forward(&pos), pos);
    }

    #[test]
    fn dropout_rate_one_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(dropout_mask(4, 1.0, &mut rng), Err(Error::Config(_))));
    }

    #[test]
    fn dropout_mask_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mask = dropout_mask(10_000, 0.5, &mut rng).unwrap();
        assert!(mask.iter().all(|&m| m == 0.0 || m == 2.0));
        let mean = mask.iter().sum::<f64>() / mask.len() as f64;
        assert!((mean - 1.0).abs() < 0.05, "mean {mean}");
    }

    #[test]
    fn gap_averages_planes() {
        let x = t(&[1, 2, 1, 2], &[1.0, 3.0, 10.0, 20.0]);
        let out = global_avg_pool_forward(&x).unwrap();
        assert_eq!(out.data(), &[2.0, 15.0]);
    }
}
