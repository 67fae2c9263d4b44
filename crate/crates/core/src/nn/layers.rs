//! Layer kernels. Every convolution is a valid-padding, stride-1
//! cross-correlation; bias is added after the window sum.

use super::{NnError, Tensor};

fn dims<const N: usize>(t: &Tensor, what: &str) -> Result<[usize; N], NnError> {
    t.shape().try_into().map_err(|_| {
        NnError::ShapeMismatch(format!("{what} must have rank {N}, got shape {:?}", t.shape()))
    })
}

/// Input `[W, T, L, C]`, weight `[O, KW, KT, KL, C]`, bias `[O]` -> `[W-KW+1, T-KT+1, L-KL+1, O]`.
pub fn conv3d_forward(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor, NnError> {
    let [w_in, t_in, l_in, c_in] = dims::<4>(x, "conv3d input")?;
    let [o_n, kw, kt, kl, kc] = dims::<5>(weight, "conv3d weight")?;
    if kc != c_in || bias.len() != o_n || kw > w_in || kt > t_in || kl > l_in || kw * kt * kl == 0 {
        return Err(NnError::ShapeMismatch(format!(
            "conv3d kernel {:?} / bias {:?} incompatible with input {:?}",
            weight.shape(),
            bias.shape(),
            x.shape()
        )));
    }
    let (ow, ot, ol) = (w_in - kw + 1, t_in - kt + 1, l_in - kl + 1);
    let (xs, ws, bs) = (x.data(), weight.data(), bias.data());
    let seg = kl * c_in;
    let mut out = vec![0.0; ow * ot * ol * o_n];
    for i in 0..ow {
        for j in 0..ot {
            for k in 0..ol {
                let obase = ((i * ot + j) * ol + k) * o_n;
                for o in 0..o_n {
                    let mut acc = 0.0;
                    for dw in 0..kw {
                        for dt in 0..kt {
                            let xo = (((i + dw) * t_in + j + dt) * l_in + k) * c_in;
                            let wo = ((o * kw + dw) * kt + dt) * seg;
                            for (a, b) in xs[xo..xo + seg].iter().zip(&ws[wo..wo + seg]) {
                                acc += a * b;
                            }
                        }
                    }
                    out[obase + o] = acc + bs[o];
                }
            }
        }
    }
    Ok(Tensor::from_vec(vec![ow, ot, ol, o_n], out))
}

/// Accumulates weight and bias gradients; returns the input gradient when `need_input` is set.
pub fn conv3d_backward(
    x: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    grad_weight: &mut Tensor,
    grad_bias: &mut Tensor,
    need_input: bool,
) -> Option<Tensor> {
    let [_, t_in, l_in, c_in] = dims::<4>(x, "").expect("checked in forward");
    let [o_n, kw, kt, kl, _] = dims::<5>(weight, "").expect("checked in forward");
    let [ow, ot, ol, _] = dims::<4>(grad_out, "").expect("checked in forward");
    let seg = kl * c_in;
    let (xs, ws, gy) = (x.data(), weight.data(), grad_out.data());
    let mut gx = need_input.then(|| vec![0.0; xs.len()]);
    let gw = grad_weight.data_mut();
    let gb = grad_bias.data_mut();
    for i in 0..ow {
        for j in 0..ot {
            for k in 0..ol {
                let obase = ((i * ot + j) * ol + k) * o_n;
                for o in 0..o_n {
                    let g = gy[obase + o];
                    if g == 0.0 {
                        continue;
                    }
                    gb[o] += g;
                    for dw in 0..kw {
                        for dt in 0..kt {
                            let xo = (((i + dw) * t_in + j + dt) * l_in + k) * c_in;
                            let wo = ((o * kw + dw) * kt + dt) * seg;
                            for q in 0..seg {
                                gw[wo + q] += g * xs[xo + q];
                            }
                            if let Some(gx) = gx.as_mut() {
                                for q in 0..seg {
                                    gx[xo + q] += g * ws[wo + q];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    gx.map(|g| Tensor::from_vec(x.shape().to_vec(), g))
}

/// Input `[T, C]`, weight `[O, K, C]`, bias `[O]` -> `[T-K+1, O]`.
pub fn conv1d_forward(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor, NnError> {
    let [t_in, c_in] = dims::<2>(x, "conv1d input")?;
    let [o_n, k, kc] = dims::<3>(weight, "conv1d weight")?;
    if kc != c_in || bias.len() != o_n || k > t_in || k == 0 {
        return Err(NnError::ShapeMismatch(format!(
            "conv1d kernel {:?} / bias {:?} incompatible with input {:?}",
            weight.shape(),
            bias.shape(),
            x.shape()
        )));
    }
    let ot = t_in - k + 1;
    let seg = k * c_in;
    let (xs, ws, bs) = (x.data(), weight.data(), bias.data());
    let mut out = vec![0.0; ot * o_n];
    for t in 0..ot {
        let xo = t * c_in;
        for o in 0..o_n {
            let wo = o * seg;
            let mut acc = 0.0;
            for (a, b) in xs[xo..xo + seg].iter().zip(&ws[wo..wo + seg]) {
                acc += a * b;
            }
            out[t * o_n + o] = acc + bs[o];
        }
    }
    Ok(Tensor::from_vec(vec![ot, o_n], out))
}

pub fn conv1d_backward(
    x: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    grad_weight: &mut Tensor,
    grad_bias: &mut Tensor,
    need_input: bool,
) -> Option<Tensor> {
    let [_, c_in] = dims::<2>(x, "").expect("checked in forward");
    let [o_n, k, _] = dims::<3>(weight, "").expect("checked in forward");
    let [ot, _] = dims::<2>(grad_out, "").expect("checked in forward");
    let seg = k * c_in;
    let (xs, ws, gy) = (x.data(), weight.data(), grad_out.data());
    let mut gx = need_input.then(|| vec![0.0; xs.len()]);
    let gw = grad_weight.data_mut();
    let gb = grad_bias.data_mut();
    for t in 0..ot {
        let xo = t * c_in;
        for o in 0..o_n {
            let g = gy[t * o_n + o];
            if g == 0.0 {
                continue;
            }
            gb[o] += g;
            let wo = o * seg;
            for q in 0..seg {
                gw[wo + q] += g * xs[xo + q];
            }
            if let Some(gx) = gx.as_mut() {
                for q in 0..seg {
                    gx[xo + q] += g * ws[wo + q];
                }
            }
        }
    }
    gx.map(|g| Tensor::from_vec(x.shape().to_vec(), g))
}

/// Input `[N]`, weight `[M, N]`, bias `[M]` -> `[M]`.
pub fn dense_forward(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor, NnError> {
    let [n] = dims::<1>(x, "dense input")?;
    let [m, wn] = dims::<2>(weight, "dense weight")?;
    if wn != n || bias.len() != m {
        return Err(NnError::ShapeMismatch(format!(
            "dense weight {:?} / bias {:?} incompatible with input {:?}",
            weight.shape(),
            bias.shape(),
            x.shape()
        )));
    }
    let (xs, ws, bs) = (x.data(), weight.data(), bias.data());
    let out = (0..m)
        .map(|r| {
            let acc: f64 = ws[r * n..(r + 1) * n].iter().zip(xs).map(|(a, b)| a * b).sum();
            acc + bs[r]
        })
        .collect();
    Ok(Tensor::vector(out))
}

pub fn dense_backward(
    x: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    grad_weight: &mut Tensor,
    grad_bias: &mut Tensor,
    need_input: bool,
) -> Option<Tensor> {
    let n = x.len();
    let (xs, ws, gy) = (x.data(), weight.data(), grad_out.data());
    let mut gx = need_input.then(|| vec![0.0; n]);
    let gw = grad_weight.data_mut();
    let gb = grad_bias.data_mut();
    for (r, &g) in gy.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        gb[r] += g;
        for (gwi, xi) in gw[r * n..(r + 1) * n].iter_mut().zip(xs) {
            *gwi += g * xi;
        }
        if let Some(gx) = gx.as_mut() {
            for (gxi, wi) in gx.iter_mut().zip(&ws[r * n..(r + 1) * n]) {
                *gxi += g * wi;
            }
        }
    }
    gx.map(Tensor::vector)
}

pub fn relu_forward(x: &Tensor) -> Tensor {
    Tensor::from_vec(x.shape().to_vec(), x.data().iter().map(|v| v.max(0.0)).collect())
}

pub fn relu_backward(x: &Tensor, grad_out: &Tensor) -> Tensor {
    Tensor::from_vec(
        x.shape().to_vec(),
        x.data()
            .iter()
            .zip(grad_out.data())
            .map(|(xi, g)| if *xi > 0.0 { *g } else { 0.0 })
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    /// Eight nested loops, written independently of the kernel above.
    fn conv3d_reference(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
        let (xs, ws) = (x.shape(), w.shape());
        let (o_n, kw, kt, kl, c) = (ws[0], ws[1], ws[2], ws[3], ws[4]);
        let (ow, ot, ol) = (xs[0] - kw + 1, xs[1] - kt + 1, xs[2] - kl + 1);
        let mut out = Tensor::zeros(vec![ow, ot, ol, o_n]);
        for i in 0..ow {
            for j in 0..ot {
                for k in 0..ol {
                    for o in 0..o_n {
                        let mut acc = 0.0;
                        for a in 0..kw {
                            for bb in 0..kt {
                                for d in 0..kl {
                                    for ch in 0..c {
                                        acc += x.at(&[i + a, j + bb, k + d, ch])
                                            * w.at(&[o, a, bb, d, ch]);
                                    }
                                }
                            }
                        }
                        out.set(&[i, j, k, o], acc + b.at(&[o]));
                    }
                }
            }
        }
        out
    }

    fn conv1d_reference(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
        let (o_n, k, c) = (w.shape()[0], w.shape()[1], w.shape()[2]);
        let ot = x.shape()[0] - k + 1;
        let mut out = Tensor::zeros(vec![ot, o_n]);
        for t in 0..ot {
            for o in 0..o_n {
                let mut acc = 0.0;
                for d in 0..k {
                    for ch in 0..c {
                        acc += x.at(&[t + d, ch]) * w.at(&[o, d, ch]);
                    }
                }
                out.set(&[t, o], acc + b.at(&[o]));
            }
        }
        out
    }

    #[test]
    fn conv3d_unit_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(vec![3, 4, 5, 1], &mut rng);
        let w = Tensor::from_vec(vec![1, 1, 1, 1, 1], vec![1.0]);
        let y = conv3d_forward(&x, &w, &Tensor::zeros(vec![1])).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn conv3d_ones_kernel_sums_window() {
        let x = Tensor::from_vec(vec![3, 3, 3, 1], vec![2.5; 27]);
        let w = Tensor::from_vec(vec![1, 2, 2, 2, 1], vec![1.0; 8]);
        let y = conv3d_forward(&x, &w, &Tensor::zeros(vec![1])).unwrap();
        assert_eq!(y.shape(), &[2, 2, 2, 1]);
        assert!(y.data().iter().all(|&v| v == 20.0));
    }

    #[test]
    fn conv3d_matches_nested_loop_reference_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (xs, ws) in [
            (vec![3, 4, 4, 2], vec![3, 2, 2, 3, 2]),
            (vec![12, 10, 10, 2], vec![4, 2, 3, 3, 2]),
            (vec![2, 2, 2, 3], vec![1, 2, 2, 2, 3]),
        ] {
            let x = random(xs, &mut rng);
            let w = random(ws.clone(), &mut rng);
            let b = random(vec![ws[0]], &mut rng);
            assert_eq!(conv3d_forward(&x, &w, &b).unwrap(), conv3d_reference(&x, &w, &b));
        }
    }

    #[test]
    fn conv3d_rejects_oversized_kernel() {
        let x = Tensor::zeros(vec![2, 2, 2, 1]);
        let w = Tensor::zeros(vec![1, 3, 1, 1, 1]);
        assert!(matches!(
            conv3d_forward(&x, &w, &Tensor::zeros(vec![1])),
            Err(NnError::ShapeMismatch(_))
        ));
        let w = Tensor::zeros(vec![1, 1, 1, 1, 2]);
        assert!(conv3d_forward(&x, &w, &Tensor::zeros(vec![1])).is_err());
    }

    #[test]
    fn conv1d_unit_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(vec![120, 11], &mut rng);
        let mut w = Tensor::zeros(vec![11, 1, 11]);
        for c in 0..11 {
            w.set(&[c, 0, c], 1.0);
        }
        let y = conv1d_forward(&x, &w, &Tensor::zeros(vec![11])).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn conv1d_average_of_ramp_is_ramp() {
        // channel value = 2t + 1; a centred length-3 average reproduces the ramp at t+1
        let x = Tensor::from_vec(vec![10, 1], (0..10).map(|t| 2.0 * t as f64 + 1.0).collect());
        let w = Tensor::from_vec(vec![1, 3, 1], vec![1.0 / 3.0; 3]);
        let y = conv1d_forward(&x, &w, &Tensor::zeros(vec![1])).unwrap();
        assert_eq!(y.shape(), &[8, 1]);
        for t in 0..8 {
            assert!((y.data()[t] - (2.0 * (t + 1) as f64 + 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn conv1d_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(vec![120, 11], &mut rng);
        let w = random(vec![16, 5, 11], &mut rng);
        let b = random(vec![16], &mut rng);
        let got = conv1d_forward(&x, &w, &b).unwrap();
        let want = conv1d_reference(&x, &w, &b);
        assert_eq!(got.shape(), want.shape());
        for (a, b) in got.data().iter().zip(want.data()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn dense_shape_errors() {
        let x = Tensor::vector(vec![1.0, 2.0]);
        let w = Tensor::zeros(vec![3, 4]);
        assert!(dense_forward(&x, &w, &Tensor::zeros(vec![3])).is_err());
        let x2 = Tensor::zeros(vec![2, 2]);
        assert!(dense_forward(&x2, &w, &Tensor::zeros(vec![3])).is_err());
    }

    #[test]
    fn relu_masks_negative_gradient() {
        let x = Tensor::vector(vec![-1.0, 0.0, 2.0]);
        assert_eq!(relu_forward(&x).data(), &[0.0, 0.0, 2.0]);
        let g = relu_backward(&x, &Tensor::vector(vec![5.0, 5.0, 5.0]));
        assert_eq!(g.data(), &[0.0, 0.0, 5.0]);
    }
}
