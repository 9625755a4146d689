//! Naive raster-order scalar MDLSTM reference: one pixel at a time, columns
//! in the outer loop and rows in the inner loop, everything scalar. This is
//! the independent oracle the wavefront kernels are checked against; it
//! shares no code with the library's diagonal scheduling or matmul paths.

use seqtrain::mdlstm::{MdLstmParams, MDLSTM_GATES};
use seqtrain::tensor::{sigmoid_scalar, GridTensor, Tensor};

/// Forward pass; returns (hidden [U,V,B,H], cells [U,V,B,H]).
pub fn raster_forward(x: &GridTensor, p: MdLstmParams) -> (Tensor, Tensor) {
    let (u_len, v_len, b_len, d_in) = (x.height(), x.width(), x.batch_len(), x.feat_dim());
    let h_dim = p.hidden_dim();
    let mut hid = Tensor::zeros(&[u_len, v_len, b_len, h_dim]);
    let mut cel = Tensor::zeros(&[u_len, v_len, b_len, h_dim]);
    for b in 0..b_len {
        let (hh, ww) = x.region(b);
        for v in 0..ww {
            for u in 0..hh {
                for un in 0..h_dim {
                    let mut a = [0.0f64; MDLSTM_GATES];
                    for (gi, av) in a.iter_mut().enumerate() {
                        let col = gi * h_dim + un;
                        let mut acc = p.b.at(&[col]);
                        for i in 0..d_in {
                            acc += x.values.at(&[u, v, b, i]) * p.w.at(&[i, col]);
                        }
                        if u > 0 {
                            for j in 0..h_dim {
                                acc += hid.at(&[u - 1, v, b, j]) * p.r_u.at(&[j, col]);
                            }
                        }
                        if v > 0 {
                            for j in 0..h_dim {
                                acc += hid.at(&[u, v - 1, b, j]) * p.r_v.at(&[j, col]);
                            }
                        }
                        *av = acc;
                    }
                    let cu = if u > 0 { cel.at(&[u - 1, v, b, un]) } else { 0.0 };
                    let cv = if v > 0 { cel.at(&[u, v - 1, b, un]) } else { 0.0 };
                    let (c, o) = if p.stable {
                        let i = sigmoid_scalar(a[0]);
                        let f = sigmoid_scalar(a[1]);
                        let g = a[2].tanh();
                        let o = sigmoid_scalar(a[3]);
                        let l = sigmoid_scalar(a[4]);
                        (f * (l * cu + (1.0 - l) * cv) + i * g, o)
                    } else {
                        let i = sigmoid_scalar(a[0]);
                        let fu = sigmoid_scalar(a[1]);
                        let fv = sigmoid_scalar(a[2]);
                        let g = a[3].tanh();
                        let o = sigmoid_scalar(a[4]);
                        (fu * cu + fv * cv + i * g, o)
                    };
                    cel.set(&[u, v, b, un], c);
                    hid.set(&[u, v, b, un], o * c.tanh());
                }
            }
        }
    }
    (hid, cel)
}

/// Scalar backward in reverse raster order. Returns (dX, dW, dR_u, dR_v, db).
pub fn raster_backward(
    x: &GridTensor,
    p: MdLstmParams,
    d_out: &Tensor,
) -> (Tensor, Tensor, Tensor, Tensor, Tensor) {
    let (u_len, v_len, b_len, d_in) = (x.height(), x.width(), x.batch_len(), x.feat_dim());
    let h_dim = p.hidden_dim();
    let g_w = MDLSTM_GATES * h_dim;
    let (hid, cel) = raster_forward(x, p);

    let mut dh = d_out.clone();
    let mut dc = Tensor::zeros(&[u_len, v_len, b_len, h_dim]);
    let mut d_w = Tensor::zeros(&[d_in, g_w]);
    let mut d_ru = Tensor::zeros(&[h_dim, g_w]);
    let mut d_rv = Tensor::zeros(&[h_dim, g_w]);
    let mut d_b = Tensor::zeros(&[g_w]);
    let mut d_x = Tensor::zeros(&[u_len, v_len, b_len, d_in]);

    for b in 0..b_len {
        let (hh, ww) = x.region(b);
        for v in (0..ww).rev() {
            for u in (0..hh).rev() {
                let mut da = vec![0.0f64; g_w];
                for un in 0..h_dim {
                    let c = cel.at(&[u, v, b, un]);
                    let tanh_c = c.tanh();
                    let cu = if u > 0 { cel.at(&[u - 1, v, b, un]) } else { 0.0 };
                    let cv = if v > 0 { cel.at(&[u, v - 1, b, un]) } else { 0.0 };
                    // recompute pre-activations scalar-wise
                    let mut a = [0.0f64; MDLSTM_GATES];
                    for (gi, av) in a.iter_mut().enumerate() {
                        let col = gi * h_dim + un;
                        let mut acc = p.b.at(&[col]);
                        for i in 0..d_in {
                            acc += x.values.at(&[u, v, b, i]) * p.w.at(&[i, col]);
                        }
                        if u > 0 {
                            for j in 0..h_dim {
                                acc += hid.at(&[u - 1, v, b, j]) * p.r_u.at(&[j, col]);
                            }
                        }
                        if v > 0 {
                            for j in 0..h_dim {
                                acc += hid.at(&[u, v - 1, b, j]) * p.r_v.at(&[j, col]);
                            }
                        }
                        *av = acc;
                    }
                    let dh_val = dh.at(&[u, v, b, un]);
                    if p.stable {
                        let i = sigmoid_scalar(a[0]);
                        let f = sigmoid_scalar(a[1]);
                        let g = a[2].tanh();
                        let o = sigmoid_scalar(a[3]);
                        let l = sigmoid_scalar(a[4]);
                        let d_o = dh_val * tanh_c;
                        let dct = dc.at(&[u, v, b, un]) + dh_val * o * (1.0 - tanh_c * tanh_c);
                        let mixed = l * cu + (1.0 - l) * cv;
                        da[un] = dct * g * i * (1.0 - i);
                        da[h_dim + un] = dct * mixed * f * (1.0 - f);
                        da[2 * h_dim + un] = dct * i * (1.0 - g * g);
                        da[3 * h_dim + un] = d_o * o * (1.0 - o);
                        da[4 * h_dim + un] = dct * f * (cu - cv) * l * (1.0 - l);
                        if u > 0 {
                            let prev = dc.at(&[u - 1, v, b, un]);
                            dc.set(&[u - 1, v, b, un], prev + dct * f * l);
                        }
                        if v > 0 {
                            let prev = dc.at(&[u, v - 1, b, un]);
                            dc.set(&[u, v - 1, b, un], prev + dct * f * (1.0 - l));
                        }
                    } else {
                        let i = sigmoid_scalar(a[0]);
                        let fu = sigmoid_scalar(a[1]);
                        let fv = sigmoid_scalar(a[2]);
                        let g = a[3].tanh();
                        let o = sigmoid_scalar(a[4]);
                        let d_o = dh_val * tanh_c;
                        let dct = dc.at(&[u, v, b, un]) + dh_val * o * (1.0 - tanh_c * tanh_c);
                        da[un] = dct * g * i * (1.0 - i);
                        da[h_dim + un] = dct * cu * fu * (1.0 - fu);
                        da[2 * h_dim + un] = dct * cv * fv * (1.0 - fv);
                        da[3 * h_dim + un] = dct * i * (1.0 - g * g);
                        da[4 * h_dim + un] = d_o * o * (1.0 - o);
                        if u > 0 {
                            let prev = dc.at(&[u - 1, v, b, un]);
                            dc.set(&[u - 1, v, b, un], prev + dct * fu);
                        }
                        if v > 0 {
                            let prev = dc.at(&[u, v - 1, b, un]);
                            dc.set(&[u, v - 1, b, un], prev + dct * fv);
                        }
                    }
                }
                for col in 0..g_w {
                    d_b.set(&[col], d_b.at(&[col]) + da[col]);
                    for i in 0..d_in {
                        d_w.set(&[i, col], d_w.at(&[i, col]) + x.values.at(&[u, v, b, i]) * da[col]);
                    }
                    if u > 0 {
                        for j in 0..h_dim {
                            d_ru.set(&[j, col], d_ru.at(&[j, col]) + hid.at(&[u - 1, v, b, j]) * da[col]);
                        }
                    }
                    if v > 0 {
                        for j in 0..h_dim {
                            d_rv.set(&[j, col], d_rv.at(&[j, col]) + hid.at(&[u, v - 1, b, j]) * da[col]);
                        }
                    }
                }
                for i in 0..d_in {
                    let mut acc = 0.0;
                    for col in 0..g_w {
                        acc += da[col] * p.w.at(&[i, col]);
                    }
                    d_x.set(&[u, v, b, i], acc);
                }
                if u > 0 {
                    for j in 0..h_dim {
                        let mut acc = dh.at(&[u - 1, v, b, j]);
                        for col in 0..g_w {
                            acc += da[col] * p.r_u.at(&[j, col]);
                        }
                        dh.set(&[u - 1, v, b, j], acc);
                    }
                }
                if v > 0 {
                    for j in 0..h_dim {
                        let mut acc = dh.at(&[u, v - 1, b, j]);
                        for col in 0..g_w {
                            acc += da[col] * p.r_v.at(&[j, col]);
                        }
                        dh.set(&[u, v - 1, b, j], acc);
                    }
                }
            }
        }
    }
    (d_x, d_w, d_ru, d_rv, d_b)
}
