//! Two-dimensional LSTM over grid tensors with anti-diagonal wavefront
//! scheduling, plus the four-direction multi-directional composition.
//!
//! Cells at positions (u,v) depend on (u-1,v) and (u,v-1), so all cells on a
//! common anti-diagonal u+v = d are independent and are computed in one
//! batched step: their pre-activation rows are gathered across directions,
//! diagonal cells, and batch entries, multiplied against the recurrent
//! matrices, and scattered back. The non-recurrent part x·W + b is one matrix
//! multiplication over all U·V·B positions up front.
//!
//! Two cell variants are provided: the two-forget-gate form (blocks
//! [i, f_u, f_v, g, o]) and the stable form (blocks [i, f, g, o, λ]) whose λ
//! gate combines the predecessor cell states convexly, bounding state growth.

use crate::tensor::{add_bias_rows, matmul, matmul_nt, matmul_tn, sigmoid_scalar, GridTensor, Tensor};

/// Gate block count of the 2D cell (both variants).
pub const MDLSTM_GATES: usize = 5;

/// Borrowed MDLSTM parameters. W is [D_in, 5H], R_u/R_v are [H, 5H], b is
/// [5H]. `stable` selects the λ-gate convex cell over the two-forget-gate one.
#[derive(Clone, Copy)]
pub struct MdLstmParams<'a> {
    pub w: &'a Tensor,
    pub r_u: &'a Tensor,
    pub r_v: &'a Tensor,
    pub b: &'a Tensor,
    pub stable: bool,
}

impl<'a> MdLstmParams<'a> {
    pub fn hidden_dim(&self) -> usize {
        self.r_u.dims()[0]
    }

    fn check(&self, d_in: usize) {
        let h = self.hidden_dim();
        assert_eq!(
            self.w.dims(),
            &[d_in, MDLSTM_GATES * h],
            "MDLSTM W shape {:?} vs input dim {} and hidden {}",
            self.w.dims(),
            d_in,
            h
        );
        assert_eq!(self.r_u.dims(), &[h, MDLSTM_GATES * h], "MDLSTM R_u shape invalid");
        assert_eq!(self.r_v.dims(), &[h, MDLSTM_GATES * h], "MDLSTM R_v shape invalid");
        assert_eq!(self.b.dims(), &[MDLSTM_GATES * h], "MDLSTM b shape invalid");
    }
}

/// Retained forward intermediates: post-activation gates [U,V,B,5H], cell
/// states and hidden outputs [U,V,B,H], and the input.
pub struct MdCache {
    pub x: GridTensor,
    pub gates: Tensor,
    pub cells: Tensor,
    pub hidden: Tensor,
    pub stable: bool,
}

/// Cells on anti-diagonal d of a U×V grid, ascending u.
fn diagonal_cells(u_len: usize, v_len: usize, d: usize) -> Vec<(usize, usize)> {
    let u_min = d.saturating_sub(v_len - 1);
    let u_max = d.min(u_len - 1);
    (u_min..=u_max).map(|u| (u, d - u)).collect()
}

/// Forward pass for several parameter/input streams sharing one mask and one
/// diagonal schedule. The multi-directional layer passes its four flipped
/// views here so every diagonal is one batched step across directions, cells,
/// and batch entries.
fn forward_streams(inputs: &[&GridTensor], params: &[MdLstmParams]) -> Vec<(GridTensor, MdCache)> {
    assert_eq!(inputs.len(), params.len());
    assert!(!inputs.is_empty());
    let x0 = inputs[0];
    let (u_len, v_len, b_len, d_in) = (x0.height(), x0.width(), x0.batch_len(), x0.feat_dim());
    for x in inputs {
        assert_eq!(x.mask, x0.mask, "streams must share one mask");
        assert_eq!(x.feat_dim(), d_in);
    }
    for p in params {
        p.check(d_in);
    }
    let h_dim = params[0].hidden_dim();
    for p in params {
        assert_eq!(p.hidden_dim(), h_dim, "streams must share the hidden size");
    }
    let g_w = MDLSTM_GATES * h_dim;
    let cells_total = u_len * v_len * b_len;

    // Non-recurrent part for all positions, one matmul per stream.
    let z: Vec<Tensor> = inputs
        .iter()
        .zip(params)
        .map(|(x, p)| {
            add_bias_rows(&matmul(&x.values.reshaped(&[cells_total, d_in]), p.w), p.b)
        })
        .collect();

    let mut gates: Vec<Tensor> = params.iter().map(|_| Tensor::zeros(&[u_len, v_len, b_len, g_w])).collect();
    let mut cell_state: Vec<Tensor> = params.iter().map(|_| Tensor::zeros(&[u_len, v_len, b_len, h_dim])).collect();
    let mut hidden: Vec<Tensor> = params.iter().map(|_| Tensor::zeros(&[u_len, v_len, b_len, h_dim])).collect();

    let pos = |u: usize, v: usize, b: usize| (u * v_len + v) * b_len + b;

    for d in 0..(u_len + v_len - 1) {
        let cells = diagonal_cells(u_len, v_len, d);
        let rows = cells.len() * b_len;
        for (k, p) in params.iter().enumerate() {
            // gather predecessor hidden states for the whole diagonal
            let mut h_u = Tensor::zeros(&[rows, h_dim]);
            let mut h_v = Tensor::zeros(&[rows, h_dim]);
            let mut z_rows = Tensor::zeros(&[rows, g_w]);
            for (ci, &(u, v)) in cells.iter().enumerate() {
                for b in 0..b_len {
                    let r = ci * b_len + b;
                    if u > 0 {
                        let src = pos(u - 1, v, b) * h_dim;
                        h_u.data_mut()[r * h_dim..(r + 1) * h_dim]
                            .copy_from_slice(&hidden[k].data()[src..src + h_dim]);
                    }
                    if v > 0 {
                        let src = pos(u, v - 1, b) * h_dim;
                        h_v.data_mut()[r * h_dim..(r + 1) * h_dim]
                            .copy_from_slice(&hidden[k].data()[src..src + h_dim]);
                    }
                    let zsrc = pos(u, v, b) * g_w;
                    z_rows.data_mut()[r * g_w..(r + 1) * g_w]
                        .copy_from_slice(&z[k].data()[zsrc..zsrc + g_w]);
                }
            }
            let a = z_rows.add(&matmul(&h_u, p.r_u)).add(&matmul(&h_v, p.r_v));

            for (ci, &(u, v)) in cells.iter().enumerate() {
                for b in 0..b_len {
                    let r = ci * b_len + b;
                    let cell_off = pos(u, v, b) * h_dim;
                    if x0.mask_at(u, v, b) {
                        for un in 0..h_dim {
                            let a0 = a.data()[r * g_w + un];
                            let a1 = a.data()[r * g_w + h_dim + un];
                            let a2 = a.data()[r * g_w + 2 * h_dim + un];
                            let a3 = a.data()[r * g_w + 3 * h_dim + un];
                            let a4 = a.data()[r * g_w + 4 * h_dim + un];
                            let cu = if u > 0 { cell_state[k].data()[pos(u - 1, v, b) * h_dim + un] } else { 0.0 };
                            let cv = if v > 0 { cell_state[k].data()[pos(u, v - 1, b) * h_dim + un] } else { 0.0 };
                            let (c, g0, g1, g2, g3, g4);
                            if p.stable {
                                // blocks [i, f, g, o, λ]
                                let i = sigmoid_scalar(a0);
                                let f = sigmoid_scalar(a1);
                                let g = a2.tanh();
                                let o = sigmoid_scalar(a3);
                                let l = sigmoid_scalar(a4);
                                c = f * (l * cu + (1.0 - l) * cv) + i * g;
                                g0 = i; g1 = f; g2 = g; g3 = o; g4 = l;
                            } else {
                                // blocks [i, f_u, f_v, g, o]
                                let i = sigmoid_scalar(a0);
                                let fu = sigmoid_scalar(a1);
                                let fv = sigmoid_scalar(a2);
                                let g = a3.tanh();
                                let o = sigmoid_scalar(a4);
                                c = fu * cu + fv * cv + i * g;
                                g0 = i; g1 = fu; g2 = fv; g3 = g; g4 = o;
                            }
                            let gate_off = pos(u, v, b) * g_w;
                            gates[k].data_mut()[gate_off + un] = g0;
                            gates[k].data_mut()[gate_off + h_dim + un] = g1;
                            gates[k].data_mut()[gate_off + 2 * h_dim + un] = g2;
                            gates[k].data_mut()[gate_off + 3 * h_dim + un] = g3;
                            gates[k].data_mut()[gate_off + 4 * h_dim + un] = g4;
                            cell_state[k].data_mut()[cell_off + un] = c;
                            let o_gate = if p.stable { g3 } else { g4 };
                            hidden[k].data_mut()[cell_off + un] = o_gate * c.tanh();
                        }
                    } else {
                        // state carried from the u-predecessor if in range,
                        // else the v-predecessor, else zero; output zeroed
                        if u > 0 {
                            let src = pos(u - 1, v, b) * h_dim;
                            let carried = cell_state[k].data()[src..src + h_dim].to_vec();
                            cell_state[k].data_mut()[cell_off..cell_off + h_dim].copy_from_slice(&carried);
                        } else if v > 0 {
                            let src = pos(u, v - 1, b) * h_dim;
                            let carried = cell_state[k].data()[src..src + h_dim].to_vec();
                            cell_state[k].data_mut()[cell_off..cell_off + h_dim].copy_from_slice(&carried);
                        }
                    }
                }
            }
        }
    }

    inputs
        .iter()
        .zip(params)
        .enumerate()
        .map(|(k, (x, p))| {
            let out = GridTensor {
                values: hidden[k].clone(),
                mask: x0.mask.clone(),
            };
            let cache = MdCache {
                x: (*x).clone(),
                gates: gates[k].clone(),
                cells: cell_state[k].clone(),
                hidden: hidden[k].clone(),
                stable: p.stable,
            };
            (out, cache)
        })
        .collect()
}

/// Backward companion of [`forward_streams`]; reverse wavefront d = U+V-2..0.
fn backward_streams(
    caches: &[&MdCache],
    params: &[MdLstmParams],
    d_out: &[&GridTensor],
) -> Vec<(GridTensor, Tensor, Tensor, Tensor, Tensor)> {
    assert_eq!(caches.len(), params.len());
    assert_eq!(caches.len(), d_out.len());
    let x0 = &caches[0].x;
    let (u_len, v_len, b_len, d_in) = (x0.height(), x0.width(), x0.batch_len(), x0.feat_dim());
    let h_dim = params[0].hidden_dim();
    let g_w = MDLSTM_GATES * h_dim;
    let pos = |u: usize, v: usize, b: usize| (u * v_len + v) * b_len + b;

    let n = caches.len();
    let mut d_a: Vec<Tensor> = (0..n).map(|_| Tensor::zeros(&[u_len, v_len, b_len, g_w])).collect();
    // dh accumulators start from the external gradient; recurrent terms are
    // scattered in as later diagonals are processed.
    let mut dh_acc: Vec<Tensor> = d_out.iter().map(|d| d.values.clone()).collect();
    let mut dc_acc: Vec<Tensor> = (0..n).map(|_| Tensor::zeros(&[u_len, v_len, b_len, h_dim])).collect();

    for d in (0..(u_len + v_len - 1)).rev() {
        let cells = diagonal_cells(u_len, v_len, d);
        let rows = cells.len() * b_len;
        for (k, p) in params.iter().enumerate() {
            let cache = caches[k];
            for &(u, v) in &cells {
                for b in 0..b_len {
                    let cell_off = pos(u, v, b) * h_dim;
                    let gate_off = pos(u, v, b) * g_w;
                    if x0.mask_at(u, v, b) {
                        for un in 0..h_dim {
                            let c = cache.cells.data()[cell_off + un];
                            let tanh_c = c.tanh();
                            let dh = dh_acc[k].data()[cell_off + un];
                            let cu = if u > 0 { cache.cells.data()[pos(u - 1, v, b) * h_dim + un] } else { 0.0 };
                            let cv = if v > 0 { cache.cells.data()[pos(u, v - 1, b) * h_dim + un] } else { 0.0 };
                            if cache.stable {
                                let i = cache.gates.data()[gate_off + un];
                                let f = cache.gates.data()[gate_off + h_dim + un];
                                let g = cache.gates.data()[gate_off + 2 * h_dim + un];
                                let o = cache.gates.data()[gate_off + 3 * h_dim + un];
                                let l = cache.gates.data()[gate_off + 4 * h_dim + un];
                                let d_o = dh * tanh_c;
                                let dc = dc_acc[k].data()[cell_off + un] + dh * o * (1.0 - tanh_c * tanh_c);
                                let mixed = l * cu + (1.0 - l) * cv;
                                let d_i = dc * g;
                                let d_f = dc * mixed;
                                let d_g = dc * i;
                                let d_l = dc * f * (cu - cv);
                                if u > 0 {
                                    dc_acc[k].data_mut()[pos(u - 1, v, b) * h_dim + un] += dc * f * l;
                                }
                                if v > 0 {
                                    dc_acc[k].data_mut()[pos(u, v - 1, b) * h_dim + un] += dc * f * (1.0 - l);
                                }
                                d_a[k].data_mut()[gate_off + un] = d_i * i * (1.0 - i);
                                d_a[k].data_mut()[gate_off + h_dim + un] = d_f * f * (1.0 - f);
                                d_a[k].data_mut()[gate_off + 2 * h_dim + un] = d_g * (1.0 - g * g);
                                d_a[k].data_mut()[gate_off + 3 * h_dim + un] = d_o * o * (1.0 - o);
                                d_a[k].data_mut()[gate_off + 4 * h_dim + un] = d_l * l * (1.0 - l);
                            } else {
                                let i = cache.gates.data()[gate_off + un];
                                let fu = cache.gates.data()[gate_off + h_dim + un];
                                let fv = cache.gates.data()[gate_off + 2 * h_dim + un];
                                let g = cache.gates.data()[gate_off + 3 * h_dim + un];
                                let o = cache.gates.data()[gate_off + 4 * h_dim + un];
                                let d_o = dh * tanh_c;
                                let dc = dc_acc[k].data()[cell_off + un] + dh * o * (1.0 - tanh_c * tanh_c);
                                let d_i = dc * g;
                                let d_fu = dc * cu;
                                let d_fv = dc * cv;
                                let d_g = dc * i;
                                if u > 0 {
                                    dc_acc[k].data_mut()[pos(u - 1, v, b) * h_dim + un] += dc * fu;
                                }
                                if v > 0 {
                                    dc_acc[k].data_mut()[pos(u, v - 1, b) * h_dim + un] += dc * fv;
                                }
                                d_a[k].data_mut()[gate_off + un] = d_i * i * (1.0 - i);
                                d_a[k].data_mut()[gate_off + h_dim + un] = d_fu * fu * (1.0 - fu);
                                d_a[k].data_mut()[gate_off + 2 * h_dim + un] = d_fv * fv * (1.0 - fv);
                                d_a[k].data_mut()[gate_off + 3 * h_dim + un] = d_g * (1.0 - g * g);
                                d_a[k].data_mut()[gate_off + 4 * h_dim + un] = d_o * o * (1.0 - o);
                            }
                        }
                    } else {
                        // carried cell state: pass dc to the same predecessor
                        // the forward pass carried from; dh dies with h = 0
                        if u > 0 {
                            for un in 0..h_dim {
                                let dc = dc_acc[k].data()[cell_off + un];
                                dc_acc[k].data_mut()[pos(u - 1, v, b) * h_dim + un] += dc;
                            }
                        } else if v > 0 {
                            for un in 0..h_dim {
                                let dc = dc_acc[k].data()[cell_off + un];
                                dc_acc[k].data_mut()[pos(u, v - 1, b) * h_dim + un] += dc;
                            }
                        }
                    }
                }
            }
            // recurrent dh to both predecessors, batched over the diagonal
            let mut da_rows = Tensor::zeros(&[rows, g_w]);
            for (ci, &(u, v)) in cells.iter().enumerate() {
                for b in 0..b_len {
                    let src = pos(u, v, b) * g_w;
                    da_rows.data_mut()[(ci * b_len + b) * g_w..(ci * b_len + b + 1) * g_w]
                        .copy_from_slice(&d_a[k].data()[src..src + g_w]);
                }
            }
            let dhu = matmul_nt(&da_rows, p.r_u);
            let dhv = matmul_nt(&da_rows, p.r_v);
            for (ci, &(u, v)) in cells.iter().enumerate() {
                for b in 0..b_len {
                    let r = ci * b_len + b;
                    if u > 0 {
                        let dst = pos(u - 1, v, b) * h_dim;
                        for un in 0..h_dim {
                            dh_acc[k].data_mut()[dst + un] += dhu.data()[r * h_dim + un];
                        }
                    }
                    if v > 0 {
                        let dst = pos(u, v - 1, b) * h_dim;
                        for un in 0..h_dim {
                            dh_acc[k].data_mut()[dst + un] += dhv.data()[r * h_dim + un];
                        }
                    }
                }
            }
        }
    }

    // weight and input gradients as single big products
    let cells_total = u_len * v_len * b_len;
    (0..n)
        .map(|k| {
            let cache = caches[k];
            let da_flat = d_a[k].reshaped(&[cells_total, g_w]);
            let x_flat = cache.x.values.reshaped(&[cells_total, d_in]);
            let d_w = matmul_tn(&x_flat, &da_flat);

            let mut hu_all = Tensor::zeros(&[cells_total, h_dim]);
            let mut hv_all = Tensor::zeros(&[cells_total, h_dim]);
            for u in 0..u_len {
                for v in 0..v_len {
                    for b in 0..b_len {
                        let dst = pos(u, v, b) * h_dim;
                        if u > 0 {
                            let src = pos(u - 1, v, b) * h_dim;
                            for un in 0..h_dim {
                                hu_all.data_mut()[dst + un] = cache.hidden.data()[src + un];
                            }
                        }
                        if v > 0 {
                            let src = pos(u, v - 1, b) * h_dim;
                            for un in 0..h_dim {
                                hv_all.data_mut()[dst + un] = cache.hidden.data()[src + un];
                            }
                        }
                    }
                }
            }
            let d_ru = matmul_tn(&hu_all, &da_flat);
            let d_rv = matmul_tn(&hv_all, &da_flat);

            let mut d_b = Tensor::zeros(&[g_w]);
            for row in da_flat.data().chunks(g_w) {
                for (acc, &v) in d_b.data_mut().iter_mut().zip(row) {
                    *acc += v;
                }
            }

            let d_x_vals = matmul_nt(&da_flat, params[k].w).reshaped(&[u_len, v_len, b_len, d_in]);
            let d_x = GridTensor {
                values: d_x_vals,
                mask: x0.mask.clone(),
            };
            (d_x, d_w, d_ru, d_rv, d_b)
        })
        .collect()
}

/// Wavefront MDLSTM forward over one direction.
pub fn mdlstm_forward(x: &GridTensor, p: MdLstmParams) -> (GridTensor, MdCache) {
    forward_streams(&[x], &[p]).pop().unwrap()
}

/// Exact gradients of the wavefront forward. Returns (dX, dW, dR_u, dR_v, db).
pub fn mdlstm_backward(
    cache: &MdCache,
    p: MdLstmParams,
    d_h: &GridTensor,
) -> (GridTensor, Tensor, Tensor, Tensor, Tensor) {
    backward_streams(&[cache], &[p], &[d_h]).pop().unwrap()
}

/// Flips grid content along the chosen axes inside each image's valid
/// rectangle; padding stays in place and the mask is unchanged. Involution.
pub fn flip_grid(x: &GridTensor, flip_u: bool, flip_v: bool) -> GridTensor {
    let (v_len, b_len, d) = (x.width(), x.batch_len(), x.feat_dim());
    let mut values = Tensor::zeros(x.values.dims());
    for b in 0..b_len {
        let (h, w) = x.region(b);
        for u in 0..h {
            for v in 0..w {
                let su = if flip_u { h - 1 - u } else { u };
                let sv = if flip_v { w - 1 - v } else { v };
                let src = ((su * v_len + sv) * b_len + b) * d;
                let dst = ((u * v_len + v) * b_len + b) * d;
                let row = x.values.data()[src..src + d].to_vec();
                values.data_mut()[dst..dst + d].copy_from_slice(&row);
            }
        }
    }
    GridTensor {
        values,
        mask: x.mask.clone(),
    }
}

/// Feature-axis concatenation of grid outputs sharing one mask.
pub fn concat_grid_features(parts: &[&GridTensor]) -> GridTensor {
    assert!(!parts.is_empty());
    let (u_len, v_len, b_len) = (parts[0].height(), parts[0].width(), parts[0].batch_len());
    for p in parts {
        assert_eq!(p.mask, parts[0].mask, "concat inputs carry different masks");
    }
    let d_out: usize = parts.iter().map(|p| p.feat_dim()).sum();
    let mut values = Tensor::zeros(&[u_len, v_len, b_len, d_out]);
    for cell in 0..u_len * v_len * b_len {
        let mut off = cell * d_out;
        for p in parts {
            let d = p.feat_dim();
            values.data_mut()[off..off + d]
                .copy_from_slice(&p.values.data()[cell * d..(cell + 1) * d]);
            off += d;
        }
    }
    GridTensor {
        values,
        mask: parts[0].mask.clone(),
    }
}

fn split_grid_features(x: &GridTensor, widths: &[usize]) -> Vec<GridTensor> {
    let total: usize = widths.iter().sum();
    assert_eq!(x.feat_dim(), total);
    let cells = x.height() * x.width() * x.batch_len();
    let mut out = Vec::with_capacity(widths.len());
    let mut start = 0;
    for &w in widths {
        let mut values = Tensor::zeros(&[x.height(), x.width(), x.batch_len(), w]);
        for cell in 0..cells {
            values.data_mut()[cell * w..(cell + 1) * w]
                .copy_from_slice(&x.values.data()[cell * total + start..cell * total + start + w]);
        }
        out.push(GridTensor {
            values,
            mask: x.mask.clone(),
        });
        start += w;
    }
    out
}

/// The four scan orientations of a multi-directional layer, in fixed output
/// order: identity, flip-u, flip-v, flip-both.
pub const DIRECTION_FLIPS: [(bool, bool); 4] = [(false, false), (true, false), (false, true), (true, true)];

/// Runs the kernel over the four axis-flip variants of x with one shared
/// diagonal schedule, un-flips each output, and concatenates features in the
/// fixed direction order. Output width is 4H.
pub fn multidirectional(x: &GridTensor, params: &[MdLstmParams; 4]) -> (GridTensor, Vec<MdCache>) {
    let flipped: Vec<GridTensor> = DIRECTION_FLIPS
        .iter()
        .map(|&(fu, fv)| flip_grid(x, fu, fv))
        .collect();
    let refs: Vec<&GridTensor> = flipped.iter().collect();
    let results = forward_streams(&refs, params);
    let mut outs = Vec::with_capacity(4);
    let mut caches = Vec::with_capacity(4);
    for ((out, cache), &(fu, fv)) in results.into_iter().zip(&DIRECTION_FLIPS) {
        outs.push(flip_grid(&out, fu, fv));
        caches.push(cache);
    }
    let out_refs: Vec<&GridTensor> = outs.iter().collect();
    (concat_grid_features(&out_refs), caches)
}

/// Gradients of the multi-directional layer: input gradient plus
/// (dW, dR_u, dR_v, db) per direction in the fixed order.
#[allow(clippy::type_complexity)]
pub fn multidirectional_backward(
    caches: &[MdCache],
    params: &[MdLstmParams; 4],
    d_y: &GridTensor,
) -> (GridTensor, Vec<(Tensor, Tensor, Tensor, Tensor)>) {
    assert_eq!(caches.len(), 4);
    let h_dim = params[0].hidden_dim();
    let widths = [h_dim; 4];
    let parts = split_grid_features(d_y, &widths);
    // outputs were un-flipped, so flip the incoming gradients back into each
    // direction's own frame
    let flipped: Vec<GridTensor> = parts
        .iter()
        .zip(&DIRECTION_FLIPS)
        .map(|(p, &(fu, fv))| flip_grid(p, fu, fv))
        .collect();
    let cache_refs: Vec<&MdCache> = caches.iter().collect();
    let grad_refs: Vec<&GridTensor> = flipped.iter().collect();
    let results = backward_streams(&cache_refs, params, &grad_refs);

    let mut d_x_total = Tensor::zeros(caches[0].x.values.dims());
    let mut per_dir = Vec::with_capacity(4);
    for ((d_x, d_w, d_ru, d_rv, d_b), &(fu, fv)) in results.into_iter().zip(&DIRECTION_FLIPS) {
        let unflipped = flip_grid(&d_x, fu, fv);
        d_x_total.add_assign(&unflipped.values);
        per_dir.push((d_w, d_ru, d_rv, d_b));
    }
    (
        GridTensor {
            values: d_x_total,
            mask: d_y.mask.clone(),
        },
        per_dir,
    )
}
