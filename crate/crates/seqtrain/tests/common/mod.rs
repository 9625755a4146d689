//! Shared helpers for the integration and acceptance suites.

#![allow(dead_code)]

pub mod raster;

use rand::Rng as _;
use seqtrain::mdlstm::{MdLstmParams, MDLSTM_GATES};
use seqtrain::rng::Rng;
use seqtrain::tensor::{GridTensor, SeqTensor, Tensor};

pub fn rand_tensor(rng: &mut Rng, dims: &[usize]) -> Tensor {
    let n: usize = dims.iter().product();
    Tensor::from_vec(dims, (0..n).map(|_| rng.gen_range(-0.8..0.8)).collect())
}

pub fn rand_seq(rng: &mut Rng, t_len: usize, lens: &[usize], d: usize) -> SeqTensor {
    let b_len = lens.len();
    let mut values = Tensor::zeros(&[t_len, b_len, d]);
    let mut mask = Tensor::zeros(&[t_len, b_len]);
    for (bi, &l) in lens.iter().enumerate() {
        assert!(l <= t_len);
        for t in 0..l {
            mask.set(&[t, bi], 1.0);
            for j in 0..d {
                values.set(&[t, bi, j], rng.gen_range(-1.0..1.0));
            }
        }
    }
    SeqTensor::new(values, mask)
}

pub fn rand_grid(
    rng: &mut Rng,
    u_len: usize,
    v_len: usize,
    regions: &[(usize, usize)],
    d: usize,
) -> GridTensor {
    let b_len = regions.len();
    let mut values = Tensor::zeros(&[u_len, v_len, b_len, d]);
    let mut mask = Tensor::zeros(&[u_len, v_len, b_len]);
    for (b, &(h, w)) in regions.iter().enumerate() {
        for u in 0..h {
            for v in 0..w {
                mask.set(&[u, v, b], 1.0);
                for j in 0..d {
                    values.set(&[u, v, b, j], rng.gen_range(-1.0..1.0));
                }
            }
        }
    }
    GridTensor::new(values, mask)
}

/// Random MDLSTM parameter tensors (W, R_u, R_v, b) for input dim and hidden.
pub fn rand_md_params(rng: &mut Rng, d_in: usize, h: usize) -> (Tensor, Tensor, Tensor, Tensor) {
    (
        rand_tensor(rng, &[d_in, MDLSTM_GATES * h]),
        rand_tensor(rng, &[h, MDLSTM_GATES * h]),
        rand_tensor(rng, &[h, MDLSTM_GATES * h]),
        rand_tensor(rng, &[MDLSTM_GATES * h]),
    )
}

pub fn md_params<'a>(
    p: &'a (Tensor, Tensor, Tensor, Tensor),
    stable: bool,
) -> MdLstmParams<'a> {
    MdLstmParams {
        w: &p.0,
        r_u: &p.1,
        r_v: &p.2,
        b: &p.3,
        stable,
    }
}

pub fn assert_all_close(a: &[f64], b: &[f64], tol: f64, what: &str) {
    assert_eq!(a.len(), b.len(), "{}: length mismatch", what);
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert!(
            (x - y).abs() <= tol,
            "{}: entry {}: {} vs {} (tol {})",
            what,
            i,
            x,
            y,
            tol
        );
    }
}

/// Zeroes entries of a [U,V,B,D] objective tensor on masked-out grid cells.
pub fn mask_grid_objective(q: &mut Tensor, grid: &GridTensor) {
    let (u_len, v_len, b_len, d) = (
        grid.height(),
        grid.width(),
        grid.batch_len(),
        q.dims()[3],
    );
    for u in 0..u_len {
        for v in 0..v_len {
            for b in 0..b_len {
                if !grid.mask_at(u, v, b) {
                    for j in 0..d {
                        q.set(&[u, v, b, j], 0.0);
                    }
                }
            }
        }
    }
}
