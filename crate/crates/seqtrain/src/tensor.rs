//! Dense row-major f64 tensors plus the masked sequence and grid conventions
//! used between layers.
//!
//! All compute is 64-bit; 32-bit floats appear only in file and wire formats.
//! Shape violations are programming errors and panic. Reductions always run in
//! ascending index order so repeated runs are bit-identical.

/// Dense tensor of 64-bit floats in row-major layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(dims: &[usize]) -> Tensor {
        let n: usize = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn from_vec(dims: &[usize], data: Vec<f64>) -> Tensor {
        let n: usize = dims.iter().product();
        assert_eq!(
            data.len(),
            n,
            "tensor data length {} does not match dims {:?}",
            data.len(),
            dims
        );
        Tensor {
            dims: dims.to_vec(),
            data,
        }
    }

    /// Identity matrix of size n.
    pub fn eye(n: usize) -> Tensor {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Row-major offset of a multi-index.
    pub fn offset(&self, idx: &[usize]) -> usize {
        assert_eq!(idx.len(), self.dims.len(), "index rank mismatch");
        let mut off = 0;
        for (i, (&ix, &d)) in idx.iter().zip(&self.dims).enumerate() {
            assert!(ix < d, "index {:?} out of bounds for dims {:?} at axis {}", idx, self.dims, i);
            off = off * d + ix;
        }
        off
    }

    pub fn at(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: f64) {
        let off = self.offset(idx);
        self.data[off] = v;
    }

    /// Reinterprets the tensor with new dims of equal element count.
    pub fn reshaped(&self, dims: &[usize]) -> Tensor {
        let n: usize = dims.iter().product();
        assert_eq!(n, self.data.len(), "reshape {:?} -> {:?} changes element count", self.dims, dims);
        Tensor {
            dims: dims.to_vec(),
            data: self.data.clone(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|x| x * s)
    }

    pub fn add(&self, other: &Tensor) -> Tensor {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Tensor {
        self.zip(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Tensor {
        self.zip(other, |a, b| a * b)
    }

    fn zip(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        assert_eq!(
            self.dims, other.dims,
            "elementwise op on mismatched shapes {:?} vs {:?}",
            self.dims, other.dims
        );
        Tensor {
            dims: self.dims.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.dims, other.dims, "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Sum of squares over all entries, ascending index order.
    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|&x| x * x).sum()
    }
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

pub fn tanh(x: &Tensor) -> Tensor {
    x.map(f64::tanh)
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// C = A·B for A [M,K], B [K,N]. Accumulation runs over k ascending.
pub fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.dims.len(), 2, "matmul lhs must be rank 2, got {:?}", a.dims);
    assert_eq!(b.dims.len(), 2, "matmul rhs must be rank 2, got {:?}", b.dims);
    let (m, k) = (a.dims[0], a.dims[1]);
    let (k2, n) = (b.dims[0], b.dims[1]);
    assert_eq!(k, k2, "matmul inner dims disagree: {:?} x {:?}", a.dims, b.dims);
    let mut out = vec![0.0f64; m * n];
    for i in 0..m {
        let arow = &a.data[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (kk, &aik) in arow.iter().enumerate() {
            let brow = &b.data[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
    Tensor {
        dims: vec![m, n],
        data: out,
    }
}

/// C = Aᵀ·B for A [K,M], B [K,N].
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.dims.len(), 2, "matmul_tn lhs must be rank 2");
    assert_eq!(b.dims.len(), 2, "matmul_tn rhs must be rank 2");
    let (k, m) = (a.dims[0], a.dims[1]);
    let (k2, n) = (b.dims[0], b.dims[1]);
    assert_eq!(k, k2, "matmul_tn inner dims disagree: {:?} x {:?}", a.dims, b.dims);
    let mut out = vec![0.0f64; m * n];
    for kk in 0..k {
        let arow = &a.data[kk * m..(kk + 1) * m];
        let brow = &b.data[kk * n..(kk + 1) * n];
        for (i, &aki) in arow.iter().enumerate() {
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aki * bv;
            }
        }
    }
    Tensor {
        dims: vec![m, n],
        data: out,
    }
}

/// C = A·Bᵀ for A [M,K], B [N,K].
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.dims.len(), 2, "matmul_nt lhs must be rank 2");
    assert_eq!(b.dims.len(), 2, "matmul_nt rhs must be rank 2");
    let (m, k) = (a.dims[0], a.dims[1]);
    let (n, k2) = (b.dims[0], b.dims[1]);
    assert_eq!(k, k2, "matmul_nt inner dims disagree: {:?} x {:?}", a.dims, b.dims);
    let mut out = vec![0.0f64; m * n];
    for i in 0..m {
        let arow = &a.data[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (j, o) in orow.iter_mut().enumerate() {
            let brow = &b.data[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (&av, &bv) in arow.iter().zip(brow) {
                acc += av * bv;
            }
            *o = acc;
        }
    }
    Tensor {
        dims: vec![m, n],
        data: out,
    }
}

/// Adds a bias vector to every row of a [R, D] matrix. The only broadcasting
/// the framework performs.
pub fn add_bias_rows(x: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(x.dims.len(), 2, "add_bias_rows expects rank 2");
    assert_eq!(b.dims.len(), 1, "bias must be rank 1");
    let d = x.dims[1];
    assert_eq!(b.dims[0], d, "bias dim {} vs row width {}", b.dims[0], d);
    let mut out = x.clone();
    for row in out.data.chunks_mut(d) {
        for (o, &bv) in row.iter_mut().zip(&b.data) {
            *o += bv;
        }
    }
    out
}

/// Sequence tensor: values [T, B, D] with a paired {0,1} index mask [T, B].
/// Masked-out frames hold zeros; the mask is frame-contiguous per batch entry
/// (padding only at the end).
#[derive(Debug, Clone, PartialEq)]
pub struct SeqTensor {
    pub values: Tensor,
    pub mask: Tensor,
}

impl SeqTensor {
    pub fn new(values: Tensor, mask: Tensor) -> SeqTensor {
        assert_eq!(values.dims.len(), 3, "SeqTensor values must be [T,B,D], got {:?}", values.dims);
        assert_eq!(mask.dims.len(), 2, "SeqTensor mask must be [T,B], got {:?}", mask.dims);
        assert_eq!(&values.dims[..2], &mask.dims[..], "values/mask T,B disagree");
        let (t_len, b_len) = (mask.dims[0], mask.dims[1]);
        for b in 0..b_len {
            let mut seen_zero = false;
            for t in 0..t_len {
                let m = mask.data[t * b_len + b];
                assert!(m == 0.0 || m == 1.0, "mask entries must be 0 or 1, got {}", m);
                if m == 0.0 {
                    seen_zero = true;
                } else {
                    assert!(!seen_zero, "mask not frame-contiguous for batch entry {}", b);
                }
            }
        }
        SeqTensor { values, mask }
    }

    /// Mask of all ones for a full [T, B, D] tensor.
    pub fn full(values: Tensor) -> SeqTensor {
        assert_eq!(values.dims.len(), 3);
        let mask = Tensor::from_vec(
            &values.dims[..2],
            vec![1.0; values.dims[0] * values.dims[1]],
        );
        SeqTensor { values, mask }
    }

    pub fn time_len(&self) -> usize {
        self.values.dims[0]
    }

    pub fn batch_len(&self) -> usize {
        self.values.dims[1]
    }

    pub fn feat_dim(&self) -> usize {
        self.values.dims[2]
    }

    pub fn mask_at(&self, t: usize, b: usize) -> bool {
        self.mask.data[t * self.batch_len() + b] == 1.0
    }

    /// Valid length of batch entry b.
    pub fn seq_len(&self, b: usize) -> usize {
        let bn = self.batch_len();
        (0..self.time_len())
            .take_while(|&t| self.mask.data[t * bn + b] == 1.0)
            .count()
    }

    /// Number of masked-in frames across the batch.
    pub fn frames(&self) -> usize {
        self.mask.data.iter().filter(|&&m| m == 1.0).count()
    }

    /// Zeroes values on masked-out frames; masked-in values are unchanged.
    pub fn apply_mask(&self) -> SeqTensor {
        let (t_len, b_len, d) = (self.time_len(), self.batch_len(), self.feat_dim());
        let mut values = self.values.clone();
        for t in 0..t_len {
            for b in 0..b_len {
                if self.mask.data[t * b_len + b] == 0.0 {
                    let off = (t * b_len + b) * d;
                    values.data[off..off + d].fill(0.0);
                }
            }
        }
        SeqTensor {
            values,
            mask: self.mask.clone(),
        }
    }

    /// Same mask, new values with identical [T,B] extent.
    pub fn with_values(&self, values: Tensor) -> SeqTensor {
        assert_eq!(&values.dims[..2], &self.mask.dims[..], "with_values T,B disagree");
        SeqTensor {
            values,
            mask: self.mask.clone(),
        }
    }
}

/// Grid tensor: values [U, V, B, D] with a {0,1} mask [U, V, B]. Each image's
/// masked-in region is a top-left anchored rectangle.
#[derive(Debug, Clone, PartialEq)]
pub struct GridTensor {
    pub values: Tensor,
    pub mask: Tensor,
}

impl GridTensor {
    pub fn new(values: Tensor, mask: Tensor) -> GridTensor {
        assert_eq!(values.dims.len(), 4, "GridTensor values must be [U,V,B,D], got {:?}", values.dims);
        assert_eq!(mask.dims.len(), 3, "GridTensor mask must be [U,V,B], got {:?}", mask.dims);
        assert_eq!(&values.dims[..3], &mask.dims[..], "values/mask U,V,B disagree");
        let g = GridTensor { values, mask };
        let (u_len, v_len, b_len) = (g.height(), g.width(), g.batch_len());
        for b in 0..b_len {
            let (h, w) = g.region(b);
            for u in 0..u_len {
                for v in 0..v_len {
                    let m = g.mask.data[(u * v_len + v) * b_len + b];
                    assert!(m == 0.0 || m == 1.0, "mask entries must be 0 or 1");
                    let inside = u < h && v < w;
                    assert_eq!(
                        m == 1.0,
                        inside,
                        "mask for image {} is not a top-left rectangle at ({},{})",
                        b, u, v
                    );
                }
            }
        }
        g
    }

    pub fn full(values: Tensor) -> GridTensor {
        assert_eq!(values.dims.len(), 4);
        let n = values.dims[0] * values.dims[1] * values.dims[2];
        let mask = Tensor::from_vec(&values.dims[..3], vec![1.0; n]);
        GridTensor { values, mask }
    }

    pub fn height(&self) -> usize {
        self.values.dims[0]
    }

    pub fn width(&self) -> usize {
        self.values.dims[1]
    }

    pub fn batch_len(&self) -> usize {
        self.values.dims[2]
    }

    pub fn feat_dim(&self) -> usize {
        self.values.dims[3]
    }

    pub fn mask_at(&self, u: usize, v: usize, b: usize) -> bool {
        self.mask.data[(u * self.width() + v) * self.batch_len() + b] == 1.0
    }

    /// Valid (height, width) rectangle of image b, derived from the mask.
    pub fn region(&self, b: usize) -> (usize, usize) {
        let (u_len, v_len, b_len) = (self.height(), self.width(), self.batch_len());
        let h = (0..u_len)
            .take_while(|&u| self.mask.data[(u * v_len) * b_len + b] == 1.0)
            .count();
        let w = (0..v_len)
            .take_while(|&v| self.mask.data[v * b_len + b] == 1.0)
            .count();
        if h == 0 || w == 0 {
            (0, 0)
        } else {
            (h, w)
        }
    }

    pub fn with_values(&self, values: Tensor) -> GridTensor {
        assert_eq!(&values.dims[..3], &self.mask.dims[..], "with_values U,V,B disagree");
        GridTensor {
            values,
            mask: self.mask.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{} vs {} (tol {})", a, b, tol);
    }

    #[test]
    fn matmul_identity_is_exact() {
        let x = Tensor::from_vec(&[3, 4], (0..12).map(|i| i as f64 * 0.37 - 1.0).collect());
        let y = matmul(&Tensor::eye(3), &x);
        assert_eq!(x, y);
    }

    #[test]
    fn matmul_hand_case() {
        let a = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let b = Tensor::from_vec(&[2, 1], vec![0.0, 1.0]);
        let c = matmul(&a, &b);
        assert_eq!(c.data(), &[2.0, 4.0]);
    }

    // Independent scalar oracle with a different loop nest than the implementation.
    fn matmul_oracle(a: &Tensor, b: &Tensor) -> Tensor {
        let (m, k) = (a.dims()[0], a.dims()[1]);
        let n = b.dims()[1];
        let mut out = Tensor::zeros(&[m, n]);
        for j in 0..n {
            for i in 0..m {
                let mut acc = 0.0;
                for kk in 0..k {
                    acc += a.at(&[i, kk]) * b.at(&[kk, j]);
                }
                out.set(&[i, j], acc);
            }
        }
        out
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        let mut rng = crate::rng::new_rng(11);
        use rand::Rng;
        let a = Tensor::from_vec(&[7, 5], (0..35).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let b = Tensor::from_vec(&[5, 3], (0..15).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let got = matmul(&a, &b);
        let want = matmul_oracle(&a, &b);
        for (g, w) in got.data().iter().zip(want.data()) {
            assert_close(*g, *w, 1e-12);
        }
    }

    #[test]
    fn transpose_variants_match_plain_matmul() {
        let mut rng = crate::rng::new_rng(12);
        use rand::Rng;
        let a = Tensor::from_vec(&[4, 6], (0..24).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let b = Tensor::from_vec(&[4, 3], (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect());
        // aᵀ·b via explicit transpose
        let mut at = Tensor::zeros(&[6, 4]);
        for i in 0..4 {
            for j in 0..6 {
                at.set(&[j, i], a.at(&[i, j]));
            }
        }
        let want = matmul(&at, &b);
        let got = matmul_tn(&a, &b);
        for (g, w) in got.data().iter().zip(want.data()) {
            assert_close(*g, *w, 1e-13);
        }

        let x = Tensor::from_vec(&[3, 6], (0..18).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let c = Tensor::from_vec(&[5, 6], (0..30).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let mut ct = Tensor::zeros(&[6, 5]);
        for i in 0..5 {
            for j in 0..6 {
                ct.set(&[j, i], c.at(&[i, j]));
            }
        }
        let want2 = matmul(&x, &ct);
        let got2 = matmul_nt(&x, &c);
        assert_eq!(got2.dims(), want2.dims());
        for (g, w) in got2.data().iter().zip(want2.data()) {
            assert_close(*g, *w, 1e-12);
        }
    }

    #[test]
    #[should_panic(expected = "inner dims disagree")]
    fn matmul_shape_mismatch_panics() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[4, 2]);
        matmul(&a, &b);
    }

    #[test]
    fn scalar_activations() {
        assert_close(sigmoid_scalar(0.0), 0.5, 0.0);
        assert_close(0.0f64.tanh(), 0.0, 0.0);
        assert_close(0.5f64.tanh(), 0.4621171573, 1e-10);
        let mut rng = crate::rng::new_rng(3);
        use rand::Rng;
        for _ in 0..50 {
            let x: f64 = rng.gen_range(-6.0..6.0);
            assert_close(sigmoid_scalar(x) + sigmoid_scalar(-x), 1.0, 1e-12);
        }
    }

    #[test]
    fn elementwise_shapes_checked() {
        let a = Tensor::zeros(&[2, 2]);
        let b = Tensor::zeros(&[2, 2]);
        let _ = a.add(&b);
        let r = relu(&Tensor::from_vec(&[3], vec![-1.0, 0.0, 2.0]));
        assert_eq!(r.data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    #[should_panic(expected = "mismatched shapes")]
    fn elementwise_mismatch_panics() {
        let a = Tensor::zeros(&[2, 2]);
        let b = Tensor::zeros(&[2, 3]);
        let _ = a.add(&b);
    }

    fn seq_with_lens(t_len: usize, d: usize, lens: &[usize], fill: f64) -> SeqTensor {
        let b_len = lens.len();
        let values = Tensor::from_vec(&[t_len, b_len, d], vec![fill; t_len * b_len * d]);
        let mut mask = Tensor::zeros(&[t_len, b_len]);
        for (b, &l) in lens.iter().enumerate() {
            for t in 0..l {
                mask.set(&[t, b], 1.0);
            }
        }
        SeqTensor::new(values, mask).apply_mask()
    }

    #[test]
    fn apply_mask_all_ones_is_identity() {
        let x = SeqTensor::full(Tensor::from_vec(&[2, 2, 3], (0..12).map(|i| i as f64).collect()));
        assert_eq!(x.apply_mask(), x);
    }

    #[test]
    fn apply_mask_zeroes_padding() {
        let t_len = 3;
        let b_len = 2;
        let d = 2;
        let values = Tensor::from_vec(&[t_len, b_len, d], vec![7.0; t_len * b_len * d]);
        let mut mask = Tensor::zeros(&[t_len, b_len]);
        for t in 0..3 {
            mask.set(&[t, 0], 1.0);
        }
        mask.set(&[0, 1], 1.0);
        let x = SeqTensor::new(values, mask);
        let y = x.apply_mask();
        // frames (1, b=1) and (2, b=1) zeroed
        for t in 1..3 {
            for k in 0..d {
                assert_eq!(y.values.at(&[t, 1, k]), 0.0);
            }
        }
        for t in 0..3 {
            for k in 0..d {
                assert_eq!(y.values.at(&[t, 0, k]), 7.0);
            }
        }
        assert_eq!(y.seq_len(0), 3);
        assert_eq!(y.seq_len(1), 1);
        assert_eq!(y.frames(), 4);
    }

    #[test]
    fn apply_mask_all_zero_mask() {
        let values = Tensor::from_vec(&[2, 1, 2], vec![5.0; 4]);
        let mask = Tensor::zeros(&[2, 1]);
        let x = SeqTensor::new(values, mask);
        assert!(x.apply_mask().values.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    #[should_panic(expected = "frame-contiguous")]
    fn non_contiguous_mask_rejected() {
        let values = Tensor::zeros(&[3, 1, 1]);
        let mask = Tensor::from_vec(&[3, 1], vec![1.0, 0.0, 1.0]);
        SeqTensor::new(values, mask);
    }

    #[test]
    fn seq_helper_consistency() {
        let x = seq_with_lens(4, 2, &[4, 2, 1], 1.0);
        assert_eq!(x.frames(), 7);
        assert_eq!(x.seq_len(1), 2);
    }

    #[test]
    fn grid_region_inference() {
        let mut mask = Tensor::zeros(&[3, 4, 2]);
        for u in 0..2 {
            for v in 0..3 {
                mask.set(&[u, v, 0], 1.0);
            }
        }
        for u in 0..3 {
            for v in 0..4 {
                mask.set(&[u, v, 1], 1.0);
            }
        }
        let g = GridTensor::new(Tensor::zeros(&[3, 4, 2, 1]), mask);
        assert_eq!(g.region(0), (2, 3));
        assert_eq!(g.region(1), (3, 4));
    }

    #[test]
    #[should_panic(expected = "rectangle")]
    fn grid_non_rectangle_rejected() {
        let mut mask = Tensor::zeros(&[2, 2, 1]);
        mask.set(&[0, 0, 0], 1.0);
        mask.set(&[1, 1, 0], 1.0);
        GridTensor::new(Tensor::zeros(&[2, 2, 1, 1]), mask);
    }
}
