use rand::Rng;

use super::Param;
use crate::tensor::FeatureMap;

/// Stride-1 "same" convolution with an odd square kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Param,
}

/// Forward state needed by [`Conv2d::backward`].
#[derive(Debug, Clone)]
pub struct ConvCache {
    /// `(cin * k * k) x (h * w)` patch matrix.
    cols: Vec<f64>,
    height: usize,
    width: usize,
}

impl Conv2d {
    /// Weights uniform in `±sqrt(6 / fan_in)`, zero bias.
    pub fn new(cin: usize, cout: usize, k: usize, rng: &mut impl Rng) -> Self {
        debug_assert!(k % 2 == 1);
        let bound = (6.0 / (cin * k * k) as f64).sqrt();
        Self {
            weight: Param::uniform(&[cout, cin, k, k], bound, rng),
            bias: Param::zeros(&[cout]),
        }
    }

    pub fn zeroed(cin: usize, cout: usize, k: usize) -> Self {
        Self {
            weight: Param::zeros(&[cout, cin, k, k]),
            bias: Param::zeros(&[cout]),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weight: self.weight.zeros_like(),
            bias: self.bias.zeros_like(),
        }
    }

    pub fn cout(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn cin(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape[2]
    }

    fn patch_rows(&self) -> usize {
        self.cin() * self.kernel() * self.kernel()
    }

    pub fn forward(&self, x: &FeatureMap) -> (FeatureMap, ConvCache) {
        assert_eq!(x.channels(), self.cin(), "conv input channels");
        let (h, w) = x.dims();
        let n = h * w;
        let cols = im2col(x, self.kernel());
        let cout = self.cout();
        let mut out = vec![0.0; cout * n];
        for (co, chunk) in out.chunks_mut(n).enumerate() {
            chunk.fill(self.bias.data[co]);
        }
        gemm(
            cout,
            self.patch_rows(),
            n,
            (&self.weight.data, false),
            (&cols, false),
            1.0,
            &mut out,
        );
        let out = FeatureMap::from_vec(cout, h, w, out).expect("conv output shape");
        (
            out,
            ConvCache {
                cols,
                height: h,
                width: w,
            },
        )
    }

    /// Forward without keeping the patch matrix.
    pub fn apply(&self, x: &FeatureMap) -> FeatureMap {
        self.forward(x).0
    }

    /// Accumulates parameter gradients into `grads` and, when requested,
    /// returns the gradient with respect to the input.
    pub fn backward(
        &self,
        cache: &ConvCache,
        grad_out: &FeatureMap,
        grads: &mut Conv2d,
        want_input: bool,
    ) -> Option<FeatureMap> {
        let (h, w) = (cache.height, cache.width);
        let n = h * w;
        let k_rows = self.patch_rows();
        let cout = self.cout();
        let g = grad_out.data();
        for (co, b) in grads.bias.data.iter_mut().enumerate() {
            *b += g[co * n..(co + 1) * n].iter().sum::<f64>();
        }
        gemm(
            cout,
            n,
            k_rows,
            (g, false),
            (&cache.cols, true),
            1.0,
            &mut grads.weight.data,
        );
        if !want_input {
            return None;
        }
        let mut dcols = vec![0.0; k_rows * n];
        gemm(
            k_rows,
            cout,
            n,
            (&self.weight.data, true),
            (g, false),
            0.0,
            &mut dcols,
        );
        Some(col2im(&dcols, self.cin(), h, w, self.kernel()))
    }
}

/// `c = a·b + beta·c` for row-major operands; the flag marks a transposed view.
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    (a, a_t): (&[f64], bool),
    (b, b_t): (&[f64], bool),
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every index the strided views touch.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn im2col(x: &FeatureMap, k: usize) -> Vec<f64> {
    let (h, w) = x.dims();
    let n = h * w;
    let pad = (k / 2) as isize;
    let mut cols = vec![0.0; x.channels() * k * k * n];
    let mut row = 0;
    for c in 0..x.channels() {
        let src = x.channel(c);
        for dy in 0..k as isize {
            for dx in 0..k as isize {
                let dst = &mut cols[row * n..(row + 1) * n];
                let (oy, ox) = (dy - pad, dx - pad);
                let x0 = (-ox).max(0) as usize;
                let x1 = (w as isize - ox).min(w as isize).max(0) as usize;
                for y in 0..h {
                    let sy = y as isize + oy;
                    if sy < 0 || sy >= h as isize || x0 >= x1 {
                        continue;
                    }
                    let s0 = sy as usize * w;
                    let sx0 = (x0 as isize + ox) as usize;
                    dst[y * w + x0..y * w + x1].copy_from_slice(&src[s0 + sx0..s0 + sx0 + (x1 - x0)]);
                }
                row += 1;
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], channels: usize, h: usize, w: usize, k: usize) -> FeatureMap {
    let n = h * w;
    let pad = (k / 2) as isize;
    let mut out = FeatureMap::zeros(channels, h, w);
    let mut row = 0;
    for c in 0..channels {
        let dst = out.channel_mut(c);
        for dy in 0..k as isize {
            for dx in 0..k as isize {
                let src = &cols[row * n..(row + 1) * n];
                let (oy, ox) = (dy - pad, dx - pad);
                let x0 = (-ox).max(0) as usize;
                let x1 = (w as isize - ox).min(w as isize).max(0) as usize;
                for y in 0..h {
                    let sy = y as isize + oy;
                    if sy < 0 || sy >= h as isize || x0 >= x1 {
                        continue;
                    }
                    let s0 = sy as usize * w;
                    let sx0 = (x0 as isize + ox) as usize;
                    for (d, &s) in dst[s0 + sx0..s0 + sx0 + (x1 - x0)]
                        .iter_mut()
                        .zip(&src[y * w + x0..y * w + x1])
                    {
                        *d += s;
                    }
                }
                row += 1;
            }
        }
    }
    out
}
