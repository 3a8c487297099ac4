//! Spatial attention residual refinement.
//!
//! `[depth, features]` → 3x3 conv + ELU → 3x3 conv + ELU → shared trunk `t`;
//! `A = sigmoid(conv1x1(t))` (one channel), `R = conv3x3(t)` (one channel,
//! zero-initialized); `depth_out = max(depth + A ⊙ R, DEPTH_FLOOR)`.

use rand::Rng;

use crate::nn::{self, Conv2d, ConvCache};
use crate::tensor::{DepthMap, FeatureMap};

/// Smallest depth (meters) a refinement stage may emit.
pub const DEPTH_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct Sarrm {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub attention: Conv2d,
    pub residual: Conv2d,
}

/// Intermediate values of one refinement stage.
pub struct SarrmTrace {
    c1: ConvCache,
    h1: FeatureMap,
    c2: ConvCache,
    h2: FeatureMap,
    ca: ConvCache,
    /// Attention map in `(0, 1)`.
    pub attention: FeatureMap,
    cr: ConvCache,
    /// Residual branch output.
    pub residual: FeatureMap,
    /// `depth + A ⊙ R` before the floor.
    pub unclamped: DepthMap,
}

impl Sarrm {
    pub fn new(feature_channels: usize, width: usize, rng: &mut impl Rng) -> Self {
        Self {
            conv1: Conv2d::new(1 + feature_channels, width, 3, rng),
            conv2: Conv2d::new(width, width, 3, rng),
            attention: Conv2d::new(width, 1, 1, rng),
            residual: Conv2d::zeroed(width, 1, 3),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            conv1: self.conv1.zeros_like(),
            conv2: self.conv2.zeros_like(),
            attention: self.attention.zeros_like(),
            residual: self.residual.zeros_like(),
        }
    }

    pub fn forward(&self, depth: &DepthMap, features: &FeatureMap) -> (DepthMap, SarrmTrace) {
        let x = FeatureMap::concat(&[depth, features]).expect("shapes checked by caller");
        let (p1, c1) = self.conv1.forward(&x);
        let h1 = nn::elu(&p1);
        let (p2, c2) = self.conv2.forward(&h1);
        let h2 = nn::elu(&p2);
        let (pa, ca) = self.attention.forward(&h2);
        let attention = nn::sigmoid(&pa);
        let (residual, cr) = self.residual.forward(&h2);
        let mut unclamped = depth.clone();
        for ((u, &a), &r) in unclamped
            .data_mut()
            .iter_mut()
            .zip(attention.data())
            .zip(residual.data())
        {
            *u += a * r;
        }
        let out = unclamped.map(|v| v.max(DEPTH_FLOOR));
        (
            out,
            SarrmTrace {
                c1,
                h1,
                c2,
                h2,
                ca,
                attention,
                cr,
                residual,
                unclamped,
            },
        )
    }

    /// Returns `(grad wrt depth_in, grad wrt features)`.
    pub fn backward(
        &self,
        trace: &SarrmTrace,
        grad_out: &DepthMap,
        grads: &mut Sarrm,
    ) -> (DepthMap, FeatureMap) {
        let mut g_pre = grad_out.clone();
        for (g, &u) in g_pre.data_mut().iter_mut().zip(trace.unclamped.data()) {
            if u < DEPTH_FLOOR {
                *g = 0.0;
            }
        }
        let mut g_att = g_pre.clone();
        let mut g_res = g_pre.clone();
        for ((ga, gr), (&a, &r)) in g_att
            .data_mut()
            .iter_mut()
            .zip(g_res.data_mut().iter_mut())
            .zip(trace.attention.data().iter().zip(trace.residual.data()))
        {
            *ga *= r;
            *gr *= a;
        }
        nn::sigmoid_backward(&trace.attention, &mut g_att);
        let mut g_h2 = self
            .attention
            .backward(&trace.ca, &g_att, &mut grads.attention, true)
            .expect("requested");
        let g_h2_res = self
            .residual
            .backward(&trace.cr, &g_res, &mut grads.residual, true)
            .expect("requested");
        for (a, b) in g_h2.data_mut().iter_mut().zip(g_h2_res.data()) {
            *a += b;
        }
        nn::elu_backward(&trace.h2, &mut g_h2);
        let mut g_h1 = self
            .conv2
            .backward(&trace.c2, &g_h2, &mut grads.conv2, true)
            .expect("requested");
        nn::elu_backward(&trace.h1, &mut g_h1);
        let g_x = self
            .conv1
            .backward(&trace.c1, &g_h1, &mut grads.conv1, true)
            .expect("requested");
        let (h, w) = g_x.dims();
        let n = h * w;
        let mut g_depth = DepthMap::from_vec(1, h, w, g_x.data()[..n].to_vec()).expect("shape");
        for (a, b) in g_depth.data_mut().iter_mut().zip(g_pre.data()) {
            *a += b;
        }
        let g_feat = FeatureMap::from_vec(g_x.channels() - 1, h, w, g_x.data()[n..].to_vec())
            .expect("shape");
        (g_depth, g_feat)
    }
}
