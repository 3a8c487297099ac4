//! Compact multi-resolution encoder–decoder producing the blur depth.
//!
//! Level `l` runs one 3x3 conv + ELU at `1 / 2^l` resolution (2x2 average
//! pooling between levels). The decoder walks back up: nearest upsampling,
//! concatenation with the encoder skip of that level, 3x3 conv + ELU. A 1x1
//! head followed by softplus yields strictly positive depth.

use rand::Rng;

use crate::nn::{self, Conv2d, ConvCache};
use crate::tensor::{DepthMap, FeatureMap};

#[derive(Debug, Clone, PartialEq)]
pub struct Backbone {
    pub encoders: Vec<Conv2d>,
    /// `decoders[l]` fuses level `l + 1` into level `l`.
    pub decoders: Vec<Conv2d>,
    pub head: Conv2d,
}

pub(crate) struct BackboneCache {
    enc: Vec<(ConvCache, FeatureMap)>,
    enc_dims: Vec<(usize, usize)>,
    dec: Vec<(ConvCache, FeatureMap)>,
    head: ConvCache,
    head_pre: FeatureMap,
}

fn inverse_softplus(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

impl Backbone {
    pub fn new(widths: &[usize], init_depth: f64, rng: &mut impl Rng) -> Self {
        let mut encoders = Vec::with_capacity(widths.len());
        let mut cin = 3;
        for &c in widths {
            encoders.push(Conv2d::new(cin, c, 3, rng));
            cin = c;
        }
        let decoders = (0..widths.len() - 1)
            .map(|l| Conv2d::new(widths[l] + widths[l + 1], widths[l], 3, rng))
            .collect();
        let mut head = Conv2d::new(widths[0], 1, 1, rng);
        for v in &mut head.weight.data {
            *v *= 0.1;
        }
        head.bias.data[0] = inverse_softplus(init_depth);
        Self {
            encoders,
            decoders,
            head,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            encoders: self.encoders.iter().map(Conv2d::zeros_like).collect(),
            decoders: self.decoders.iter().map(Conv2d::zeros_like).collect(),
            head: self.head.zeros_like(),
        }
    }

    pub(crate) fn forward(&self, image: &FeatureMap) -> (DepthMap, BackboneCache) {
        let levels = self.encoders.len();
        let mut enc = Vec::with_capacity(levels);
        let mut enc_dims = Vec::with_capacity(levels);
        let mut x = image.clone();
        for (l, conv) in self.encoders.iter().enumerate() {
            if l > 0 {
                x = nn::avg_pool2(&x);
            }
            enc_dims.push(x.dims());
            let (pre, cache) = conv.forward(&x);
            let act = nn::elu(&pre);
            x = act.clone();
            enc.push((cache, act));
        }
        let mut dec = vec![];
        for l in (0..levels - 1).rev() {
            let (h, w) = enc_dims[l];
            let up = nn::upsample_to(&x, h, w);
            let cat = FeatureMap::concat(&[&enc[l].1, &up]).expect("skip dims match");
            let (pre, cache) = self.decoders[l].forward(&cat);
            x = nn::elu(&pre);
            dec.push((cache, x.clone()));
        }
        dec.reverse();
        let (head_pre, head) = self.head.forward(&x);
        let depth = nn::softplus(&head_pre);
        (
            depth,
            BackboneCache {
                enc,
                enc_dims,
                dec,
                head,
                head_pre,
            },
        )
    }

    /// [`Self::forward`] keeping only the encoder skips alive.
    pub(crate) fn infer(&self, image: &FeatureMap) -> DepthMap {
        let levels = self.encoders.len();
        let mut skips: Vec<FeatureMap> = Vec::with_capacity(levels);
        for conv in &self.encoders {
            let act = match skips.last() {
                None => nn::elu(&conv.apply(image)),
                Some(prev) => nn::elu(&conv.apply(&nn::avg_pool2(prev))),
            };
            skips.push(act);
        }
        let mut x = skips.pop().expect("at least one level");
        for l in (0..levels - 1).rev() {
            let skip = skips.pop().expect("one skip per level");
            let (h, w) = skip.dims();
            let up = nn::upsample_to(&x, h, w);
            let cat = FeatureMap::concat(&[&skip, &up]).expect("skip dims match");
            drop((skip, up));
            x = nn::elu(&self.decoders[l].apply(&cat));
        }
        nn::softplus(&self.head.apply(&x))
    }

    /// Accumulates parameter gradients; returns the gradient w.r.t. the input image.
    pub(crate) fn backward(
        &self,
        cache: &BackboneCache,
        grad_depth: &DepthMap,
        grads: &mut Backbone,
        want_input: bool,
    ) -> Option<FeatureMap> {
        let levels = self.encoders.len();
        let mut g = grad_depth.clone();
        nn::softplus_backward(&cache.head_pre, &mut g);
        let mut g = self
            .head
            .backward(&cache.head, &g, &mut grads.head, true)
            .expect("input grad requested");

        // Gradients arriving at each encoder output through the skips.
        let mut skip_grads: Vec<Option<FeatureMap>> = vec![None; levels];
        for l in 0..levels - 1 {
            let (dec_cache, dec_out) = &cache.dec[l];
            nn::elu_backward(dec_out, &mut g);
            let gcat = self.decoders[l]
                .backward(dec_cache, &g, &mut grads.decoders[l], true)
                .expect("input grad requested");
            let skip_c = self.encoders[l].cout();
            let (h, w) = cache.enc_dims[l];
            let n = h * w;
            let gskip = FeatureMap::from_vec(skip_c, h, w, gcat.data()[..skip_c * n].to_vec())
                .expect("skip grad shape");
            let gup = FeatureMap::from_vec(
                gcat.channels() - skip_c,
                h,
                w,
                gcat.data()[skip_c * n..].to_vec(),
            )
            .expect("up grad shape");
            skip_grads[l] = Some(gskip);
            let (ih, iw) = cache.enc_dims[l + 1];
            g = nn::upsample_to_backward(&gup, ih, iw);
        }
        // `g` now holds the gradient at the deepest encoder output.
        let mut g_out = Some(g);
        for l in (0..levels).rev() {
            let mut g = g_out.take().expect("gradient flows down");
            if let Some(s) = skip_grads[l].take() {
                if l < levels - 1 {
                    for (a, b) in g.data_mut().iter_mut().zip(s.data()) {
                        *a += b;
                    }
                }
            }
            let (conv_cache, act) = &cache.enc[l];
            nn::elu_backward(act, &mut g);
            let need = l > 0 || want_input;
            let gin = self.encoders[l].backward(conv_cache, &g, &mut grads.encoders[l], need);
            if l > 0 {
                let (h, w) = cache.enc_dims[l - 1];
                g_out = Some(nn::avg_pool2_backward(&gin.expect("requested"), h, w));
            } else {
                g_out = gin;
            }
        }
        g_out
    }
}
