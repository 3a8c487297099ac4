use crate::tensor::FeatureMap;

pub fn elu(x: &FeatureMap) -> FeatureMap {
    x.map(|v| if v > 0.0 { v } else { v.exp_m1() })
}

/// Gradient through ELU given its output `y`.
pub fn elu_backward(y: &FeatureMap, grad: &mut FeatureMap) {
    for (g, &v) in grad.data_mut().iter_mut().zip(y.data()) {
        if v <= 0.0 {
            *g *= v + 1.0;
        }
    }
}

#[inline]
fn sigmoid_scalar(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &FeatureMap) -> FeatureMap {
    x.map(sigmoid_scalar)
}

/// Gradient through the logistic function given its output `y`.
pub fn sigmoid_backward(y: &FeatureMap, grad: &mut FeatureMap) {
    for (g, &s) in grad.data_mut().iter_mut().zip(y.data()) {
        *g *= s * (1.0 - s);
    }
}

pub fn softplus(x: &FeatureMap) -> FeatureMap {
    x.map(|v| v.max(0.0) + (-v.abs()).exp().ln_1p())
}

/// Gradient through softplus given its input `x`.
pub fn softplus_backward(x: &FeatureMap, grad: &mut FeatureMap) {
    for (g, &v) in grad.data_mut().iter_mut().zip(x.data()) {
        *g *= sigmoid_scalar(v);
    }
}

/// 2x2 average pooling; odd trailing rows/columns average what is present.
pub fn avg_pool2(x: &FeatureMap) -> FeatureMap {
    let (h, w) = x.dims();
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = FeatureMap::zeros(x.channels(), oh, ow);
    for c in 0..x.channels() {
        let src = x.channel(c);
        let dst = out.channel_mut(c);
        for oy in 0..oh {
            let ys = 2 * oy..(2 * oy + 2).min(h);
            for ox in 0..ow {
                let xs = 2 * ox..(2 * ox + 2).min(w);
                let mut acc = 0.0;
                for y in ys.clone() {
                    for xx in xs.clone() {
                        acc += src[y * w + xx];
                    }
                }
                dst[oy * ow + ox] = acc / (ys.len() * xs.len()) as f64;
            }
        }
    }
    out
}

pub fn avg_pool2_backward(grad_out: &FeatureMap, h: usize, w: usize) -> FeatureMap {
    let ow = grad_out.width();
    let mut out = FeatureMap::zeros(grad_out.channels(), h, w);
    for c in 0..grad_out.channels() {
        let g = grad_out.channel(c);
        let dst = out.channel_mut(c);
        for y in 0..h {
            let oy = y / 2;
            let ny = if 2 * oy + 1 < h { 2 } else { 1 };
            for xx in 0..w {
                let ox = xx / 2;
                let nx = if 2 * ox + 1 < w { 2 } else { 1 };
                dst[y * w + xx] = g[oy * ow + ox] / (ny * nx) as f64;
            }
        }
    }
    out
}

/// Nearest-neighbour 2x upsampling cropped to `(h, w)`.
pub fn upsample_to(x: &FeatureMap, h: usize, w: usize) -> FeatureMap {
    let (ih, iw) = x.dims();
    let mut out = FeatureMap::zeros(x.channels(), h, w);
    for c in 0..x.channels() {
        let src = x.channel(c);
        let dst = out.channel_mut(c);
        for y in 0..h {
            let sy = (y / 2).min(ih - 1);
            for xx in 0..w {
                dst[y * w + xx] = src[sy * iw + (xx / 2).min(iw - 1)];
            }
        }
    }
    out
}

pub fn upsample_to_backward(grad_out: &FeatureMap, ih: usize, iw: usize) -> FeatureMap {
    let (h, w) = grad_out.dims();
    let mut out = FeatureMap::zeros(grad_out.channels(), ih, iw);
    for c in 0..grad_out.channels() {
        let g = grad_out.channel(c);
        let dst = out.channel_mut(c);
        for y in 0..h {
            let sy = (y / 2).min(ih - 1);
            for xx in 0..w {
                dst[sy * iw + (xx / 2).min(iw - 1)] += g[y * w + xx];
            }
        }
    }
    out
}
