//! Pyramid frequency network.
//!
//! Band 0 (the low-pass image) goes through the [`Backbone`] to produce a
//! blur depth. Every higher band `i` gets its own 3x3 conv + ELU feature
//! extractor, and stage `i` of the [`Sarrm`] cascade fuses those features into
//! the running depth, lowest frequency first.

mod backbone;
mod checkpoint;
mod config;
mod sarrm;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use backbone::Backbone;
pub use checkpoint::{load_checkpoint, load_checkpoint_unchecked, save_checkpoint};
pub use config::ModelConfig;
pub use sarrm::{Sarrm, SarrmTrace, DEPTH_FLOOR};

use crate::error::{PfnError, Result};
use crate::nn::{self, Conv2d, ConvCache, Param};
use crate::spectral::BandStack;
use crate::tensor::{DepthMap, FeatureMap, RgbImage};

/// All trainable tensors of a network plus the config that shaped them.
///
/// The same type doubles as a gradient container (see [`ModelParams::zeros_like`]).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub backbone: Backbone,
    /// `extractors[i - 1]` serves band `i`.
    pub extractors: Vec<Conv2d>,
    /// `stages[i - 1]` fuses band `i`.
    pub stages: Vec<Sarrm>,
}

/// Builds freshly initialized parameters; deterministic in `config.seed`.
pub fn init_model(config: &ModelConfig) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let backbone = Backbone::new(&config.backbone_channels, config.init_depth, &mut rng);
    let f = config.band_feature_channels;
    let extractors = (0..config.num_stages())
        .map(|_| Conv2d::new(3, f, 3, &mut rng))
        .collect();
    let stages = (0..config.num_stages())
        .map(|_| Sarrm::new(f, config.sarrm_channels, &mut rng))
        .collect();
    Ok(ModelParams {
        config: config.clone(),
        backbone,
        extractors,
        stages,
    })
}

impl ModelParams {
    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config.clone(),
            backbone: self.backbone.zeros_like(),
            extractors: self.extractors.iter().map(Conv2d::zeros_like).collect(),
            stages: self.stages.iter().map(Sarrm::zeros_like).collect(),
        }
    }

    pub fn num_bands(&self) -> usize {
        self.stages.len() + 1
    }

    /// Every tensor with a stable dotted name, in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, &Param)> {
        fn conv<'a>(name: String, c: &'a Conv2d, out: &mut Vec<(String, &'a Param)>) {
            out.push((format!("{name}.weight"), &c.weight));
            out.push((format!("{name}.bias"), &c.bias));
        }
        let mut out = vec![];
        for (i, c) in self.backbone.encoders.iter().enumerate() {
            conv(format!("backbone.enc{i}"), c, &mut out);
        }
        for (i, c) in self.backbone.decoders.iter().enumerate() {
            conv(format!("backbone.dec{i}"), c, &mut out);
        }
        conv("backbone.head".into(), &self.backbone.head, &mut out);
        for (i, c) in self.extractors.iter().enumerate() {
            conv(format!("extractor{}", i + 1), c, &mut out);
        }
        for (i, s) in self.stages.iter().enumerate() {
            let p = format!("sarrm{}", i + 1);
            conv(format!("{p}.conv1"), &s.conv1, &mut out);
            conv(format!("{p}.conv2"), &s.conv2, &mut out);
            conv(format!("{p}.attention"), &s.attention, &mut out);
            conv(format!("{p}.residual"), &s.residual, &mut out);
        }
        out
    }

    /// Mutable tensors in the same order as [`ModelParams::named_tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Param> {
        let mut out: Vec<&mut Param> = vec![];
        let convs = self
            .backbone
            .encoders
            .iter_mut()
            .chain(self.backbone.decoders.iter_mut())
            .chain(std::iter::once(&mut self.backbone.head))
            .chain(self.extractors.iter_mut())
            .chain(self.stages.iter_mut().flat_map(|s| {
                [&mut s.conv1, &mut s.conv2, &mut s.attention, &mut s.residual]
            }));
        for c in convs {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.named_tensors()
            .iter()
            .all(|(_, p)| p.data.iter().all(|v| v.is_finite()))
    }

    /// Copy reconfigured for another resolution (weights shared, cut-offs rescaled).
    pub fn at_resolution(&self, height: usize, width: usize) -> Self {
        Self {
            config: self.config.at_resolution(height, width),
            ..self.clone()
        }
    }
}

/// Total number of scalar parameters.
pub fn param_count(params: &ModelParams) -> usize {
    params.named_tensors().iter().map(|(_, p)| p.len()).sum()
}

fn check_input(image: &RgbImage, params: &ModelParams, what: &str) -> Result<()> {
    if image.channels() != 3 {
        return Err(PfnError::ShapeMismatch(format!(
            "{what} has {} channels, expected 3",
            image.channels()
        )));
    }
    if image.dims() != params.config.input_size {
        return Err(PfnError::ShapeMismatch(format!(
            "{what} is {:?}, model expects {:?}",
            image.dims(),
            params.config.input_size
        )));
    }
    if !image.is_finite() {
        return Err(PfnError::NonFinite(what.into()));
    }
    Ok(())
}

/// Blur depth from the low-frequency band.
pub fn backbone_forward(low_band: &RgbImage, params: &ModelParams) -> Result<DepthMap> {
    check_input(low_band, params, "low band")?;
    Ok(params.backbone.infer(low_band))
}

fn check_stage(stage_index: usize, params: &ModelParams) -> Result<()> {
    if stage_index == 0 || stage_index >= params.num_bands() {
        return Err(PfnError::InvalidArgument(format!(
            "stage index {stage_index} outside [1, {})",
            params.num_bands()
        )));
    }
    Ok(())
}

/// Features of band `stage_index` (3x3 conv + ELU).
pub fn band_feature_extract(
    band: &RgbImage,
    stage_index: usize,
    params: &ModelParams,
) -> Result<FeatureMap> {
    check_stage(stage_index, params)?;
    check_input(band, params, "band")?;
    let (pre, _) = params.extractors[stage_index - 1].forward(band);
    Ok(nn::elu(&pre))
}

/// One refinement stage.
pub fn sarrm_forward(
    depth_in: &DepthMap,
    features: &FeatureMap,
    stage_index: usize,
    params: &ModelParams,
) -> Result<DepthMap> {
    Ok(sarrm_forward_traced(depth_in, features, stage_index, params)?.0)
}

/// [`sarrm_forward`] that also returns the attention map and residual.
pub fn sarrm_forward_traced(
    depth_in: &DepthMap,
    features: &FeatureMap,
    stage_index: usize,
    params: &ModelParams,
) -> Result<(DepthMap, SarrmTrace)> {
    check_stage(stage_index, params)?;
    if depth_in.channels() != 1 || depth_in.dims() != features.dims() {
        return Err(PfnError::ShapeMismatch(format!(
            "depth {}x{:?} vs features {:?}",
            depth_in.channels(),
            depth_in.dims(),
            features.dims()
        )));
    }
    let stage = &params.stages[stage_index - 1];
    if features.channels() != stage.conv1.cin() - 1 {
        return Err(PfnError::ShapeMismatch(format!(
            "{} feature channels, stage expects {}",
            features.channels(),
            stage.conv1.cin() - 1
        )));
    }
    Ok(stage.forward(depth_in, features))
}

/// Everything the backward pass needs from one forward pass.
pub struct PfnTrace {
    backbone: backbone::BackboneCache,
    /// Backbone output before any refinement.
    pub blur_depth: DepthMap,
    extractors: Vec<(ConvCache, FeatureMap)>,
    stages: Vec<SarrmTrace>,
}

fn check_stack(stack: &BandStack<f64>, params: &ModelParams) -> Result<()> {
    if stack.num_bands() != params.num_bands() {
        return Err(PfnError::ShapeMismatch(format!(
            "stack has {} bands, model has {}",
            stack.num_bands(),
            params.num_bands()
        )));
    }
    for (i, band) in stack.bands.iter().enumerate() {
        check_input(band, params, &format!("band {i}"))?;
    }
    Ok(())
}

/// Full cascade: backbone on band 0, then one refinement per higher band.
pub fn pfn_forward(stack: &BandStack<f64>, params: &ModelParams) -> Result<DepthMap> {
    check_stack(stack, params)?;
    let mut depth = params.backbone.infer(&stack.bands[0]);
    for (i, (ext, stage)) in params.extractors.iter().zip(&params.stages).enumerate() {
        let feat = nn::elu(&ext.apply(&stack.bands[i + 1]));
        depth = stage.forward(&depth, &feat).0;
    }
    Ok(depth)
}

pub fn pfn_forward_traced(
    stack: &BandStack<f64>,
    params: &ModelParams,
) -> Result<(DepthMap, PfnTrace)> {
    check_stack(stack, params)?;
    let (blur_depth, bb_cache) = params.backbone.forward(&stack.bands[0]);
    let mut depth = blur_depth.clone();
    let mut extractors = Vec::with_capacity(params.stages.len());
    let mut stages = Vec::with_capacity(params.stages.len());
    for (i, (ext, stage)) in params.extractors.iter().zip(&params.stages).enumerate() {
        let (pre, cache) = ext.forward(&stack.bands[i + 1]);
        let feat = nn::elu(&pre);
        let (next, trace) = stage.forward(&depth, &feat);
        depth = next;
        extractors.push((cache, feat));
        stages.push(trace);
    }
    Ok((
        depth,
        PfnTrace {
            backbone: bb_cache,
            blur_depth,
            extractors,
            stages,
        },
    ))
}

/// Gradient of a scalar loss w.r.t. every parameter, given `dL/d(depth)`.
pub fn pfn_backward(params: &ModelParams, trace: &PfnTrace, grad_depth: &DepthMap) -> ModelParams {
    let mut grads = params.zeros_like();
    let mut g = grad_depth.clone();
    for i in (0..params.stages.len()).rev() {
        let (g_depth, mut g_feat) =
            params.stages[i].backward(&trace.stages[i], &g, &mut grads.stages[i]);
        let (cache, feat) = &trace.extractors[i];
        nn::elu_backward(feat, &mut g_feat);
        params.extractors[i].backward(cache, &g_feat, &mut grads.extractors[i], false);
        g = g_depth;
    }
    params
        .backbone
        .backward(&trace.backbone, &g, &mut grads.backbone, false);
    grads
}

/// Gradient of a scalar loss w.r.t. the backbone parameters and its input.
pub fn backbone_backward(
    params: &ModelParams,
    low_band: &RgbImage,
    grad_depth: &DepthMap,
) -> Result<(Backbone, RgbImage)> {
    check_input(low_band, params, "low band")?;
    let (_, cache) = params.backbone.forward(low_band);
    let mut grads = params.backbone.zeros_like();
    let gin = params
        .backbone
        .backward(&cache, grad_depth, &mut grads, true)
        .expect("input grad requested");
    Ok((grads, gin))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{divide_bands, CutoffSchedule};
    use rand::Rng;

    fn small_config(schedule: Vec<f64>) -> ModelConfig {
        ModelConfig {
            input_size: (16, 16),
            schedule: CutoffSchedule::new(schedule).unwrap(),
            backbone_channels: vec![4, 6],
            sarrm_channels: 4,
            band_feature_channels: 3,
            seed: 7,
            init_depth: 3.0,
        }
    }

    fn random_image(h: usize, w: usize, seed: u64) -> RgbImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RgbImage::from_fn(3, h, w, |_, _, _| rng.gen())
    }

    #[test]
    fn init_is_deterministic() {
        let c = small_config(vec![1.0, 3.0]);
        assert_eq!(init_model(&c).unwrap(), init_model(&c).unwrap());
        let mut c2 = c.clone();
        c2.seed = 8;
        assert_ne!(init_model(&c).unwrap(), init_model(&c2).unwrap());
    }

    #[test]
    fn five_band_config_has_four_stages() {
        let p = init_model(&ModelConfig::default()).unwrap();
        assert_eq!(p.num_bands(), 5);
        assert_eq!(p.stages.len(), 4);
        assert_eq!(p.extractors.len(), 4);
    }

    #[test]
    fn residual_finals_start_at_zero() {
        let p = init_model(&ModelConfig::default()).unwrap();
        for s in &p.stages {
            assert!(s.residual.weight.data.iter().all(|&v| v == 0.0));
            assert!(s.residual.bias.data.iter().all(|&v| v == 0.0));
        }
        assert!(p.is_finite());
    }

    #[test]
    fn backbone_contract() {
        let c = small_config(vec![]);
        let p = init_model(&c).unwrap();
        let img = random_image(16, 16, 1);
        let d = backbone_forward(&img, &p).unwrap();
        assert_eq!((d.channels(), d.dims()), (1, (16, 16)));
        assert!(d.data().iter().all(|&v| v > 0.0));
        let mut bad = img.clone();
        bad.data_mut()[5] = f64::NAN;
        assert!(matches!(backbone_forward(&bad, &p), Err(PfnError::NonFinite(_))));
        assert!(backbone_forward(&random_image(8, 16, 1), &p).is_err());
    }

    #[test]
    fn inference_matches_traced_forward() {
        let mut c = small_config(vec![1.0, 3.0, 6.0]);
        c.backbone_channels = vec![4, 6, 5];
        let mut p = init_model(&c).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for t in p.tensors_mut() {
            for v in &mut t.data {
                *v += rng.gen_range(-0.05..0.05);
            }
        }
        let img = random_image(16, 16, 2);
        let stack = divide_bands(&img, &c.schedule).unwrap();
        assert_eq!(pfn_forward(&stack, &p).unwrap(), pfn_forward_traced(&stack, &p).unwrap().0);
        assert_eq!(
            backbone_forward(&stack.bands[0], &p).unwrap(),
            p.backbone.forward(&stack.bands[0]).0
        );
    }

    #[test]
    fn zero_band_gives_bias_response() {
        let p = init_model(&small_config(vec![2.0])).unwrap();
        let f = band_feature_extract(&RgbImage::zeros(3, 16, 16), 1, &p).unwrap();
        assert_eq!(f.channels(), 3);
        for c in 0..3 {
            let b = p.extractors[0].bias.data[c];
            let expect = if b > 0.0 { b } else { b.exp_m1() };
            assert!(f.channel(c).iter().all(|&v| v == expect));
        }
        assert!(band_feature_extract(&RgbImage::zeros(3, 16, 16), 0, &p).is_err());
        assert!(band_feature_extract(&RgbImage::zeros(3, 16, 16), 2, &p).is_err());
    }

    #[test]
    fn sarrm_is_identity_at_init_and_attention_in_range() {
        let p = init_model(&small_config(vec![2.0])).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let depth = DepthMap::from_fn(1, 16, 16, |_, _, _| rng.gen_range(0.5..10.0));
        let feat = FeatureMap::from_fn(3, 16, 16, |_, _, _| rng.gen_range(-2.0..2.0));
        let (out, trace) = sarrm_forward_traced(&depth, &feat, 1, &p).unwrap();
        assert_eq!(out, depth);
        assert!(trace.attention.data().iter().all(|&a| a > 0.0 && a < 1.0));
        assert!(sarrm_forward(&depth, &FeatureMap::zeros(3, 8, 16), 1, &p).is_err());
    }

    #[test]
    fn single_band_cascade_is_backbone() {
        let p = init_model(&small_config(vec![])).unwrap();
        let img = random_image(16, 16, 2);
        let stack = divide_bands(&img, &p.config.schedule).unwrap();
        assert_eq!(pfn_forward(&stack, &p).unwrap(), backbone_forward(&img, &p).unwrap());
    }

    #[test]
    fn fresh_cascade_equals_backbone_on_band0() {
        let p = init_model(&small_config(vec![1.0, 2.0, 4.0, 6.0])).unwrap();
        let stack = divide_bands(&random_image(16, 16, 4), &p.config.schedule).unwrap();
        let full = pfn_forward(&stack, &p).unwrap();
        assert_eq!(full, backbone_forward(&stack.bands[0], &p).unwrap());
    }

    #[test]
    fn band_count_mismatch_rejected() {
        let p = init_model(&small_config(vec![1.0, 2.0])).unwrap();
        let stack = divide_bands(&random_image(16, 16, 4), &CutoffSchedule::empty()).unwrap();
        assert!(pfn_forward(&stack, &p).is_err());
    }

    fn conv_params(cin: usize, cout: usize, k: usize) -> usize {
        k * k * cin * cout + cout
    }

    #[test]
    fn param_count_matches_layer_arithmetic() {
        let c = small_config(vec![2.0]);
        let p = init_model(&c).unwrap();
        let expect = conv_params(3, 4, 3)
            + conv_params(4, 6, 3)
            + conv_params(10, 4, 3)
            + conv_params(4, 1, 1)
            + conv_params(3, 3, 3)
            + conv_params(4, 4, 3)
            + conv_params(4, 4, 3)
            + conv_params(4, 1, 1)
            + conv_params(4, 1, 3);
        assert_eq!(param_count(&p), expect);

        let mut c2 = c.clone();
        c2.seed = 99;
        assert_eq!(param_count(&init_model(&c2).unwrap()), expect);
    }

    #[test]
    fn doubling_widths_quadruples_hidden_kernels() {
        // Kernel weights between two hidden layers scale with C_in * C_out.
        let c = small_config(vec![2.0]);
        let mut d = c.clone();
        d.backbone_channels = vec![8, 12];
        d.sarrm_channels = 8;
        let (p, q) = (init_model(&c).unwrap(), init_model(&d).unwrap());
        let enc1 = |m: &ModelParams| m.backbone.encoders[1].weight.len();
        let conv2 = |m: &ModelParams| m.stages[0].conv2.weight.len();
        assert_eq!(enc1(&q), 4 * enc1(&p));
        assert_eq!(conv2(&q), 4 * conv2(&p));
        assert_eq!(enc1(&p), 9 * 4 * 6);
    }

    #[test]
    fn tensor_views_agree() {
        let mut p = init_model(&small_config(vec![1.0, 2.0])).unwrap();
        let shapes: Vec<Vec<usize>> = p.named_tensors().iter().map(|(_, t)| t.shape.clone()).collect();
        let names: Vec<String> = p.named_tensors().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names.len(), shapes.len());
        assert!(names.contains(&"sarrm2.attention.weight".to_string()));
        let mut_shapes: Vec<Vec<usize>> = p.tensors_mut().iter().map(|t| t.shape.clone()).collect();
        assert_eq!(shapes, mut_shapes);
    }
}
