use std::path::Path;

use rand::Rng;

use super::{ConvKind, ConvLayer, ModelGraph, BN_EPSILON};
use crate::error::{Error, Result};
use crate::random::stream;
use crate::tensor::{self, Padding, Tensor};
use crate::weights::WeightStore;

pub fn load_weights(path: &Path) -> Result<WeightStore> {
    WeightStore::load(path)
}

/// A convolution with its batch normalization folded into a per-channel
/// scale and shift.
#[derive(Debug, Clone)]
struct FoldedConv {
    kernel: Tensor,
    scale: Vec<f32>,
    shift: Vec<f32>,
}

impl FoldedConv {
    fn new(layer: &ConvLayer, weights: &WeightStore) -> Result<Self> {
        let kernel = weights.require(&layer.kernel_name(), &layer.kernel_dims())?.clone();
        let bn = layer.bn_name();
        let get = |f: &str| weights.require(&format!("{bn}.{f}"), &[layer.cout]).map(|t| t.data());
        let (gamma, beta, mean, var) = (get("gamma")?, get("beta")?, get("moving_mean")?, get("moving_variance")?);
        if var.iter().any(|&v| v < 0.0) {
            return Err(Error::Numeric(format!("{bn}.moving_variance has negative entries")));
        }
        let scale: Vec<f32> = gamma.iter().zip(var).map(|(g, v)| g / (v + BN_EPSILON).sqrt()).collect();
        let shift = beta.iter().zip(mean).zip(&scale).map(|((b, m), s)| b - m * s).collect();
        Ok(FoldedConv { kernel, scale, shift })
    }

    fn apply(&self, layer: &ConvLayer, x: &Tensor) -> Result<Tensor> {
        let mut y = match layer.kind {
            ConvKind::Full => tensor::conv2d(x, &self.kernel, None, layer.stride, Padding::Same)?,
            ConvKind::Depthwise => tensor::depthwise_conv2d(x, &self.kernel, layer.stride, Padding::Same)?,
        };
        tensor::scale_shift_inplace(&mut y, &self.scale, &self.shift, layer.relu6);
        Ok(y)
    }
}

/// Frozen feature extractor ready for inference.
#[derive(Debug, Clone)]
pub struct Backbone {
    graph: ModelGraph,
    layers: Vec<FoldedConv>,
}

impl Backbone {
    /// Resolves every parameter of `graph` in `weights`. Missing names are all
    /// reported together; unused arrays are rejected.
    pub fn new(graph: &ModelGraph, weights: &WeightStore) -> Result<Self> {
        weights.check_against(&graph.backbone_param_shapes())?;
        let layers = graph
            .conv_layers()
            .into_iter()
            .map(|l| FoldedConv::new(l, weights))
            .collect::<Result<_>>()?;
        Ok(Backbone {
            graph: graph.clone(),
            layers,
        })
    }

    pub fn graph(&self) -> &ModelGraph {
        &self.graph
    }

    fn check_input(&self, batch: &Tensor) -> Result<usize> {
        let side = self.graph.input_side;
        match *batch.dims() {
            [n, h, w, 3] if h == side && w == side && n > 0 => Ok(n),
            _ => Err(Error::shape("forward_features", batch.dims(), &[0, side, side, 3])),
        }
    }

    fn forward_one(&self, image: Tensor) -> Result<Tensor> {
        let g = &self.graph;
        let mut idx = 0;
        let mut next = |x: &Tensor, layer: &ConvLayer| {
            let y = self.layers[idx].apply(layer, x);
            idx += 1;
            y
        };
        let mut x = next(&image, &g.stem)?;
        for block in &g.blocks {
            let mut h = match &block.expand {
                Some(e) => next(&x, e)?,
                None => x.clone(),
            };
            h = next(&h, &block.depthwise)?;
            h = next(&h, &block.project)?;
            x = if block.residual { tensor::residual_add(&x, &h)? } else { h };
        }
        next(&x, &g.final_conv)
    }

    /// Final convolution output, `N×s×s×1280`.
    pub fn forward_map(&self, batch: &Tensor) -> Result<Tensor> {
        let n = self.check_input(batch)?;
        let per = batch.len() / n;
        let mut out = Vec::new();
        let mut dims = Vec::new();
        for i in 0..n {
            let img = Tensor::new(
                vec![1, self.graph.input_side, self.graph.input_side, 3],
                batch.data()[i * per..(i + 1) * per].to_vec(),
            )?;
            let map = self.forward_one(img)?;
            dims = map.dims().to_vec();
            out.extend_from_slice(map.data());
        }
        dims[0] = n;
        Tensor::new(dims, out)
    }

    /// Globally pooled features, `N×1280`.
    pub fn forward_features(&self, batch: &Tensor) -> Result<Tensor> {
        let map = self.forward_map(batch)?;
        let pooled = tensor::global_avg_pool(&map)?;
        let n = pooled.dims()[0];
        let c = pooled.dims()[3];
        pooled.reshape(vec![n, c])
    }
}

pub fn forward_features(graph: &ModelGraph, weights: &WeightStore, batch: &Tensor) -> Result<Tensor> {
    Backbone::new(graph, weights)?.forward_features(batch)
}

/// Random He-uniform kernels with identity batch normalization, for
/// exercising the pipeline when no pretrained weights are at hand.
pub fn init_backbone_weights(graph: &ModelGraph, seed: u64) -> WeightStore {
    let mut rng = stream(seed, &[0xbacb]);
    let mut store = WeightStore::new();
    for layer in graph.conv_layers() {
        let dims = layer.kernel_dims();
        let fan_in = match layer.kind {
            ConvKind::Full => layer.kernel * layer.kernel * layer.cin,
            ConvKind::Depthwise => layer.kernel * layer.kernel,
        };
        let gain = if layer.relu6 { 6.0 } else { 3.0 };
        let limit = (gain / fan_in as f64).sqrt() as f32;
        let n: usize = dims.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-limit..=limit)).collect();
        store.insert(layer.kernel_name(), Tensor::new(dims, data).expect("dims match data"));
        let bn = layer.bn_name();
        for (field, value) in [("gamma", 1.0), ("beta", 0.0), ("moving_mean", 0.0), ("moving_variance", 1.0)] {
            store.insert(format!("{bn}.{field}"), Tensor::filled(&[layer.cout], value));
        }
    }
    store
}
