//! Cost accounting and GradCAM heatmaps.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::imageproc::{self, Image};
use crate::model::{bundle_files, HeadParams, HeadSpec, Model, ModelGraph};
use crate::tensor::{self, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    Depthwise,
    BatchNorm,
    Dense,
}

impl LayerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Conv => "conv",
            LayerKind::Depthwise => "depthwise",
            LayerKind::BatchNorm => "batchnorm",
            LayerKind::Dense => "dense",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerCost {
    pub name: String,
    pub kind: LayerKind,
    pub params: u64,
    /// Multiply-accumulates per image.
    pub macs: u64,
    pub backbone: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub layers: Vec<LayerCost>,
    pub size_bytes: Option<u64>,
}

impl CostReport {
    pub fn total_params(&self) -> u64 {
        self.layers.iter().map(|l| l.params).sum()
    }

    pub fn backbone_params(&self) -> u64 {
        self.layers.iter().filter(|l| l.backbone).map(|l| l.params).sum()
    }

    pub fn head_params(&self) -> u64 {
        self.total_params() - self.backbone_params()
    }

    /// Floating-point operations under the two-per-parameter convention.
    pub fn flops_paper(&self) -> u64 {
        2 * self.total_params()
    }

    pub fn mflops_paper(&self) -> f64 {
        self.flops_paper() as f64 / 1e6
    }

    pub fn total_macs(&self) -> u64 {
        self.layers.iter().map(|l| l.macs).sum()
    }

    pub fn size_mb(&self) -> Option<f64> {
        self.size_bytes.map(|b| b as f64 / (1u64 << 20) as f64)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<28} {:<10} {:>12} {:>14}", "layer", "kind", "params", "macs");
        for l in &self.layers {
            let _ = writeln!(s, "{:<28} {:<10} {:>12} {:>14}", l.name, l.kind.as_str(), l.params, l.macs);
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "backbone parameters      {:>14}", self.backbone_params());
        let _ = writeln!(s, "head parameters          {:>14}", self.head_params());
        let _ = writeln!(s, "total parameters         {:>14}", self.total_params());
        let _ = writeln!(s, "FLOPs (2 x params, M)    {:>14.2}", self.mflops_paper());
        let _ = writeln!(s, "true MACs (M)            {:>14.2}", self.total_macs() as f64 / 1e6);
        if let (Some(b), Some(mb)) = (self.size_bytes, self.size_mb()) {
            let _ = writeln!(s, "serialized size          {b:>14} bytes ({mb:.2} MB)");
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,kind,params,macs\n");
        for l in &self.layers {
            let _ = writeln!(s, "{},{},{},{}", l.name, l.kind.as_str(), l.params, l.macs);
        }
        s
    }
}

/// Per-layer parameter and MAC counts for the backbone in `graph` and a
/// head of extents `head`. Batch-normalization layers count their running
/// statistics.
pub fn parameter_count(graph: &ModelGraph, head: &HeadSpec) -> CostReport {
    let mut layers = Vec::new();
    for conv in graph.conv_layers() {
        let kind = match conv.kind {
            crate::model::ConvKind::Full => LayerKind::Conv,
            crate::model::ConvKind::Depthwise => LayerKind::Depthwise,
        };
        layers.push(LayerCost {
            name: conv.name.clone(),
            kind,
            params: conv.kernel_params() as u64,
            macs: conv.macs(),
            backbone: true,
        });
        layers.push(bn_cost(conv.bn_name(), conv.cout, true));
    }
    let dense = |name: &str, f: usize, u: usize| LayerCost {
        name: name.into(),
        kind: LayerKind::Dense,
        params: (f * u + u) as u64,
        macs: (f * u) as u64,
        backbone: false,
    };
    layers.push(bn_cost("head_bn1".into(), head.features, false));
    layers.push(dense("head_dense1", head.features, head.hidden1));
    layers.push(dense("head_dense2", head.hidden1, head.hidden2));
    layers.push(bn_cost("head_bn2".into(), head.hidden2, false));
    layers.push(dense("head_out", head.hidden2, head.classes));
    CostReport {
        layers,
        size_bytes: None,
    }
}

fn bn_cost(name: String, channels: usize, backbone: bool) -> LayerCost {
    LayerCost {
        name,
        kind: LayerKind::BatchNorm,
        params: 4 * channels as u64,
        macs: 0,
        backbone,
    }
}

/// Paper-convention FLOPs in millions.
pub fn flops_paper(graph: &ModelGraph, head: &HeadSpec) -> f64 {
    parameter_count(graph, head).mflops_paper()
}

/// Multiply-accumulates per image at the graph's input side.
pub fn true_macs(graph: &ModelGraph, head: &HeadSpec) -> u64 {
    parameter_count(graph, head).total_macs()
}

/// Bytes on disk: a single file, or the weight files of a bundle directory.
pub fn model_size(path: &Path) -> Result<u64> {
    let meta = std::fs::metadata(path).map_err(|e| Error::io(path, e))?;
    if !meta.is_dir() {
        return Ok(meta.len());
    }
    bundle_files()
        .iter()
        .map(|f| {
            let p = path.join(f);
            std::fs::metadata(&p).map(|m| m.len()).map_err(|e| Error::io(&p, e))
        })
        .sum()
}

/// Class-activation map over the final convolution output.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub class_id: usize,
    /// `map_side²` weights in `[0, 1]`.
    pub coarse: Vec<f32>,
    pub map_side: usize,
    /// `side²` weights in `[0, 1]`.
    pub fine: Vec<f32>,
    pub side: usize,
}

fn normalize_max(v: &mut [f32]) {
    let max = v.iter().copied().fold(0.0f32, f32::max);
    if max > 0.0 {
        v.iter_mut().for_each(|x| *x /= max);
    }
}

/// Raw (unnormalized) `ReLU(Σ_k α_k A_k)` for a `1×h×w×C` activation map,
/// with `α_k` the spatial mean of `∂logit/∂A_k` through global average
/// pooling and `head`.
pub fn class_activation(map: &Tensor, head: &HeadParams, class_id: usize) -> Result<Vec<f32>> {
    let (n, h, w, c) = map.nhwc()?;
    if n != 1 {
        return Err(Error::shape("gradcam map", map.dims(), &[1, h, w, c]));
    }
    let classes = head.spec().classes;
    if class_id >= classes {
        return Err(Error::Config(format!("target class {class_id} outside 0..{classes}")));
    }
    let pooled = tensor::global_avg_pool(map)?.reshape(vec![1, c])?;
    let fwd = head.infer(&pooled)?;
    let mut dlogits = vec![0.0; classes];
    dlogits[class_id] = 1.0;
    let (_, dfeat) = head.backward(&fwd.cache, &dlogits)?;
    let alpha: Vec<f32> = dfeat.iter().map(|g| g / (h * w) as f32).collect();
    Ok(map
        .data()
        .chunks_exact(c)
        .map(|px| px.iter().zip(&alpha).map(|(a, w)| a * w).sum::<f32>().max(0.0))
        .collect())
}

/// GradCAM for an already enhanced image.
pub fn gradcam(model: &Model, img: &Image, class_id: usize) -> Result<Heatmap> {
    let input = model.input_tensor(img);
    let map = model.backbone.forward_map(&input)?;
    let map_side = map.dims()[1];
    let mut coarse = class_activation(&map, &model.head, class_id)?;
    normalize_max(&mut coarse);
    let side = model.manifest.input_side;
    let mut fine = imageproc::resize_bilinear(&coarse, map_side, map_side, 1, side, side);
    normalize_max(&mut fine);
    Ok(Heatmap {
        class_id,
        coarse,
        map_side,
        fine,
        side,
    })
}

/// Blue → cyan → yellow → red.
pub fn jet(v: f32) -> [u8; 3] {
    let v = v.clamp(0.0, 1.0);
    let ch = |centre: f32| ((1.5 - (4.0 * v - centre).abs()).clamp(0.0, 1.0) * 255.0).round() as u8;
    [ch(3.0), ch(2.0), ch(1.0)]
}

pub fn heatmap_image(h: &Heatmap) -> Image {
    Image::from_fn(h.side, h.side, |x, y| jet(h.fine[y * h.side + x]))
}

/// Alpha-blends the colored heatmap over `img` resized to the heatmap side.
pub fn overlay(img: &Image, h: &Heatmap, alpha: f32) -> Image {
    let src: Vec<f32> = img.pixels().iter().map(|&v| v as f32).collect();
    let base = imageproc::resize_bilinear(&src, img.width(), img.height(), 3, h.side, h.side);
    Image::from_fn(h.side, h.side, |x, y| {
        let i = y * h.side + x;
        let c = jet(h.fine[i]);
        let mut out = [0u8; 3];
        for k in 0..3 {
            out[k] = ((1.0 - alpha) * base[i * 3 + k] + alpha * c[k] as f32).round().clamp(0.0, 255.0) as u8;
        }
        out
    })
}
