//! MobileNetV2 graph description, frozen backbone, classifier head and the
//! on-disk model bundle.

mod backbone;
mod bundle;
mod golden;
mod head;

pub use backbone::{forward_features, init_backbone_weights, load_weights, Backbone};
pub use bundle::{bundle_files, predict, BACKBONE_FILE, HEAD_FILE, MANIFEST_FILE, Bundle, BundleManifest, Model, Prediction};
pub use golden::{check_parity, FixtureParity, ParityReport};
pub use head::{
    forward_head, BatchNormParams, DenseParams, HeadCache, HeadForward, HeadGradients, HeadParams, Mode,
    TRAINABLE_NAMES,
};

/// Input side length of the network.
pub const INPUT_SIDE: usize = 256;
/// Width of the pooled backbone feature.
pub const FEATURE_DIM: usize = 1280;
/// Epsilon shared by every batch-normalization layer.
pub const BN_EPSILON: f32 = 1e-3;

/// One sequence of identical inverted-residual blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BottleneckSpec {
    pub expansion: usize,
    pub out_channels: usize,
    pub repeats: usize,
    pub first_stride: usize,
}

const fn seq(expansion: usize, out_channels: usize, repeats: usize, first_stride: usize) -> BottleneckSpec {
    BottleneckSpec {
        expansion,
        out_channels,
        repeats,
        first_stride,
    }
}

pub const MOBILENET_V2_SEQUENCES: [BottleneckSpec; 7] = [
    seq(1, 16, 1, 1),
    seq(6, 24, 2, 2),
    seq(6, 32, 3, 2),
    seq(6, 64, 4, 2),
    seq(6, 96, 3, 1),
    seq(6, 160, 3, 2),
    seq(6, 320, 1, 1),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvKind {
    Full,
    Depthwise,
}

/// A bias-free convolution followed by batch normalization and, unless it is
/// a projection, ReLU6.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvLayer {
    pub name: String,
    pub kind: ConvKind,
    pub kernel: usize,
    pub cin: usize,
    pub cout: usize,
    pub stride: usize,
    pub relu6: bool,
    pub in_side: usize,
    pub out_side: usize,
}

impl ConvLayer {
    fn new(name: String, kind: ConvKind, kernel: usize, cin: usize, cout: usize, stride: usize, relu6: bool, in_side: usize) -> Self {
        ConvLayer {
            name,
            kind,
            kernel,
            cin,
            cout,
            stride,
            relu6,
            in_side,
            out_side: in_side.div_ceil(stride),
        }
    }

    pub fn kernel_name(&self) -> String {
        format!("{}.kernel", self.name)
    }

    pub fn bn_name(&self) -> String {
        format!("{}_bn", self.name)
    }

    pub fn kernel_dims(&self) -> Vec<usize> {
        match self.kind {
            ConvKind::Full => vec![self.kernel, self.kernel, self.cin, self.cout],
            ConvKind::Depthwise => vec![self.kernel, self.kernel, self.cout],
        }
    }

    /// Kernel plus the four batch-norm vectors, in storage naming.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let bn = self.bn_name();
        let mut v = vec![(self.kernel_name(), self.kernel_dims())];
        for field in ["gamma", "beta", "moving_mean", "moving_variance"] {
            v.push((format!("{bn}.{field}"), vec![self.cout]));
        }
        v
    }

    pub fn kernel_params(&self) -> usize {
        self.kernel_dims().iter().product()
    }

    /// Multiply-accumulates for one image.
    pub fn macs(&self) -> u64 {
        let per_pixel = match self.kind {
            ConvKind::Full => self.kernel * self.kernel * self.cin * self.cout,
            ConvKind::Depthwise => self.kernel * self.kernel * self.cout,
        };
        (per_pixel * self.out_side * self.out_side) as u64
    }
}

/// Expand (1×1) → depthwise 3×3 → linear projection (1×1).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BottleneckBlock {
    pub index: usize,
    pub expansion: usize,
    pub expand: Option<ConvLayer>,
    pub depthwise: ConvLayer,
    pub project: ConvLayer,
    pub residual: bool,
}

impl BottleneckBlock {
    pub fn cin(&self) -> usize {
        self.expand.as_ref().unwrap_or(&self.depthwise).cin
    }

    pub fn cout(&self) -> usize {
        self.project.cout
    }

    pub fn stride(&self) -> usize {
        self.depthwise.stride
    }

    pub fn layers(&self) -> impl Iterator<Item = &ConvLayer> {
        self.expand.iter().chain([&self.depthwise, &self.project])
    }
}

/// Extents of the classifier head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadSpec {
    pub features: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub classes: usize,
}

impl HeadSpec {
    pub fn new(features: usize, classes: usize) -> Self {
        HeadSpec {
            features,
            hidden1: 128,
            hidden2: 64,
            classes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelGraph {
    pub input_side: usize,
    pub stem: ConvLayer,
    pub blocks: Vec<BottleneckBlock>,
    pub final_conv: ConvLayer,
    pub head: HeadSpec,
}

/// The canonical network: 256×256 input, 10 classes.
pub fn build_mobilenet_v2() -> ModelGraph {
    build_mobilenet_v2_with(INPUT_SIDE, 10)
}

/// Same topology with a different input side or class count.
pub fn build_mobilenet_v2_with(input_side: usize, classes: usize) -> ModelGraph {
    let stem = ConvLayer::new("stem_conv".into(), ConvKind::Full, 3, 3, 32, 2, true, input_side);
    let mut side = stem.out_side;
    let mut cin = stem.cout;
    let mut blocks = Vec::new();
    for s in MOBILENET_V2_SEQUENCES {
        for r in 0..s.repeats {
            let index = blocks.len();
            let stride = if r == 0 { s.first_stride } else { 1 };
            let hidden = cin * s.expansion;
            let expand = (s.expansion != 1).then(|| {
                ConvLayer::new(format!("block_{index}_expand"), ConvKind::Full, 1, cin, hidden, 1, true, side)
            });
            let depthwise =
                ConvLayer::new(format!("block_{index}_depthwise"), ConvKind::Depthwise, 3, hidden, hidden, stride, true, side);
            let project = ConvLayer::new(
                format!("block_{index}_project"),
                ConvKind::Full,
                1,
                hidden,
                s.out_channels,
                1,
                false,
                depthwise.out_side,
            );
            side = depthwise.out_side;
            blocks.push(BottleneckBlock {
                index,
                expansion: s.expansion,
                expand,
                depthwise,
                project,
                residual: stride == 1 && cin == s.out_channels,
            });
            cin = s.out_channels;
        }
    }
    let final_conv = ConvLayer::new("final_conv".into(), ConvKind::Full, 1, cin, FEATURE_DIM, 1, true, side);
    ModelGraph {
        input_side,
        stem,
        blocks,
        final_conv,
        head: HeadSpec::new(FEATURE_DIM, classes),
    }
}

impl ModelGraph {
    /// Every convolution in execution order.
    pub fn conv_layers(&self) -> Vec<&ConvLayer> {
        let mut v = vec![&self.stem];
        for b in &self.blocks {
            v.extend(b.layers());
        }
        v.push(&self.final_conv);
        v
    }

    pub fn backbone_param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.conv_layers().iter().flat_map(|l| l.param_shapes()).collect()
    }

    /// Spatial side of the final convolution's output.
    pub fn feature_map_side(&self) -> usize {
        self.final_conv.out_side
    }

    pub fn feature_dim(&self) -> usize {
        self.final_conv.cout
    }
}
