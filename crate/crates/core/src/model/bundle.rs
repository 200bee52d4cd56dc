use std::fs;
use std::path::Path;

use super::{build_mobilenet_v2_with, Backbone, HeadParams, ModelGraph};
use crate::error::{Error, Result};
use crate::imageproc::{self, ClaheParams, Image};
use crate::tensor::{argmax, Tensor};
use crate::weights::WeightStore;

pub const BACKBONE_FILE: &str = "backbone.lwts";
pub const HEAD_FILE: &str = "head.lwts";
pub const MANIFEST_FILE: &str = "manifest.txt";

/// Weight files whose sizes make up a bundle's model size.
pub fn bundle_files() -> [&'static str; 2] {
    [BACKBONE_FILE, HEAD_FILE]
}

/// Everything besides weights needed to reproduce predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct BundleManifest {
    pub class_names: Vec<String>,
    pub input_side: usize,
    /// CLAHE applied to every image before resizing; `None` when the inputs
    /// are expected to be enhanced already.
    pub clahe: Option<ClaheParams>,
    pub dropout_rate: f32,
}

impl BundleManifest {
    pub fn to_text(&self) -> String {
        let mut s = String::from("format=leaflite-bundle\nversion=1\n");
        s += &format!("input_side={}\n", self.input_side);
        s += &format!("classes={}\n", self.class_names.len());
        for (i, name) in self.class_names.iter().enumerate() {
            s += &format!("class.{i}={name}\n");
        }
        match &self.clahe {
            Some(p) => {
                s += "clahe=on\n";
                s += &format!("clahe_tiles={}x{}\n", p.tiles_x, p.tiles_y);
                s += &format!("clahe_clip={}\n", p.clip_beta);
                s += &format!("clahe_bins={}\n", p.bins);
            }
            None => s += "clahe=off\n",
        }
        s += &format!("dropout={}\n", self.dropout_rate);
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |m: String| Error::Format {
            what: "bundle manifest",
            message: m,
        };
        let mut kv = std::collections::BTreeMap::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("line {}: expected key=value", no + 1)))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| kv.get(k).ok_or_else(|| bad(format!("missing key {k}")));
        let num = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|_| bad(format!("{k} is not a number"))) };
        if get("format")? != "leaflite-bundle" || get("version")? != "1" {
            return Err(bad("unsupported format or version".into()));
        }
        let classes = num("classes")? as usize;
        let class_names = (0..classes)
            .map(|i| get(&format!("class.{i}")).cloned())
            .collect::<Result<Vec<_>>>()?;
        let clahe = match get("clahe")?.as_str() {
            "off" => None,
            "on" => {
                let tiles = get("clahe_tiles")?;
                let (tx, ty) = tiles
                    .split_once('x')
                    .and_then(|(a, b)| Some((a.parse().ok()?, b.parse().ok()?)))
                    .ok_or_else(|| bad(format!("bad clahe_tiles {tiles}")))?;
                let p = ClaheParams {
                    tiles_x: tx,
                    tiles_y: ty,
                    clip_beta: num("clahe_clip")?,
                    bins: num("clahe_bins")? as usize,
                };
                p.validate()?;
                Some(p)
            }
            other => return Err(bad(format!("clahe must be on or off, got {other}"))),
        };
        Ok(BundleManifest {
            class_names,
            input_side: num("input_side")? as usize,
            clahe,
            dropout_rate: num("dropout")? as f32,
        })
    }
}

/// Backbone weights, head and manifest, stored as one directory.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub manifest: BundleManifest,
    pub backbone: WeightStore,
    pub head: HeadParams,
}

impl Bundle {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.backbone.save(&dir.join(BACKBONE_FILE))?;
        self.head.to_store().save(&dir.join(HEAD_FILE))?;
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, self.manifest.to_text()).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest = BundleManifest::parse(&text)?;
        let backbone = WeightStore::load(&dir.join(BACKBONE_FILE))?;
        let head = HeadParams::from_store(&WeightStore::load(&dir.join(HEAD_FILE))?, manifest.dropout_rate)?;
        Ok(Bundle {
            manifest,
            backbone,
            head,
        })
    }
}

/// A loaded bundle ready for inference.
#[derive(Debug, Clone)]
pub struct Model {
    pub manifest: BundleManifest,
    pub backbone: Backbone,
    pub head: HeadParams,
}

impl Model {
    pub fn new(manifest: BundleManifest, backbone: &WeightStore, head: HeadParams) -> Result<Self> {
        let graph = build_mobilenet_v2_with(manifest.input_side, manifest.class_names.len());
        let spec = head.spec();
        if spec != graph.head {
            return Err(Error::shape(
                "head",
                &[spec.features, spec.hidden1, spec.hidden2, spec.classes],
                &[graph.head.features, graph.head.hidden1, graph.head.hidden2, graph.head.classes],
            ));
        }
        Ok(Model {
            backbone: Backbone::new(&graph, backbone)?,
            manifest,
            head,
        })
    }

    pub fn from_bundle(bundle: Bundle) -> Result<Self> {
        Self::new(bundle.manifest, &bundle.backbone, bundle.head)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Self::from_bundle(Bundle::load(dir)?)
    }

    pub fn graph(&self) -> &ModelGraph {
        self.backbone.graph()
    }

    /// Applies the bundle's enhancement setting.
    pub fn enhance(&self, img: &Image) -> Result<Image> {
        match &self.manifest.clahe {
            Some(p) => imageproc::clahe(img, p),
            None => Ok(img.clone()),
        }
    }

    /// Resizes and normalizes an (already enhanced) image.
    pub fn input_tensor(&self, img: &Image) -> Tensor {
        imageproc::to_input_tensor(img, self.manifest.input_side)
    }

    pub fn features(&self, img: &Image) -> Result<Tensor> {
        self.backbone.forward_features(&self.input_tensor(img))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class_id: usize,
    pub class_name: String,
    pub probabilities: Vec<f32>,
}

pub fn predict(image_path: &Path, model: &Model) -> Result<Prediction> {
    let img = model.enhance(&Image::load(image_path)?)?;
    let features = model.features(&img)?;
    let out = model.head.infer(&features)?;
    let probabilities = out.probs.row(0).to_vec();
    let class_id = argmax(&probabilities);
    Ok(Prediction {
        class_id,
        class_name: model.manifest.class_names[class_id].clone(),
        probabilities,
    })
}
