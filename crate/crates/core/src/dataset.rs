//! Directory-per-class corpora, stratified 60/20/20 splits and mini-batching.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::random::stream;

/// PlantVillage tomato directories in class-id order, with the labels and
/// per-class image counts of the published corpus.
pub const TOMATO_CLASSES: [(&str, &str, usize); 10] = [
    ("Tomato___Bacterial_spot", "Bacterial Spot", 2127),
    ("Tomato___Early_blight", "Early Blight", 1000),
    ("Tomato___Late_blight", "Late Blight", 1909),
    ("Tomato___Leaf_Mold", "Leaf Mold", 952),
    ("Tomato___Septoria_leaf_spot", "Septoria Leaf Spot", 1771),
    ("Tomato___Spider_mites Two-spotted_spider_mite", "Two-spotted Spider Mites", 1676),
    ("Tomato___Target_Spot", "Target Spot", 1404),
    ("Tomato___Tomato_Yellow_Leaf_Curl_Virus", "Yellow Leaf Curl Virus", 5357),
    ("Tomato___Tomato_mosaic_virus", "Tomato Mosaic Virus", 373),
    ("Tomato___healthy", "Healthy", 1591),
];

/// Human-readable label for a class directory name.
pub fn display_name(dir: &str) -> String {
    TOMATO_CLASSES
        .iter()
        .find(|(d, _, _)| *d == dir)
        .map(|(_, label, _)| label.to_string())
        .unwrap_or_else(|| dir.to_string())
}

pub const MIN_CLASS_SIZE: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetEntry {
    /// Path relative to the dataset root, `<class-dir>/<file>`.
    pub path: PathBuf,
    pub class_id: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetIndex {
    root: PathBuf,
    class_names: Vec<String>,
    entries: Vec<DatasetEntry>,
}

impl DatasetIndex {
    /// Builds an index, sorting entries by path.
    pub fn new(root: PathBuf, class_names: Vec<String>, mut entries: Vec<DatasetEntry>) -> Result<Self> {
        let mut seen = std::collections::BTreeSet::new();
        for name in &class_names {
            if !seen.insert(name) {
                return Err(Error::Dataset(format!("duplicate class name {name}")));
            }
        }
        if let Some(e) = entries.iter().find(|e| e.class_id >= class_names.len()) {
            return Err(Error::Dataset(format!(
                "{} has class id {} but only {} classes exist",
                e.path.display(),
                e.class_id,
                class_names.len()
            )));
        }
        entries.sort_by(|a, b| a.path.cmp(&b.path));
        Ok(DatasetIndex {
            root,
            class_names,
            entries,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn entries(&self) -> &[DatasetEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn absolute(&self, entry: &DatasetEntry) -> PathBuf {
        self.root.join(&entry.path)
    }

    /// Image count per class id.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_names.len()];
        for e in &self.entries {
            counts[e.class_id] += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScanWarning {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct ScanReport {
    pub index: DatasetIndex,
    /// Files that were skipped because they could not be read as images.
    pub warnings: Vec<ScanWarning>,
}

fn sorted_dir(dir: &Path) -> Result<Vec<fs::DirEntry>> {
    let mut items = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(dir, e))?;
    items.sort_by_key(|d| d.file_name());
    Ok(items)
}

fn probe_image(path: &Path) -> std::result::Result<(), String> {
    let reader = image::ImageReader::open(path)
        .and_then(|r| r.with_guessed_format())
        .map_err(|e| e.to_string())?;
    if reader.format().is_none() {
        return Err("unrecognized image format".into());
    }
    reader.into_dimensions().map(|_| ()).map_err(|e| e.to_string())
}

/// Indexes `root/<class>/<image>`; class ids follow lexicographic directory
/// order. Hidden files are ignored; unreadable files become warnings.
pub fn scan_dataset(root: &Path) -> Result<ScanReport> {
    let meta = fs::metadata(root).map_err(|e| Error::io(root, e))?;
    if !meta.is_dir() {
        return Err(Error::Dataset(format!("{} is not a directory", root.display())));
    }
    let mut class_names = Vec::new();
    let mut entries = Vec::new();
    let mut warnings = Vec::new();
    for class_dir in sorted_dir(root)? {
        let name = class_dir.file_name().to_string_lossy().into_owned();
        if name.starts_with('.') || !class_dir.path().is_dir() {
            continue;
        }
        let class_id = class_names.len();
        class_names.push(name.clone());
        for file in sorted_dir(&class_dir.path())? {
            let fname = file.file_name().to_string_lossy().into_owned();
            let path = file.path();
            if fname.starts_with('.') || !path.is_file() {
                continue;
            }
            match probe_image(&path) {
                Ok(()) => entries.push(DatasetEntry {
                    path: Path::new(&name).join(&fname),
                    class_id,
                }),
                Err(reason) => warnings.push(ScanWarning { path, reason }),
            }
        }
    }
    if class_names.is_empty() {
        return Err(Error::Dataset(format!("no classes found under {}", root.display())));
    }
    Ok(ScanReport {
        index: DatasetIndex::new(root.to_path_buf(), class_names, entries)?,
        warnings,
    })
}

/// Image count per class name.
pub fn class_distribution(index: &DatasetIndex) -> BTreeMap<String, usize> {
    index
        .class_names()
        .iter()
        .cloned()
        .zip(index.class_counts())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "TRAIN",
            Split::Val => "VAL",
            Split::Test => "TEST",
        }
    }

    /// Stream coordinate distinguishing the splits.
    pub fn tag(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Val => 2,
            Split::Test => 3,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "TRAIN" => Ok(Split::Train),
            "VAL" => Ok(Split::Val),
            "TEST" => Ok(Split::Test),
            other => Err(Error::Format {
                what: "manifest",
                message: format!("unknown split {other:?}"),
            }),
        }
    }
}

/// Held-out count for one class: `round(0.2 * n)`.
pub fn holdout_count(n: usize) -> usize {
    (2 * n + 5) / 10
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitAssignment {
    /// `None` when the assignment was read back from a manifest.
    pub seed: Option<u64>,
    pub split_of: BTreeMap<PathBuf, Split>,
}

impl SplitAssignment {
    pub fn get(&self, path: &Path) -> Option<Split> {
        self.split_of.get(path).copied()
    }

    /// Entries of `split` in index order.
    pub fn members<'a>(&self, index: &'a DatasetIndex, split: Split) -> Vec<&'a DatasetEntry> {
        index
            .entries()
            .iter()
            .filter(|e| self.get(&e.path) == Some(split))
            .collect()
    }
}

/// Stratified split: per class, a seeded shuffle then test, val and train
/// slices in that order.
pub fn split(index: &DatasetIndex, seed: u64) -> Result<SplitAssignment> {
    let mut split_of = BTreeMap::new();
    for (class_id, name) in index.class_names().iter().enumerate() {
        let mut members: Vec<&DatasetEntry> =
            index.entries().iter().filter(|e| e.class_id == class_id).collect();
        if members.len() < MIN_CLASS_SIZE {
            return Err(Error::Dataset(format!(
                "class {name} has {} images; at least {MIN_CLASS_SIZE} are needed to split",
                members.len()
            )));
        }
        members.shuffle(&mut stream(seed, &[0x5eed, class_id as u64]));
        let held = holdout_count(members.len());
        for (i, e) in members.iter().enumerate() {
            let s = if i < held {
                Split::Test
            } else if i < 2 * held {
                Split::Val
            } else {
                Split::Train
            };
            split_of.insert(e.path.clone(), s);
        }
    }
    Ok(SplitAssignment {
        seed: Some(seed),
        split_of,
    })
}

/// Tab-separated manifest text, one `<path>\t<class_id>\t<SPLIT>` record per
/// line in index order.
pub fn manifest_text(index: &DatasetIndex, assignment: &SplitAssignment) -> Result<String> {
    let mut out = String::new();
    for e in index.entries() {
        let s = assignment.get(&e.path).ok_or_else(|| {
            Error::Dataset(format!("{} has no split assignment", e.path.display()))
        })?;
        let path = e.path.to_str().ok_or_else(|| {
            Error::Dataset(format!("{} is not valid UTF-8", e.path.display()))
        })?;
        out.push_str(&format!("{}\t{}\t{}\n", path.replace('\\', "/"), e.class_id, s));
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, index: &DatasetIndex, assignment: &SplitAssignment) -> Result<()> {
    fs::write(path, manifest_text(index, assignment)?).map_err(|e| Error::io(path, e))
}

/// Parses manifest text; class names are recovered from each record's
/// leading directory component.
pub fn parse_manifest(text: &str, root: &Path) -> Result<(DatasetIndex, SplitAssignment)> {
    let bad = |line: usize, message: String| Error::Format {
        what: "manifest",
        message: format!("line {line}: {message}"),
    };
    let mut names: BTreeMap<usize, String> = BTreeMap::new();
    let mut entries = Vec::new();
    let mut split_of = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let fields: Vec<&str> = line.split('\t').collect();
        let [path, class_id, split] = fields.as_slice() else {
            return Err(bad(lineno, format!("expected 3 tab-separated fields, got {}", fields.len())));
        };
        let class_id: usize = class_id
            .parse()
            .map_err(|_| bad(lineno, format!("bad class id {class_id:?}")))?;
        let split: Split = split.parse()?;
        let class_dir = path
            .split('/')
            .next()
            .filter(|d| !d.is_empty() && path.contains('/'))
            .ok_or_else(|| bad(lineno, format!("path {path:?} has no class directory")))?;
        match names.get(&class_id) {
            Some(existing) if existing != class_dir => {
                return Err(bad(
                    lineno,
                    format!("class {class_id} is both {existing} and {class_dir}"),
                ))
            }
            _ => {
                names.insert(class_id, class_dir.to_string());
            }
        }
        let rel = PathBuf::from(path);
        if split_of.insert(rel.clone(), split).is_some() {
            return Err(bad(lineno, format!("duplicate path {path}")));
        }
        entries.push(DatasetEntry {
            path: rel,
            class_id,
        });
    }
    let n_classes = names.keys().next_back().map_or(0, |k| k + 1);
    if names.len() != n_classes {
        return Err(Error::Format {
            what: "manifest",
            message: "class ids are not contiguous from 0".into(),
        });
    }
    let index = DatasetIndex::new(root.to_path_buf(), names.into_values().collect(), entries)?;
    Ok((
        index,
        SplitAssignment {
            seed: None,
            split_of,
        },
    ))
}

pub fn read_manifest(path: &Path, root: &Path) -> Result<(DatasetIndex, SplitAssignment)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, root)
}

/// Visiting order of a split for one epoch: TRAIN is reshuffled per
/// `(seed, epoch)`, VAL and TEST keep index order.
pub fn epoch_order<T: Clone>(items: &[T], split: Split, epoch: u64, seed: u64) -> Vec<T> {
    let mut order = items.to_vec();
    if split == Split::Train {
        order.shuffle(&mut stream(seed, &[0xba7c, epoch]));
    }
    order
}

/// Mini-batches of one split for one epoch; the final batch may be short.
pub fn batch_iter(
    index: &DatasetIndex,
    assignment: &SplitAssignment,
    split: Split,
    batch_size: usize,
    epoch: u64,
    seed: u64,
) -> Result<Vec<Vec<DatasetEntry>>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let members: Vec<DatasetEntry> = assignment.members(index, split).into_iter().cloned().collect();
    if members.is_empty() {
        return Err(Error::Dataset(format!("split {split} is empty")));
    }
    Ok(epoch_order(&members, split, epoch, seed)
        .chunks(batch_size)
        .map(|c| c.to_vec())
        .collect())
}
