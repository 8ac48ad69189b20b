//! Tree documents and the dataset manifest.
//!
//! A tree is stored as one JSON document:
//!
//! ```json
//! {
//!   "format": "hagmn-tree/1",
//!   "name": "tree_0000",
//!   "view": "CRA",
//!   "site": "synthetic",
//!   "nodes": [
//!     { "id": 0, "class": "LMA", "parent": null,
//!       "polyline": [[170.0, 110.0], [176.1, 116.2]],
//!       "features": [0.16, 0.0] }
//!   ]
//! }
//! ```
//!
//! `class` is one of `LMA`, `LAD`, `LCX`, `D`, `OM`; `polyline` points are
//! pixels on a 512×512 canvas, proximal end first; `features` may be empty.
//!
//! A dataset directory holds `dataset.json` and a `trees/` folder. The
//! manifest lists the tree files in corpus order and, per fold, the corpus
//! indices of the template, training and test trees (see [`DatasetManifest`]).

use std::fs;
use std::path::{Path, PathBuf};

use hagmn_core::synth::{DatasetSplit, GeneratorConfig, LabeledTree};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TREE_FORMAT: &str = "hagmn-tree/1";
pub const DATASET_FORMAT: &str = "hagmn-dataset/1";
pub const DATASET_FILE: &str = "dataset.json";

#[derive(Serialize, Deserialize)]
struct TreeDocument {
    format: String,
    #[serde(flatten)]
    tree: LabeledTree,
}

pub fn tree_to_json(tree: &LabeledTree) -> String {
    let doc = TreeDocument {
        format: TREE_FORMAT.into(),
        tree: tree.clone(),
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("tree serializes");
    s.push('\n');
    s
}

pub fn tree_from_json(text: &str, path: &Path) -> Result<LabeledTree> {
    let doc: TreeDocument = serde_json::from_str(text).map_err(|e| Error::json(path, e))?;
    if doc.format != TREE_FORMAT {
        return Err(Error::format(path, format!("expected format `{TREE_FORMAT}`, found `{}`", doc.format)));
    }
    doc.tree.validate()?;
    Ok(doc.tree)
}

pub fn write_tree(path: &Path, tree: &LabeledTree) -> Result<()> {
    write_text(path, &tree_to_json(tree))
}

pub fn read_tree(path: &Path) -> Result<LabeledTree> {
    tree_from_json(&read_text(path)?, path)
}

/// Contents of `dataset.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub seed: u64,
    pub feature_dim: usize,
    pub views: Vec<String>,
    pub template_fraction: f64,
    pub generator: GeneratorConfig,
    /// Tree files relative to the manifest, in corpus order.
    pub trees: Vec<String>,
    pub folds: Vec<DatasetSplit>,
}

/// A manifest with its trees loaded.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub trees: Vec<LabeledTree>,
}

impl Dataset {
    pub fn fold(&self, k: usize) -> Result<&DatasetSplit> {
        self.manifest
            .folds
            .get(k)
            .ok_or_else(|| Error::Usage(format!("fold {k} out of range (dataset has {})", self.manifest.folds.len())))
    }
}

/// Resolves a dataset argument that names either the directory or its
/// `dataset.json`.
pub fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(DATASET_FILE)
    } else {
        path.to_path_buf()
    }
}

pub fn write_dataset(dir: &Path, manifest: &DatasetManifest, trees: &[LabeledTree]) -> Result<()> {
    if manifest.trees.len() != trees.len() {
        return Err(Error::Usage("manifest and tree list differ in length".into()));
    }
    for (file, tree) in manifest.trees.iter().zip(trees) {
        write_tree(&dir.join(file), tree)?;
    }
    write_json(&dir.join(DATASET_FILE), manifest)
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let path = manifest_path(path);
    let manifest: DatasetManifest = read_json(&path)?;
    if manifest.format != DATASET_FORMAT {
        return Err(Error::format(
            &path,
            format!("expected format `{DATASET_FORMAT}`, found `{}`", manifest.format),
        ));
    }
    let n = manifest.trees.len();
    for (k, fold) in manifest.folds.iter().enumerate() {
        let mut seen = vec![false; n];
        for &i in fold.templates.iter().chain(&fold.train).chain(&fold.test) {
            if i >= n || std::mem::replace(&mut seen[i], true) {
                return Err(Error::format(&path, format!("fold {k} lists tree {i} twice or out of range")));
            }
        }
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let trees = manifest
        .trees
        .iter()
        .map(|f| read_tree(&base.join(f)))
        .collect::<Result<Vec<_>>>()?;
    if let Some(t) = trees.iter().find(|t| t.nodes.iter().any(|n| n.features.len() != manifest.feature_dim)) {
        return Err(Error::format(
            &path,
            format!("tree `{}` does not carry {} features per node", t.name, manifest.feature_dim),
        ));
    }
    Ok(Dataset { manifest, trees })
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_bytes(path, text.as_bytes())
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| Error::json(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    s.push('\n');
    write_text(path, &s)
}
