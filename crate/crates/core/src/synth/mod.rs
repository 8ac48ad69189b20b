//! Synthetic labeled left-coronary trees.
//!
//! A tree is a set of vessel segments (nodes) with a parent link each. The
//! anatomy is LMA → {LAD, LCX}; LAD segments chain and give off diagonal (D)
//! branches; LCX segments chain and give off obtuse marginal (OM) branches.
//! Segments carry a 2D polyline on a 512×512 canvas and, once
//! [`extract_features`] has run, a fixed-length feature vector.

mod features;
mod generate;
mod split;
mod tree;

pub use features::{extract_features, FEATURE_LAYOUT, MIN_FEATURE_DIM};
pub use generate::{generate_corpus, generate_tree, GeneratorConfig};
pub use split::{split_dataset, DatasetSplit};
pub use tree::{ArteryClass, LabeledTree, SegmentNode};
