use alloc::collections::VecDeque;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The five left-coronary segment classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ArteryClass {
    #[serde(rename = "LMA")]
    Lma,
    #[serde(rename = "LAD")]
    Lad,
    #[serde(rename = "LCX")]
    Lcx,
    #[serde(rename = "D")]
    D,
    #[serde(rename = "OM")]
    Om,
}

impl ArteryClass {
    pub const ALL: [ArteryClass; 5] = [Self::Lma, Self::Lad, Self::Lcx, Self::D, Self::Om];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Lma => "LMA",
            Self::Lad => "LAD",
            Self::Lcx => "LCX",
            Self::D => "D",
            Self::Om => "OM",
        }
    }

    /// Classes a child segment of this class may have.
    pub fn allowed_children(self) -> &'static [ArteryClass] {
        match self {
            Self::Lma => &[Self::Lad, Self::Lcx],
            Self::Lad => &[Self::Lad, Self::D],
            Self::Lcx => &[Self::Lcx, Self::Om],
            Self::D => &[Self::D],
            Self::Om => &[Self::Om],
        }
    }

    fn is_main_vessel(self) -> bool {
        matches!(self, Self::Lad | Self::Lcx)
    }
}

impl fmt::Display for ArteryClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ArteryClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownClass(s.into()))
    }
}

/// One vessel segment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentNode {
    pub id: usize,
    pub class: ArteryClass,
    pub parent: Option<usize>,
    /// Centerline points in pixels, proximal end first.
    pub polyline: Vec<[f64; 2]>,
    /// Empty until [`super::extract_features`] runs.
    #[serde(default)]
    pub features: Vec<f64>,
}

/// A labeled vessel tree. Node ids equal their position in `nodes`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledTree {
    pub name: String,
    pub view: String,
    pub site: String,
    pub nodes: Vec<SegmentNode>,
}

impl LabeledTree {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn labels(&self) -> Vec<ArteryClass> {
        self.nodes.iter().map(|n| n.class).collect()
    }

    pub fn root(&self) -> Option<usize> {
        self.nodes.iter().position(|n| n.parent.is_none())
    }

    pub fn children(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.nodes.len()];
        for n in &self.nodes {
            if let Some(p) = n.parent {
                if p < out.len() {
                    out[p].push(n.id);
                }
            }
        }
        out
    }

    /// Undirected neighbor lists (parent first, then children by id).
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let children = self.children();
        self.nodes
            .iter()
            .map(|n| n.parent.into_iter().chain(children[n.id].iter().copied()).collect())
            .collect()
    }

    /// Edge count from the root to each node.
    pub fn depths(&self) -> Vec<usize> {
        let mut depth = vec![0; self.nodes.len()];
        let children = self.children();
        let Some(root) = self.root() else { return depth };
        let mut queue = VecDeque::from([root]);
        while let Some(u) = queue.pop_front() {
            for &c in &children[u] {
                depth[c] = depth[u] + 1;
                queue.push_back(c);
            }
        }
        depth
    }

    /// Number of nodes in each node's subtree, itself included.
    pub fn subtree_sizes(&self) -> Vec<usize> {
        let depth = self.depths();
        let mut order: Vec<usize> = (0..self.nodes.len()).collect();
        order.sort_by_key(|&i| core::cmp::Reverse(depth[i]));
        let mut size = vec![1; self.nodes.len()];
        for i in order {
            if let Some(p) = self.nodes[i].parent {
                size[p] += size[i];
            }
        }
        size
    }

    /// Within-class branch ordinal used to pair segments across trees.
    ///
    /// LAD/LCX segments are numbered along their chain from the LMA. Side
    /// branches are numbered by the position of their origin along the
    /// parent vessel, then depth, then id.
    pub fn branch_ordinals(&self) -> Vec<usize> {
        let n = self.nodes.len();
        let depth = self.depths();
        let mut chain_pos = vec![0usize; n];
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&i| depth[i]);
        for &i in &order {
            let node = &self.nodes[i];
            chain_pos[i] = match node.parent {
                None => 0,
                Some(p) => {
                    let parent = &self.nodes[p];
                    if node.class.is_main_vessel() {
                        if parent.class == node.class {
                            chain_pos[p] + 1
                        } else {
                            0
                        }
                    } else {
                        chain_pos[p]
                    }
                }
            };
        }
        let mut ordinals = vec![0usize; n];
        for class in ArteryClass::ALL {
            let mut members: Vec<usize> = (0..n).filter(|&i| self.nodes[i].class == class).collect();
            members.sort_by_key(|&i| (chain_pos[i], depth[i], i));
            for (rank, i) in members.into_iter().enumerate() {
                ordinals[i] = rank;
            }
        }
        ordinals
    }

    /// Checks ids, polylines, the single-root tree shape and class adjacency.
    pub fn validate(&self) -> Result<()> {
        let n = self.nodes.len();
        if n == 0 {
            return Err(Error::InvalidTree(format!("{}: no nodes", self.name)));
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if node.id != i {
                return Err(Error::InvalidTree(format!(
                    "{}: node at position {i} has id {}",
                    self.name, node.id
                )));
            }
            if node.polyline.len() < 2 {
                return Err(Error::InvalidTree(format!("{}: node {i} polyline has < 2 points", self.name)));
            }
            if node.polyline.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::InvalidTree(format!("{}: node {i} has non-finite points", self.name)));
            }
            if node.polyline.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::InvalidTree(format!(
                    "{}: node {i} repeats a consecutive point",
                    self.name
                )));
            }
            if let Some(p) = node.parent {
                if p >= n || p == i {
                    return Err(Error::InvalidTree(format!("{}: node {i} has bad parent {p}", self.name)));
                }
                let pc = self.nodes[p].class;
                if !pc.allowed_children().contains(&node.class) {
                    return Err(Error::InvalidTree(format!(
                        "{}: {} segment {i} attached to {pc} segment {p}",
                        self.name, node.class
                    )));
                }
            }
        }
        let roots: Vec<usize> = (0..n).filter(|&i| self.nodes[i].parent.is_none()).collect();
        if roots.len() != 1 {
            return Err(Error::InvalidTree(format!("{}: {} roots", self.name, roots.len())));
        }
        if self.nodes[roots[0]].class != ArteryClass::Lma {
            return Err(Error::InvalidTree(format!("{}: root is not LMA", self.name)));
        }
        // n nodes, n-1 parent links and one root: connected iff acyclic.
        let children = self.children();
        let mut seen = vec![false; n];
        let mut stack = vec![roots[0]];
        while let Some(u) = stack.pop() {
            if core::mem::replace(&mut seen[u], true) {
                return Err(Error::InvalidTree(format!("{}: cycle through node {u}", self.name)));
            }
            stack.extend(&children[u]);
        }
        if let Some(orphan) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidTree(format!(
                "{}: node {orphan} is not reachable from the root",
                self.name
            )));
        }
        Ok(())
    }

    /// Same tree with node ids renumbered: old node `i` becomes `perm[i]`.
    pub fn relabeled(&self, perm: &[usize]) -> Result<Self> {
        let n = self.nodes.len();
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || core::mem::replace(&mut seen[p], true)) {
            return Err(Error::InvalidConfig(format!("relabeling is not a permutation of 0..{n}")));
        }
        let mut nodes = self.nodes.clone();
        for node in &mut nodes {
            node.id = perm[node.id];
            node.parent = node.parent.map(|p| perm[p]);
        }
        nodes.sort_by_key(|n| n.id);
        Ok(Self {
            nodes,
            ..self.clone()
        })
    }
}
