use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tree::{ArteryClass, LabeledTree, SegmentNode};
use super::extract_features;
use crate::error::{Error, Result};
use crate::math;

/// Knobs for [`generate_tree`]. Count ranges are inclusive `(min, max)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub view: String,
    pub site: String,
    pub d_branches: (usize, usize),
    pub om_branches: (usize, usize),
    pub lad_segments: (usize, usize),
    pub lcx_segments: (usize, usize),
    pub canvas: f64,
    /// Uniform jitter on every branch heading, degrees.
    pub angle_jitter_deg: f64,
    /// Relative jitter on vessel lengths.
    pub length_jitter: f64,
    /// Per-step heading random walk, degrees.
    pub curvature_deg: f64,
    pub step_px: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            view: "CRA".into(),
            site: "synthetic".into(),
            d_branches: (1, 3),
            om_branches: (1, 3),
            lad_segments: (1, 4),
            lcx_segments: (1, 4),
            canvas: 512.0,
            angle_jitter_deg: 8.0,
            length_jitter: 0.15,
            curvature_deg: 3.0,
            step_px: 8.0,
        }
    }
}

impl GeneratorConfig {
    /// One LMA, one LAD and one LCX segment, no side branches.
    pub fn minimal() -> Self {
        Self {
            d_branches: (0, 0),
            om_branches: (0, 0),
            lad_segments: (1, 1),
            lcx_segments: (1, 1),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("d_branches", self.d_branches, 0),
            ("om_branches", self.om_branches, 0),
            ("lad_segments", self.lad_segments, 1),
            ("lcx_segments", self.lcx_segments, 1),
        ];
        for (name, (lo, hi), floor) in ranges {
            if lo > hi || lo < floor || hi > 16 {
                return Err(Error::InvalidConfig(format!(
                    "{name} range ({lo}, {hi}) must satisfy {floor} <= min <= max <= 16"
                )));
            }
        }
        if self.canvas != 512.0 {
            return Err(Error::InvalidConfig(format!("canvas must be 512, got {}", self.canvas)));
        }
        let positive = [self.step_px, self.length_jitter + 1.0];
        let non_negative = [self.angle_jitter_deg, self.curvature_deg, self.length_jitter];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite()))
            || non_negative.iter().any(|v| !(*v >= 0.0 && v.is_finite()))
            || self.length_jitter >= 0.9
        {
            return Err(Error::InvalidConfig("geometry jitters must be finite, non-negative and length_jitter < 0.9".into()));
        }
        if self.view.is_empty() {
            return Err(Error::InvalidConfig("view tag must not be empty".into()));
        }
        Ok(())
    }
}

/// Base geometry per view tag, headings in degrees (x right, y down).
struct ViewGeometry {
    origin: [f64; 2],
    lma: f64,
    lad: f64,
    lcx: f64,
    d_offset: f64,
    om_offset: f64,
}

fn view_geometry(view: &str) -> ViewGeometry {
    match view {
        "CAU" => ViewGeometry {
            origin: [190.0, 150.0],
            lma: 20.0,
            lad: 60.0,
            lcx: -30.0,
            d_offset: -35.0,
            om_offset: 55.0,
        },
        other => {
            // CRA, and a deterministic rotation of it for any other tag.
            let rot = if other == "CRA" {
                0.0
            } else {
                let h = other.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
                    (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
                });
                (h % 61) as f64 - 30.0
            };
            ViewGeometry {
                origin: [170.0, 110.0],
                lma: 45.0 + rot,
                lad: 95.0 + rot,
                lcx: 15.0 + rot,
                d_offset: -40.0,
                om_offset: 45.0,
            }
        }
    }
}

struct Walker<'a> {
    rng: &'a mut ChaCha8Rng,
    cfg: &'a GeneratorConfig,
}

impl Walker<'_> {
    fn jitter(&mut self, amount: f64) -> f64 {
        if amount > 0.0 {
            self.rng.gen_range(-amount..=amount)
        } else {
            0.0
        }
    }

    fn length(&mut self, lo: f64, hi: f64) -> f64 {
        let base = self.rng.gen_range(lo..=hi);
        base * (1.0 + self.jitter(self.cfg.length_jitter))
    }

    /// Random-walk centerline of `length` pixels. Returns points and the final heading.
    fn polyline(&mut self, start: [f64; 2], heading_deg: f64, length: f64, drift_deg: f64) -> (Vec<[f64; 2]>, f64) {
        let steps = (math::ceil(length / self.cfg.step_px) as usize).max(1);
        let step = length / steps as f64;
        let mut heading = heading_deg;
        let mut pts = Vec::with_capacity(steps + 1);
        pts.push(start);
        let mut p = start;
        for _ in 0..steps {
            heading += drift_deg + self.jitter(self.cfg.curvature_deg);
            let rad = heading * PI / 180.0;
            p = [p[0] + step * math::cos(rad), p[1] + step * math::sin(rad)];
            pts.push(p);
        }
        (pts, heading)
    }

    fn count(&mut self, (lo, hi): (usize, usize)) -> usize {
        self.rng.gen_range(lo..=hi)
    }

    /// Splits `total` into `n` pieces, each at least 40% of the mean.
    fn pieces(&mut self, total: f64, n: usize) -> Vec<f64> {
        let w: Vec<f64> = (0..n).map(|_| self.rng.gen_range(0.6..=1.4)).collect();
        let sum: f64 = w.iter().sum();
        w.iter().map(|x| total * x / sum).collect()
    }
}

struct Pending {
    class: ArteryClass,
    parent: Option<usize>,
    polyline: Vec<[f64; 2]>,
}

/// Grows a main vessel (LAD or LCX) in `segments` pieces and its side
/// branches (D or OM). Returns node records appended after `next_id`.
#[allow(clippy::too_many_arguments)]
fn grow_vessel(
    w: &mut Walker<'_>,
    nodes: &mut Vec<Pending>,
    class: ArteryClass,
    side: ArteryClass,
    parent: usize,
    start: [f64; 2],
    heading: f64,
    total_len: f64,
    segments: usize,
    branches: usize,
    side_offset: f64,
    side_len: (f64, f64),
) {
    let drift = w.jitter(1.0);
    let mut junctions = Vec::with_capacity(segments);
    let mut seg_parent = parent;
    let mut p = start;
    let mut h = heading;
    for len in w.pieces(total_len, segments) {
        let (pts, end_heading) = w.polyline(p, h, len, drift);
        p = *pts.last().unwrap_or(&p);
        h = end_heading;
        nodes.push(Pending {
            class,
            parent: Some(seg_parent),
            polyline: pts,
        });
        seg_parent = nodes.len() - 1;
        junctions.push((seg_parent, p, h));
    }
    let mut at: Vec<usize> = (0..branches).map(|_| w.rng.gen_range(0..segments)).collect();
    at.sort_unstable();
    let mut k_at_junction = 0;
    for (b, &j) in at.iter().enumerate() {
        k_at_junction = if b > 0 && at[b - 1] == j { k_at_junction + 1 } else { 0 };
        let (seg, point, vessel_heading) = junctions[j];
        let spread = side_offset.signum() * 14.0 * k_at_junction as f64;
        let angle = vessel_heading + side_offset + spread + w.jitter(w.cfg.angle_jitter_deg);
        let len = w.length(side_len.0, side_len.1);
        let drift = w.jitter(1.5);
        let (pts, _) = w.polyline(point, angle, len, drift);
        nodes.push(Pending {
            class: side,
            parent: Some(seg),
            polyline: pts,
        });
    }
}

/// Generates one synthetic tree. Deterministic in `(seed, cfg)`.
///
/// Features are left empty; run [`extract_features`] afterwards.
pub fn generate_tree(seed: u64, cfg: &GeneratorConfig) -> Result<LabeledTree> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let geo = view_geometry(&cfg.view);
    let mut w = Walker { rng: &mut rng, cfg };

    let n_lad = w.count(cfg.lad_segments);
    let n_lcx = w.count(cfg.lcx_segments);
    let n_d = w.count(cfg.d_branches);
    let n_om = w.count(cfg.om_branches);

    let origin = [geo.origin[0] + w.jitter(15.0), geo.origin[1] + w.jitter(15.0)];
    let lma_heading = geo.lma + w.jitter(cfg.angle_jitter_deg);
    let lma_len = w.length(40.0, 70.0);
    let (lma_pts, lma_end_heading) = w.polyline(origin, lma_heading, lma_len, 0.0);
    let bifurcation = *lma_pts.last().unwrap_or(&origin);
    let mut nodes = vec![Pending {
        class: ArteryClass::Lma,
        parent: None,
        polyline: lma_pts,
    }];

    let turn = lma_end_heading - lma_heading;
    let lad_heading = geo.lad + turn + w.jitter(cfg.angle_jitter_deg);
    let lad_len = w.length(240.0, 320.0);
    let lcx_heading = geo.lcx + turn + w.jitter(cfg.angle_jitter_deg);
    let lcx_len = w.length(170.0, 240.0);

    // LAD subtree then LCX subtree; ids follow creation order.
    grow_vessel(
        &mut w,
        &mut nodes,
        ArteryClass::Lad,
        ArteryClass::D,
        0,
        bifurcation,
        lad_heading,
        lad_len,
        n_lad,
        n_d,
        geo.d_offset,
        (70.0, 130.0),
    );
    grow_vessel(
        &mut w,
        &mut nodes,
        ArteryClass::Lcx,
        ArteryClass::Om,
        0,
        bifurcation,
        lcx_heading,
        lcx_len,
        n_lcx,
        n_om,
        geo.om_offset,
        (60.0, 120.0),
    );

    fit_to_canvas(&mut nodes, cfg.canvas, 8.0);

    let tree = LabeledTree {
        name: format!("tree_{seed}"),
        view: cfg.view.clone(),
        site: cfg.site.clone(),
        nodes: nodes
            .into_iter()
            .enumerate()
            .map(|(id, p)| SegmentNode {
                id,
                class: p.class,
                parent: p.parent,
                polyline: p.polyline,
                features: Vec::new(),
            })
            .collect(),
    };
    tree.validate()?;
    Ok(tree)
}

/// Uniformly shrinks and recenters the tree when it leaves the canvas.
fn fit_to_canvas(nodes: &mut [Pending], canvas: f64, margin: f64) {
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in nodes.iter().flat_map(|n| n.polyline.iter()) {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let inside = (0..2).all(|k| lo[k] >= margin && hi[k] <= canvas - margin);
    if inside {
        return;
    }
    let avail = canvas - 2.0 * margin;
    let scale = (0..2)
        .map(|k| if hi[k] - lo[k] > avail { avail / (hi[k] - lo[k]) } else { 1.0 })
        .fold(1.0, f64::min);
    let shift: Vec<f64> = (0..2)
        .map(|k| {
            let (a, b) = (lo[k] * scale, hi[k] * scale);
            if a < margin {
                margin - a
            } else if b > canvas - margin {
                canvas - margin - b
            } else {
                0.0
            }
        })
        .collect();
    for p in nodes.iter_mut().flat_map(|n| n.polyline.iter_mut()) {
        for k in 0..2 {
            p[k] = p[k] * scale + shift[k];
        }
    }
}

/// `n` trees with features of width `feature_dim`. View tags cycle through
/// `views`; tree `i` uses seed `seed * 1_000_003 + i`.
pub fn generate_corpus(
    n: usize,
    seed: u64,
    views: &[String],
    feature_dim: usize,
    base: &GeneratorConfig,
) -> Result<Vec<LabeledTree>> {
    if n == 0 {
        return Err(Error::InvalidConfig("corpus size must be positive".into()));
    }
    if views.is_empty() {
        return Err(Error::InvalidConfig("at least one view tag is required".into()));
    }
    (0..n)
        .map(|i| {
            let cfg = GeneratorConfig {
                view: views[i % views.len()].to_string(),
                ..base.clone()
            };
            let tree_seed = seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
            let mut tree = generate_tree(tree_seed, &cfg)?;
            tree.name = format!("tree_{i:04}");
            extract_features(&mut tree, feature_dim)?;
            Ok(tree)
        })
        .collect()
}
