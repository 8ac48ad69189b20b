use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use super::LabeledTree;
use crate::error::{Error, Result};
use crate::math;

/// Smallest supported feature width.
pub const MIN_FEATURE_DIM: usize = 16;

const CANVAS: f64 = 512.0;

/// Names of the fixed leading features. Entries from index 20 on are a
/// length-weighted histogram of tangent angles over `[-π, π)` with `d - 20`
/// bins. Widths below 20 truncate this list.
pub const FEATURE_LAYOUT: [&str; 20] = [
    "degree / 6",
    "depth / 10",
    "child count / 5",
    "subtree size / 20",
    "start x / 512",
    "start y / 512",
    "mid x / 512",
    "mid y / 512",
    "end x / 512",
    "end y / 512",
    "(chord cos + 1) / 2",
    "(chord sin + 1) / 2",
    "arc length / canvas diagonal",
    "chord length / canvas diagonal",
    "chord / arc",
    "mean |turn angle| / π",
    "bbox min x / 512",
    "bbox min y / 512",
    "bbox max x / 512",
    "bbox max y / 512",
];

/// Fills `features` of every node with a width-`d` vector in `[0, 1]`.
pub fn extract_features(tree: &mut LabeledTree, d: usize) -> Result<()> {
    if d < MIN_FEATURE_DIM {
        return Err(Error::InvalidConfig(alloc::format!(
            "feature width {d} is below the minimum of {MIN_FEATURE_DIM}"
        )));
    }
    let adjacency = tree.adjacency();
    let children = tree.children();
    let depths = tree.depths();
    let subtree = tree.subtree_sizes();
    let diag = CANVAS * core::f64::consts::SQRT_2;

    for (id, node) in tree.nodes.iter_mut().enumerate() {
        let pts = &node.polyline;
        let seg_lengths: Vec<f64> = pts
            .windows(2)
            .map(|w| math::hypot(w[1][0] - w[0][0], w[1][1] - w[0][1]))
            .collect();
        let arc: f64 = seg_lengths.iter().sum();
        if pts.len() < 2 || !(arc > 0.0) {
            return Err(Error::DegeneratePolyline(id));
        }
        let (start, end) = (pts[0], pts[pts.len() - 1]);
        let mid = point_at_arc(pts, &seg_lengths, arc / 2.0);
        let (dx, dy) = (end[0] - start[0], end[1] - start[1]);
        let chord = math::hypot(dx, dy);
        let (cos, sin) = if chord > 0.0 { (dx / chord, dy / chord) } else { (1.0, 0.0) };

        let headings: Vec<f64> = pts
            .windows(2)
            .map(|w| math::atan2(w[1][1] - w[0][1], w[1][0] - w[0][0]))
            .collect();
        let mean_turn = if headings.len() > 1 {
            let total: f64 = headings.windows(2).map(|h| wrap_angle(h[1] - h[0]).abs()).sum();
            total / (headings.len() - 1) as f64
        } else {
            0.0
        };

        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in pts {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }

        let fixed = [
            adjacency[id].len() as f64 / 6.0,
            depths[id] as f64 / 10.0,
            children[id].len() as f64 / 5.0,
            subtree[id] as f64 / 20.0,
            start[0] / CANVAS,
            start[1] / CANVAS,
            mid[0] / CANVAS,
            mid[1] / CANVAS,
            end[0] / CANVAS,
            end[1] / CANVAS,
            (cos + 1.0) / 2.0,
            (sin + 1.0) / 2.0,
            arc / diag,
            chord / diag,
            chord / arc,
            mean_turn / PI,
            lo[0] / CANVAS,
            lo[1] / CANVAS,
            hi[0] / CANVAS,
            hi[1] / CANVAS,
        ];

        let mut out = vec![0.0; d];
        let n_fixed = d.min(fixed.len());
        out[..n_fixed].copy_from_slice(&fixed[..n_fixed]);
        let bins = d.saturating_sub(fixed.len());
        if bins > 0 {
            for (h, len) in headings.iter().zip(&seg_lengths) {
                let b = (((h + PI) / (2.0 * PI)) * bins as f64) as usize;
                out[fixed.len() + b.min(bins - 1)] += len / arc;
            }
        }
        for v in &mut out {
            *v = v.clamp(0.0, 1.0);
        }
        node.features = out;
    }
    Ok(())
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = a;
    while a > PI {
        a -= 2.0 * PI;
    }
    while a < -PI {
        a += 2.0 * PI;
    }
    a
}

fn point_at_arc(pts: &[[f64; 2]], seg_lengths: &[f64], target: f64) -> [f64; 2] {
    let mut walked = 0.0;
    for (w, &len) in pts.windows(2).zip(seg_lengths) {
        if walked + len >= target && len > 0.0 {
            let t = (target - walked) / len;
            return [w[0][0] + t * (w[1][0] - w[0][0]), w[0][1] + t * (w[1][1] - w[0][1])];
        }
        walked += len;
    }
    pts[pts.len() - 1]
}
