//! Hierarchical hue assignment. Each node's hue interval is split among
//! its two children in proportion to their leaf counts, with a fixed
//! fraction of the interval left empty between them.

use serde::{Deserialize, Serialize};

use super::dendrogram::Dendrogram;

pub const DEFAULT_GAP_FRACTION: f64 = 0.25;
pub const SATURATION: f64 = 0.6;
pub const LIGHTNESS: f64 = 0.5;

/// Half-open hue interval `[start, end)` in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HueRange {
    pub start: f64,
    pub end: f64,
}

impl HueRange {
    pub const FULL: HueRange = HueRange { start: 0.0, end: 360.0 };

    pub fn new(start: f64, end: f64) -> Self {
        Self { start, end }
    }

    pub fn width(&self) -> f64 {
        self.end - self.start
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.start + self.end)
    }

    pub fn contains_range(&self, other: &HueRange) -> bool {
        other.start >= self.start - 1e-9 && other.end <= self.end + 1e-9
    }

    pub fn overlaps(&self, other: &HueRange) -> bool {
        self.start.max(other.start) < self.end.min(other.end) - 1e-9
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeColor {
    pub range: HueRange,
    pub hue: f64,
    /// `#rrggbb`
    pub rgb: String,
}

/// Colors for every node of the tree, indexed by node id.
pub fn assign_colors(tree: &Dendrogram, base: HueRange, gap: f64) -> Vec<NodeColor> {
    let mut ranges = vec![base; tree.nodes().len()];
    for v in tree.subtree(tree.root()) {
        let node = tree.node(v).expect("node from subtree");
        if let Some([l, r]) = node.children {
            let parent = ranges[v];
            let usable = parent.width() * (1.0 - gap);
            let wl = usable * tree.node(l).unwrap().size as f64 / node.size as f64;
            let wr = usable - wl;
            ranges[l] = HueRange::new(parent.start, parent.start + wl);
            ranges[r] = HueRange::new(parent.end - wr, parent.end);
        }
    }
    ranges
        .into_iter()
        .map(|range| {
            let hue = range.mid();
            NodeColor {
                range,
                hue,
                rgb: hsl_hex(hue, SATURATION, LIGHTNESS),
            }
        })
        .collect()
}

pub fn hsl_to_rgb(hue: f64, s: f64, l: f64) -> [u8; 3] {
    let h = hue.rem_euclid(360.0) / 60.0;
    let c = (1.0 - (2.0 * l - 1.0).abs()) * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = l - c / 2.0;
    let q = |v: f64| ((v + m) * 255.0).round().clamp(0.0, 255.0) as u8;
    [q(r), q(g), q(b)]
}

pub fn hsl_hex(hue: f64, s: f64, l: f64) -> String {
    let [r, g, b] = hsl_to_rgb(hue, s, l);
    format!("#{r:02x}{g:02x}{b:02x}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn primaries() {
        assert_eq!(hsl_hex(0.0, 1.0, 0.5), "#ff0000");
        assert_eq!(hsl_hex(120.0, 1.0, 0.5), "#00ff00");
        assert_eq!(hsl_hex(240.0, 1.0, 0.5), "#0000ff");
    }
}
