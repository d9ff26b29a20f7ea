//! Hilbert-curve grid placement.
//!
//! Convention: curve index `d` maps to `(row, col) = (x, y)` of the classic
//! iterative `d2xy` construction. The order-1 curve visits
//! `(0,0) → (0,1) → (1,1) → (1,0)`; higher orders start at `(0,0)` and end
//! at `(side-1, 0)`.

use serde::Serialize;

use super::leaf_order::LeafOrdering;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GridLayout {
    /// Curve order `p`; the grid is `side × side` with `side = 2^p`.
    pub order: u32,
    pub side: usize,
    /// `cells[leaf] = (row, col)`.
    pub cells: Vec<(usize, usize)>,
}

/// Cell of curve index `d` on a `side × side` grid (`side` a power of two).
pub fn d2xy(side: usize, d: usize) -> (usize, usize) {
    let (mut x, mut y) = (0usize, 0usize);
    let mut t = d;
    let mut s = 1;
    while s < side {
        let rx = 1 & (t / 2);
        let ry = 1 & (t ^ rx);
        if ry == 0 {
            if rx == 1 {
                x = s - 1 - x;
                y = s - 1 - y;
            }
            std::mem::swap(&mut x, &mut y);
        }
        x += s * rx;
        y += s * ry;
        t /= 4;
        s *= 2;
    }
    (x, y)
}

/// Smallest `p` with `4^p >= m`.
pub fn curve_order(m: usize) -> u32 {
    let mut p = 0;
    while 1usize << (2 * p) < m {
        p += 1;
    }
    p
}

pub fn hilbert_layout(ordering: &LeafOrdering) -> GridLayout {
    let m = ordering.order.len();
    let order = curve_order(m);
    let side = 1usize << order;
    let mut cells = vec![(0, 0); m];
    for (t, &leaf) in ordering.order.iter().enumerate() {
        cells[leaf] = d2xy(side, t);
    }
    GridLayout { order, side, cells }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_one() {
        let cells: Vec<_> = (0..4).map(|d| d2xy(2, d)).collect();
        assert_eq!(cells, vec![(0, 0), (0, 1), (1, 1), (1, 0)]);
    }

    #[test]
    fn orders() {
        assert_eq!(curve_order(1), 0);
        assert_eq!(curve_order(4), 1);
        assert_eq!(curve_order(5), 2);
        assert_eq!(curve_order(16), 2);
        assert_eq!(curve_order(17), 3);
    }
}
