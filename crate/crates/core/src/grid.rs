//! Uniform hash grid for fixed-radius neighbour queries on 2D points.

use nalgebra::Point2;
use std::collections::HashMap;

/// Buckets point indices by cell. A zero cell size buckets by exact coordinates.
#[derive(Debug)]
pub(crate) struct PointGrid {
    cell: f64,
    buckets: HashMap<(i64, i64), Vec<usize>>,
}

fn exact_key(v: f64) -> i64 {
    // +0.0 and -0.0 compare equal and must share a bucket.
    let v = if v == 0.0 { 0.0 } else { v };
    v.to_bits() as i64
}

impl PointGrid {
    pub fn new(cell: f64) -> Self {
        assert!(cell >= 0.0 && cell.is_finite(), "cell size must be finite and >= 0");
        Self {
            cell,
            buckets: HashMap::new(),
        }
    }

    fn cell_of(&self, v: f64) -> i64 {
        (v / self.cell).floor() as i64
    }

    pub fn insert(&mut self, p: &Point2<f64>, idx: usize) {
        let key = if self.cell == 0.0 {
            (exact_key(p.x), exact_key(p.y))
        } else {
            (self.cell_of(p.x), self.cell_of(p.y))
        };
        self.buckets.entry(key).or_default().push(idx);
    }

    /// Calls `f` with every stored index whose point may lie within `radius`
    /// of `p`. Never misses a point; may report extra candidates.
    pub fn for_each_near(&self, p: &Point2<f64>, radius: f64, mut f: impl FnMut(usize)) {
        if self.cell == 0.0 {
            if let Some(b) = self.buckets.get(&(exact_key(p.x), exact_key(p.y))) {
                b.iter().copied().for_each(&mut f);
            }
            return;
        }
        // Inflate the radius so float rounding can never drop a boundary cell.
        let r = radius * (1.0 + 1e-9) + 1e-12;
        let (x0, x1) = (self.cell_of(p.x - r), self.cell_of(p.x + r));
        let (y0, y1) = (self.cell_of(p.y - r), self.cell_of(p.y + r));
        for cx in x0..=x1 {
            for cy in y0..=y1 {
                if let Some(b) = self.buckets.get(&(cx, cy)) {
                    b.iter().copied().for_each(&mut f);
                }
            }
        }
    }
}
