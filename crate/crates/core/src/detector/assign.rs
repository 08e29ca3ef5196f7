use super::boxes::GroundTruth;

/// Square grid of prediction cells over the image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grid {
    /// Cells per axis.
    pub size: usize,
    /// Pixels per cell.
    pub stride: usize,
}

impl Grid {
    pub fn cells(&self) -> usize {
        self.size * self.size
    }

    /// Center of cell `index` (row-major) in pixels.
    pub fn center(&self, index: usize) -> (f64, f64) {
        let (gy, gx) = (index / self.size, index % self.size);
        let s = self.stride as f64;
        (s * (gx as f64 + 0.5), s * (gy as f64 + 0.5))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Positive {
    pub cell: usize,
    pub gt: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Assignment {
    pub positives: Vec<Positive>,
    pub negatives: Vec<usize>,
}

/// A cell is positive when its center lies strictly inside a ground-truth
/// box. Centers inside several boxes go to the smallest-area box, then the
/// lowest index.
pub fn assign_targets(grid: &Grid, gts: &[GroundTruth]) -> Assignment {
    let mut out = Assignment::default();
    for cell in 0..grid.cells() {
        let (cx, cy) = grid.center(cell);
        let best = gts
            .iter()
            .enumerate()
            .filter(|(_, g)| g.bbox.contains_point(cx, cy))
            .min_by(|(i, a), (j, b)| a.bbox.area().total_cmp(&b.bbox.area()).then(i.cmp(j)));
        match best {
            Some((gt, _)) => out.positives.push(Positive { cell, gt }),
            None => out.negatives.push(cell),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::boxes::BBox;

    const GRID: Grid = Grid { size: 8, stride: 8 };

    fn gt(x1: f64, y1: f64, x2: f64, y2: f64) -> GroundTruth {
        GroundTruth {
            bbox: BBox::new(x1, y1, x2, y2).unwrap(),
            class_id: 0,
        }
    }

    #[test]
    fn no_ground_truth() {
        let a = assign_targets(&GRID, &[]);
        assert!(a.positives.is_empty());
        assert_eq!(a.negatives.len(), 64);
    }

    #[test]
    fn full_image_box() {
        let a = assign_targets(&GRID, &[gt(0.0, 0.0, 64.0, 64.0)]);
        assert_eq!(a.positives.len(), 64);
        assert!(a.negatives.is_empty());
    }

    #[test]
    fn nested_boxes_prefer_smaller() {
        let outer = gt(0.0, 0.0, 40.0, 40.0);
        let inner = gt(10.0, 10.0, 26.0, 26.0);
        let a = assign_targets(&GRID, &[outer, inner]);
        // enumerate against the rule directly
        for p in &a.positives {
            let (cx, cy) = GRID.center(p.cell);
            let want = if inner.bbox.contains_point(cx, cy) { 1 } else { 0 };
            assert_eq!(p.gt, want);
        }
        let inner_cells: Vec<usize> = a.positives.iter().filter(|p| p.gt == 1).map(|p| p.cell).collect();
        // centers 12 and 20 on each axis
        assert_eq!(inner_cells, vec![9, 10, 17, 18]);
        assert_eq!(a.positives.len(), 25);
    }

    #[test]
    fn partition_covers_every_cell_once() {
        let a = assign_targets(&GRID, &[gt(3.0, 5.0, 30.0, 20.0), gt(20.0, 18.0, 60.0, 62.0)]);
        let mut all: Vec<usize> = a.positives.iter().map(|p| p.cell).chain(a.negatives.iter().copied()).collect();
        all.sort();
        assert_eq!(all, (0..64).collect::<Vec<_>>());
    }
}
