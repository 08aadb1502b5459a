use alloc::collections::VecDeque;

use crate::image::{BinaryMask, Grid};

/// 4-connected component labelling. Components are numbered `1..=count` in
/// raster order of their first pixel; background is 0.
pub fn connected_components(mask: &BinaryMask) -> (Grid<u32>, usize) {
    let (w, h) = mask.dims();
    let mut labels = Grid::new(w, h, 0u32);
    let mut count = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if !mask.data()[start] || labels.data()[start] != 0 {
            continue;
        }
        count += 1;
        labels.data_mut()[start] = count;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            let (x, y) = (i % w, i / w);
            let mut visit = |j: usize| {
                if mask.data()[j] && labels.data()[j] == 0 {
                    labels.data_mut()[j] = count;
                    queue.push_back(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
    }
    (labels, count as usize)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_pixels_are_separate() {
        let mut m = Grid::new(4, 4, false);
        m.set(0, 0, true);
        m.set(1, 1, true);
        m.set(3, 3, true);
        m.set(3, 2, true);
        let (labels, n) = connected_components(&m);
        assert_eq!(n, 3);
        assert_eq!(labels.get(0, 0), 1);
        assert_eq!(labels.get(1, 1), 2);
        assert_eq!(labels.get(3, 2), 3);
        assert_eq!(labels.get(3, 3), 3);
    }

    #[test]
    fn matches_flood_fill_oracle_on_stripes() {
        // Vertical stripes on even columns joined along the bottom row.
        let m = Grid::from_fn(8, 6, |x, y| x % 2 == 0 || y == 5);
        let (_, n) = connected_components(&m);
        assert_eq!(n, 1);
        let m2 = Grid::from_fn(8, 6, |x, _| x % 2 == 0);
        assert_eq!(connected_components(&m2).1, 4);
    }
}
