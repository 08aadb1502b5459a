use alloc::vec::Vec;

use crate::image::{BinaryMask, Grid};

fn disk(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut offsets = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                offsets.push((dx, dy));
            }
        }
    }
    offsets
}

/// Binary dilation with a disk of the given radius.
pub fn dilate(mask: &BinaryMask, radius: usize) -> BinaryMask {
    if radius == 0 {
        return mask.clone();
    }
    let se = disk(radius);
    let (w, h) = mask.dims();
    Grid::from_fn(w, h, |x, y| {
        se.iter()
            .any(|&(dx, dy)| mask.get_checked(x as isize + dx, y as isize + dy) == Some(true))
    })
}

/// Binary erosion with a disk; pixels outside the image count as background.
pub fn erode(mask: &BinaryMask, radius: usize) -> BinaryMask {
    if radius == 0 {
        return mask.clone();
    }
    let se = disk(radius);
    let (w, h) = mask.dims();
    Grid::from_fn(w, h, |x, y| {
        se.iter()
            .all(|&(dx, dy)| mask.get_checked(x as isize + dx, y as isize + dy) == Some(true))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dilate_point_gives_disk() {
        let mut m = Grid::new(9, 9, false);
        m.set(4, 4, true);
        let d = dilate(&m, 2);
        // Disk of radius 2: 13 lattice points.
        assert_eq!(d.count(), 13);
        assert!(d.get(4, 2) && d.get(6, 4) && !d.get(6, 6));
    }

    #[test]
    fn erode_undoes_dilate_on_interior_square() {
        let m = Grid::from_fn(20, 20, |x, y| (6..14).contains(&x) && (6..14).contains(&y));
        assert_eq!(erode(&dilate(&m, 1), 1), m);
    }

    #[test]
    fn radius_zero_is_identity() {
        let m = Grid::from_fn(5, 5, |x, y| (x + y) % 2 == 0);
        assert_eq!(dilate(&m, 0), m);
        assert_eq!(erode(&m, 0), m);
    }
}
