use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use super::connected_components;
use crate::image::{BinaryMask, Grid};

/// Foreground pixels with at least one 4-neighbour in the background.
/// Pixels outside the image count as background.
pub fn contour_extract(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = mask.dims();
    Grid::from_fn(w, h, |x, y| {
        if !mask.get(x, y) {
            return false;
        }
        let (x, y) = (x as isize, y as isize);
        [(x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)]
            .iter()
            .any(|&(nx, ny)| mask.get_checked(nx, ny) != Some(true))
    })
}

// Clockwise in image coordinates (y down), starting west.
const RING: [(isize, isize); 8] = [(-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1)];

fn ring_index(c: (isize, isize), n: (isize, isize)) -> usize {
    let d = (n.0 - c.0, n.1 - c.1);
    RING.iter().position(|&r| r == d).expect("neighbour")
}

/// Ordered outer boundaries, one per 4-connected component, by Moore
/// neighbour tracing. Each trace starts at the component's first pixel in
/// raster order and walks clockwise; the start pixel is not repeated.
pub fn trace_boundaries(mask: &BinaryMask) -> Vec<Vec<(usize, usize)>> {
    let (labels, count) = connected_components(mask);
    let (w, _) = mask.dims();
    let mut starts = alloc::vec![None; count];
    for (i, &l) in labels.data().iter().enumerate() {
        if l > 0 && starts[l as usize - 1].is_none() {
            starts[l as usize - 1] = Some(((i % w) as isize, (i / w) as isize));
        }
    }
    starts
        .into_iter()
        .enumerate()
        .map(|(k, s)| {
            let label = k as u32 + 1;
            let inside = |p: (isize, isize)| labels.get_checked(p.0, p.1) == Some(label);
            trace_one(s.expect("every label has a pixel"), inside)
        })
        .collect()
}

fn trace_one(start: (isize, isize), inside: impl Fn((isize, isize)) -> bool) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    let (mut c, mut b) = (start, (start.0 - 1, start.1));
    // The walk is deterministic in (pixel, backtrack); it is closed once a
    // state repeats.
    while seen.insert((c, b)) {
        out.push((c.0 as usize, c.1 as usize));
        let base = ring_index(c, b);
        let next = (1..=8).find_map(|k| {
            let (dx, dy) = RING[(base + k) % 8];
            let n = (c.0 + dx, c.1 + dy);
            inside(n).then(|| {
                let (px, py) = RING[(base + k - 1) % 8];
                (n, (c.0 + px, c.1 + py))
            })
        });
        match next {
            Some((n, back)) => (c, b) = (n, back),
            None => break,
        }
    }
    let first = (start.0 as usize, start.1 as usize);
    while out.len() > 1 && out.last() == Some(&first) {
        out.pop();
    }
    out
}
