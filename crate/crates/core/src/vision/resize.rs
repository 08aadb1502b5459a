use crate::error::{Error, Result};
use crate::image::{Frame, Grid, ProbMap};
use crate::tensor::kernels::{upsample_forward, AxisTable};

fn check_target(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::invalid(alloc::format!("resize target {width}x{height} is empty")));
    }
    Ok(())
}

/// Bilinear resampling with half-pixel centers; edges are clamped.
pub fn resize_bilinear(map: &ProbMap, width: usize, height: usize) -> Result<ProbMap> {
    check_target(width, height)?;
    let (w, h) = map.dims();
    Grid::from_vec(width, height, upsample_forward(map.data(), 1, (h, w), (height, width)))
}

pub fn resize_frame(frame: &Frame, width: usize, height: usize) -> Result<Frame> {
    check_target(width, height)?;
    let (w, h) = frame.dims();
    Frame::from_planar(width, height, upsample_forward(frame.data(), 3, (h, w), (height, width)))
}

/// Nearest-neighbour resampling, for label maps and masks.
pub fn resize_nearest<T: Copy>(map: &Grid<T>, width: usize, height: usize) -> Result<Grid<T>> {
    check_target(width, height)?;
    let (w, h) = map.dims();
    let tx = AxisTable::new(w, width);
    let ty = AxisTable::new(h, height);
    let pick = |t: &AxisTable, i: usize| if t.frac[i] < 0.5 { t.lo[i] } else { t.hi[i] };
    Ok(Grid::from_fn(width, height, |x, y| map.get(pick(&tx, x), pick(&ty, y))))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_size_is_identity() {
        let m = Grid::from_fn(5, 4, |x, y| (x * y) as f32 * 0.1);
        assert_eq!(resize_bilinear(&m, 5, 4).unwrap(), m);
        assert_eq!(resize_nearest(&m, 5, 4).unwrap(), m);
    }

    #[test]
    fn constant_stays_constant() {
        let m = Grid::new(3, 7, 0.25f32);
        let r = resize_bilinear(&m, 11, 2).unwrap();
        assert!(r.data().iter().all(|&v| (v - 0.25).abs() < 1e-7));
    }

    #[test]
    fn nearest_doubles_pixels() {
        let m = Grid::from_vec(2, 1, alloc::vec![1u8, 2]).unwrap();
        let r = resize_nearest(&m, 4, 2).unwrap();
        assert_eq!(r.data(), &[1, 1, 2, 2, 1, 1, 2, 2]);
    }

    #[test]
    fn zero_target_rejected() {
        assert!(resize_bilinear(&Grid::new(2, 2, 0.0), 0, 2).is_err());
    }
}
