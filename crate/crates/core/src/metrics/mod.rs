//! Benchmark metrics: region similarity J (IoU), contour accuracy F and
//! temporal stability T, with mean / recall / decay aggregation.

mod matching;
mod shape_context;

pub use matching::{hopcroft_karp, hungarian};
pub use shape_context::{chi2, descriptors, sample_contours};

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::image::{BinaryMask, Grid, LabelMask};
use crate::math;
use crate::vision::{contour_extract, trace_boundaries};

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct MetricsConfig {
    pub recall_threshold: f64,
    /// Contour match tolerance as a fraction of the image diagonal.
    pub tolerance_factor: f64,
    pub angular_bins: usize,
    pub radial_bins: usize,
    pub contour_samples: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            recall_threshold: 0.5,
            tolerance_factor: 0.008,
            angular_bins: 12,
            radial_bins: 5,
            contour_samples: 100,
        }
    }
}

impl MetricsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance_factor > 0.0) || self.angular_bins == 0 || self.radial_bins == 0 || self.contour_samples == 0 {
            return Err(Error::invalid(format!("metrics config out of range: {self:?}")));
        }
        Ok(())
    }

    pub fn tolerance(&self, width: usize, height: usize) -> f64 {
        self.tolerance_factor * math::sqrt((width * width + height * height) as f64)
    }
}

fn check_dims(a: &BinaryMask, b: &BinaryMask, op: &'static str) -> Result<()> {
    if !a.same_dims(b) {
        return Err(Error::shape(op, "mask dimensions", format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

/// Intersection over union; 1 when both masks are empty.
pub fn iou(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    check_dims(pred, gt, "iou")?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        inter += (p && g) as usize;
        union += (p || g) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FScore {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

fn contour_points(mask: &BinaryMask) -> Vec<(usize, usize)> {
    let c = contour_extract(mask);
    let w = c.width();
    c.data()
        .iter()
        .enumerate()
        .filter(|(_, &v)| v)
        .map(|(i, _)| (i % w, i / w))
        .collect()
}

/// Contour precision, recall and F-measure under an exact maximum matching
/// of contour pixels closer than the tolerance.
pub fn f_measure(pred: &BinaryMask, gt: &BinaryMask, cfg: &MetricsConfig) -> Result<FScore> {
    check_dims(pred, gt, "f_measure")?;
    let (w, h) = gt.dims();
    let pp = contour_points(pred);
    let gp = contour_points(gt);
    match (pp.is_empty(), gp.is_empty()) {
        (true, true) => {
            return Ok(FScore {
                precision: 1.0,
                recall: 1.0,
                f: 1.0,
            })
        }
        (true, false) | (false, true) => {
            return Ok(FScore {
                precision: 0.0,
                recall: 0.0,
                f: 0.0,
            })
        }
        _ => {}
    }
    let tol = cfg.tolerance(w, h);
    let reach = math::floor(tol) as isize;
    let mut index = Grid::new(w, h, usize::MAX);
    for (k, &(x, y)) in gp.iter().enumerate() {
        index.set(x, y, k);
    }
    let adj: Vec<Vec<usize>> = pp
        .iter()
        .map(|&(x, y)| {
            let mut n = Vec::new();
            for dy in -reach..=reach {
                for dx in -reach..=reach {
                    if ((dx * dx + dy * dy) as f64) > tol * tol {
                        continue;
                    }
                    if let Some(k) = index.get_checked(x as isize + dx, y as isize + dy) {
                        if k != usize::MAX {
                            n.push(k);
                        }
                    }
                }
            }
            n
        })
        .collect();
    let matched = hopcroft_karp(&adj, gp.len()) as f64;
    let precision = matched / pp.len() as f64;
    let recall = matched / gp.len() as f64;
    let f = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(FScore { precision, recall, f })
}

/// Mean, recall and decay of a per-frame series.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Aggregate {
    pub mean: f64,
    pub recall: f64,
    pub decay: f64,
}

// Offsets from the first value keep the mean of a constant run exact.
fn mean_of(s: &[f64]) -> f64 {
    let base = s[0];
    base + s.iter().map(|v| v - base).sum::<f64>() / s.len() as f64
}

/// `M` is the mean, `O` the fraction of values above the recall threshold
/// and `D` the mean of the first temporal quartile minus that of the last.
/// Frames are split into four consecutive bins, remainder frames going to
/// the earliest bins; with fewer than four frames `D` is first minus last.
pub fn aggregate(values: &[f64], cfg: &MetricsConfig) -> Result<Aggregate> {
    if values.is_empty() {
        return Err(Error::invalid("aggregate: empty series"));
    }
    let n = values.len();
    let mean = mean_of(values);
    let recall = values.iter().filter(|&&v| v > cfg.recall_threshold).count() as f64 / n as f64;
    let decay = if n < 4 {
        values[0] - values[n - 1]
    } else {
        let (q, rem) = (n / 4, n % 4);
        let sizes: Vec<usize> = (0..4).map(|i| q + (i < rem) as usize).collect();
        let first = &values[..sizes[0]];
        let last = &values[n - sizes[3]..];
        mean_of(first) - mean_of(last)
    };
    Ok(Aggregate { mean, recall, decay })
}

/// Mean over adjacent frame pairs of the optimal-assignment shape-context
/// cost between their contours. A frame without contour costs 1 per pair.
pub fn temporal_stability(masks: &[BinaryMask], cfg: &MetricsConfig) -> Result<f64> {
    cfg.validate()?;
    if masks.len() < 2 {
        return Err(Error::invalid("temporal_stability: needs at least two frames"));
    }
    let descs: Vec<Option<Vec<Vec<f64>>>> = masks
        .iter()
        .map(|m| {
            let contours = trace_boundaries(m);
            let pts = sample_contours(&contours, cfg.contour_samples);
            (!pts.is_empty()).then(|| descriptors(&pts, cfg.angular_bins, cfg.radial_bins))
        })
        .collect();
    let mut total = 0.0;
    for pair in descs.windows(2) {
        total += match (&pair[0], &pair[1]) {
            (Some(a), Some(b)) => {
                let n = a.len();
                let mut cost = vec![0.0; n * n];
                for i in 0..n {
                    for j in 0..n {
                        cost[i * n + j] = chi2(&a[i], &b[j]);
                    }
                }
                let assign = hungarian(&cost, n);
                assign.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum::<f64>() / n as f64
            }
            _ => 1.0,
        };
    }
    Ok(total / (masks.len() - 1) as f64)
}

/// Scores of one object of one sequence.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ObjectScores {
    pub sequence: String,
    pub object: u8,
    /// Per evaluated frame (the annotated first frame is skipped).
    pub j: Vec<f64>,
    pub f: Vec<f64>,
    pub j_stats: Aggregate,
    pub f_stats: Aggregate,
    pub t: f64,
}

/// Score every object of a predicted sequence against its ground truth.
pub fn evaluate_sequence(
    name: &str,
    pred: &[LabelMask],
    gt: &[LabelMask],
    num_objects: usize,
    cfg: &MetricsConfig,
) -> Result<Vec<ObjectScores>> {
    cfg.validate()?;
    if pred.len() != gt.len() || pred.len() < 2 {
        return Err(Error::invalid(format!(
            "sequence {name}: {} predicted frames for {} annotated (need at least 2)",
            pred.len(),
            gt.len()
        )));
    }
    (1..=num_objects as u8)
        .map(|id| {
            let mut j = Vec::with_capacity(pred.len() - 1);
            let mut f = Vec::with_capacity(pred.len() - 1);
            for (p, g) in pred.iter().zip(gt).skip(1) {
                let (pm, gm) = (p.plane(id), g.plane(id));
                j.push(iou(&pm, &gm)?);
                f.push(f_measure(&pm, &gm, cfg)?.f);
            }
            let planes: Vec<BinaryMask> = pred.iter().map(|p| p.plane(id)).collect();
            Ok(ObjectScores {
                sequence: name.into(),
                object: id,
                j_stats: aggregate(&j, cfg)?,
                f_stats: aggregate(&f, cfg)?,
                j,
                f,
                t: temporal_stability(&planes, cfg)?,
            })
        })
        .collect()
}

/// Mean over objects of the mean IoU over frames after the first.
pub fn mean_object_iou(pred: &[LabelMask], gt: &[LabelMask], num_objects: usize) -> Result<f64> {
    if pred.len() != gt.len() || pred.len() < 2 || num_objects == 0 {
        return Err(Error::invalid(format!(
            "mean_object_iou: {} predicted frames, {} annotated, {num_objects} objects",
            pred.len(),
            gt.len()
        )));
    }
    let mut total = 0.0;
    for id in 1..=num_objects as u8 {
        let mut s = 0.0;
        for (p, g) in pred.iter().zip(gt).skip(1) {
            s += iou(&p.plane(id), &g.plane(id))?;
        }
        total += s / (pred.len() - 1) as f64;
    }
    Ok(total / num_objects as f64)
}

/// Per-object scores with their averages.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricsReport {
    pub objects: Vec<ObjectScores>,
    pub j: Aggregate,
    pub f: Aggregate,
    pub t_mean: f64,
}

impl MetricsReport {
    pub fn from_objects(objects: Vec<ObjectScores>) -> Self {
        let n = objects.len().max(1) as f64;
        let avg = |f: &dyn Fn(&ObjectScores) -> f64| objects.iter().map(f).sum::<f64>() / n;
        let j = Aggregate {
            mean: avg(&|o| o.j_stats.mean),
            recall: avg(&|o| o.j_stats.recall),
            decay: avg(&|o| o.j_stats.decay),
        };
        let f = Aggregate {
            mean: avg(&|o| o.f_stats.mean),
            recall: avg(&|o| o.f_stats.recall),
            decay: avg(&|o| o.f_stats.decay),
        };
        let t_mean = avg(&|o| o.t);
        Self { objects, j, f, t_mean }
    }

    /// Aligned text table: one row per object and a mean row.
    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<16} {:>3} | {:>6} {:>6} {:>6} | {:>6} {:>6} {:>6} | {:>6}\n",
            "sequence", "obj", "J M", "J O", "J D", "F M", "F O", "F D", "T M"
        );
        let row = |name: &str, obj: &str, j: &Aggregate, f: &Aggregate, t: f64| {
            format!(
                "{:<16} {:>3} | {:>6.3} {:>6.3} {:>6.3} | {:>6.3} {:>6.3} {:>6.3} | {:>6.3}\n",
                name, obj, j.mean, j.recall, j.decay, f.mean, f.recall, f.decay, t
            )
        };
        for o in &self.objects {
            s += &row(&o.sequence, &format!("{}", o.object), &o.j_stats, &o.f_stats, o.t);
        }
        s += &row("mean", "", &self.j, &self.f, self.t_mean);
        s
    }
}
