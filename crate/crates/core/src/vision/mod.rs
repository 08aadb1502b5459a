//! Image geometry used around the networks: warping along optical flow,
//! bounding boxes, morphology, connected components, contours, resizing,
//! training-time mask perturbation and paired augmentation.

mod augment;
mod bbox;
mod components;
mod contour;
mod morph;
mod perturb;
mod resize;
pub mod warp;

pub use augment::{augment_pair, AugmentConfig, Augmentation};
pub use bbox::{enlarge, tight_bbox, BBox};
pub use components::connected_components;
pub use contour::{contour_extract, trace_boundaries};
pub use morph::{dilate, erode};
pub use perturb::{apply_perturbation, perturb_mask, PerturbConfig, Perturbation};
pub use resize::{resize_bilinear, resize_frame, resize_nearest};
pub use warp::{flow_magnitude, warp_backward, warp_frame, Warpable};
