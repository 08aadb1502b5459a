use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::frame::{frame_graph, FrameInput};
use super::{fit_video, resolve_flows, ModelConfig, SequenceFlows};
use crate::data::VideoRecord;
use crate::error::{Error, Result};
use crate::image::{BinaryMask, FlowField, Frame, ProbMap};
use crate::locnet::encode_delta;
use crate::segnet::seg_loss;
use crate::tensor::{Adam, AdamConfig, Graph, ParamStore, Tensor, Var};
use crate::vision::{perturb_mask, tight_bbox, AugmentConfig, Augmentation, PerturbConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Stage {
    #[default]
    Static,
    Recurrent,
    Online,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrainConfig {
    pub stage: Stage,
    /// Offline epochs.
    pub epochs: usize,
    /// Frames per unrolled window in the recurrent stage.
    pub window: usize,
    pub learning_rate: f32,
    /// Offline learning rate factor applied after every epoch.
    pub epoch_decay: f32,
    pub online_iterations: usize,
    /// Online learning rate decays linearly to this fraction of the base.
    pub online_final_fraction: f32,
    /// Weight of the box regression loss.
    pub bbox_weight: f32,
    pub augment: bool,
    pub augmentation: AugmentConfig,
    pub perturb: bool,
    pub perturbation: PerturbConfig,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage: Stage::Static,
            epochs: 10,
            window: 7,
            learning_rate: 1e-5,
            epoch_decay: 0.9,
            online_iterations: 200,
            online_final_fraction: 0.1,
            bbox_weight: 1.0,
            augment: true,
            augmentation: AugmentConfig::default(),
            perturb: true,
            perturbation: PerturbConfig::default(),
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Schedule of the synthetic protocol: the default epochs, window and
    /// iteration counts with a learning rate suited to networks trained from
    /// scratch.
    pub fn desk(stage: Stage) -> Self {
        Self {
            stage,
            learning_rate: match stage {
                Stage::Static => 1e-3,
                Stage::Recurrent => 3e-4,
                Stage::Online => 1e-3,
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid(format!("learning rate {}", self.learning_rate)));
        }
        if self.stage == Stage::Recurrent && self.window < 2 {
            return Err(Error::invalid(format!("recurrent window {} is shorter than 2", self.window)));
        }
        if !(self.epoch_decay > 0.0) || !(self.online_final_fraction > 0.0) || !(self.bbox_weight >= 0.0) {
            return Err(Error::invalid("decay factors must be positive and the box weight non-negative"));
        }
        Ok(())
    }

    /// Learning rate of offline epoch `epoch` (0-based).
    pub fn epoch_rate(&self, epoch: usize) -> f32 {
        let mut lr = self.learning_rate;
        for _ in 0..epoch {
            lr *= self.epoch_decay;
        }
        lr
    }

    /// Learning rate of online iteration `k` (0-based).
    pub fn online_rate(&self, k: usize) -> f32 {
        let span = self.online_iterations.saturating_sub(1).max(1) as f32;
        self.learning_rate * (1.0 - (1.0 - self.online_final_fraction) * k as f32 / span)
    }
}

/// Progress notice passed to the caller after every epoch (offline) or
/// every object (online).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Progress {
    pub stage: Stage,
    pub epoch: usize,
    /// 1-based object for the online stage, 0 offline.
    pub object: usize,
    pub steps: usize,
    pub loss: f64,
    pub learning_rate: f32,
}

#[derive(Clone, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainReport {
    pub stage: Stage,
    /// Mean loss per epoch (per object online).
    pub epoch_losses: Vec<f64>,
    /// Loss of every optimizer step, divided by the window length.
    pub step_losses: Vec<f64>,
}

/// One training sample: consecutive frames of one object and the map fed as
/// the prediction preceding the first of them.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub init: ProbMap,
    pub frames: Vec<Frame>,
    pub warps: Vec<Option<FlowField>>,
    pub mag_bwd: Vec<FlowField>,
    pub mag_fwd: Vec<FlowField>,
    pub targets: Vec<BinaryMask>,
}

impl Window {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Frames `start .. start + len` of object `object`, fed the
    /// (optionally perturbed) annotation of frame `start - 1`. `start == 0`
    /// builds the online sample: the first frame fed its own annotation,
    /// without warping.
    pub fn from_video<R: Rng + ?Sized>(
        video: &VideoRecord,
        flows: &SequenceFlows,
        object: u8,
        start: usize,
        len: usize,
        cfg: &TrainConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let end = start + len.max(1);
        if end > video.len() || end > video.masks.len() {
            return Err(Error::invalid(format!(
                "window {start}..{end} outside the annotated frames of {}",
                video.name
            )));
        }
        let seed = video.masks[start.saturating_sub(1)].plane(object);
        let init = if cfg.perturb {
            perturb_mask(&seed, &cfg.perturbation, rng)
        } else {
            seed
        };
        let mut w = Window {
            init: init.to_prob(),
            frames: Vec::with_capacity(len),
            warps: Vec::with_capacity(len),
            mag_bwd: Vec::with_capacity(len),
            mag_fwd: Vec::with_capacity(len),
            targets: Vec::with_capacity(len),
        };
        for t in start..end {
            let (b, f) = flows.magnitudes(t)?;
            w.frames.push(video.frames[t].clone());
            w.warps.push(if t > 0 { Some(flows.warp(t)?.clone()) } else { None });
            w.mag_bwd.push(b.clone());
            w.mag_fwd.push(f.clone());
            w.targets.push(video.masks[t].plane(object));
        }
        Ok(w)
    }

    /// Apply one random geometric augmentation to every raster.
    pub fn augmented<R: Rng + ?Sized>(&self, cfg: &AugmentConfig, rng: &mut R) -> Result<Self> {
        let (w, h) = self.init.dims();
        let a = Augmentation::sample(cfg, w, h, rng);
        let flows = |v: &[FlowField]| v.iter().map(|f| a.apply_flow(f)).collect::<Result<Vec<_>>>();
        Ok(Window {
            init: a.apply_mask(&self.init)?,
            frames: self.frames.iter().map(|f| a.apply_frame(f)).collect::<Result<_>>()?,
            warps: self
                .warps
                .iter()
                .map(|f| f.as_ref().map(|f| a.apply_flow(f)).transpose())
                .collect::<Result<_>>()?,
            mag_bwd: flows(&self.mag_bwd)?,
            mag_fwd: flows(&self.mag_fwd)?,
            targets: self.targets.iter().map(|m| a.apply_mask(m)).collect::<Result<_>>()?,
        })
    }
}

/// Unroll `window` on `g` and return the summed loss: weighted BCE of every
/// raw prediction plus the weighted box loss where a proposal exists. The
/// carried map stays on the graph, so gradients reach earlier frames
/// through the warps.
pub fn window_loss(
    g: &mut Graph,
    params: &ParamStore,
    model: &ModelConfig,
    cfg: &TrainConfig,
    window: &Window,
) -> Result<Var> {
    let (w, h) = window.init.dims();
    let mut prev = g.constant(Tensor::new(&[1, 1, h, w], window.init.data().to_vec())?);
    let mut total: Option<Var> = None;
    for k in 0..window.len() {
        let input = FrameInput {
            frame: &window.frames[k],
            warp: window.warps[k].as_ref(),
            mag_bwd: &window.mag_bwd[k],
            mag_fwd: &window.mag_fwd[k],
        };
        let nodes = frame_graph(g, params, model, &input, prev, None)?;
        let target = &window.targets[k];
        let mut loss = seg_loss(g, nodes.prob, target)?;
        if model.toggles.train_loc {
            if let (Some(delta), Some(p), Some(gt)) = (nodes.delta, nodes.proposal, tight_bbox(target, 1)) {
                let d = encode_delta(&p, &gt)?;
                let lb = g.smooth_l1(delta, &d.to_array())?;
                let lb = g.scale(lb, cfg.bbox_weight);
                loss = g.add(loss, lb)?;
            }
        }
        total = Some(match total {
            None => loss,
            Some(t) => g.add(t, loss)?,
        });
        prev = nodes.out;
    }
    total.ok_or_else(|| Error::invalid("empty training window"))
}

/// One optimizer step on `window`; returns the loss per frame.
fn train_step(
    params: &mut ParamStore,
    adam: &mut Adam,
    model: &ModelConfig,
    cfg: &TrainConfig,
    window: &Window,
    lr: f32,
) -> Result<f64> {
    let mut g = Graph::new();
    let loss = window_loss(&mut g, params, model, cfg, window)?;
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("training loss {value}")));
    }
    g.backward(loss)?;
    params.accumulate_grads(&g)?;
    adam.step_available(params, lr)?;
    params.clear_grads();
    Ok(value as f64 / window.len() as f64)
}

struct Prepared {
    videos: Vec<VideoRecord>,
    flows: Vec<SequenceFlows>,
}

fn prepare(videos: &[VideoRecord], model: &ModelConfig) -> Result<Prepared> {
    if videos.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut out = Prepared {
        videos: Vec::with_capacity(videos.len()),
        flows: Vec::with_capacity(videos.len()),
    };
    for v in videos {
        v.validate()?;
        if v.masks.len() != v.len() {
            return Err(Error::invalid(format!("training video {} is not fully annotated", v.name)));
        }
        let (p, _) = fit_video(v, model);
        out.flows.push(resolve_flows(&p, model)?);
        out.videos.push(p);
    }
    Ok(out)
}

/// Freeze the localization net while its loss is off.
fn with_loc_frozen<T>(
    params: &mut ParamStore,
    model: &ModelConfig,
    f: impl FnOnce(&mut ParamStore) -> Result<T>,
) -> Result<T> {
    let frozen = !model.toggles.train_loc;
    if frozen {
        params.set_trainable("loc/", false);
    }
    let r = f(params);
    if frozen {
        params.set_trainable("loc/", true);
    }
    r
}

fn run_offline(
    data: &Prepared,
    mut windows: Vec<(usize, u8, usize, usize)>,
    mut params: ParamStore,
    model: &ModelConfig,
    cfg: &TrainConfig,
    progress: &mut dyn FnMut(&Progress),
) -> Result<(ParamStore, TrainReport)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.adam);
    let mut report = TrainReport {
        stage: cfg.stage,
        ..TrainReport::default()
    };
    with_loc_frozen(&mut params, model, |params| {
        for epoch in 0..cfg.epochs {
            let lr = cfg.epoch_rate(epoch);
            windows.shuffle(&mut rng);
            let mut sum = 0.0;
            for &(v, obj, start, len) in &windows {
                let mut w = Window::from_video(&data.videos[v], &data.flows[v], obj, start, len, cfg, &mut rng)?;
                if cfg.augment {
                    w = w.augmented(&cfg.augmentation, &mut rng)?;
                }
                let l = train_step(params, &mut adam, model, cfg, &w, lr)?;
                report.step_losses.push(l);
                sum += l;
            }
            let mean = sum / windows.len().max(1) as f64;
            report.epoch_losses.push(mean);
            progress(&Progress {
                stage: cfg.stage,
                epoch,
                object: 0,
                steps: windows.len(),
                loss: mean,
                learning_rate: lr,
            });
        }
        Ok(())
    })?;
    Ok((params, report))
}

/// `(video, object, start, len)` of every single-frame sample whose
/// preceding annotation shows the object.
fn static_samples(data: &Prepared) -> Vec<(usize, u8, usize, usize)> {
    let mut samples = Vec::new();
    for (v, video) in data.videos.iter().enumerate() {
        for obj in 1..=video.num_objects as u8 {
            for t in 1..video.len() {
                if video.masks[t - 1].plane(obj).count() > 0 {
                    samples.push((v, obj, t, 1));
                }
            }
        }
    }
    samples
}

/// Predicted frames tiled into consecutive windows of at most `window`.
fn recurrent_windows(data: &Prepared, window: usize) -> Vec<(usize, u8, usize, usize)> {
    let mut windows = Vec::new();
    for (v, video) in data.videos.iter().enumerate() {
        let predicted = video.len().saturating_sub(1);
        for obj in 1..=video.num_objects as u8 {
            let mut start = 1;
            while start <= predicted {
                let len = window.max(1).min(predicted + 1 - start);
                if video.masks[start - 1].plane(obj).count() > 0 {
                    windows.push((v, obj, start, len));
                }
                start += len;
            }
        }
    }
    windows
}

/// Offline training on single frames: each sample feeds the perturbed
/// annotation of the previous frame, warped into the current one.
pub fn train_static(
    videos: &[VideoRecord],
    params: ParamStore,
    model: &ModelConfig,
    cfg: &TrainConfig,
    progress: &mut dyn FnMut(&Progress),
) -> Result<(ParamStore, TrainReport)> {
    model.validate()?;
    cfg.validate()?;
    let data = prepare(videos, model)?;
    let samples = static_samples(&data);
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    run_offline(&data, samples, params, model, &TrainConfig { stage: Stage::Static, ..cfg.clone() }, progress)
}

/// Offline training through time: windows of `cfg.window` frames are
/// unrolled with the predictions carried on the graph, and one optimizer step
/// is taken per window. A no-op when the recurrent toggle is off.
pub fn train_recurrent(
    videos: &[VideoRecord],
    params: ParamStore,
    model: &ModelConfig,
    cfg: &TrainConfig,
    progress: &mut dyn FnMut(&Progress),
) -> Result<(ParamStore, TrainReport)> {
    model.validate()?;
    let cfg = TrainConfig {
        stage: Stage::Recurrent,
        ..cfg.clone()
    };
    cfg.validate()?;
    if !model.toggles.rnn {
        return Ok((
            params,
            TrainReport {
                stage: Stage::Recurrent,
                ..TrainReport::default()
            },
        ));
    }
    let data = prepare(videos, model)?;
    let windows = recurrent_windows(&data, cfg.window);
    if windows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    run_offline(&data, windows, params, model, &cfg, progress)
}

/// Finetune a copy of `params` for every object on the first frame of
/// `video` (augmented, with perturbed input masks, no unrolling). Returns one
/// parameter set per object.
pub fn online_finetune(
    video: &VideoRecord,
    params: &ParamStore,
    model: &ModelConfig,
    cfg: &TrainConfig,
    progress: &mut dyn FnMut(&Progress),
) -> Result<(Vec<ParamStore>, TrainReport)> {
    model.validate()?;
    cfg.validate()?;
    video.validate()?;
    let (padded, _) = fit_video(video, model);
    let flows = resolve_flows(&padded, model)?;
    let mut out = Vec::with_capacity(video.num_objects);
    let mut report = TrainReport {
        stage: Stage::Online,
        ..TrainReport::default()
    };
    for obj in 1..=video.num_objects {
        let (p, losses) = finetune_object(&padded, &flows, params, model, cfg, obj)?;
        let mean = losses.iter().sum::<f64>() / losses.len().max(1) as f64;
        progress(&Progress {
            stage: Stage::Online,
            epoch: 0,
            object: obj,
            steps: losses.len(),
            loss: mean,
            learning_rate: cfg.online_rate(cfg.online_iterations.saturating_sub(1)),
        });
        report.epoch_losses.push(mean);
        report.step_losses.extend(losses);
        out.push(p);
    }
    Ok((out, report))
}

/// Online finetuning of one object on a stride-aligned video. Each object
/// draws from its own seeded stream, so objects can be finetuned in any
/// order or concurrently with identical results.
pub fn finetune_object(
    video: &VideoRecord,
    flows: &SequenceFlows,
    params: &ParamStore,
    model: &ModelConfig,
    cfg: &TrainConfig,
    object: usize,
) -> Result<(ParamStore, Vec<f64>)> {
    if object == 0 || object > 255 || video.masks[0].plane(object as u8).count() == 0 {
        return Err(Error::ObjectAbsent(object));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (object as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut p = params.clone();
    let mut adam = Adam::new(cfg.adam);
    let mut losses = Vec::with_capacity(cfg.online_iterations);
    let cfg = TrainConfig {
        stage: Stage::Online,
        ..cfg.clone()
    };
    with_loc_frozen(&mut p, model, |p| {
        for k in 0..cfg.online_iterations {
            let mut w = Window::from_video(video, flows, object as u8, 0, 1, &cfg, &mut rng)?;
            if cfg.augment {
                w = w.augmented(&cfg.augmentation, &mut rng)?;
            }
            losses.push(train_step(p, &mut adam, model, &cfg, &w, cfg.online_rate(k))?);
        }
        Ok(())
    })?;
    Ok((p, losses))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{random_scene, synth_generate, SuiteConfig};
    use crate::locnet::LocConfig;
    use crate::pipeline::{init_model, FlowSource};
    use crate::segnet::SegNetConfig;

    fn setup() -> (ModelConfig, Prepared, ParamStore) {
        let model = ModelConfig {
            seg: SegNetConfig {
                stages: alloc::vec![(1, 4), (1, 6), (1, 6)],
                ..SegNetConfig::default()
            },
            loc: LocConfig {
                fc_width: 8,
                roi_grid: 3,
                ..LocConfig::default()
            },
            flow_source: FlowSource::Stored,
            ..ModelConfig::default()
        };
        let suite = SuiteConfig {
            width: 24,
            height: 20,
            frames: 5,
            ..SuiteConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let videos: Vec<_> = (0..2)
            .map(|i| synth_generate(&random_scene(&suite, &format!("v{i}"), &mut rng), i).unwrap())
            .collect();
        let data = prepare(&videos, &model).unwrap();
        let params = init_model(&model, &mut rng).unwrap();
        (model, data, params)
    }

    #[test]
    fn one_frame_windows_train_like_the_static_stage() {
        let (model, data, params) = setup();
        let samples = static_samples(&data);
        assert_eq!(recurrent_windows(&data, 1), samples);
        let cfg = TrainConfig {
            epochs: 2,
            ..TrainConfig::desk(Stage::Static)
        };
        let (a, ra) = run_offline(&data, samples.clone(), params.clone(), &model, &cfg, &mut |_| {}).unwrap();
        let rcfg = TrainConfig {
            stage: Stage::Recurrent,
            window: 1,
            ..cfg
        };
        let (b, rb) = run_offline(&data, recurrent_windows(&data, 1), params, &model, &rcfg, &mut |_| {}).unwrap();
        assert!(a.bitwise_eq(&b));
        assert_eq!(ra.step_losses, rb.step_losses);
    }

    #[test]
    fn windows_tile_every_predicted_frame() {
        let (_, data, _) = setup();
        for window in [2, 3, 7] {
            for (v, video) in data.videos.iter().enumerate() {
                for obj in 1..=video.num_objects as u8 {
                    let mut covered: Vec<usize> = recurrent_windows(&data, window)
                        .iter()
                        .filter(|w| w.0 == v && w.1 == obj)
                        .flat_map(|&(_, _, s, l)| {
                            assert!(l <= window);
                            s..s + l
                        })
                        .collect();
                    covered.sort_unstable();
                    covered.dedup();
                    assert!(covered.iter().all(|&t| t >= 1 && t < video.len()));
                    if video.masks.iter().all(|m| m.plane(obj).count() > 0) {
                        assert_eq!(covered, (1..video.len()).collect::<Vec<_>>());
                    }
                }
            }
        }
    }

    #[test]
    fn recurrent_windows_shorter_than_two_are_rejected() {
        let cfg = TrainConfig {
            window: 1,
            ..TrainConfig::desk(Stage::Recurrent)
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn schedules() {
        let cfg = TrainConfig {
            learning_rate: 1.0,
            online_iterations: 11,
            ..TrainConfig::default()
        };
        assert_eq!(cfg.epoch_rate(0), 1.0);
        assert!((cfg.epoch_rate(2) - 0.81).abs() < 1e-6);
        assert_eq!(cfg.online_rate(0), 1.0);
        assert!((cfg.online_rate(10) - 0.1).abs() < 1e-6);
        assert!((cfg.online_rate(5) - 0.55).abs() < 1e-6);
    }
}
