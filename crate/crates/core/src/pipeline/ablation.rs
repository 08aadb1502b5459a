use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{infer, init_model, online_finetune, train_recurrent, train_static, ModelConfig, Progress, Stage, Toggles, TrainConfig};
use crate::data::{default_suite, outlier_scene, synth_generate, SuiteConfig, VideoRecord};
use crate::error::Result;
use crate::metrics::mean_object_iou;
use crate::tensor::ParamStore;

/// One row of the ablation table.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AblationRow {
    pub name: String,
    pub toggles: Toggles,
}

/// The cumulative rows: appearance stream alone, then flow stream, mask
/// warping, box training, box restriction and recurrent training added one
/// at a time.
pub fn ablation_rows() -> Vec<AblationRow> {
    let off = Toggles {
        flow_stream: false,
        warp_mask: false,
        train_loc: false,
        apply_loc: false,
        rnn: false,
    };
    let steps: [(&str, fn(&mut Toggles)); 6] = [
        ("AStream", |_| {}),
        ("+FStream", |t| t.flow_stream = true),
        ("+Warp mask", |t| t.warp_mask = true),
        ("+Train", |t| t.train_loc = true),
        ("+Apply", |t| t.apply_loc = true),
        ("+RNN", |t| t.rnn = true),
    ];
    let mut t = off;
    steps
        .iter()
        .map(|(name, f)| {
            f(&mut t);
            AblationRow {
                name: (*name).into(),
                toggles: t,
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct AblationConfig {
    pub suite: SuiteConfig,
    /// Extra held-out videos with an unlabelled look-alike per object.
    pub outlier_videos: usize,
    pub seeds: Vec<u64>,
    pub model: ModelConfig,
    pub static_stage: TrainConfig,
    pub recurrent_stage: TrainConfig,
    pub online_stage: TrainConfig,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            suite: SuiteConfig {
                frames: 8,
                train_videos: 8,
                test_videos: 4,
                ..SuiteConfig::default()
            },
            outlier_videos: 4,
            seeds: (0..5).collect(),
            model: ModelConfig::desk(),
            static_stage: TrainConfig {
                epochs: 4,
                ..TrainConfig::desk(Stage::Static)
            },
            recurrent_stage: TrainConfig {
                epochs: 2,
                window: 4,
                ..TrainConfig::desk(Stage::Recurrent)
            },
            online_stage: TrainConfig {
                online_iterations: 30,
                ..TrainConfig::desk(Stage::Online)
            },
        }
    }
}

/// Scores of every row for one seed.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AblationSeedResult {
    pub seed: u64,
    pub rows: Vec<String>,
    /// Mean per-object IoU on the held-out videos, one per row.
    pub test_iou: Vec<f64>,
    /// The same on the outlier videos.
    pub outlier_iou: Vec<f64>,
}

fn evaluate(videos: &[VideoRecord], finetuned: &[Vec<ParamStore>], model: &ModelConfig) -> Result<f64> {
    let mut total = 0.0;
    for (v, p) in videos.iter().zip(finetuned) {
        let pred = infer(v, p, model)?;
        total += mean_object_iou(&pred.masks, &v.masks, v.num_objects)?;
    }
    Ok(total / videos.len().max(1) as f64)
}

fn generate(cfg: &AblationConfig, seed: u64) -> Result<(Vec<VideoRecord>, Vec<VideoRecord>, Vec<VideoRecord>)> {
    let (train, test) = default_suite(&cfg.suite, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0u64.wrapping_sub(1));
    let outliers: Vec<_> = (0..cfg.outlier_videos)
        .map(|i| outlier_scene(&cfg.suite, &format!("outlier{i:03}"), &mut rng))
        .collect();
    let render = |s: &[crate::data::SynthScene]| s.iter().map(|s| synth_generate(s, seed)).collect::<Result<Vec<_>>>();
    Ok((render(&train)?, render(&test)?, render(&outliers)?))
}

/// Train and evaluate every row for every seed. Rows whose training-relevant
/// switches agree share trained parameters: restriction only changes
/// inference unless the recurrent stage is on.
pub fn run_ablation(
    cfg: &AblationConfig,
    rows: &[AblationRow],
    progress: &mut dyn FnMut(&str, &Progress),
) -> Result<Vec<AblationSeedResult>> {
    let mut results = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let (train, test, outliers) = generate(cfg, seed)?;
        let mut offline: BTreeMap<(bool, bool, bool, bool, bool), ParamStore> = BTreeMap::new();
        let mut online: BTreeMap<(bool, bool, bool, bool, bool), (Vec<Vec<ParamStore>>, Vec<Vec<ParamStore>>)> =
            BTreeMap::new();
        let mut res = AblationSeedResult {
            seed,
            rows: Vec::new(),
            test_iou: Vec::new(),
            outlier_iou: Vec::new(),
        };
        for row in rows {
            let t = row.toggles;
            let model = ModelConfig {
                toggles: t,
                ..cfg.model.clone()
            };
            let static_key = (t.flow_stream, t.warp_mask, t.train_loc, false, false);
            let key = if t.rnn {
                (t.flow_stream, t.warp_mask, t.train_loc, t.apply_loc, true)
            } else {
                static_key
            };
            let mut log = |p: &Progress| progress(&row.name, p);
            if !offline.contains_key(&static_key) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let init = init_model(&model, &mut rng)?;
                let sc = TrainConfig {
                    seed,
                    ..cfg.static_stage.clone()
                };
                let (p, _) = train_static(&train, init, &model, &sc, &mut log)?;
                offline.insert(static_key, p);
            }
            if !offline.contains_key(&key) {
                let rc = TrainConfig {
                    seed,
                    ..cfg.recurrent_stage.clone()
                };
                let (p, _) = train_recurrent(&train, offline[&static_key].clone(), &model, &rc, &mut log)?;
                offline.insert(key, p);
            }
            if !online.contains_key(&key) {
                let oc = TrainConfig {
                    seed,
                    ..cfg.online_stage.clone()
                };
                let mut tune = |videos: &[VideoRecord]| -> Result<Vec<Vec<ParamStore>>> {
                    videos
                        .iter()
                        .map(|v| online_finetune(v, &offline[&key], &model, &oc, &mut log).map(|r| r.0))
                        .collect()
                };
                let a = tune(&test)?;
                let b = tune(&outliers)?;
                online.insert(key, (a, b));
            }
            let (a, b) = &online[&key];
            res.rows.push(row.name.clone());
            res.test_iou.push(evaluate(&test, a, &model)?);
            res.outlier_iou.push(evaluate(&outliers, b, &model)?);
        }
        results.push(res);
    }
    Ok(results)
}

/// Mean over seeds per row, as an aligned text table.
pub fn ablation_table(results: &[AblationSeedResult]) -> String {
    let Some(first) = results.first() else {
        return String::new();
    };
    let n = results.len() as f64;
    let mut s = format!("{:<12} {:>9} {:>9}\n", "row", "IoU", "outlier");
    for (k, name) in first.rows.iter().enumerate() {
        let t = results.iter().map(|r| r.test_iou[k]).sum::<f64>() / n;
        let o = results.iter().map(|r| r.outlier_iou[k]).sum::<f64>() / n;
        s += &format!("{name:<12} {t:>9.4} {o:>9.4}\n");
    }
    s
}
