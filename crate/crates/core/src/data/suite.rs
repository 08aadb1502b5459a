use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::synth::{Shape, SynthObject, SynthScene, Texture};
use crate::math;

/// Size and motion ranges of the generated synthetic corpus.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SuiteConfig {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Pixels per frame.
    pub max_speed: f32,
    /// Degrees per frame.
    pub max_rotation: f32,
    pub min_size: f32,
    pub max_size: f32,
    /// Pixels per frame of the background pan.
    pub max_background_speed: f32,
    /// Probability that an object does not move.
    pub still_fraction: f32,
    pub train_videos: usize,
    pub test_videos: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            frames: 12,
            min_objects: 1,
            max_objects: 3,
            max_speed: 3.0,
            max_rotation: 3.0,
            min_size: 7.0,
            max_size: 13.0,
            max_background_speed: 1.0,
            still_fraction: 0.2,
            train_videos: 20,
            test_videos: 8,
        }
    }
}

fn random_color<R: Rng + ?Sized>(rng: &mut R) -> [f32; 3] {
    core::array::from_fn(|_| rng.gen_range(0.0..1.0))
}

fn color_distance(a: [f32; 3], b: [f32; 3]) -> f32 {
    (0..3).map(|c| (a[c] - b[c]).abs()).sum()
}

fn mean_color(t: &Texture) -> [f32; 3] {
    core::array::from_fn(|c| 0.5 * (t.low[c] + t.high[c]))
}

fn random_texture<R: Rng + ?Sized>(rng: &mut R, avoid: &[[f32; 3]]) -> Texture {
    loop {
        let base = random_color(rng);
        if avoid.iter().all(|&a| color_distance(a, base) > 0.6) {
            let spread = rng.gen_range(0.25..0.45);
            return Texture {
                seed: rng.gen(),
                cell: rng.gen_range(3.0..6.0),
                low: core::array::from_fn(|c| (base[c] - spread).max(0.0)),
                high: core::array::from_fn(|c| (base[c] + spread).min(1.0)),
            };
        }
    }
}

fn random_shape<R: Rng + ?Sized>(rng: &mut R, cfg: &SuiteConfig) -> Shape {
    let size = rng.gen_range(cfg.min_size..=cfg.max_size);
    match rng.gen_range(0..3) {
        0 => Shape::Disk { radius: size },
        1 => Shape::Rectangle {
            half_width: size * rng.gen_range(0.6..1.0),
            half_height: size * rng.gen_range(0.6..1.0),
        },
        _ => {
            let k = rng.gen_range(5..=7);
            let mut angles: Vec<f32> = (0..k)
                .map(|i| (i as f32 + rng.gen_range(0.0..0.7)) * core::f32::consts::TAU / k as f32)
                .collect();
            angles.sort_by(f32::total_cmp);
            Shape::Polygon {
                vertices: angles
                    .iter()
                    .map(|&a| {
                        let r = size * rng.gen_range(0.7..1.1);
                        [r * math::cosf(a), r * math::sinf(a)]
                    })
                    .collect(),
            }
        }
    }
}

/// Start center and velocity keeping the center at least `margin` inside the
/// canvas for every frame.
fn random_track<R: Rng + ?Sized>(rng: &mut R, cfg: &SuiteConfig, margin: f32) -> ([f32; 2], [f32; 2]) {
    let span = (cfg.frames - 1) as f32;
    let dims = [cfg.width as f32, cfg.height as f32];
    let speed = if rng.gen_bool(cfg.still_fraction.clamp(0.0, 1.0) as f64) {
        0.0
    } else {
        rng.gen_range(0.0..=cfg.max_speed)
    };
    let heading = rng.gen_range(0.0..core::f32::consts::TAU);
    let mut v = [speed * math::cosf(heading), speed * math::sinf(heading)];
    let mut c = [0.0; 2];
    for a in 0..2 {
        let (lo, hi) = (margin, dims[a] - margin);
        let travel = v[a] * span;
        if travel.abs() > hi - lo {
            v[a] = (hi - lo) / span * v[a].signum();
        }
        let travel = v[a] * span;
        let (s_lo, s_hi) = if travel >= 0.0 { (lo, hi - travel) } else { (lo - travel, hi) };
        c[a] = if s_hi > s_lo { rng.gen_range(s_lo..s_hi) } else { s_lo };
    }
    (c, v)
}

fn background<R: Rng + ?Sized>(rng: &mut R) -> Texture {
    let mut t = random_texture(rng, &[]);
    t.cell = rng.gen_range(4.0..8.0);
    t
}

fn visible_enough(scene: &SynthScene) -> bool {
    let first = scene.render_mask(0);
    (1..=scene.num_labels() as u8).all(|l| first.data().iter().filter(|&&v| v == l).count() >= 20)
}

/// A random scene of the synthetic suite.
pub fn random_scene<R: Rng + ?Sized>(cfg: &SuiteConfig, name: &str, rng: &mut R) -> SynthScene {
    loop {
        let bg = background(rng);
        let pan = rng.gen_range(0.0..=cfg.max_background_speed);
        let heading = rng.gen_range(0.0..core::f32::consts::TAU);
        let n = rng.gen_range(cfg.min_objects..=cfg.max_objects);
        let mut colors = alloc::vec![mean_color(&bg)];
        let mut objects = Vec::with_capacity(n);
        for i in 0..n {
            let shape = random_shape(rng, cfg);
            let texture = random_texture(rng, &colors);
            colors.push(mean_color(&texture));
            let (center, velocity) = random_track(rng, cfg, 0.5 * shape.extent());
            objects.push(SynthObject {
                shape,
                texture,
                center,
                velocity,
                angle_deg: rng.gen_range(0.0..360.0),
                angular_velocity_deg: rng.gen_range(-cfg.max_rotation..=cfg.max_rotation),
                depth: i as i32,
                distractor: false,
            });
        }
        let scene = SynthScene {
            name: name.into(),
            width: cfg.width,
            height: cfg.height,
            frames: cfg.frames,
            background: bg,
            background_velocity: [pan * math::cosf(heading), pan * math::sinf(heading)],
            objects,
        };
        if visible_enough(&scene) {
            return scene;
        }
    }
}

/// The train and held-out scene lists of the default corpus.
pub fn default_suite(cfg: &SuiteConfig, seed: u64) -> (Vec<SynthScene>, Vec<SynthScene>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train = (0..cfg.train_videos)
        .map(|i| random_scene(cfg, &format!("train{i:03}"), &mut rng))
        .collect();
    let test = (0..cfg.test_videos)
        .map(|i| random_scene(cfg, &format!("test{i:03}"), &mut rng))
        .collect();
    (train, test)
}

/// A scene with one unlabelled look-alike per target, kept far from it.
pub fn outlier_scene<R: Rng + ?Sized>(cfg: &SuiteConfig, name: &str, rng: &mut R) -> SynthScene {
    let narrow = SuiteConfig {
        max_objects: cfg.max_objects.min(2),
        ..*cfg
    };
    'retry: loop {
        let mut scene = random_scene(&narrow, name, rng);
        let targets = scene.objects.clone();
        for (k, o) in targets.iter().enumerate() {
            let mut twin = None;
            for _ in 0..200 {
                let (center, velocity) = random_track(rng, cfg, 0.5 * o.shape.extent());
                let far = (0..cfg.frames).all(|t| {
                    scene.objects.iter().all(|other| {
                        let a = other.to_image([0.0, 0.0], t);
                        let b = [center[0] + velocity[0] * t as f32, center[1] + velocity[1] * t as f32];
                        let (dx, dy) = (a[0] - b[0], a[1] - b[1]);
                        let d = math::sqrtf(dx * dx + dy * dy);
                        d > 1.6 * (other.shape.extent() + o.shape.extent())
                    })
                });
                if far {
                    twin = Some(SynthObject {
                        center,
                        velocity,
                        depth: -1 - k as i32,
                        distractor: true,
                        ..o.clone()
                    });
                    break;
                }
            }
            match twin {
                Some(t) => scene.objects.push(t),
                None => continue 'retry,
            }
        }
        if visible_enough(&scene) {
            return scene;
        }
    }
}

/// Two objects moving in opposite directions that partially overlap midway.
pub fn crossing_scene(cfg: &SuiteConfig, seed: u64) -> SynthScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bg = background(&mut rng);
    let t1 = random_texture(&mut rng, &[mean_color(&bg)]);
    let t2 = random_texture(&mut rng, &[mean_color(&bg), mean_color(&t1)]);
    let (w, h) = (cfg.width as f32, cfg.height as f32);
    let span = (cfg.frames - 1) as f32;
    let size = 0.5 * (cfg.min_size + cfg.max_size);
    let speed = ((w - 3.0 * size) / span).min(cfg.max_speed);
    let track = |y: f32, dir: f32| {
        let start = 0.5 * w - dir * 0.5 * speed * span;
        ([start, y], [dir * speed, 0.0])
    };
    let (c1, v1) = track(0.5 * h - 0.5 * size, 1.0);
    let (c2, v2) = track(0.5 * h + 0.5 * size, -1.0);
    let make = |shape, texture, center, velocity, depth| SynthObject {
        shape,
        texture,
        center,
        velocity,
        angle_deg: 0.0,
        angular_velocity_deg: 0.0,
        depth,
        distractor: false,
    };
    SynthScene {
        name: "crossing".into(),
        width: cfg.width,
        height: cfg.height,
        frames: cfg.frames,
        background: bg,
        background_velocity: [0.0, 0.0],
        objects: alloc::vec![
            make(Shape::Disk { radius: size }, t1, c1, v1, 1),
            make(
                Shape::Rectangle {
                    half_width: size,
                    half_height: 0.8 * size,
                },
                t2,
                c2,
                v2,
                0
            ),
        ],
    }
}

/// Rigid translation of the whole scene (objects and background move
/// together by `shift` pixels per frame).
pub fn translation_scene(cfg: &SuiteConfig, shift: [f32; 2], seed: u64) -> SynthScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scene = random_scene(
        &SuiteConfig {
            max_speed: 0.0,
            max_rotation: 0.0,
            ..*cfg
        },
        "translation",
        &mut rng,
    );
    let span = (cfg.frames - 1) as f32;
    for o in &mut scene.objects {
        o.velocity = shift;
        o.center = [o.center[0] - 0.5 * shift[0] * span, o.center[1] - 0.5 * shift[1] * span];
    }
    scene.background_velocity = shift;
    scene
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_generate;

    #[test]
    fn suite_sizes_and_labels() {
        let cfg = SuiteConfig {
            train_videos: 3,
            test_videos: 2,
            ..SuiteConfig::default()
        };
        let (train, test) = default_suite(&cfg, 5);
        assert_eq!((train.len(), test.len()), (3, 2));
        for s in train.iter().chain(&test) {
            let v = synth_generate(s, 0).unwrap();
            v.validate().unwrap();
            assert_eq!(v.len(), 12);
            assert_eq!(v.masks[0].labels().len(), v.num_objects);
            assert!((1..=3).contains(&v.num_objects));
        }
    }

    #[test]
    fn objects_stay_mostly_inside() {
        let cfg = SuiteConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for i in 0..10 {
            let s = random_scene(&cfg, "s", &mut rng);
            for o in &s.objects {
                for t in 0..cfg.frames {
                    let c = o.to_image([0.0, 0.0], t);
                    assert!(c[0] >= 0.0 && c[0] <= 64.0 && c[1] >= 0.0 && c[1] <= 64.0, "scene {i}");
                }
            }
        }
    }

    #[test]
    fn outlier_scene_has_unlabelled_twins() {
        let cfg = SuiteConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = outlier_scene(&cfg, "o", &mut rng);
        let n = s.num_labels();
        assert_eq!(s.objects.len(), 2 * n);
        let v = synth_generate(&s, 0).unwrap();
        assert!(v.masks.iter().all(|m| m.labels().iter().all(|&l| (l as usize) <= n)));
    }

    #[test]
    fn crossing_scene_overlaps_midway() {
        let cfg = SuiteConfig::default();
        let s = crossing_scene(&cfg, 0);
        let v = synth_generate(&s, 0).unwrap();
        let full: Vec<usize> = (1..=2u8).map(|l| v.masks[0].plane(l).count()).collect();
        let mid: Vec<usize> = (1..=2u8).map(|l| v.masks[cfg.frames / 2].plane(l).count()).collect();
        assert!(mid[1] < full[1], "back object is partly hidden midway");
        assert!(mid[1] > 0);
    }
}
