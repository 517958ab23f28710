//! Synthetic multi-object scenarios: ground-truth tracks, noisy detections
//! and a flat-shaded renderer.

use serde::{Deserialize, Serialize};

use crate::frame::{Frame, VideoSequence};
use crate::rng::Rng;
use crate::{Error, Result};

/// Axis-aligned box in pixel coordinates, `[x1, x2) × [y1, y2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub const fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        BBox { x1, y1, x2, y2 }
    }

    pub fn width(&self) -> f64 {
        (self.x2 - self.x1).max(0.0)
    }

    pub fn height(&self) -> f64 {
        (self.y2 - self.y1).max(0.0)
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn intersection(&self, other: &BBox) -> f64 {
        let w = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0.0);
        let h = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0.0);
        w * h
    }

    pub fn within(&self, width: f64, height: f64) -> bool {
        self.x1 >= 0.0 && self.y1 >= 0.0 && self.x2 <= width && self.y2 <= height
    }

    /// Pixel index ranges whose centres fall inside the box, clipped.
    pub fn pixel_span(&self, width: usize, height: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let span = |lo: f64, hi: f64, limit: usize| {
            let a = (lo - 0.5).ceil().max(0.0) as usize;
            let b = ((hi - 0.5).ceil().max(0.0) as usize).min(limit);
            a.min(b)..b
        };
        (span(self.x1, self.x2, width), span(self.y1, self.y2, height))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// Independent random starts and headings.
    #[default]
    Random,
    /// Pairs of objects on shared lanes, moving toward each other so that
    /// they overlap around the middle of the sequence.
    Crossing,
}

/// Synchronised stop-and-go motion: every object advances for `moving`
/// frames, then holds still for `paused` frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StopGo {
    pub moving: usize,
    pub paused: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectionNoise {
    /// Standard deviation of the box-centre offset, pixels.
    pub jitter_sigma: f64,
    pub miss_prob: f64,
}

impl Default for DetectionNoise {
    fn default() -> Self {
        DetectionNoise {
            jitter_sigma: 0.0,
            miss_prob: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSpec {
    pub width: usize,
    pub height: usize,
    pub n_frames: usize,
    pub n_objects: usize,
    /// Box side length range `[min, max]`, pixels.
    pub box_size: [f64; 2],
    /// Speed range `[min, max]`, pixels per frame.
    pub speed: [f64; 2],
    pub layout: Layout,
    /// Per-frame ground-truth position noise, pixels.
    pub motion_jitter: f64,
    pub stop_go: Option<StopGo>,
    pub detection: DetectionNoise,
    pub background: u8,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            width: 320,
            height: 240,
            n_frames: 30,
            n_objects: 2,
            box_size: [24.0, 40.0],
            speed: [2.0, 6.0],
            layout: Layout::Random,
            motion_jitter: 0.0,
            stop_go: None,
            detection: DetectionNoise::default(),
            background: 32,
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_objects == 0 {
            return Err(Error::invalid_spec("scenario needs at least one object"));
        }
        if self.n_frames == 0 {
            return Err(Error::invalid_spec("scenario needs at least one frame"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid_spec("frame dimensions must be positive"));
        }
        let [lo, hi] = self.box_size;
        if !(lo > 0.0 && lo <= hi && hi <= self.width.min(self.height) as f64) {
            return Err(Error::invalid_spec(format!(
                "box_size {:?} must be positive, ordered and fit the frame",
                self.box_size
            )));
        }
        let [slo, shi] = self.speed;
        if !(slo >= 0.0 && slo <= shi && shi.is_finite()) {
            return Err(Error::invalid_spec("speed range must be ordered and non-negative"));
        }
        if !(self.motion_jitter >= 0.0 && self.detection.jitter_sigma >= 0.0) {
            return Err(Error::invalid_spec("noise magnitudes must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.detection.miss_prob) {
            return Err(Error::invalid_spec("miss_prob must lie in [0, 1]"));
        }
        if let Some(sg) = self.stop_go {
            if sg.moving == 0 {
                return Err(Error::invalid_spec("stop_go.moving must be positive"));
            }
        }
        Ok(())
    }

    fn is_moving(&self, step: usize) -> bool {
        match self.stop_go {
            None => true,
            Some(StopGo { moving, paused }) => step % (moving + paused) < moving,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectTrack {
    pub id: u64,
    /// One entry per frame; `None` when the object is absent.
    pub boxes: Vec<Option<BBox>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTruth {
    pub width: usize,
    pub height: usize,
    pub n_frames: usize,
    pub background: u8,
    pub seed: u64,
    pub objects: Vec<ObjectTrack>,
    pub detections: Vec<Vec<BBox>>,
}

impl ScenarioTruth {
    /// Ground truth and detections for the frames where `kept[i]` holds,
    /// renumbered from 0.
    pub fn restrict(&self, kept: &[bool]) -> Result<ScenarioTruth> {
        if kept.len() != self.n_frames {
            return Err(Error::contract(format!(
                "selection covers {} frames, scenario has {}",
                kept.len(),
                self.n_frames
            )));
        }
        let pick = |i: &usize| kept[*i];
        let objects = self
            .objects
            .iter()
            .map(|o| ObjectTrack {
                id: o.id,
                boxes: (0..self.n_frames).filter(pick).map(|i| o.boxes[i]).collect(),
            })
            .collect();
        let detections = (0..self.n_frames)
            .filter(pick)
            .map(|i| self.detections[i].clone())
            .collect();
        Ok(ScenarioTruth {
            n_frames: kept.iter().filter(|&&k| k).count(),
            objects,
            detections,
            ..self.clone()
        })
    }

    pub fn gt_boxes(&self, frame: usize) -> Vec<(u64, BBox)> {
        self.objects
            .iter()
            .filter_map(|o| o.boxes[frame].map(|b| (o.id, b)))
            .collect()
    }

    pub fn gt_total(&self) -> usize {
        self.objects
            .iter()
            .map(|o| o.boxes.iter().filter(|b| b.is_some()).count())
            .sum()
    }

    pub fn validate(&self) -> Result<()> {
        let (w, h) = (self.width as f64, self.height as f64);
        if self.detections.len() != self.n_frames {
            return Err(Error::invalid_spec("detections do not cover every frame"));
        }
        let mut ids = std::collections::HashSet::new();
        for o in &self.objects {
            if !ids.insert(o.id) {
                return Err(Error::invalid_spec(format!("duplicate object id {}", o.id)));
            }
            if o.boxes.len() != self.n_frames {
                return Err(Error::invalid_spec(format!("object {} misses frames", o.id)));
            }
            if o.boxes.iter().flatten().any(|b| !b.within(w, h)) {
                return Err(Error::invalid_spec(format!("object {} leaves the frame", o.id)));
            }
        }
        if self.detections.iter().flatten().any(|b| !b.within(w, h)) {
            return Err(Error::invalid_spec("detection outside the frame"));
        }
        Ok(())
    }
}

struct Mover {
    x: f64,
    y: f64,
    size: f64,
    vx: f64,
    vy: f64,
}

impl Mover {
    fn advance(&mut self, w: f64, h: f64) {
        self.x += self.vx;
        self.y += self.vy;
        reflect(&mut self.x, &mut self.vx, w - self.size);
        reflect(&mut self.y, &mut self.vy, h - self.size);
    }
}

fn reflect(pos: &mut f64, vel: &mut f64, max: f64) {
    if max <= 0.0 {
        *pos = 0.0;
        return;
    }
    // A single bounce suffices while |vel| < max.
    for _ in 0..4 {
        if *pos < 0.0 {
            *pos = -*pos;
            *vel = -*vel;
        } else if *pos > max {
            *pos = 2.0 * max - *pos;
            *vel = -*vel;
        } else {
            return;
        }
    }
    *pos = pos.clamp(0.0, max);
}

fn clamp_box(x: f64, y: f64, size: f64, w: f64, h: f64) -> BBox {
    let x = x.clamp(0.0, (w - size).max(0.0));
    let y = y.clamp(0.0, (h - size).max(0.0));
    BBox::new(x, y, (x + size).min(w), (y + size).min(h))
}

fn initial_movers(spec: &ScenarioSpec, rng: &mut Rng) -> Vec<Mover> {
    let (w, h) = (spec.width as f64, spec.height as f64);
    let mut movers = Vec::with_capacity(spec.n_objects);
    match spec.layout {
        Layout::Random => {
            for _ in 0..spec.n_objects {
                let size = rng.uniform_range(spec.box_size[0], spec.box_size[1]);
                let speed = rng.uniform_range(spec.speed[0], spec.speed[1]);
                let heading = rng.uniform_range(0.0, std::f64::consts::TAU);
                movers.push(Mover {
                    x: rng.uniform_range(0.0, w - size),
                    y: rng.uniform_range(0.0, h - size),
                    size,
                    vx: speed * heading.cos(),
                    vy: speed * heading.sin(),
                });
            }
        }
        Layout::Crossing => {
            let meet = spec.n_frames / 2;
            let steps = (1..=meet).filter(|&t| spec.is_moving(t - 1)).count() as f64;
            let lanes = spec.n_objects.div_ceil(2);
            let lane_h = h / lanes as f64;
            let mut meet_x = 0.0;
            let mut lane_y = 0.0;
            for k in 0..spec.n_objects {
                if k % 2 == 0 {
                    let lane = (k / 2) as f64;
                    meet_x = w * rng.uniform_range(0.4, 0.6);
                    lane_y = lane_h * (lane + 0.5 + rng.uniform_range(-0.1, 0.1));
                }
                let size = rng.uniform_range(spec.box_size[0], spec.box_size[1]);
                let speed = rng.uniform_range(spec.speed[0], spec.speed[1]);
                let dy = rng.uniform_range(-0.15, 0.15) * size;
                let dir = if k % 2 == 0 { 1.0 } else { -1.0 };
                let x = (meet_x - dir * speed * steps - size / 2.0).clamp(0.0, w - size);
                movers.push(Mover {
                    x,
                    y: (lane_y + dy - size / 2.0).clamp(0.0, h - size),
                    size,
                    vx: dir * speed,
                    vy: 0.0,
                });
            }
        }
    }
    movers
}

pub fn synth_scenario(spec: &ScenarioSpec, seed: u64) -> Result<ScenarioTruth> {
    spec.validate()?;
    let root = Rng::new(seed, 0);
    let mut motion = root.split(1);
    let mut noise = root.split(2);
    let (w, h) = (spec.width as f64, spec.height as f64);

    let mut movers = initial_movers(spec, &mut motion);
    let mut objects: Vec<ObjectTrack> = (0..spec.n_objects)
        .map(|i| ObjectTrack {
            id: i as u64 + 1,
            boxes: Vec::with_capacity(spec.n_frames),
        })
        .collect();

    for t in 0..spec.n_frames {
        if t > 0 && spec.is_moving(t - 1) {
            for m in &mut movers {
                m.advance(w, h);
            }
        }
        for (m, obj) in movers.iter().zip(&mut objects) {
            let (jx, jy) = if spec.motion_jitter > 0.0 {
                (
                    motion.normal(0.0, spec.motion_jitter),
                    motion.normal(0.0, spec.motion_jitter),
                )
            } else {
                (0.0, 0.0)
            };
            obj.boxes.push(Some(clamp_box(m.x + jx, m.y + jy, m.size, w, h)));
        }
    }

    let det = spec.detection;
    let detections = (0..spec.n_frames)
        .map(|t| {
            let mut frame_dets = Vec::with_capacity(objects.len());
            for obj in &objects {
                let Some(b) = obj.boxes[t] else { continue };
                if det.miss_prob > 0.0 && noise.bernoulli(det.miss_prob) {
                    continue;
                }
                if det.jitter_sigma > 0.0 {
                    let dx = noise.normal(0.0, det.jitter_sigma);
                    let dy = noise.normal(0.0, det.jitter_sigma);
                    frame_dets.push(clamp_box(b.x1 + dx, b.y1 + dy, b.width(), w, h));
                } else {
                    frame_dets.push(b);
                }
            }
            frame_dets
        })
        .collect();

    Ok(ScenarioTruth {
        width: spec.width,
        height: spec.height,
        n_frames: spec.n_frames,
        background: spec.background,
        seed,
        objects,
        detections,
    })
}

const PALETTE: [[u8; 3]; 12] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 212],
    [0, 128, 128],
    [220, 190, 255],
];

/// Fill colour used for object `id` (ids start at 1).
pub fn object_color(id: u64) -> [u8; 3] {
    let i = id.saturating_sub(1);
    if (i as usize) < PALETTE.len() {
        PALETTE[i as usize]
    } else {
        let c = |m: u64| (96 + (i.wrapping_mul(m) % 160)) as u8;
        [c(67), c(131), c(29)]
    }
}

pub fn render_scenario(truth: &ScenarioTruth) -> Result<VideoSequence> {
    truth.validate()?;
    let bg = truth.background;
    let frames = (0..truth.n_frames)
        .map(|t| {
            let mut f = Frame::filled(truth.width, truth.height, t, [bg, bg, bg])?;
            for obj in &truth.objects {
                let Some(b) = obj.boxes[t] else { continue };
                let color = object_color(obj.id);
                let (xs, ys) = b.pixel_span(truth.width, truth.height);
                for y in ys {
                    for x in xs.clone() {
                        f.set_pixel(x, y, color);
                    }
                }
            }
            Ok(f)
        })
        .collect::<Result<Vec<_>>>()?;
    VideoSequence::new(frames, VideoSequence::DEFAULT_FPS)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(n_objects: usize, n_frames: usize) -> ScenarioSpec {
        ScenarioSpec {
            n_objects,
            n_frames,
            ..ScenarioSpec::default()
        }
    }

    #[test]
    fn zero_noise_detections_equal_truth() {
        let t = synth_scenario(&spec(2, 10), 3).unwrap();
        for f in 0..10 {
            let gt: Vec<BBox> = t.gt_boxes(f).into_iter().map(|(_, b)| b).collect();
            assert_eq!(t.detections[f], gt);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let mut s = spec(5, 60);
        s.detection = DetectionNoise {
            jitter_sigma: 2.0,
            miss_prob: 0.1,
        };
        let a = synth_scenario(&s, 11).unwrap();
        let b = synth_scenario(&s, 11).unwrap();
        assert_eq!(a, b);
        let c = synth_scenario(&s, 12).unwrap();
        assert_ne!(a, c);
        assert!(a.detections.iter().all(|d| d.len() <= 5));
        a.validate().unwrap();
    }

    #[test]
    fn rejects_empty_specs() {
        assert!(matches!(synth_scenario(&spec(0, 10), 0), Err(Error::InvalidSpec(_))));
        assert!(matches!(synth_scenario(&spec(2, 0), 0), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn crossing_pairs_meet_near_middle() {
        let mut s = spec(2, 40);
        s.layout = Layout::Crossing;
        s.speed = [4.0, 4.0];
        s.box_size = [30.0, 30.0];
        let t = synth_scenario(&s, 5).unwrap();
        let a = t.objects[0].boxes[20].unwrap();
        let b = t.objects[1].boxes[20].unwrap();
        assert!(a.intersection(&b) > 0.0);
        let a0 = t.objects[0].boxes[0].unwrap();
        let b0 = t.objects[1].boxes[0].unwrap();
        assert!(a0.x1 < b0.x1);
    }

    #[test]
    fn stop_go_holds_position() {
        let mut s = spec(1, 12);
        s.stop_go = Some(StopGo { moving: 2, paused: 2 });
        s.speed = [5.0, 5.0];
        let t = synth_scenario(&s, 1).unwrap();
        let b = &t.objects[0].boxes;
        // steps 0,1 move (frames 1,2 differ); steps 2,3 pause (frames 3,4 equal frame 2)
        assert_ne!(b[0], b[1]);
        assert_ne!(b[1], b[2]);
        assert_eq!(b[2], b[3]);
        assert_eq!(b[3], b[4]);
        assert_ne!(b[4], b[5]);
    }

    #[test]
    fn render_static_box_is_constant() {
        let mut s = spec(1, 5);
        s.speed = [0.0, 0.0];
        let t = synth_scenario(&s, 9).unwrap();
        let v = render_scenario(&t).unwrap();
        for f in v.frames() {
            assert_eq!(f.data(), v.frames()[0].data());
        }
    }

    #[test]
    fn render_empty_frame_is_background() {
        let mut t = synth_scenario(&spec(1, 2), 0).unwrap();
        t.objects[0].boxes[1] = None;
        t.detections[1].clear();
        let v = render_scenario(&t).unwrap();
        let f = &v.frames()[1];
        assert!(f.data().iter().all(|&p| p == t.background));
    }

    #[test]
    fn restrict_keeps_selected_frames() {
        let t = synth_scenario(&spec(2, 6), 4).unwrap();
        let kept = [true, false, true, true, false, true];
        let r = t.restrict(&kept).unwrap();
        assert_eq!(r.n_frames, 4);
        assert_eq!(r.objects[0].boxes[1], t.objects[0].boxes[2]);
        assert_eq!(r.detections[3], t.detections[5]);
        assert!(t.restrict(&[true]).is_err());
    }

    #[test]
    fn palette_colors_distinct() {
        let cs: Vec<_> = (1..=12).map(object_color).collect();
        for i in 0..cs.len() {
            for j in i + 1..cs.len() {
                assert_ne!(cs[i], cs[j]);
            }
        }
    }
}
