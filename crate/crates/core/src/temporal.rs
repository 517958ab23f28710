//! Temporal frame filtering with a regularised policy gradient.
//!
//! A logistic scorer maps per-frame motion features to a retain
//! probability `G(v_i)`. Frames are kept by independent Bernoulli draws and
//! the selection is rewarded with `R = -IDSw / n'` from the greedy tracker.
//! Training minimises
//!
//! ```text
//! J = -R · Σ log p(G(v_i)) + α · Σ (G(v_i) - μ)²
//! ```
//!
//! where `p(G) = G` for kept frames and `1 - G` for dropped frames.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::frame::{rgb_to_gray, Frame, GrayPlane};
use crate::metrics::{count_idsw, evaluate, greedy_iou_tracker, MotScores, DEFAULT_IOU_THRESHOLD};
use crate::rng::Rng;
use crate::scenario::{render_scenario, Layout, ScenarioSpec, ScenarioTruth, StopGo};
use crate::util::floor_count;
use crate::{Error, Result};

pub const N_FEATURES: usize = 5;

pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "mean_abs_diff",
    "max_cell_abs_diff",
    "frac_abs_diff_gt_10",
    "gray_std",
    "bias",
];

/// Scores are clamped to `[SCORE_EPS, 1 - SCORE_EPS]`.
pub const SCORE_EPS: f64 = 1e-6;

pub type Features = [f64; N_FEATURES];

const GRID: usize = 8;
const DIFF_LEVEL: f64 = 10.0;

/// Motion features of `cur` relative to `prev`. Intensity-valued features
/// are divided by 255 so every entry lies in `[0, 1]`.
pub fn frame_features(prev: Option<&Frame>, cur: &Frame) -> Result<Features> {
    let g = rgb_to_gray(cur);
    let prev = match prev {
        Some(p) if p.width() != cur.width() || p.height() != cur.height() => {
            return Err(Error::contract("frame_features: frame dimensions differ"));
        }
        Some(p) => Some(rgb_to_gray(p)),
        None => None,
    };
    Ok(gray_features(prev.as_ref(), &g))
}

pub(crate) fn gray_features(prev: Option<&GrayPlane>, cur: &GrayPlane) -> Features {
    let n = cur.data.len() as f64;
    let mean = cur.data.iter().sum::<f64>() / n;
    let var = cur.data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt() / 255.0;

    let Some(prev) = prev else {
        return [0.0, 0.0, 0.0, std, 1.0];
    };
    let diff: Vec<f64> = cur.data.iter().zip(&prev.data).map(|(a, b)| (a - b).abs()).collect();
    let mean_diff = diff.iter().sum::<f64>() / n;
    let frac = diff.iter().filter(|&&d| d > DIFF_LEVEL).count() as f64 / n;

    let (w, h) = (cur.width, cur.height);
    let mut max_cell = 0.0f64;
    for gy in 0..GRID {
        let (y0, y1) = (gy * h / GRID, (gy + 1) * h / GRID);
        for gx in 0..GRID {
            let (x0, x1) = (gx * w / GRID, (gx + 1) * w / GRID);
            let count = (y1 - y0) * (x1 - x0);
            if count == 0 {
                continue;
            }
            let sum: f64 = (y0..y1).map(|y| diff[y * w + x0..y * w + x1].iter().sum::<f64>()).sum();
            max_cell = max_cell.max(sum / count as f64);
        }
    }
    [mean_diff / 255.0, max_cell / 255.0, frac, std, 1.0]
}

/// Features for every frame of a rendered scenario. Frame 0 has no
/// predecessor.
pub fn sequence_features(frames: &[Frame]) -> Result<Vec<Features>> {
    let grays: Vec<GrayPlane> = frames.iter().map(rgb_to_gray).collect();
    Ok((0..grays.len())
        .map(|i| gray_features(i.checked_sub(1).map(|p| &grays[p]), &grays[i]))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub feature_spec: Vec<String>,
}

impl Default for PolicyParams {
    fn default() -> Self {
        PolicyParams {
            weights: vec![0.0; N_FEATURES],
            bias: 0.0,
            feature_spec: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl PolicyParams {
    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != self.feature_spec.len() {
            return Err(Error::contract("policy weights do not match feature_spec"));
        }
        if self.weights.len() != N_FEATURES {
            return Err(Error::contract(format!(
                "policy expects {N_FEATURES} features, got {}",
                self.weights.len()
            )));
        }
        if !self.bias.is_finite() || self.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::contract("policy parameters must be finite"));
        }
        Ok(())
    }

    /// Flattened parameter vector: weights then bias.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.weights.clone();
        v.push(self.bias);
        v
    }

    pub fn from_vec(v: &[f64]) -> Self {
        let (w, b) = v.split_at(v.len() - 1);
        PolicyParams {
            weights: w.to_vec(),
            bias: b[0],
            ..PolicyParams::default()
        }
    }

    fn logit(&self, features: &Features) -> f64 {
        self.weights.iter().zip(features).map(|(w, f)| w * f).sum::<f64>() + self.bias
    }
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Retain probability `G(v_i)`.
pub fn policy_score(params: &PolicyParams, features: &Features) -> f64 {
    logistic(params.logit(features)).clamp(SCORE_EPS, 1.0 - SCORE_EPS)
}

fn score_is_clamped(params: &PolicyParams, features: &Features) -> bool {
    let raw = logistic(params.logit(features));
    !(SCORE_EPS..=1.0 - SCORE_EPS).contains(&raw)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionOutcome {
    pub scores: Vec<f64>,
    pub kept: Vec<bool>,
    pub log_probs: Vec<f64>,
    pub n_prime: usize,
}

impl SelectionOutcome {
    pub fn from_parts(scores: Vec<f64>, kept: Vec<bool>) -> Self {
        let log_probs = scores
            .iter()
            .zip(&kept)
            .map(|(&g, &k)| if k { g.ln() } else { (1.0 - g).ln() })
            .collect();
        let n_prime = kept.iter().filter(|&&k| k).count();
        SelectionOutcome {
            scores,
            kept,
            log_probs,
            n_prime,
        }
    }

    pub fn drop_ratio(&self) -> f64 {
        if self.kept.is_empty() {
            0.0
        } else {
            1.0 - self.n_prime as f64 / self.kept.len() as f64
        }
    }
}

pub fn sample_selection(scores: &[f64], rng: &mut Rng) -> SelectionOutcome {
    let kept = scores.iter().map(|&g| rng.bernoulli(g)).collect();
    SelectionOutcome::from_parts(scores.to_vec(), kept)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackerConfig {
    pub iou_threshold: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            iou_threshold: DEFAULT_IOU_THRESHOLD,
        }
    }
}

/// `-IDSw(v') / n'` of the greedy tracker run on the kept frames only.
pub fn reward(truth: &ScenarioTruth, kept: &[bool], tracker: &TrackerConfig) -> Result<f64> {
    let n_prime = kept.iter().filter(|&&k| k).count();
    if n_prime < 2 {
        return Err(Error::DegenerateSelection(format!(
            "reward needs at least 2 kept frames, got {n_prime}"
        )));
    }
    let sub = truth.restrict(kept)?;
    let assignment = greedy_iou_tracker(&sub.detections, tracker.iou_threshold);
    let idsw = count_idsw(&sub, &assignment, tracker.iou_threshold)?;
    Ok(-(idsw as f64) / n_prime as f64)
}

/// Tracker scores on the kept frames only.
pub fn evaluate_selection(truth: &ScenarioTruth, kept: &[bool], tracker: &TrackerConfig) -> Result<MotScores> {
    let sub = truth.restrict(kept)?;
    let assignment = greedy_iou_tracker(&sub.detections, tracker.iou_threshold);
    evaluate(&sub, &assignment, tracker.iou_threshold)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectiveConfig {
    pub alpha: f64,
    pub mu: f64,
    pub learning_rate: f64,
    pub episodes: usize,
    pub seed: u64,
    /// Subtract a moving average of past episode rewards from `R` in the
    /// gradient step. The reported objective always uses the raw `R`.
    pub reward_baseline: bool,
    /// Weight of the previous baseline in the moving average.
    pub baseline_momentum: f64,
    /// Independent selections sampled per scenario in each episode.
    pub rollouts: usize,
    pub optimizer: Optimizer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    /// `θ ← θ − lr·∇J`.
    Sgd,
    /// Adam (β₁ = 0.9, β₂ = 0.999, ε = 1e-8) on the same gradient.
    #[default]
    Adam,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..theta.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * grad[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            theta[i] -= lr * mh / (vh.sqrt() + Self::EPS);
        }
    }
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            alpha: 0.5,
            mu: 0.6,
            learning_rate: 0.5,
            episodes: 300,
            seed: 0,
            reward_baseline: true,
            baseline_momentum: 0.9,
            rollouts: 4,
            optimizer: Optimizer::Adam,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid_config("alpha must be finite and >= 0"));
        }
        if !(self.mu > 0.0 && self.mu < 1.0) {
            return Err(Error::invalid_config("mu must lie in (0, 1)"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid_config("learning_rate must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.baseline_momentum) {
            return Err(Error::invalid_config("baseline_momentum must lie in [0, 1)"));
        }
        if self.rollouts == 0 {
            return Err(Error::invalid_config("rollouts must be >= 1"));
        }
        if self.episodes == 0 {
            return Err(Error::invalid_config("episodes must be >= 1"));
        }
        Ok(())
    }
}

pub fn objective(outcome: &SelectionOutcome, reward: f64, config: &ObjectiveConfig) -> f64 {
    let log_sum: f64 = outcome.log_probs.iter().sum();
    let reg: f64 = outcome.scores.iter().map(|g| (g - config.mu) * (g - config.mu)).sum();
    -reward * log_sum + config.alpha * reg
}

/// Analytic `∂J/∂(w, b)`, laid out as [`PolicyParams::to_vec`]. Frames whose
/// score sits in the clamp region contribute nothing.
pub fn policy_gradient(
    outcome: &SelectionOutcome,
    reward: f64,
    features: &[Features],
    config: &ObjectiveConfig,
    params: &PolicyParams,
) -> Vec<f64> {
    let mut grad = vec![0.0; params.weights.len() + 1];
    for ((phi, &g), &kept) in features.iter().zip(&outcome.scores).zip(&outcome.kept) {
        if score_is_clamped(params, phi) {
            continue;
        }
        let dlogp = if kept { 1.0 - g } else { -g };
        let dz = -reward * dlogp + 2.0 * config.alpha * (g - config.mu) * g * (1.0 - g);
        for (gk, f) in grad.iter_mut().zip(phi) {
            *gk += dz * f;
        }
        *grad.last_mut().unwrap() += dz;
    }
    grad
}

/// A scenario prepared for training: truth plus per-frame features.
#[derive(Debug, Clone)]
pub struct TrainingScenario {
    pub truth: ScenarioTruth,
    pub features: Vec<Features>,
}

impl TrainingScenario {
    pub fn new(truth: ScenarioTruth) -> Result<Self> {
        let video = render_scenario(&truth)?;
        let features = sequence_features(video.frames())?;
        Ok(TrainingScenario { truth, features })
    }

    pub fn scores(&self, params: &PolicyParams) -> Vec<f64> {
        self.features.iter().map(|f| policy_score(params, f)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub episode: usize,
    pub mean_reward: f64,
    pub mean_drop_ratio: f64,
    pub objective: f64,
    /// Degenerate (n' < 2) selections skipped in this episode.
    pub degenerate: usize,
    /// Every selection was degenerate, so no update happened.
    pub skipped: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub rows: Vec<TraceRow>,
}

impl TrainingTrace {
    pub const CSV_HEADER: &'static str = "episode,mean_reward,mean_drop_ratio,J";

    /// `episode,mean_reward,mean_drop_ratio,J`; skipped episodes carry `NaN`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.9},{:.9},{:.9}\n",
                r.episode, r.mean_reward, r.mean_drop_ratio, r.objective
            ));
        }
        out
    }
}

/// Random stream for `(episode, scenario)`.
pub fn episode_rng(seed: u64, episode: usize, scenario: usize) -> Rng {
    Rng::new(seed, ((episode as u64) << 32) | scenario as u64)
}

pub fn train_policy(
    scenarios: &[TrainingScenario],
    config: &ObjectiveConfig,
    tracker: &TrackerConfig,
) -> Result<(PolicyParams, TrainingTrace)> {
    train_policy_with_reward(scenarios, config, PolicyParams::default(), |s, kept| {
        reward(&s.truth, kept, tracker)
    })
}

/// Training loop with a caller-supplied reward. The reward may return
/// [`Error::DegenerateSelection`] to skip a selection.
pub fn train_policy_with_reward<F>(
    scenarios: &[TrainingScenario],
    config: &ObjectiveConfig,
    init: PolicyParams,
    reward_fn: F,
) -> Result<(PolicyParams, TrainingTrace)>
where
    F: Fn(&TrainingScenario, &[bool]) -> Result<f64> + Sync,
{
    config.validate()?;
    init.validate()?;
    if scenarios.is_empty() {
        return Err(Error::invalid_config("train_policy needs at least one scenario"));
    }
    let mut params = init;
    let mut trace = TrainingTrace::default();
    let mut baseline: Option<f64> = None;
    let mut adam = Adam::new(params.weights.len() + 1);

    for episode in 0..config.episodes {
        let rollouts = config.rollouts;
        let samples: Vec<Option<(SelectionOutcome, f64)>> = (0..scenarios.len() * rollouts)
            .into_par_iter()
            .map(|slot| {
                let (s, rollout) = (slot / rollouts, slot % rollouts);
                let sc = &scenarios[s];
                let mut rng = episode_rng(config.seed, episode, s).split(rollout as u64);
                let outcome = sample_selection(&sc.scores(&params), &mut rng);
                if outcome.n_prime < 2 {
                    return Ok(None);
                }
                match reward_fn(sc, &outcome.kept) {
                    Ok(r) => Ok(Some((outcome, r))),
                    Err(Error::DegenerateSelection(_)) => Ok(None),
                    Err(e) => Err(e),
                }
            })
            .collect::<Result<_>>()?;

        let degenerate = samples.iter().filter(|s| s.is_none()).count();
        let valid: Vec<(usize, &SelectionOutcome, f64)> = samples
            .iter()
            .enumerate()
            .filter_map(|(slot, v)| v.as_ref().map(|(o, r)| (slot / rollouts, o, *r)))
            .collect();
        if valid.is_empty() {
            trace.rows.push(TraceRow {
                episode,
                mean_reward: f64::NAN,
                mean_drop_ratio: f64::NAN,
                objective: f64::NAN,
                degenerate,
                skipped: true,
            });
            continue;
        }
        let k = valid.len() as f64;
        let mean_reward = valid.iter().map(|v| v.2).sum::<f64>() / k;
        let offset = if config.reward_baseline {
            let m = config.baseline_momentum;
            let b = baseline.map_or(mean_reward, |b| m * b + (1.0 - m) * mean_reward);
            baseline = Some(b);
            b
        } else {
            0.0
        };

        let mut grad = vec![0.0; params.weights.len() + 1];
        let mut mean_j = 0.0;
        let mut mean_drop = 0.0;
        for &(s, outcome, r) in &valid {
            let g = policy_gradient(outcome, r - offset, &scenarios[s].features, config, &params);
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b / k;
            }
            mean_j += objective(outcome, r, config) / k;
            mean_drop += outcome.drop_ratio() / k;
        }
        let mut theta = params.to_vec();
        match config.optimizer {
            Optimizer::Sgd => {
                for (t, g) in theta.iter_mut().zip(&grad) {
                    *t -= config.learning_rate * g;
                }
            }
            Optimizer::Adam => adam.step(&mut theta, &grad, config.learning_rate),
        }
        params = PolicyParams {
            feature_spec: params.feature_spec.clone(),
            ..PolicyParams::from_vec(&theta)
        };
        trace.rows.push(TraceRow {
            episode,
            mean_reward,
            mean_drop_ratio: mean_drop,
            objective: mean_j,
            degenerate,
            skipped: false,
        });
    }
    Ok((params, trace))
}

fn check_ratio(ratio: f64) -> Result<()> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::invalid_config(format!("drop ratio {ratio} not in [0, 1)")));
    }
    Ok(())
}

/// Crossing scenarios with synchronised stop-go motion: identity switches
/// concentrate in moving phases, so frame choice matters.
pub fn crossing_spec() -> ScenarioSpec {
    ScenarioSpec {
        width: 320,
        height: 240,
        n_frames: 48,
        n_objects: 8,
        box_size: [28.0, 36.0],
        speed: [10.0, 14.0],
        layout: Layout::Crossing,
        stop_go: Some(StopGo { moving: 4, paused: 4 }),
        ..ScenarioSpec::default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedComparison {
    pub learned_reward: f64,
    pub random_reward: f64,
    pub learned_drop_ratio: f64,
    /// Scenarios with a non-degenerate sampled selection.
    pub n: usize,
}

/// Samples one policy selection per scenario and a random selection with
/// the same number of kept frames; mean rewards of both.
pub fn paired_random_comparison(
    scenarios: &[TrainingScenario],
    params: &PolicyParams,
    tracker: &TrackerConfig,
    seed: u64,
) -> Result<PairedComparison> {
    let (mut learned, mut random, mut drop, mut n) = (0.0, 0.0, 0.0, 0usize);
    for (i, sc) in scenarios.iter().enumerate() {
        let mut rng = Rng::new(seed, i as u64);
        let out = sample_selection(&sc.scores(params), &mut rng);
        if out.n_prime < 2 {
            continue;
        }
        let kept = random_drop_count(out.kept.len(), out.kept.len() - out.n_prime, &mut rng);
        learned += reward(&sc.truth, &out.kept, tracker)?;
        random += reward(&sc.truth, &kept, tracker)?;
        drop += out.drop_ratio();
        n += 1;
    }
    if n == 0 {
        return Err(Error::DegenerateSelection(
            "every sampled selection kept < 2 frames".into(),
        ));
    }
    let n_f = n as f64;
    Ok(PairedComparison {
        learned_reward: learned / n_f,
        random_reward: random / n_f,
        learned_drop_ratio: drop / n_f,
        n,
    })
}

/// Evenly spaced drops: `⌊n·ratio⌋` frames, placed by a Bresenham
/// accumulator (frame `i` drops when `⌊(i+1)d/n⌋` steps up).
pub fn uniform_drop(n: usize, ratio: f64) -> Result<Vec<bool>> {
    check_ratio(ratio)?;
    let d = floor_count(n, ratio);
    Ok((0..n).map(|i| (i + 1) * d / n == i * d / n).collect())
}

/// `⌊n·ratio⌋` dropped frames chosen uniformly at random.
pub fn random_drop(n: usize, ratio: f64, rng: &mut Rng) -> Result<Vec<bool>> {
    check_ratio(ratio)?;
    Ok(random_drop_count(n, floor_count(n, ratio), rng))
}

pub fn random_drop_count(n: usize, drops: usize, rng: &mut Rng) -> Vec<bool> {
    let mut kept = vec![true; n];
    for i in rng.sample_indices(n, drops) {
        kept[i] = false;
    }
    kept
}
