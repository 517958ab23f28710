//! `trivid` command-line interface. Every command reads one JSON config
//! (unknown keys rejected) and writes deterministic files under `--out`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::accel::{model_cost, resnet50_layers, DeviceSpec, LayerSpec, TileSpec};
use crate::archive::{load_weight_archive, save_mask, save_weight_archive, WeightArchive};
use crate::frame::Frame;
use crate::metrics::{scores_csv_row, MotScores, SCORES_CSV_HEADER};
use crate::pipeline::{
    apply_clock_scale, calibrate, efficiency_report, simulate_pipeline, stage_cost, BaselineRow, OursInput,
    PruningSpec, StageMasks, StageSpec, DEFAULT_TILES_EMITTED,
};
use crate::pruning::{
    hardware_aware_prune, iterative_magnitude_prune, sparse_kernel_ratio, synthetic_archive, HardwarePruneConfig,
    IdentityRetrainer, MaskStats, Pattern, PatternLibrary,
};
use crate::rng::Rng;
use crate::scenario::{render_scenario, synth_scenario, ScenarioSpec, ScenarioTruth};
use crate::spatial::{
    build_patch_grid, dropped_fraction_per_layer, evaluate_masked, parse_bitstring, random_mask, sequence_masks,
    MaskMode, MaskedEvalConfig, SaliencyMask, DEFAULT_PATCH_SIZE,
};
use crate::temporal::{
    crossing_spec, evaluate_selection, paired_random_comparison, random_drop, sample_selection, train_policy,
    uniform_drop, ObjectiveConfig, PolicyParams, TrackerConfig, TrainingScenario,
};
use crate::{Error, Result};

pub const EXIT_SCHEMA: i32 = 2;
pub const EXIT_MISSING_FILE: i32 = 3;
pub const EXIT_CONTRACT: i32 = 4;

const SCENARIO_KEYS: &str = "\
  scenario.width, scenario.height         frame size in pixels
  scenario.n_frames, scenario.n_objects
  scenario.box_size                       [min, max] box side, pixels
  scenario.speed                          [min, max] pixels per frame
  scenario.layout                         \"random\" | \"crossing\"
  scenario.motion_jitter                  per-frame position noise, pixels
  scenario.stop_go                        null | {moving, paused} frame counts
  scenario.detection.jitter_sigma         detector box noise, pixels
  scenario.detection.miss_prob            per-box miss probability
  scenario.background                     background gray level";

const TRACKER_KEYS: &str = "  tracker.iou_threshold                   association and evaluation IoU";

pub fn synth_help() -> String {
    format!(
        "Config keys:
  seed                                    base seed; scenario i uses seed + i
  count                                   number of scenarios
  render                                  also write frames as binary PPM
{SCENARIO_KEYS}"
    )
}

pub fn saliency_help() -> String {
    format!(
        "Config keys:
  seed                                    seed for random masks
  scenario_file                           null | scenario JSON written by `synth`
  patch_size                              patch side, pixels (>= 4)
  drop_ratio                              fraction of patches dropped per frame
  drop_threshold                          dropped-area share that drops a feature cell
  mode                                    \"saliency\" | \"random\"
  min_visible                             kept-area share a detection needs to survive
{SCENARIO_KEYS}
{TRACKER_KEYS}"
    )
}

pub fn temporal_help() -> String {
    format!(
        "Config keys:
  seed                                    scenario seed (scenario i uses seed + i); --seed also sets objective.seed
  n_scenarios                             training scenarios
  eval_seed                               seed of the paired evaluation
  objective.alpha, objective.mu           regularizer weight and target retain rate
  objective.learning_rate, objective.episodes
  objective.seed                          training seed
  objective.reward_baseline               subtract a moving reward baseline in the update
  objective.baseline_momentum
  objective.rollouts                      samples per scenario per episode
  objective.optimizer                     \"adam\" | \"sgd\"
{SCENARIO_KEYS}
{TRACKER_KEYS}"
    )
}

pub fn prune_help() -> String {
    "Config keys:
  seed                                    seed for the synthetic archive
  weights                                 null | TRIW weight archive path
  synthetic_layers                        [[filters, channels, k], ...] used when weights is null
  mode                                    \"hardware\" | \"imp\"
  ratio                                   IMP pruning ratio in [0, 1)
  rounds                                  IMP rounds
  library_size                            pattern library size
  target_nnz                              kept weights per pattern
  library                                 null | pattern library JSON path (skips construction)"
        .into()
}

pub fn simulate_help() -> String {
    "Config keys:
  seed                                    seed for the synthetic patch mask
  stages[].name
  stages[].device                         preset name (\"u55c\" | \"u50\" | \"zcu104\") or a device object:
                                          {name, clock_hz, dsp_count, peak_gops, e_mac, e_dram_byte,
                                           board_power, element_bytes, filters_in_parallel}
  stages[].model                          builtin table: resnet50_hd | resnet50_224 | fpn_rpn_hd | track_head
  stages[].layers_file                    layer table JSON path (instead of model)
  stages[].layers                         inline layer list (instead of model)
  stages[].tiles_emitted                  tiles before the next stage may start
  stages[].spatial                        whether patch masks apply to this stage
  tile.t_h, tile.t_w, tile.t_c            output tile rows, columns, channels per load
  overlap                                 start stages on the first upstream tile
  frame_drop_ratio                        fraction of frames dropped
  patch_drop_ratio                        fraction of patches dropped (random mask)
  patch_size, frame_width, frame_height   patch grid of the synthetic mask
  mask_file                               null | patch mask JSON from `saliency` (overrides the synthetic mask)
  drop_threshold                          dropped-area share that drops a feature cell
  channel_prune_ratio                     input channels removed in every conv layer
  pattern                                 null | kernel pattern bitstring applied to matching kernels
  calibrate_to_ms                         null | dense end-to-end latency to calibrate the clock to"
        .into()
}

pub fn report_help() -> String {
    "Config keys:
  ours.method, ours.data_reduction, ours.pruning   row labels
  ours.latency_ms, ours.frame_drop_ratio, ours.power_w
  baselines[].method, baselines[].data_reduction, baselines[].pruning
  baselines[].latency_ms, baselines[].efr_fps, baselines[].power_w
  baselines[].energy_j_per_frame          null = power_w / efr_fps"
        .into()
}

pub fn sweep_help() -> String {
    format!(
        "Config keys:
  seed                                    base seed; scenario i uses seed + i
  kind                                    \"temporal\" (frame drop) | \"spatial\" (patch drop)
  n_scenarios
  drop_ratios                             list of drop ratios
  methods                                 temporal: random, uniform, policy; spatial: saliency, random
  policy_file                             null | policy JSON from `temporal` (method policy)
  patch_size, min_visible                 spatial sweeps only
{SCENARIO_KEYS}
{TRACKER_KEYS}"
    )
}

#[derive(Debug, Parser)]
#[command(
    name = "trivid",
    version,
    about = "Frame, patch and weight reduction toolkit for tracking pipelines"
)]
pub struct Cli {
    /// JSON config; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize scenarios (ground truth, detections, optional frames).
    #[command(after_help = synth_help())]
    Synth,
    /// Patch saliency masks, kept fractions per layer and masked tracking scores.
    #[command(after_help = saliency_help())]
    Saliency,
    /// Train the frame-selection policy.
    #[command(after_help = temporal_help())]
    Temporal,
    /// Magnitude or hardware-aware pattern pruning.
    #[command(after_help = prune_help())]
    Prune,
    /// Simulate the multi-device pipeline.
    #[command(after_help = simulate_help())]
    Simulate,
    /// Comparison table and improvement ratios.
    #[command(after_help = report_help())]
    Report,
    /// Drop-ratio sweeps of tracking metrics.
    #[command(after_help = sweep_help())]
    Sweep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub seed: u64,
    pub count: usize,
    pub render: bool,
    pub scenario: ScenarioSpec,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            count: 1,
            render: false,
            scenario: ScenarioSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SaliencyConfig {
    pub seed: u64,
    pub scenario_file: Option<PathBuf>,
    pub patch_size: usize,
    pub drop_ratio: f64,
    pub drop_threshold: f64,
    pub mode: MaskMode,
    pub min_visible: f64,
    pub scenario: ScenarioSpec,
    pub tracker: TrackerConfig,
}

impl Default for SaliencyConfig {
    fn default() -> Self {
        SaliencyConfig {
            seed: 0,
            scenario_file: None,
            patch_size: DEFAULT_PATCH_SIZE,
            drop_ratio: 0.2,
            drop_threshold: 1.0,
            mode: MaskMode::Saliency,
            min_visible: 0.5,
            scenario: ScenarioSpec::default(),
            tracker: TrackerConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TemporalConfig {
    pub seed: u64,
    pub n_scenarios: usize,
    pub eval_seed: u64,
    pub objective: ObjectiveConfig,
    pub scenario: ScenarioSpec,
    pub tracker: TrackerConfig,
}

impl Default for TemporalConfig {
    fn default() -> Self {
        TemporalConfig {
            seed: 100,
            n_scenarios: 20,
            eval_seed: 1000,
            objective: ObjectiveConfig::default(),
            scenario: crossing_spec(),
            tracker: TrackerConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneMode {
    Hardware,
    Imp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PruneConfig {
    pub seed: u64,
    pub weights: Option<PathBuf>,
    pub synthetic_layers: Vec<[usize; 3]>,
    pub mode: PruneMode,
    pub ratio: f64,
    pub rounds: usize,
    pub library_size: usize,
    pub target_nnz: usize,
    pub library: Option<PathBuf>,
}

impl Default for PruneConfig {
    fn default() -> Self {
        let hw = HardwarePruneConfig::default();
        PruneConfig {
            seed: 0,
            weights: None,
            synthetic_layers: vec![[16, 8, 3], [32, 16, 3], [32, 32, 3]],
            mode: PruneMode::Hardware,
            ratio: hw.ratio,
            rounds: hw.rounds,
            library_size: hw.library_size,
            target_nnz: hw.target_nnz,
            library: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DeviceRef {
    Preset(String),
    Spec(DeviceSpec),
}

impl DeviceRef {
    fn resolve(&self) -> Result<DeviceSpec> {
        match self {
            DeviceRef::Preset(name) => DeviceSpec::by_name(name),
            DeviceRef::Spec(d) => Ok(d.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub name: String,
    pub device: DeviceRef,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub layers_file: Option<PathBuf>,
    #[serde(default)]
    pub layers: Option<Vec<LayerSpec>>,
    #[serde(default = "default_tiles_emitted")]
    pub tiles_emitted: usize,
    #[serde(default = "default_true")]
    pub spatial: bool,
}

fn default_tiles_emitted() -> usize {
    DEFAULT_TILES_EMITTED
}

fn default_true() -> bool {
    true
}

impl StageConfig {
    fn preset(name: &str, device: &str, model: &str, spatial: bool) -> Self {
        StageConfig {
            name: name.into(),
            device: DeviceRef::Preset(device.into()),
            model: Some(model.into()),
            layers_file: None,
            layers: None,
            tiles_emitted: DEFAULT_TILES_EMITTED,
            spatial,
        }
    }

    fn resolve(&self, base: &Path) -> Result<StageSpec> {
        let layers = match (&self.model, &self.layers_file, &self.layers) {
            (Some(m), None, None) => crate::accel::builtin_model(m)?,
            (None, Some(p), None) => crate::accel::load_layer_table(base.join(p))?,
            (None, None, Some(l)) => l.clone(),
            _ => {
                return Err(Error::invalid_config(format!(
                    "stage {}: set exactly one of model, layers_file, layers",
                    self.name
                )))
            }
        };
        let stage = StageSpec {
            name: self.name.clone(),
            device: self.device.resolve()?,
            layers,
            tiles_emitted: self.tiles_emitted,
            spatial: self.spatial,
        };
        stage.validate()?;
        Ok(stage)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub seed: u64,
    pub stages: Vec<StageConfig>,
    pub tile: TileSpec,
    pub overlap: bool,
    pub frame_drop_ratio: f64,
    pub patch_drop_ratio: f64,
    pub patch_size: usize,
    pub frame_width: usize,
    pub frame_height: usize,
    pub mask_file: Option<PathBuf>,
    pub drop_threshold: f64,
    pub channel_prune_ratio: f64,
    pub pattern: Option<String>,
    pub calibrate_to_ms: Option<f64>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            seed: 0,
            stages: vec![
                StageConfig::preset("backbone", "u50", "resnet50_hd", true),
                StageConfig::preset("fpn_rpn", "u50", "fpn_rpn_hd", true),
                StageConfig::preset("track_head", "zcu104", "track_head", false),
            ],
            tile: TileSpec::default(),
            overlap: true,
            frame_drop_ratio: 0.4,
            patch_drop_ratio: 0.2,
            patch_size: DEFAULT_PATCH_SIZE,
            frame_width: 1280,
            frame_height: 720,
            mask_file: None,
            drop_threshold: 1.0,
            channel_prune_ratio: 0.0,
            pattern: None,
            calibrate_to_ms: Some(554.7),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportConfig {
    pub ours: OursInput,
    pub baselines: Vec<BaselineRow>,
}

impl Default for ReportConfig {
    fn default() -> Self {
        let row = |method: &str, latency_ms, efr_fps, power_w| BaselineRow {
            method: method.into(),
            data_reduction: "none".into(),
            pruning: "none".into(),
            latency_ms,
            efr_fps,
            power_w,
            energy_j_per_frame: None,
        };
        ReportConfig {
            ours: OursInput {
                method: "tri-design".into(),
                data_reduction: "frame 40% + patch".into(),
                pruning: "pattern".into(),
                latency_ms: 44.4,
                frame_drop_ratio: 0.4,
                power_w: 50.8,
            },
            baselines: vec![row("gpu", 60.9, 22.5, 296.0), row("fpga", 554.7, 1.8, 50.8)],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    Temporal,
    Spatial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMethod {
    Random,
    Uniform,
    Policy,
    Saliency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub seed: u64,
    pub kind: SweepKind,
    pub n_scenarios: usize,
    pub drop_ratios: Vec<f64>,
    pub methods: Vec<SweepMethod>,
    pub policy_file: Option<PathBuf>,
    pub patch_size: usize,
    pub min_visible: f64,
    pub scenario: ScenarioSpec,
    pub tracker: TrackerConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            seed: 0,
            kind: SweepKind::Temporal,
            n_scenarios: 30,
            drop_ratios: vec![0.15, 0.3, 0.45, 0.6],
            methods: vec![SweepMethod::Random, SweepMethod::Uniform],
            policy_file: None,
            patch_size: DEFAULT_PATCH_SIZE,
            min_visible: 0.5,
            scenario: ScenarioSpec {
                n_objects: 4,
                speed: [4.0, 8.0],
                ..ScenarioSpec::default()
            },
            tracker: TrackerConfig::default(),
        }
    }
}

/// Exit status for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Json(_) | Error::InvalidConfig(_) | Error::InvalidSpec(_) | Error::Format(_) => EXIT_SCHEMA,
        Error::Io(e) if e.kind() == std::io::ErrorKind::NotFound => EXIT_MISSING_FILE,
        Error::Contract(_) | Error::DegenerateSelection(_) | Error::UndefinedMetric(_) | Error::EmptyLibrary(_) => {
            EXIT_CONTRACT
        }
        Error::Io(_) => 1,
    }
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

/// Parses `path`, or returns the default config when `None`.
pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => Ok(serde_json::from_str(&read_file(p)?)?),
    }
}

struct Ctx {
    out: PathBuf,
    /// Relative paths in the config resolve against this directory.
    base: PathBuf,
    quiet: bool,
    written: Vec<PathBuf>,
}

impl Ctx {
    fn write(&mut self, rel: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
        let path = self.out.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(&path, bytes)?;
        self.written.push(path);
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, rel: impl AsRef<Path>, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write(rel, s.as_bytes())
    }

    fn log(&self, msg: &str) {
        if !self.quiet {
            eprintln!("{msg}");
        }
    }

    fn path(&self, p: &Path) -> PathBuf {
        self.base.join(p)
    }
}

fn scenario_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_add(i as u64)
}

fn ppm(frame: &Frame) -> Vec<u8> {
    let (w, h) = (frame.width(), frame.height());
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    for y in 0..h {
        for x in 0..w {
            out.extend_from_slice(&frame.pixel(x, y));
        }
    }
    out
}

fn cmd_synth(cfg: &SynthConfig, ctx: &mut Ctx) -> Result<()> {
    if cfg.count == 0 {
        return Err(Error::invalid_config("count must be >= 1"));
    }
    for i in 0..cfg.count {
        let truth = synth_scenario(&cfg.scenario, scenario_seed(cfg.seed, i))?;
        ctx.write_json(format!("scenario_{i:03}.json"), &truth)?;
        if cfg.render {
            let video = render_scenario(&truth)?;
            for f in video.frames() {
                ctx.write(format!("frames_{i:03}/frame_{:04}.ppm", f.index()), &ppm(f))?;
            }
        }
    }
    ctx.log(&format!("synth: {} scenario(s)", cfg.count));
    Ok(())
}

fn load_truth(path: &Path) -> Result<ScenarioTruth> {
    let truth: ScenarioTruth = serde_json::from_str(&read_file(path)?)?;
    truth.validate()?;
    Ok(truth)
}

fn cmd_saliency(cfg: &SaliencyConfig, ctx: &mut Ctx) -> Result<()> {
    let truth = match &cfg.scenario_file {
        Some(p) => load_truth(&ctx.path(p))?,
        None => synth_scenario(&cfg.scenario, cfg.seed)?,
    };
    let video = render_scenario(&truth)?;
    let mut rng = Rng::new(cfg.seed, 1);
    let masks = sequence_masks(&video, cfg.patch_size, cfg.drop_ratio, cfg.mode, &mut rng)?;
    let layers: Vec<(String, usize, usize)> = resnet50_layers(truth.height, truth.width, false)
        .iter()
        .filter_map(|l| l.as_conv().map(|c| (c.name.clone(), c.h_out(), c.w_out())))
        .collect();
    let mut kept = String::from("frame,layer,h,w,kept_fraction\n");
    for (t, m) in masks.iter().enumerate() {
        ctx.write_json(format!("masks/frame_{t:04}.json"), m)?;
        let fractions = dropped_fraction_per_layer(m, &layers, cfg.drop_threshold)?;
        for ((name, h, w), (_, f)) in layers.iter().zip(fractions) {
            writeln!(kept, "{t},{name},{h},{w},{f:.6}").expect("string write");
        }
    }
    ctx.write("kept_fraction.csv", kept.as_bytes())?;
    let eval = MaskedEvalConfig {
        patch_size: cfg.patch_size,
        drop_ratio: cfg.drop_ratio,
        min_visible: cfg.min_visible,
        iou_threshold: cfg.tracker.iou_threshold,
    };
    let scores = evaluate_masked(&truth, &masks, &eval)?;
    let csv = format!(
        "{SCORES_CSV_HEADER}\n{}\n",
        scores_csv_row(&truth.seed.to_string(), cfg.drop_ratio, &scores)
    );
    ctx.write("scores.csv", csv.as_bytes())?;
    ctx.log(&format!("saliency: {} masks, MOTA {:.4}", masks.len(), scores.mota));
    Ok(())
}

fn training_scenarios(spec: &ScenarioSpec, seed: u64, n: usize) -> Result<Vec<TrainingScenario>> {
    (0..n)
        .into_par_iter()
        .map(|i| TrainingScenario::new(synth_scenario(spec, scenario_seed(seed, i))?))
        .collect()
}

fn cmd_temporal(cfg: &TemporalConfig, ctx: &mut Ctx) -> Result<()> {
    if cfg.n_scenarios == 0 {
        return Err(Error::invalid_config("n_scenarios must be >= 1"));
    }
    let scenarios = training_scenarios(&cfg.scenario, cfg.seed, cfg.n_scenarios)?;
    let (params, trace) = train_policy(&scenarios, &cfg.objective, &cfg.tracker)?;
    ctx.write_json("policy.json", &params)?;
    ctx.write("trace.csv", trace.to_csv().as_bytes())?;
    let cmp = paired_random_comparison(&scenarios, &params, &cfg.tracker, cfg.eval_seed)?;
    let csv = format!(
        "learned_reward,random_reward,learned_drop_ratio,n\n{:.9},{:.9},{:.9},{}\n",
        cmp.learned_reward, cmp.random_reward, cmp.learned_drop_ratio, cmp.n
    );
    ctx.write("eval.csv", csv.as_bytes())?;
    ctx.log(&format!(
        "temporal: learned {:.4} vs random {:.4} at drop {:.3}",
        cmp.learned_reward, cmp.random_reward, cmp.learned_drop_ratio
    ));
    Ok(())
}

fn cmd_prune(cfg: &PruneConfig, ctx: &mut Ctx) -> Result<()> {
    let archive: WeightArchive = match &cfg.weights {
        Some(p) => load_weight_archive(ctx.path(p))?,
        None => synthetic_archive(&cfg.synthetic_layers, &mut Rng::new(cfg.seed, 0))?,
    };
    let mut retrainer = IdentityRetrainer;
    let (mask, weights, stats, library) = match cfg.mode {
        PruneMode::Imp => {
            let imp = iterative_magnitude_prune(&archive, cfg.ratio, cfg.rounds, &mut retrainer)?;
            let skr = if imp.mask.pruned() > 0 {
                sparse_kernel_ratio(&imp.mask)?
            } else {
                0.0
            };
            let stats = MaskStats {
                pruning_ratio: imp.mask.pruning_ratio(),
                imp_ratio: imp.mask.pruning_ratio(),
                sparse_kernel_ratio: skr,
                kept_per_tensor: imp.mask.entries().iter().map(|e| (e.name.clone(), e.kept())).collect(),
                pattern_histogram: vec![],
            };
            (imp.mask, imp.weights, stats, None)
        }
        PruneMode::Hardware => {
            let hw = HardwarePruneConfig {
                ratio: cfg.ratio,
                rounds: cfg.rounds,
                library_size: cfg.library_size,
                target_nnz: cfg.target_nnz,
            };
            let lib = cfg
                .library
                .as_ref()
                .map(|p| PatternLibrary::load(ctx.path(p)))
                .transpose()?;
            let r = hardware_aware_prune(&archive, &hw, lib, &mut retrainer)?;
            fs::create_dir_all(&ctx.out)?;
            save_mask(&r.imp_mask, ctx.out.join("imp_mask.trim"))?;
            ctx.written.push(ctx.out.join("imp_mask.trim"));
            (r.mask, r.weights, r.stats, Some(r.library))
        }
    };
    fs::create_dir_all(&ctx.out)?;
    save_mask(&mask, ctx.out.join("mask.trim"))?;
    save_weight_archive(&weights, ctx.out.join("weights.triw"))?;
    ctx.written.push(ctx.out.join("mask.trim"));
    ctx.written.push(ctx.out.join("weights.triw"));
    ctx.write("stats.csv", stats.to_csv().as_bytes())?;
    let mut kept = String::from("tensor,kept\n");
    for (name, k) in &stats.kept_per_tensor {
        writeln!(kept, "{name},{k}").expect("string write");
    }
    ctx.write("kept_per_tensor.csv", kept.as_bytes())?;
    if let Some(lib) = library {
        ctx.write("library.json", format!("{}\n", lib.to_json()).as_bytes())?;
    }
    ctx.log(&format!("prune: ratio {:.4}", stats.pruning_ratio));
    Ok(())
}

fn cmd_simulate(cfg: &SimulateConfig, ctx: &mut Ctx) -> Result<()> {
    let mut stages = cfg
        .stages
        .iter()
        .map(|s| s.resolve(&ctx.base))
        .collect::<Result<Vec<_>>>()?;
    let mut clock_scale = 1.0;
    if let Some(ms) = cfg.calibrate_to_ms {
        clock_scale = calibrate(ms / 1e3, &stages, &cfg.tile, cfg.overlap)?;
        apply_clock_scale(&mut stages, clock_scale);
        ctx.log(&format!("simulate: clock scale {clock_scale:.9}"));
    }
    let mask: Option<SaliencyMask> = match &cfg.mask_file {
        Some(p) => Some(serde_json::from_str(&read_file(&ctx.path(p))?)?),
        None if cfg.patch_drop_ratio > 0.0 => {
            let grid = build_patch_grid(cfg.frame_width, cfg.frame_height, cfg.patch_size)?;
            Some(random_mask(&grid, cfg.patch_drop_ratio, &mut Rng::new(cfg.seed, 0))?)
        }
        None => None,
    };
    let pattern = cfg
        .pattern
        .as_deref()
        .map(|b| {
            let bits = parse_bitstring(b)?;
            let k = (bits.len() as f64).sqrt().round() as usize;
            Pattern::new(k, bits)
        })
        .transpose()?;
    let masks = StageMasks {
        patch_mask: mask.as_ref(),
        drop_threshold: cfg.drop_threshold,
        pruning: PruningSpec {
            channel_ratio: cfg.channel_prune_ratio,
            pattern,
        },
    };
    let report = simulate_pipeline(&stages, &cfg.tile, &masks, cfg.overlap, cfg.frame_drop_ratio)?;
    ctx.write("stages.csv", report.stages_csv().as_bytes())?;
    let summary = format!("{}clock_scale,{clock_scale:.12}\n", report.summary_csv());
    ctx.write("summary.csv", summary.as_bytes())?;
    for s in &stages {
        ctx.write(
            format!("cost_{}.csv", s.name),
            stage_cost(s, &cfg.tile, &masks)?.to_csv().as_bytes(),
        )?;
    }
    let dense = model_cost(
        &stages.iter().flat_map(|s| s.layers.clone()).collect::<Vec<_>>(),
        &cfg.tile,
        &stages[0].device,
        &[],
    )?;
    ctx.log(&format!(
        "simulate: {:.3} ms end-to-end, {:.2} effective FPS, {:.1} dense GOPs",
        report.end_to_end_latency * 1e3,
        report.efr,
        dense.gops_dense
    ));
    Ok(())
}

fn cmd_report(cfg: &ReportConfig, ctx: &mut Ctx) -> Result<()> {
    let table = efficiency_report(&cfg.ours, &cfg.baselines)?;
    ctx.write("table.csv", table.table_csv().as_bytes())?;
    ctx.write("ratios.csv", table.ratios_csv().as_bytes())?;
    if !ctx.quiet {
        for r in &table.ratios {
            eprintln!(
                "report: vs {}: latency {:.3}x efr {:.3}x power {:.3}x energy {:.3}x",
                r.baseline, r.latency, r.efr, r.power, r.energy
            );
        }
    }
    Ok(())
}

fn sweep_one(
    cfg: &SweepConfig,
    truth: &ScenarioTruth,
    video: Option<&crate::frame::VideoSequence>,
    policy: Option<&(PolicyParams, TrainingScenario)>,
    method: SweepMethod,
    ratio: f64,
    rng: &mut Rng,
) -> Result<MotScores> {
    match (cfg.kind, method) {
        (SweepKind::Temporal, SweepMethod::Random) => {
            evaluate_selection(truth, &random_drop(truth.n_frames, ratio, rng)?, &cfg.tracker)
        }
        (SweepKind::Temporal, SweepMethod::Uniform) => {
            evaluate_selection(truth, &uniform_drop(truth.n_frames, ratio)?, &cfg.tracker)
        }
        (SweepKind::Temporal, SweepMethod::Policy) => {
            let (params, sc) = policy.ok_or_else(|| Error::invalid_config("method policy needs policy_file"))?;
            // Shift the bias so the mean retain probability matches 1 - ratio.
            let shifted = bias_for_ratio(params, sc, ratio);
            let out = sample_selection(&sc.scores(&shifted), rng);
            evaluate_selection(truth, &out.kept, &cfg.tracker)
        }
        (SweepKind::Spatial, SweepMethod::Saliency | SweepMethod::Random) => {
            let mode = if method == SweepMethod::Saliency {
                MaskMode::Saliency
            } else {
                MaskMode::Random
            };
            let video = video.expect("rendered for spatial sweeps");
            let masks = sequence_masks(video, cfg.patch_size, ratio, mode, rng)?;
            let eval = MaskedEvalConfig {
                patch_size: cfg.patch_size,
                drop_ratio: ratio,
                min_visible: cfg.min_visible,
                iou_threshold: cfg.tracker.iou_threshold,
            };
            evaluate_masked(truth, &masks, &eval)
        }
        (kind, m) => Err(Error::invalid_config(format!(
            "method {m:?} does not apply to {kind:?} sweeps"
        ))),
    }
}

/// Bias giving mean retain probability `1 − ratio` on `sc` (bisection).
fn bias_for_ratio(params: &PolicyParams, sc: &TrainingScenario, ratio: f64) -> PolicyParams {
    let target = 1.0 - ratio;
    let (mut lo, mut hi) = (-50.0f64, 50.0f64);
    let mean = |b: f64| {
        let p = PolicyParams {
            bias: b,
            ..params.clone()
        };
        let s = sc.scores(&p);
        s.iter().sum::<f64>() / s.len() as f64
    };
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if mean(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    PolicyParams {
        bias: 0.5 * (lo + hi),
        ..params.clone()
    }
}

fn cmd_sweep(cfg: &SweepConfig, ctx: &mut Ctx) -> Result<()> {
    if cfg.n_scenarios == 0 || cfg.drop_ratios.is_empty() || cfg.methods.is_empty() {
        return Err(Error::invalid_config("sweep needs scenarios, drop_ratios and methods"));
    }
    let policy = match &cfg.policy_file {
        Some(p) => {
            let params: PolicyParams = serde_json::from_str(&read_file(&ctx.path(p))?)?;
            params.validate()?;
            Some(params)
        }
        None => None,
    };
    let results: Vec<Vec<(usize, MotScores)>> = (0..cfg.n_scenarios)
        .into_par_iter()
        .map(|i| -> Result<Vec<(usize, MotScores)>> {
            let truth = synth_scenario(&cfg.scenario, scenario_seed(cfg.seed, i))?;
            let video = match cfg.kind {
                SweepKind::Spatial => Some(render_scenario(&truth)?),
                SweepKind::Temporal => None,
            };
            let pol = match (&policy, cfg.methods.contains(&SweepMethod::Policy)) {
                (Some(p), true) => Some((p.clone(), TrainingScenario::new(truth.clone())?)),
                _ => None,
            };
            let mut out = Vec::new();
            for (ri, &ratio) in cfg.drop_ratios.iter().enumerate() {
                for (mi, &method) in cfg.methods.iter().enumerate() {
                    let stream = ((i as u64) << 32) | ((ri as u64) << 16) | mi as u64;
                    let mut rng = Rng::new(cfg.seed, 1).split(stream);
                    let s = sweep_one(cfg, &truth, video.as_ref(), pol.as_ref(), method, ratio, &mut rng)?;
                    out.push((i, s));
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let mut scores = format!("method,{SCORES_CSV_HEADER}\n");
    let mut summary = String::from("kind,method,drop_ratio,mean_idsw,mean_mota,mean_idf1,n\n");
    let kind = match cfg.kind {
        SweepKind::Temporal => "temporal",
        SweepKind::Spatial => "spatial",
    };
    for (ri, &ratio) in cfg.drop_ratios.iter().enumerate() {
        for (mi, method) in cfg.methods.iter().enumerate() {
            let name = serde_json::to_value(method)?.as_str().unwrap_or("?").to_owned();
            let (mut idsw, mut mota, mut idf1) = (0.0, 0.0, 0.0);
            for per in &results {
                let (i, s) = &per[ri * cfg.methods.len() + mi];
                writeln!(scores, "{name},{}", scores_csv_row(&i.to_string(), ratio, s)).expect("string write");
                idsw += s.idsw as f64;
                mota += s.mota;
                idf1 += s.idf1;
            }
            let n = results.len() as f64;
            writeln!(
                summary,
                "{kind},{name},{ratio},{:.6},{:.6},{:.6},{}",
                idsw / n,
                mota / n,
                idf1 / n,
                results.len()
            )
            .expect("string write");
        }
    }
    ctx.write("scores.csv", scores.as_bytes())?;
    ctx.write("sweep.csv", summary.as_bytes())?;
    ctx.log(&format!("sweep: {} scenario(s)", cfg.n_scenarios));
    Ok(())
}

fn configure_threads() {
    if let Some(n) = std::env::var("TRIVID_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        // Fails only when a pool already exists, which keeps its size.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

/// Runs a parsed command; returns the files written.
pub fn run(cli: &Cli) -> Result<Vec<PathBuf>> {
    configure_threads();
    let path = cli.config.as_deref();
    let base = path.and_then(Path::parent).map(Path::to_path_buf).unwrap_or_default();
    let mut ctx = Ctx {
        out: cli.out.clone(),
        base,
        quiet: cli.quiet,
        written: Vec::new(),
    };
    match cli.command {
        Command::Synth => {
            let mut cfg: SynthConfig = load_config(path)?;
            cfg.seed = cli.seed.unwrap_or(cfg.seed);
            cmd_synth(&cfg, &mut ctx)?;
        }
        Command::Saliency => {
            let mut cfg: SaliencyConfig = load_config(path)?;
            cfg.seed = cli.seed.unwrap_or(cfg.seed);
            cmd_saliency(&cfg, &mut ctx)?;
        }
        Command::Temporal => {
            let mut cfg: TemporalConfig = load_config(path)?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
                cfg.objective.seed = s;
            }
            cmd_temporal(&cfg, &mut ctx)?;
        }
        Command::Prune => {
            let mut cfg: PruneConfig = load_config(path)?;
            cfg.seed = cli.seed.unwrap_or(cfg.seed);
            cmd_prune(&cfg, &mut ctx)?;
        }
        Command::Simulate => {
            let mut cfg: SimulateConfig = load_config(path)?;
            cfg.seed = cli.seed.unwrap_or(cfg.seed);
            cmd_simulate(&cfg, &mut ctx)?;
        }
        Command::Report => {
            let cfg: ReportConfig = load_config(path)?;
            cmd_report(&cfg, &mut ctx)?;
        }
        Command::Sweep => {
            let mut cfg: SweepConfig = load_config(path)?;
            cfg.seed = cli.seed.unwrap_or(cfg.seed);
            cmd_sweep(&cfg, &mut ctx)?;
        }
    }
    Ok(ctx.written)
}

/// Parses `args` and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_SCHEMA } else { 0 };
        }
    };
    match run(&cli) {
        Ok(_) => 0,
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn keys(v: &serde_json::Value, prefix: &str, out: &mut Vec<String>) {
        match v {
            serde_json::Value::Object(map) => {
                for (k, child) in map {
                    let key = if prefix.is_empty() {
                        k.clone()
                    } else {
                        format!("{prefix}.{k}")
                    };
                    out.push(key.clone());
                    keys(child, &key, out);
                }
            }
            serde_json::Value::Array(items) => {
                if let Some(first @ serde_json::Value::Object(_)) = items.first() {
                    keys(first, &format!("{prefix}[]"), out);
                }
            }
            _ => {}
        }
    }

    fn check_documented<T: Serialize + Default>(help: &str) {
        let mut all = Vec::new();
        keys(&serde_json::to_value(T::default()).unwrap(), "", &mut all);
        for k in all {
            let leaf = k.rsplit('.').next().unwrap();
            // Inline layer tables and device objects are documented as a whole.
            if k.starts_with("stages[].layers") || k.starts_with("stages[].device") {
                continue;
            }
            assert!(help.contains(&k) || help.contains(leaf), "{k} missing from help");
        }
    }

    #[test]
    fn every_config_key_is_documented() {
        check_documented::<SynthConfig>(&synth_help());
        check_documented::<SaliencyConfig>(&saliency_help());
        check_documented::<TemporalConfig>(&temporal_help());
        check_documented::<PruneConfig>(&prune_help());
        check_documented::<SimulateConfig>(&simulate_help());
        check_documented::<ReportConfig>(&report_help());
        check_documented::<SweepConfig>(&sweep_help());
    }

    #[test]
    fn unknown_keys_are_schema_errors() {
        let e = serde_json::from_str::<SynthConfig>(r#"{"cuont": 2}"#)
            .unwrap_err()
            .into();
        assert_eq!(exit_code(&e), EXIT_SCHEMA);
        let e = serde_json::from_str::<SimulateConfig>(r#"{"tile": {"t_h": 4, "t_w": 4, "t_c": 1, "x": 0}}"#)
            .unwrap_err()
            .into();
        assert_eq!(exit_code(&e), EXIT_SCHEMA);
    }

    #[test]
    fn exit_codes() {
        let missing = load_config::<SynthConfig>(Some(Path::new("/nonexistent/cfg.json"))).unwrap_err();
        assert_eq!(exit_code(&missing), EXIT_MISSING_FILE);
        assert_eq!(exit_code(&Error::contract("x")), EXIT_CONTRACT);
        assert_eq!(exit_code(&Error::invalid_config("x")), EXIT_SCHEMA);
    }

    #[test]
    fn defaults_round_trip() {
        let s = serde_json::to_string(&SimulateConfig::default()).unwrap();
        assert_eq!(
            serde_json::from_str::<SimulateConfig>(&s).unwrap(),
            SimulateConfig::default()
        );
        let s = serde_json::to_string(&ReportConfig::default()).unwrap();
        assert_eq!(
            serde_json::from_str::<ReportConfig>(&s).unwrap(),
            ReportConfig::default()
        );
    }
}
