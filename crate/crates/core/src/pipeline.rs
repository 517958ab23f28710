//! Multi-device dataflow pipeline simulation and efficiency comparison
//! tables (latency, effective frame rate, power, energy per frame).

use serde::{Deserialize, Serialize};

use crate::accel::{
    builtin_model, feature_masks_for, model_cost, DeviceSpec, LayerMasks, LayerSparsity, LayerSpec, ModelCost, TileSpec,
};
use crate::pruning::Pattern;
use crate::spatial::SaliencyMask;
use crate::{Error, Result};

pub const DEFAULT_TILES_EMITTED: usize = 16;

fn default_tiles_emitted() -> usize {
    DEFAULT_TILES_EMITTED
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    pub name: String,
    pub device: DeviceSpec,
    pub layers: Vec<LayerSpec>,
    #[serde(default = "default_tiles_emitted")]
    pub tiles_emitted: usize,
    /// Whether patch masks apply (feature maps aligned with the frame).
    #[serde(default = "yes")]
    pub spatial: bool,
}

impl StageSpec {
    pub fn validate(&self) -> Result<()> {
        self.device.validate()?;
        if self.tiles_emitted == 0 {
            return Err(Error::invalid_config(format!(
                "stage {}: tiles_emitted must be >= 1",
                self.name
            )));
        }
        self.layers.iter().try_for_each(LayerSpec::validate)
    }
}

/// Backbone / FPN+RPN / tracking head on U50, U50 and ZCU104.
pub fn default_stages() -> Vec<StageSpec> {
    let stage = |name: &str, device: DeviceSpec, model: &str, spatial: bool| StageSpec {
        name: name.into(),
        device,
        layers: builtin_model(model).expect("builtin model"),
        tiles_emitted: DEFAULT_TILES_EMITTED,
        spatial,
    };
    vec![
        stage("backbone", DeviceSpec::u50(), "resnet50_hd", true),
        stage("fpn_rpn", DeviceSpec::u50(), "fpn_rpn_hd", true),
        stage("track_head", DeviceSpec::zcu104(), "track_head", false),
    ]
}

/// Weight sparsity applied uniformly to every conv layer.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PruningSpec {
    pub channel_ratio: f64,
    /// Applied to layers with matching kernel size.
    pub pattern: Option<Pattern>,
}

#[derive(Debug, Clone, Default)]
pub struct StageMasks<'a> {
    pub patch_mask: Option<&'a SaliencyMask>,
    pub drop_threshold: f64,
    pub pruning: PruningSpec,
}

impl StageMasks<'_> {
    pub fn dense() -> Self {
        StageMasks {
            patch_mask: None,
            drop_threshold: 1.0,
            pruning: PruningSpec::default(),
        }
    }

    fn layer_masks(&self, stage: &StageSpec) -> Result<Vec<LayerMasks>> {
        let features = match self.patch_mask {
            Some(m) if stage.spatial => feature_masks_for(m, &stage.layers, self.drop_threshold)?,
            _ => vec![None; stage.layers.len()],
        };
        let pruned = self.pruning.channel_ratio > 0.0 || self.pruning.pattern.is_some();
        stage
            .layers
            .iter()
            .zip(features)
            .map(|(l, feature)| {
                let sparsity = match l.as_conv() {
                    Some(c) if pruned => {
                        let pattern = self.pruning.pattern.as_ref().filter(|p| p.k() == c.k);
                        Some(LayerSparsity::uniform(c, self.pruning.channel_ratio, pattern)?)
                    }
                    _ => None,
                };
                Ok(LayerMasks { feature, sparsity })
            })
            .collect()
    }
}

pub fn stage_cost(stage: &StageSpec, tile: &TileSpec, masks: &StageMasks) -> Result<ModelCost> {
    model_cost(&stage.layers, tile, &stage.device, &masks.layer_masks(stage)?)
}

/// Σ layer latencies on the stage's device, in seconds.
pub fn stage_latency(stage: &StageSpec, tile: &TileSpec, masks: &StageMasks) -> Result<f64> {
    Ok(stage_cost(stage, tile, masks)?.total.latency)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageReport {
    pub name: String,
    pub device: String,
    pub latency: f64,
    /// Modeled energy per frame.
    pub energy: f64,
    pub power: f64,
    pub start: f64,
    pub finish: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineReport {
    pub stages: Vec<StageReport>,
    pub end_to_end_latency: f64,
    pub throughput: f64,
    pub efr: f64,
    pub power: f64,
    pub energy_per_frame: f64,
    pub frame_drop_ratio: f64,
    pub patch_drop_ratio: f64,
    pub overlap: bool,
}

fn check_frame_drop(r: f64) -> Result<()> {
    if !(0.0..1.0).contains(&r) {
        return Err(Error::invalid_config(format!("frame drop ratio {r} not in [0, 1)")));
    }
    Ok(())
}

/// Start/finish times of stages with latencies `lat`. With overlap a stage
/// starts once its predecessor emitted its first tile and cannot finish
/// before processing the predecessor's last tile.
pub fn stage_timeline(lat: &[f64], tiles: &[usize], overlap: bool) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(lat.len());
    for (i, (&l, &t)) in lat.iter().zip(tiles).enumerate() {
        let (start, finish) = match out.last() {
            None => (0.0, l),
            Some(&(_, prev_finish)) if !overlap => (prev_finish, prev_finish + l),
            Some(&(prev_start, prev_finish)) => {
                let (pl, pt) = (lat[i - 1], tiles[i - 1]);
                let start = if pl > 0.0 {
                    prev_start + pl / pt as f64
                } else {
                    prev_start
                };
                if l > 0.0 {
                    (start, (start + l).max(prev_finish + l / t as f64))
                } else {
                    (start, prev_finish.max(start))
                }
            }
        };
        out.push((start, finish));
    }
    out
}

pub fn simulate_pipeline(
    stages: &[StageSpec],
    tile: &TileSpec,
    masks: &StageMasks,
    overlap: bool,
    frame_drop_ratio: f64,
) -> Result<PipelineReport> {
    if stages.is_empty() {
        return Err(Error::invalid_config("pipeline needs at least one stage"));
    }
    check_frame_drop(frame_drop_ratio)?;
    let costs = stages
        .iter()
        .map(|s| {
            s.validate()?;
            stage_cost(s, tile, masks)
        })
        .collect::<Result<Vec<_>>>()?;
    let lat: Vec<f64> = costs.iter().map(|c| c.total.latency).collect();
    let tiles: Vec<usize> = stages.iter().map(|s| s.tiles_emitted).collect();
    let timeline = stage_timeline(&lat, &tiles, overlap);
    let reports: Vec<StageReport> = stages
        .iter()
        .zip(&costs)
        .zip(&timeline)
        .map(|((s, c), &(start, finish))| StageReport {
            name: s.name.clone(),
            device: s.device.name.clone(),
            latency: c.total.latency,
            energy: c.total.energy,
            power: s.device.board_power.unwrap_or(if c.total.latency > 0.0 {
                c.total.energy / c.total.latency
            } else {
                0.0
            }),
            start,
            finish,
        })
        .collect();
    let bottleneck = lat.iter().cloned().fold(0.0, f64::max);
    if bottleneck <= 0.0 {
        return Err(Error::contract("every pipeline stage has zero latency"));
    }
    let throughput = 1.0 / bottleneck;
    let efr = throughput / (1.0 - frame_drop_ratio);
    let power: f64 = reports.iter().map(|s| s.power).sum();
    Ok(PipelineReport {
        end_to_end_latency: timeline.last().expect("non-empty").1,
        stages: reports,
        throughput,
        efr,
        power,
        energy_per_frame: power / efr,
        frame_drop_ratio,
        patch_drop_ratio: masks.patch_mask.map_or(0.0, |m| m.drop_ratio),
        overlap,
    })
}

pub const STAGE_CSV_HEADER: &str = "stage,device,start_ms,finish_ms,latency_ms,energy_mj,power_w";

impl PipelineReport {
    pub fn stages_csv(&self) -> String {
        let mut out = format!("{STAGE_CSV_HEADER}\n");
        for s in &self.stages {
            out.push_str(&format!(
                "{},{},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                s.name,
                s.device,
                s.start * 1e3,
                s.finish * 1e3,
                s.latency * 1e3,
                s.energy * 1e3,
                s.power
            ));
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        format!(
            "metric,value\nend_to_end_latency_ms,{:.6}\nthroughput_fps,{:.6}\nefr_fps,{:.6}\npower_w,{:.6}\n\
             energy_j_per_frame,{:.6}\nframe_drop_ratio,{}\npatch_drop_ratio,{}\noverlap,{}\n",
            self.end_to_end_latency * 1e3,
            self.throughput,
            self.efr,
            self.power,
            self.energy_per_frame,
            self.frame_drop_ratio,
            self.patch_drop_ratio,
            self.overlap
        )
    }
}

/// Clock scale making the dense end-to-end latency equal `target` seconds.
pub fn calibrate(target: f64, stages: &[StageSpec], tile: &TileSpec, overlap: bool) -> Result<f64> {
    if !(target.is_finite() && target > 0.0) {
        return Err(Error::invalid_config(format!(
            "calibration target {target} must be positive"
        )));
    }
    let dense = simulate_pipeline(stages, tile, &StageMasks::dense(), overlap, 0.0)?;
    Ok(dense.end_to_end_latency / target)
}

pub fn apply_clock_scale(stages: &mut [StageSpec], factor: f64) {
    for s in stages {
        s.device.clock_hz *= factor;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OursInput {
    #[serde(default = "default_method")]
    pub method: String,
    #[serde(default)]
    pub data_reduction: String,
    #[serde(default)]
    pub pruning: String,
    pub latency_ms: f64,
    pub frame_drop_ratio: f64,
    pub power_w: f64,
}

fn default_method() -> String {
    "ours".into()
}

/// A measured comparison row, taken as given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineRow {
    pub method: String,
    #[serde(default)]
    pub data_reduction: String,
    #[serde(default)]
    pub pruning: String,
    pub latency_ms: f64,
    pub efr_fps: f64,
    pub power_w: f64,
    /// Defaults to `power_w / efr_fps`.
    #[serde(default)]
    pub energy_j_per_frame: Option<f64>,
}

impl BaselineRow {
    pub fn energy(&self) -> f64 {
        self.energy_j_per_frame.unwrap_or(self.power_w / self.efr_fps)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRow {
    pub method: String,
    pub data_reduction: String,
    pub pruning: String,
    pub latency_ms: f64,
    pub efr_fps: f64,
    pub power_w: f64,
    pub energy_j_per_frame: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioRow {
    pub baseline: String,
    /// baseline ÷ ours
    pub latency: f64,
    /// ours ÷ baseline
    pub efr: f64,
    /// baseline ÷ ours
    pub power: f64,
    /// baseline ÷ ours
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonTable {
    pub rows: Vec<TableRow>,
    pub ratios: Vec<RatioRow>,
}

pub const TABLE_CSV_HEADER: &str = "method,data_reduction,pruning,latency_ms,efr_fps,power_w,energy_j_per_frame";
pub const RATIOS_CSV_HEADER: &str = "baseline,latency_x,efr_x,power_x,energy_x";

/// `x` rounded to three significant figures.
pub fn sig3(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let mag = x.abs().log10().floor() as i32;
    let decimals = (2 - mag).max(0) as usize;
    let s = format!("{x:.decimals$}");
    // Rounding can carry into a new digit (9.995 -> 10.00).
    let rounded: f64 = s.parse().expect("formatted float");
    let mag2 = rounded.abs().log10().floor() as i32;
    if mag2 > mag {
        format!("{rounded:.prec$}", prec = (2 - mag2).max(0) as usize)
    } else {
        s
    }
}

/// Our row from `(latency, frame drop, power)` plus the baseline rows and
/// improvement ratios against each baseline.
pub fn efficiency_report(ours: &OursInput, baselines: &[BaselineRow]) -> Result<ComparisonTable> {
    check_frame_drop(ours.frame_drop_ratio)?;
    if !(ours.latency_ms > 0.0 && ours.power_w > 0.0) {
        return Err(Error::invalid_config("latency and power must be positive"));
    }
    for b in baselines {
        if !(b.latency_ms > 0.0 && b.efr_fps > 0.0 && b.power_w > 0.0) {
            return Err(Error::invalid_config(format!(
                "baseline {}: values must be positive",
                b.method
            )));
        }
    }
    let efr = 1e3 / ours.latency_ms / (1.0 - ours.frame_drop_ratio);
    let energy = ours.power_w / efr;
    let mut rows = vec![TableRow {
        method: ours.method.clone(),
        data_reduction: ours.data_reduction.clone(),
        pruning: ours.pruning.clone(),
        latency_ms: ours.latency_ms,
        efr_fps: efr,
        power_w: ours.power_w,
        energy_j_per_frame: energy,
    }];
    let mut ratios = Vec::new();
    for b in baselines {
        rows.push(TableRow {
            method: b.method.clone(),
            data_reduction: b.data_reduction.clone(),
            pruning: b.pruning.clone(),
            latency_ms: b.latency_ms,
            efr_fps: b.efr_fps,
            power_w: b.power_w,
            energy_j_per_frame: b.energy(),
        });
        ratios.push(RatioRow {
            baseline: b.method.clone(),
            latency: b.latency_ms / ours.latency_ms,
            efr: efr / b.efr_fps,
            power: b.power_w / ours.power_w,
            energy: b.energy() / energy,
        });
    }
    Ok(ComparisonTable { rows, ratios })
}

impl ComparisonTable {
    pub fn table_csv(&self) -> String {
        let mut out = format!("{TABLE_CSV_HEADER}\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.method,
                r.data_reduction,
                r.pruning,
                sig3(r.latency_ms),
                sig3(r.efr_fps),
                sig3(r.power_w),
                sig3(r.energy_j_per_frame)
            ));
        }
        out
    }

    pub fn ratios_csv(&self) -> String {
        let mut out = format!("{RATIOS_CSV_HEADER}\n");
        for r in &self.ratios {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.baseline,
                sig3(r.latency),
                sig3(r.efr),
                sig3(r.power),
                sig3(r.energy)
            ));
        }
        out
    }
}
