//! Analytical accelerator cost model: op counts, output-space tiling, a
//! row-parallel channel-sequential cycle model with channel and tile
//! skipping, DRAM traffic, energy and roofline bounds.

use serde::{Deserialize, Serialize};

use crate::archive::MaskEntry;
use crate::pruning::Pattern;
use crate::spatial::{interpolate_mask, FeatureMask, SaliencyMask};
use crate::{Error, Result};

pub const DEFAULT_CLOCK_HZ: f64 = 300e6;
pub const DEFAULT_E_MAC: f64 = 4.6e-12;
pub const DEFAULT_E_DRAM_BYTE: f64 = 160e-12;
pub const DEFAULT_ELEMENT_BYTES: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvLayer {
    pub name: String,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    #[serde(default = "one")]
    pub stride: usize,
    /// Defaults to `k / 2`.
    #[serde(default)]
    pub padding: Option<usize>,
    pub h: usize,
    pub w: usize,
}

fn one() -> usize {
    1
}

impl ConvLayer {
    pub fn new(
        name: impl Into<String>,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        h: usize,
        w: usize,
    ) -> Self {
        ConvLayer {
            name: name.into(),
            c_in,
            c_out,
            k,
            stride,
            padding: None,
            h,
            w,
        }
    }

    pub fn pad(&self) -> usize {
        self.padding.unwrap_or(self.k / 2)
    }

    pub fn h_out(&self) -> usize {
        (self.h + 2 * self.pad() - self.k) / self.stride + 1
    }

    pub fn w_out(&self) -> usize {
        (self.w + 2 * self.pad() - self.k) / self.stride + 1
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [self.c_in, self.c_out, self.k, self.stride, self.h, self.w];
        if dims.contains(&0) {
            return Err(Error::invalid_config(format!("layer {}: zero dimension", self.name)));
        }
        if self.h + 2 * self.pad() < self.k || self.w + 2 * self.pad() < self.k {
            return Err(Error::invalid_config(format!(
                "layer {}: kernel exceeds padded input",
                self.name
            )));
        }
        Ok(())
    }

    pub fn dense_macs(&self) -> u64 {
        (self.h_out() * self.w_out() * self.c_out * self.c_in * self.k * self.k) as u64
    }
}

/// Layer with a fixed cost (pooling, elementwise ops, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedLayer {
    pub name: String,
    #[serde(default)]
    pub gops: f64,
    #[serde(default)]
    pub cycles: u64,
    #[serde(default)]
    pub dram_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv(ConvLayer),
    Other(FixedLayer),
}

impl LayerSpec {
    pub fn name(&self) -> &str {
        match self {
            LayerSpec::Conv(c) => &c.name,
            LayerSpec::Other(f) => &f.name,
        }
    }

    pub fn as_conv(&self) -> Option<&ConvLayer> {
        match self {
            LayerSpec::Conv(c) => Some(c),
            LayerSpec::Other(_) => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LayerSpec::Conv(c) => c.validate(),
            LayerSpec::Other(f) if f.gops < 0.0 || !f.gops.is_finite() => {
                Err(Error::invalid_config(format!("layer {}: bad gops", f.name)))
            }
            LayerSpec::Other(_) => Ok(()),
        }
    }
}

/// Giga-operations, one MAC counting as two.
pub fn layer_gops(layer: &LayerSpec) -> f64 {
    match layer {
        LayerSpec::Conv(c) => 2.0 * c.dense_macs() as f64 / 1e9,
        LayerSpec::Other(f) => f.gops,
    }
}

pub fn model_gops(layers: &[LayerSpec]) -> f64 {
    layers.iter().map(layer_gops).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TileSpec {
    /// Output rows per tile.
    pub t_h: usize,
    /// Output columns per tile.
    pub t_w: usize,
    /// Input channels per load.
    pub t_c: usize,
}

impl Default for TileSpec {
    fn default() -> Self {
        TileSpec {
            t_h: 16,
            t_w: 16,
            t_c: 64,
        }
    }
}

impl TileSpec {
    pub fn validate(&self) -> Result<()> {
        if self.t_h == 0 || self.t_w == 0 || self.t_c == 0 {
            return Err(Error::invalid_config("tile dims must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tile {
    pub out_y: usize,
    pub out_x: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub in_y: usize,
    pub in_x: usize,
    pub in_h: usize,
    pub in_w: usize,
}

fn input_span(o0: usize, o_len: usize, stride: usize, pad: usize, k: usize, limit: usize) -> (usize, usize) {
    let lo = (o0 * stride).saturating_sub(pad);
    let hi = ((o0 + o_len - 1) * stride + k).saturating_sub(pad).min(limit);
    (lo, hi - lo)
}

/// Row-major output tiling; each tile carries the clamped input footprint it
/// reads (a `⌊k/2⌋` halo for stride-1 "same" convs).
pub fn tile_schedule(layer: &ConvLayer, tile: &TileSpec) -> Vec<Tile> {
    let (ho, wo) = (layer.h_out(), layer.w_out());
    let (th, tw) = (tile.t_h.min(ho), tile.t_w.min(wo));
    let (pad, s, k) = (layer.pad(), layer.stride, layer.k);
    let mut tiles = Vec::new();
    for out_y in (0..ho).step_by(th) {
        let out_h = th.min(ho - out_y);
        let (in_y, in_h) = input_span(out_y, out_h, s, pad, k, layer.h);
        for out_x in (0..wo).step_by(tw) {
            let out_w = tw.min(wo - out_x);
            let (in_x, in_w) = input_span(out_x, out_w, s, pad, k, layer.w);
            tiles.push(Tile {
                out_y,
                out_x,
                out_h,
                out_w,
                in_y,
                in_x,
                in_h,
                in_w,
            });
        }
    }
    tiles
}

/// Per-input-channel sparsity shared by all filters of a layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSparsity {
    pub channel_kept: Vec<bool>,
    /// Kernel rows holding any nonzero weight, per channel.
    pub rows_nonzero: Vec<usize>,
    /// Nonzero weights summed over filters, per channel.
    pub nnz: Vec<u64>,
}

impl LayerSparsity {
    pub fn dense(layer: &ConvLayer) -> Self {
        let kk = (layer.k * layer.k) as u64;
        LayerSparsity {
            channel_kept: vec![true; layer.c_in],
            rows_nonzero: vec![layer.k; layer.c_in],
            nnz: vec![kk * layer.c_out as u64; layer.c_in],
        }
    }

    /// Drops the first `⌊c_in·channel_ratio⌋` channels of every filter and
    /// gives every surviving kernel `pattern` (dense when `None`).
    pub fn uniform(layer: &ConvLayer, channel_ratio: f64, pattern: Option<&Pattern>) -> Result<Self> {
        if !(0.0..=1.0).contains(&channel_ratio) {
            return Err(Error::invalid_config(format!(
                "channel ratio {channel_ratio} not in [0, 1]"
            )));
        }
        let dropped = crate::util::floor_count(layer.c_in, channel_ratio);
        let (rows, nnz) = match pattern {
            Some(p) if p.k() == layer.k => (pattern_rows(p), p.nnz() as u64),
            Some(p) if layer.k == 1 => (1, p.nnz().min(1) as u64),
            Some(p) => {
                return Err(Error::contract(format!(
                    "{}x{} pattern on {}x{} layer {}",
                    p.k(),
                    p.k(),
                    layer.k,
                    layer.k,
                    layer.name
                )))
            }
            None => (layer.k, (layer.k * layer.k) as u64),
        };
        let kept: Vec<bool> = (0..layer.c_in).map(|c| c >= dropped).collect();
        Ok(LayerSparsity {
            rows_nonzero: kept.iter().map(|&k| if k { rows } else { 0 }).collect(),
            nnz: kept
                .iter()
                .map(|&k| if k { nnz * layer.c_out as u64 } else { 0 })
                .collect(),
            channel_kept: kept,
        })
    }

    /// Derived from a conv weight mask: a channel stays if any filter keeps a
    /// weight in it; its row count is the maximum over filters.
    pub fn from_mask_entry(entry: &MaskEntry) -> Result<Self> {
        let (f, c, k) = crate::archive::conv_dims(&entry.name, &entry.shape)?;
        let kk = k * k;
        let mut rows_nonzero = vec![0; c];
        let mut nnz = vec![0u64; c];
        for fi in 0..f {
            for ci in 0..c {
                let kernel = &entry.bits[(fi * c + ci) * kk..(fi * c + ci + 1) * kk];
                nnz[ci] += kernel.iter().filter(|&&b| b).count() as u64;
                let rows = kernel.chunks(k).filter(|r| r.iter().any(|&b| b)).count();
                rows_nonzero[ci] = rows_nonzero[ci].max(rows);
            }
        }
        Ok(LayerSparsity {
            channel_kept: rows_nonzero.iter().map(|&r| r > 0).collect(),
            rows_nonzero,
            nnz,
        })
    }

    fn check(&self, layer: &ConvLayer) -> Result<()> {
        let c = layer.c_in;
        if self.channel_kept.len() != c || self.rows_nonzero.len() != c || self.nnz.len() != c {
            return Err(Error::contract(format!(
                "sparsity for layer {} does not have {c} channels",
                layer.name
            )));
        }
        if self.rows_nonzero.iter().any(|&r| r > layer.k) {
            return Err(Error::contract(format!("row count above k in layer {}", layer.name)));
        }
        Ok(())
    }

    fn kept_channels(&self) -> u64 {
        self.channel_kept.iter().filter(|&&k| k).count() as u64
    }

    fn kept_nnz(&self) -> u64 {
        self.channel_kept
            .iter()
            .zip(&self.nnz)
            .filter(|(&k, _)| k)
            .map(|(_, &n)| n)
            .sum()
    }
}

fn pattern_rows(p: &Pattern) -> usize {
    p.bits().chunks(p.k()).filter(|r| r.iter().any(|&b| b)).count()
}

/// `⌈c_out / filters_in_parallel⌉ · Σ_{kept c} ⌈t_h · rows_c / k⌉`.
pub fn tile_cycles(
    layer: &ConvLayer,
    tile_rows: usize,
    channel_kept: &[bool],
    rows_nonzero: &[usize],
    filters_in_parallel: usize,
) -> u64 {
    let k = layer.k as u64;
    let per_filter: u64 = channel_kept
        .iter()
        .zip(rows_nonzero)
        .filter(|(&kept, _)| kept)
        .map(|(_, &r)| (tile_rows as u64 * r as u64).div_ceil(k))
        .sum();
    layer.c_out.div_ceil(filters_in_parallel.max(1)) as u64 * per_filter
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSpec {
    pub name: String,
    pub clock_hz: f64,
    pub dsp_count: u32,
    pub peak_gops: f64,
    #[serde(default = "default_e_mac")]
    pub e_mac: f64,
    #[serde(default = "default_e_dram")]
    pub e_dram_byte: f64,
    /// Measured board power in watts, when known.
    #[serde(default)]
    pub board_power: Option<f64>,
    #[serde(default = "default_element_bytes")]
    pub element_bytes: u64,
    #[serde(default = "one")]
    pub filters_in_parallel: usize,
}

fn default_e_mac() -> f64 {
    DEFAULT_E_MAC
}

fn default_e_dram() -> f64 {
    DEFAULT_E_DRAM_BYTE
}

fn default_element_bytes() -> u64 {
    DEFAULT_ELEMENT_BYTES
}

impl DeviceSpec {
    fn preset(name: &str, dsp_count: u32, peak_gops: f64) -> Self {
        DeviceSpec {
            name: name.into(),
            clock_hz: DEFAULT_CLOCK_HZ,
            dsp_count,
            peak_gops,
            e_mac: DEFAULT_E_MAC,
            e_dram_byte: DEFAULT_E_DRAM_BYTE,
            board_power: None,
            element_bytes: DEFAULT_ELEMENT_BYTES,
            filters_in_parallel: 1,
        }
    }

    pub fn u55c() -> Self {
        Self::preset("u55c", 9024, 2256.0)
    }

    pub fn u50() -> Self {
        Self::preset("u50", 5952, 1488.0)
    }

    pub fn zcu104() -> Self {
        Self::preset("zcu104", 1728, 432.0)
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "u55c" => Ok(Self::u55c()),
            "u50" => Ok(Self::u50()),
            "zcu104" => Ok(Self::zcu104()),
            other => Err(Error::invalid_config(format!("unknown device preset {other:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.clock_hz, self.peak_gops, self.e_mac, self.e_dram_byte];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0))
            || self.dsp_count == 0
            || self.element_bytes == 0
            || self.filters_in_parallel == 0
        {
            return Err(Error::invalid_config(format!(
                "device {}: values must be positive",
                self.name
            )));
        }
        if matches!(self.board_power, Some(p) if !(p.is_finite() && p > 0.0)) {
            return Err(Error::invalid_config(format!("device {}: bad board_power", self.name)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LayerCost {
    pub cycles: u64,
    pub latency: f64,
    pub macs: u64,
    pub dram_act_bytes: u64,
    pub dram_weight_bytes: u64,
    pub dram_bytes: u64,
    pub energy: f64,
    pub tiles_total: u64,
    pub tiles_skipped: u64,
}

impl LayerCost {
    fn finish(mut self, device: &DeviceSpec) -> Self {
        self.dram_bytes = self.dram_act_bytes + self.dram_weight_bytes;
        self.latency = self.cycles as f64 / device.clock_hz;
        self.energy = device.e_mac * self.macs as f64 + device.e_dram_byte * self.dram_bytes as f64;
        self
    }
}

/// Cost of one layer. A tile is skipped when every output cell it covers is
/// dropped in `feature_mask`; skipped tiles cost nothing. Weights load once.
pub fn layer_cost(
    layer: &LayerSpec,
    tile: &TileSpec,
    device: &DeviceSpec,
    feature_mask: Option<&FeatureMask>,
    sparsity: Option<&LayerSparsity>,
) -> Result<LayerCost> {
    let conv = match layer {
        LayerSpec::Conv(c) => c,
        LayerSpec::Other(f) => {
            return Ok(LayerCost {
                cycles: f.cycles,
                macs: (f.gops * 1e9 / 2.0).round() as u64,
                dram_act_bytes: f.dram_bytes,
                tiles_total: 1,
                ..LayerCost::default()
            }
            .finish(device))
        }
    };
    tile.validate()?;
    if let Some(m) = feature_mask {
        if m.h != conv.h_out() || m.w != conv.w_out() {
            return Err(Error::contract(format!(
                "feature mask {}x{} does not match layer {} output {}x{}",
                m.h,
                m.w,
                conv.name,
                conv.h_out(),
                conv.w_out()
            )));
        }
    }
    let dense;
    let sp = match sparsity {
        Some(s) => {
            s.check(conv)?;
            s
        }
        None => {
            dense = LayerSparsity::dense(conv);
            &dense
        }
    };
    let eb = device.element_bytes;
    let kept_c = sp.kept_channels();
    let kept_nnz = sp.kept_nnz();
    let mut cost = LayerCost::default();
    for t in tile_schedule(conv, tile) {
        cost.tiles_total += 1;
        let live = feature_mask.is_none_or(|m| {
            (t.out_y..t.out_y + t.out_h).any(|y| (t.out_x..t.out_x + t.out_w).any(|x| m.is_kept(y, x)))
        });
        if !live {
            cost.tiles_skipped += 1;
            continue;
        }
        cost.cycles += tile_cycles(
            conv,
            t.out_h,
            &sp.channel_kept,
            &sp.rows_nonzero,
            device.filters_in_parallel,
        );
        let cells = (t.out_h * t.out_w) as u64;
        cost.macs += cells * kept_nnz;
        cost.dram_act_bytes += eb * ((t.in_h * t.in_w) as u64 * kept_c + cells * conv.c_out as u64);
    }
    if cost.tiles_skipped < cost.tiles_total {
        cost.dram_weight_bytes = eb * kept_nnz;
    }
    Ok(cost.finish(device))
}

/// Latency lower bound in seconds.
pub fn roofline_bound(total_gops: f64, peak_gops: f64) -> f64 {
    total_gops / peak_gops
}

/// Per-layer masks for `model_cost`; `None` entries are dense / unmasked.
#[derive(Debug, Clone, Default)]
pub struct LayerMasks {
    pub feature: Option<FeatureMask>,
    pub sparsity: Option<LayerSparsity>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCost {
    pub layers: Vec<(String, LayerCost)>,
    pub total: LayerCost,
    pub gops_dense: f64,
    /// `2·macs / 1e9` actually executed.
    pub gops_effective: f64,
}

pub const COST_CSV_HEADER: &str = "layer,cycles,latency_ms,macs,bytes,energy_mj,tiles_skipped";

impl ModelCost {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{COST_CSV_HEADER}\n");
        let rows = self
            .layers
            .iter()
            .map(|(n, c)| (n.as_str(), c))
            .chain([("TOTAL", &self.total)]);
        for (name, c) in rows {
            out.push_str(&format!(
                "{name},{},{:.6},{},{},{:.6},{}\n",
                c.cycles,
                c.latency * 1e3,
                c.macs,
                c.dram_bytes,
                c.energy * 1e3,
                c.tiles_skipped
            ));
        }
        out
    }
}

/// Sums layer costs in table order. `masks` is empty or one entry per layer.
pub fn model_cost(
    layers: &[LayerSpec],
    tile: &TileSpec,
    device: &DeviceSpec,
    masks: &[LayerMasks],
) -> Result<ModelCost> {
    if !masks.is_empty() && masks.len() != layers.len() {
        return Err(Error::contract(format!(
            "{} masks for {} layers",
            masks.len(),
            layers.len()
        )));
    }
    let mut total = LayerCost::default();
    let mut out = Vec::with_capacity(layers.len());
    for (i, layer) in layers.iter().enumerate() {
        let m = masks.get(i);
        let c = layer_cost(
            layer,
            tile,
            device,
            m.and_then(|m| m.feature.as_ref()),
            m.and_then(|m| m.sparsity.as_ref()),
        )?;
        total.cycles += c.cycles;
        total.macs += c.macs;
        total.dram_act_bytes += c.dram_act_bytes;
        total.dram_weight_bytes += c.dram_weight_bytes;
        total.tiles_total += c.tiles_total;
        total.tiles_skipped += c.tiles_skipped;
        total.latency += c.latency;
        total.energy += c.energy;
        out.push((layer.name().to_owned(), c));
    }
    total.dram_bytes = total.dram_act_bytes + total.dram_weight_bytes;
    Ok(ModelCost {
        layers: out,
        total,
        gops_dense: model_gops(layers),
        gops_effective: 2.0 * total.macs as f64 / 1e9,
    })
}

/// One patch mask resampled onto every conv layer's output grid.
pub fn feature_masks_for(
    mask: &SaliencyMask,
    layers: &[LayerSpec],
    drop_threshold: f64,
) -> Result<Vec<Option<FeatureMask>>> {
    layers
        .iter()
        .map(|l| match l {
            LayerSpec::Conv(c) => interpolate_mask(mask, &c.name, c.h_out(), c.w_out(), drop_threshold).map(Some),
            LayerSpec::Other(_) => Ok(None),
        })
        .collect()
}

fn fixed(name: String, cycles: usize, gops: f64, bytes: usize) -> LayerSpec {
    LayerSpec::Other(FixedLayer {
        name,
        gops,
        cycles: cycles as u64,
        dram_bytes: bytes as u64,
    })
}

fn conv(name: String, c_in: usize, c_out: usize, k: usize, stride: usize, h: usize, w: usize) -> LayerSpec {
    LayerSpec::Conv(ConvLayer::new(name, c_in, c_out, k, stride, h, w))
}

fn elementwise(name: String, c: usize, h: usize, w: usize) -> LayerSpec {
    let eb = DEFAULT_ELEMENT_BYTES as usize;
    fixed(name, c * h, (c * h * w) as f64 / 1e9, 3 * eb * c * h * w)
}

/// ResNet-50 (stride in the first 1×1 of each downsampling bottleneck) for an
/// `h × w` RGB input. Pooling and residual adds are fixed-cost entries.
pub fn resnet50_layers(h: usize, w: usize, classifier: bool) -> Vec<LayerSpec> {
    let mut layers = Vec::new();
    let stem = ConvLayer::new("conv1", 3, 64, 7, 2, h, w);
    let (mut h, mut w) = (stem.h_out(), stem.w_out());
    layers.push(LayerSpec::Conv(stem));
    let (ph, pw) = ((h + 2 - 3) / 2 + 1, (w + 2 - 3) / 2 + 1);
    let eb = DEFAULT_ELEMENT_BYTES as usize;
    layers.push(fixed(
        "pool1".into(),
        64 * ph,
        (64 * ph * pw * 9) as f64 / 1e9,
        eb * 64 * (h * w + ph * pw),
    ));
    (h, w) = (ph, pw);
    let mut c_in = 64;
    for (stage, (&blocks, &width)) in [3usize, 4, 6, 3].iter().zip(&[64usize, 128, 256, 512]).enumerate() {
        for b in 0..blocks {
            let stride = if b == 0 && stage > 0 { 2 } else { 1 };
            let p = format!("layer{}.{b}", stage + 1);
            let c1 = ConvLayer::new(format!("{p}.conv1"), c_in, width, 1, stride, h, w);
            let (oh, ow) = (c1.h_out(), c1.w_out());
            layers.push(LayerSpec::Conv(c1));
            layers.push(conv(format!("{p}.conv2"), width, width, 3, 1, oh, ow));
            layers.push(conv(format!("{p}.conv3"), width, 4 * width, 1, 1, oh, ow));
            if b == 0 {
                layers.push(conv(format!("{p}.downsample"), c_in, 4 * width, 1, stride, h, w));
            }
            layers.push(elementwise(format!("{p}.add"), 4 * width, oh, ow));
            (h, w, c_in) = (oh, ow, 4 * width);
        }
    }
    if classifier {
        layers.push(fixed(
            "avgpool".into(),
            c_in,
            (c_in * h * w) as f64 / 1e9,
            eb * c_in * h * w,
        ));
        layers.push(conv("fc".into(), c_in, 1000, 1, 1, 1, 1));
    }
    layers
}

/// Backbone output sizes `(c, h, w)` for C2..C5.
fn resnet_levels(h: usize, w: usize) -> Vec<(usize, usize, usize)> {
    let mut dims = Vec::new();
    let mut last = (0, 0, 0);
    for l in resnet50_layers(h, w, false) {
        if let LayerSpec::Conv(c) = &l {
            if c.name.ends_with(".conv3") {
                let d = (c.c_out, c.h_out(), c.w_out());
                if d != last {
                    if last.0 != 0 && last.1 != d.1 {
                        dims.push(last);
                    }
                    last = d;
                }
            }
        }
    }
    dims.push(last);
    dims
}

/// FPN (256-channel, P2..P5 plus a pooled P6) and a shared RPN head with
/// `anchors` anchors per location.
pub fn fpn_rpn_layers(h: usize, w: usize, anchors: usize) -> Vec<LayerSpec> {
    let mut layers = Vec::new();
    let levels = resnet_levels(h, w);
    for (i, &(c, lh, lw)) in levels.iter().enumerate().rev() {
        layers.push(conv(format!("fpn.lateral{}", i + 2), c, 256, 1, 1, lh, lw));
        if i + 1 < levels.len() {
            layers.push(elementwise(format!("fpn.merge{}", i + 2), 256, lh, lw));
        }
        layers.push(conv(format!("fpn.out{}", i + 2), 256, 256, 3, 1, lh, lw));
    }
    let &(_, h5, w5) = levels.last().expect("four levels");
    let (h6, w6) = ((h5 - 1) / 2 + 1, (w5 - 1) / 2 + 1);
    layers.push(fixed("fpn.p6".into(), 256 * h6, 0.0, 0));
    let mut sizes: Vec<(usize, usize)> = levels.iter().map(|&(_, a, b)| (a, b)).collect();
    sizes.push((h6, w6));
    for (i, &(lh, lw)) in sizes.iter().enumerate() {
        layers.push(conv(format!("rpn.p{}.conv", i + 2), 256, 256, 3, 1, lh, lw));
        layers.push(conv(format!("rpn.p{}.cls", i + 2), 256, anchors, 1, 1, lh, lw));
        layers.push(conv(format!("rpn.p{}.reg", i + 2), 256, 4 * anchors, 1, 1, lh, lw));
    }
    layers
}

/// RoI box head and quasi-dense embedding head over `rois` 7×7 regions.
/// Fully connected layers are 1×1 convs over a `1 × rois` map.
pub fn track_head_layers(rois: usize, classes: usize) -> Vec<LayerSpec> {
    let eb = DEFAULT_ELEMENT_BYTES as usize;
    let mut layers = vec![fixed("roi_align".into(), rois * 7, 0.0, eb * rois * 256 * 49)];
    layers.push(conv("bbox.fc1".into(), 256 * 49, 1024, 1, 1, 1, rois));
    layers.push(conv("bbox.fc2".into(), 1024, 1024, 1, 1, 1, rois));
    layers.push(conv("bbox.cls".into(), 1024, classes + 1, 1, 1, 1, rois));
    layers.push(conv("bbox.reg".into(), 1024, 4 * classes, 1, 1, 1, rois));
    for i in 0..4 {
        layers.push(conv(format!("embed.conv{i}"), 256, 256, 3, 1, 7, 7 * rois));
    }
    layers.push(conv("embed.fc".into(), 256 * 49, 1024, 1, 1, 1, rois));
    layers.push(conv("embed.out".into(), 1024, 256, 1, 1, 1, rois));
    layers
}

pub fn builtin_model(name: &str) -> Result<Vec<LayerSpec>> {
    match name {
        "resnet50_hd" => Ok(resnet50_layers(720, 1280, false)),
        "resnet50_224" => Ok(resnet50_layers(224, 224, true)),
        "fpn_rpn_hd" => Ok(fpn_rpn_layers(720, 1280, 3)),
        "track_head" => Ok(track_head_layers(128, 8)),
        other => Err(Error::invalid_config(format!("unknown builtin model {other:?}"))),
    }
}

pub const BUILTIN_MODELS: [&str; 4] = ["resnet50_hd", "resnet50_224", "fpn_rpn_hd", "track_head"];

pub fn load_layer_table(path: impl AsRef<std::path::Path>) -> Result<Vec<LayerSpec>> {
    let layers: Vec<LayerSpec> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    for l in &layers {
        l.validate()?;
    }
    Ok(layers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spatial::parse_bitstring;

    fn layer(c_in: usize, c_out: usize, k: usize, h: usize, w: usize) -> ConvLayer {
        ConvLayer::new("l", c_in, c_out, k, 1, h, w)
    }

    #[test]
    fn gops_examples() {
        assert_eq!(layer_gops(&LayerSpec::Conv(layer(1, 1, 1, 1, 1))), 2e-9);
        let g = layer_gops(&LayerSpec::Conv(layer(64, 64, 3, 56, 56)));
        assert_eq!(g, 2.0 * 56.0 * 56.0 * 64.0 * 64.0 * 9.0 / 1e9);
        assert!((g - 0.2312).abs() < 1e-4);
        let f = LayerSpec::Other(FixedLayer {
            name: "p".into(),
            gops: 0.5,
            cycles: 7,
            dram_bytes: 0,
        });
        assert_eq!(layer_gops(&f), 0.5);
    }

    #[test]
    fn output_dims() {
        let c = ConvLayer::new("s", 3, 64, 7, 2, 720, 1280);
        assert_eq!((c.h_out(), c.w_out()), (360, 640));
        let c = ConvLayer::new("d", 64, 64, 1, 2, 45, 80);
        assert_eq!((c.h_out(), c.w_out()), (23, 40));
    }

    #[test]
    fn resnet_tables() {
        let small = model_gops(&resnet50_layers(224, 224, true));
        assert!((small - 7.7).abs() < 0.1, "{small}");
        let hd = resnet50_layers(720, 1280, false);
        let mut threes: Vec<f64> = hd
            .iter()
            .filter(|l| l.as_conv().is_some_and(|c| c.k == 3))
            .map(layer_gops)
            .collect();
        threes.sort_by(|a, b| b.total_cmp(a));
        assert!(threes[0] + threes[1] > small);
        let levels = resnet_levels(720, 1280);
        assert_eq!(
            levels,
            vec![(256, 180, 320), (512, 90, 160), (1024, 45, 80), (2048, 23, 40)]
        );
        for name in BUILTIN_MODELS {
            for l in builtin_model(name).unwrap() {
                l.validate().unwrap();
            }
        }
    }

    #[test]
    fn schedule_covers_outputs() {
        let l = layer(1, 1, 3, 8, 8);
        let full = tile_schedule(&l, &TileSpec { t_h: 8, t_w: 8, t_c: 1 });
        assert_eq!(full.len(), 1);
        let tiles = tile_schedule(&l, &TileSpec { t_h: 4, t_w: 4, t_c: 1 });
        assert_eq!(tiles.len(), 4);
        let mut seen = [[0u8; 8]; 8];
        for t in &tiles {
            for row in seen.iter_mut().skip(t.out_y).take(t.out_h) {
                for cell in row.iter_mut().skip(t.out_x).take(t.out_w) {
                    *cell += 1;
                }
            }
        }
        assert!(seen.iter().flatten().all(|&c| c == 1));
        let inner = tiles.iter().find(|t| t.out_y == 4 && t.out_x == 4).unwrap();
        assert_eq!((inner.in_y, inner.in_h, inner.in_x, inner.in_w), (3, 5, 3, 5));
        let corner = tiles[0];
        assert_eq!((corner.in_y, corner.in_h), (0, 5));
        let big = l.clone();
        assert_eq!(
            tile_schedule(
                &big,
                &TileSpec {
                    t_h: 100,
                    t_w: 100,
                    t_c: 1
                }
            )
            .len(),
            1
        );
    }

    #[test]
    fn cycle_rules() {
        let l = layer(8, 4, 3, 16, 16);
        let dense = tile_cycles(&l, 16, &[true; 8], &[3; 8], 1);
        assert_eq!(dense, 8 * 16 * 4);
        let mut kept = [true; 8];
        kept[..2].iter_mut().for_each(|k| *k = false);
        assert_eq!(tile_cycles(&l, 16, &kept, &[3; 8], 1) * 4, dense * 3);
        assert_eq!(tile_cycles(&l, 16, &[true; 8], &[2; 8], 1), 8 * 11 * 4);
        assert_eq!(tile_cycles(&l, 16, &[true; 8], &[3; 8], 3), 8 * 16 * 2);
    }

    #[test]
    fn dense_cost_and_identities() {
        let l = LayerSpec::Conv(layer(16, 32, 3, 32, 32));
        let dev = DeviceSpec::u55c();
        let c = layer_cost(&l, &TileSpec::default(), &dev, None, None).unwrap();
        assert_eq!(c.macs as f64, layer_gops(&l) / 2.0 * 1e9);
        assert_eq!(c.latency, c.cycles as f64 / dev.clock_hz);
        assert_eq!(
            c.energy,
            dev.e_mac * c.macs as f64 + dev.e_dram_byte * c.dram_bytes as f64
        );
        assert_eq!(c.tiles_total, 4);
        assert_eq!(c.cycles, 4 * 16 * 16 * 32);
        assert_eq!(c.dram_weight_bytes, 2 * 16 * 32 * 9);
    }

    #[test]
    fn pattern_sparsity_reduces_rows_and_macs() {
        let l = layer(4, 2, 3, 8, 8);
        let p = Pattern::new(3, parse_bitstring("110110000").unwrap()).unwrap();
        let s = LayerSparsity::uniform(&l, 0.0, Some(&p)).unwrap();
        assert_eq!(s.rows_nonzero, vec![2; 4]);
        let dev = DeviceSpec::u55c();
        let t = TileSpec { t_h: 8, t_w: 8, t_c: 4 };
        let c = layer_cost(&LayerSpec::Conv(l.clone()), &t, &dev, None, Some(&s)).unwrap();
        assert_eq!(c.cycles, 2 * 4 * 6);
        assert_eq!(c.macs, 64 * 2 * 4 * 4);
    }

    #[test]
    fn sparsity_from_mask() {
        let mut bits = vec![false; 2 * 2 * 9];
        bits[0] = true; // f0 c0 row 0
        bits[9 + 8] = true; // f0 c1 row 2
        bits[18 + 3] = true; // f1 c0 row 1
        bits[18 + 4] = true;
        let e = MaskEntry {
            name: "w".into(),
            shape: vec![2, 2, 3, 3],
            bits,
        };
        let s = LayerSparsity::from_mask_entry(&e).unwrap();
        assert_eq!(s.channel_kept, vec![true, true]);
        assert_eq!(s.rows_nonzero, vec![1, 1]);
        assert_eq!(s.nnz, vec![3, 1]);
    }

    #[test]
    fn mask_dims_checked_and_roofline() {
        let l = LayerSpec::Conv(layer(1, 1, 3, 8, 8));
        let m = FeatureMask::all_kept("l", 4, 8);
        let r = layer_cost(&l, &TileSpec::default(), &DeviceSpec::u55c(), Some(&m), None);
        assert!(matches!(r, Err(Error::Contract(_))));
        assert!((roofline_bound(157.9, 2256.0) - 0.06999).abs() < 1e-5);
        assert_eq!(roofline_bound(0.0, 2256.0), 0.0);
        assert_eq!(roofline_bound(78.95, 2256.0) * 2.0, roofline_bound(157.9, 2256.0));
    }

    #[test]
    fn model_totals_sum_parts() {
        let layers = resnet50_layers(64, 64, false);
        let dev = DeviceSpec::u50();
        let m = model_cost(&layers, &TileSpec::default(), &dev, &[]).unwrap();
        assert_eq!(m.layers.len(), layers.len());
        assert_eq!(m.total.cycles, m.layers.iter().map(|l| l.1.cycles).sum::<u64>());
        assert_eq!(m.total.macs, m.layers.iter().map(|l| l.1.macs).sum::<u64>());
        let one = model_cost(&layers[..1], &TileSpec::default(), &dev, &[]).unwrap();
        let lc = layer_cost(&layers[0], &TileSpec::default(), &dev, None, None).unwrap();
        assert_eq!(one.total, lc);
        assert!(m.to_csv().starts_with(COST_CSV_HEADER));
        assert!(m.to_csv().lines().last().unwrap().starts_with("TOTAL,"));
    }

    #[test]
    fn layer_table_json() {
        let layers = builtin_model("track_head").unwrap();
        let j = serde_json::to_string(&layers).unwrap();
        let back: Vec<LayerSpec> = serde_json::from_str(&j).unwrap();
        assert_eq!(back, layers);
        let bad = r#"[{"kind":"conv","name":"x","c_in":1,"c_out":1,"k":3,"h":4,"w":4,"oops":1}]"#;
        assert!(serde_json::from_str::<Vec<LayerSpec>>(bad).is_err());
    }
}
