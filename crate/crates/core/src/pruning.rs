//! Magnitude pruning and hardware-regular pattern pruning of conv weights.
//!
//! The hardware-aware pipeline runs iterative magnitude pruning (IMP),
//! extracts the kernels IMP removed entirely, learns a small library of
//! `target_nnz`-weight kernel shapes, and assigns one shape to every
//! surviving kernel so each keeps exactly `target_nnz` weights.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::archive::{MaskEntry, PruneMask, Tensor, WeightArchive};
use crate::rng::Rng;
use crate::spatial::{bitstring, parse_bitstring};
use crate::util::floor_count;
use crate::{Error, Result};

pub const DEFAULT_LIBRARY_SIZE: usize = 8;
pub const DEFAULT_TARGET_NNZ: usize = 4;

fn check_ratio(ratio: f64) -> Result<()> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::invalid_config(format!("pruning ratio {ratio} not in [0, 1)")));
    }
    Ok(())
}

/// Prunes the `⌊total·ratio⌋` smallest-magnitude weights across all tensors.
/// Equal magnitudes prune in (tensor, flat index) order.
pub fn global_magnitude_mask(archive: &WeightArchive, ratio: f64) -> Result<PruneMask> {
    check_ratio(ratio)?;
    Ok(magnitude_mask(
        archive,
        floor_count(archive.total_weights(), ratio),
        None,
    ))
}

/// Prunes `count` weights; positions pruned in `prior` go first.
fn magnitude_mask(archive: &WeightArchive, count: usize, prior: Option<&PruneMask>) -> PruneMask {
    let mut order: Vec<(bool, f32, u32, u32)> = Vec::with_capacity(archive.total_weights());
    for (ti, t) in archive.tensors().iter().enumerate() {
        let prior_bits = prior.map(|p| &p.entries()[ti].bits);
        for (i, w) in t.values.iter().enumerate() {
            let kept_before = prior_bits.is_none_or(|b| b[i]);
            order.push((kept_before, w.abs(), ti as u32, i as u32));
        }
    }
    let cmp = |a: &(bool, f32, u32, u32), b: &(bool, f32, u32, u32)| {
        a.0.cmp(&b.0)
            .then(a.1.total_cmp(&b.1))
            .then(a.2.cmp(&b.2))
            .then(a.3.cmp(&b.3))
    };
    if count > 0 && count < order.len() {
        order.select_nth_unstable_by(count - 1, cmp);
    }
    let mut mask = PruneMask::filled(archive, true);
    let entries = mask.entries_mut();
    for &(_, _, ti, i) in order.iter().take(count) {
        entries[ti as usize].bits[i as usize] = false;
    }
    mask
}

/// Cumulative pruning ratio after each of `rounds` rounds:
/// `1 − (1 − ratio)^(t/rounds)`, with the last entry exactly `ratio`.
pub fn imp_schedule(ratio: f64, rounds: usize) -> Result<Vec<f64>> {
    check_ratio(ratio)?;
    if rounds == 0 {
        return Err(Error::invalid_config("rounds must be >= 1"));
    }
    Ok((1..=rounds)
        .map(|t| {
            if t == rounds {
                ratio
            } else {
                1.0 - (1.0 - ratio).powf(t as f64 / rounds as f64)
            }
        })
        .collect())
}

pub fn apply_mask(archive: &WeightArchive, mask: &PruneMask) -> Result<WeightArchive> {
    mask.check_congruent(archive)?;
    let tensors = archive
        .tensors()
        .iter()
        .zip(mask.entries())
        .map(|(t, e)| Tensor {
            name: t.name.clone(),
            shape: t.shape.clone(),
            values: t
                .values
                .iter()
                .zip(&e.bits)
                .map(|(&w, &keep)| if keep { w } else { 0.0 })
                .collect(),
        })
        .collect();
    WeightArchive::new(tensors)
}

/// Retraining hook: receives masked weights and the mask in force, returns
/// updated weights of the same layout.
pub trait Retrainer {
    fn retrain(&mut self, weights: &WeightArchive, mask: &PruneMask) -> Result<WeightArchive>;
}

/// Returns the weights unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityRetrainer;

impl Retrainer for IdentityRetrainer {
    fn retrain(&mut self, weights: &WeightArchive, _mask: &PruneMask) -> Result<WeightArchive> {
        Ok(weights.clone())
    }
}

impl<F> Retrainer for F
where
    F: FnMut(&WeightArchive, &PruneMask) -> Result<WeightArchive>,
{
    fn retrain(&mut self, weights: &WeightArchive, mask: &PruneMask) -> Result<WeightArchive> {
        self(weights, mask)
    }
}

fn call_retrainer(retrainer: &mut dyn Retrainer, weights: &WeightArchive, mask: &PruneMask) -> Result<WeightArchive> {
    let out = retrainer.retrain(weights, mask)?;
    mask.check_congruent(&out)
        .map_err(|e| Error::contract(format!("retrainer changed the archive layout: {e}")))?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImpResult {
    pub mask: PruneMask,
    /// Final weights, masked.
    pub weights: WeightArchive,
    pub schedule: Vec<f64>,
}

/// IMP on a geometric schedule. Each round prunes on the current masked
/// weights, never reviving an earlier pruned position; the retrainer runs
/// between rounds.
pub fn iterative_magnitude_prune(
    archive: &WeightArchive,
    ratio: f64,
    rounds: usize,
    retrainer: &mut dyn Retrainer,
) -> Result<ImpResult> {
    let schedule = imp_schedule(ratio, rounds)?;
    let total = archive.total_weights();
    let mut weights = archive.clone();
    let mut mask: Option<PruneMask> = None;
    for (t, &r) in schedule.iter().enumerate() {
        let m = magnitude_mask(&weights, floor_count(total, r), mask.as_ref());
        weights = apply_mask(&weights, &m)?;
        if t + 1 < rounds {
            weights = apply_mask(&call_retrainer(retrainer, &weights, &m)?, &m)?;
        }
        mask = Some(m);
    }
    Ok(ImpResult {
        mask: mask.expect("rounds >= 1"),
        weights,
        schedule,
    })
}

/// Kernel size shared by every mask entry.
fn mask_kernel_size(mask: &PruneMask) -> Result<usize> {
    let mut k = None;
    for e in mask.entries() {
        let (_, _, ek) = crate::archive::conv_dims(&e.name, &e.shape)?;
        match k {
            None => k = Some(ek),
            Some(k) if k != ek => {
                return Err(Error::contract(format!(
                    "mixed kernel sizes: {k} and {ek} in {}",
                    e.name
                )))
            }
            _ => {}
        }
    }
    k.ok_or_else(|| Error::contract("mask has no conv tensors"))
}

fn check_conv(mask: &PruneMask) -> Result<()> {
    for e in mask.entries() {
        crate::archive::conv_dims(&e.name, &e.shape)?;
    }
    Ok(())
}

fn kernel_len(e: &MaskEntry) -> usize {
    e.shape[2] * e.shape[3]
}

/// All-false exactly on kernels fully pruned in `m_imp`, all-true elsewhere.
pub fn extract_kernel_mask(m_imp: &PruneMask) -> Result<PruneMask> {
    check_conv(m_imp)?;
    let entries = m_imp
        .entries()
        .iter()
        .map(|e| {
            let kk = kernel_len(e);
            let bits = e
                .bits
                .chunks(kk)
                .flat_map(|k| {
                    let alive = k.iter().any(|&b| b);
                    std::iter::repeat_n(alive, kk)
                })
                .collect();
            MaskEntry {
                name: e.name.clone(),
                shape: e.shape.clone(),
                bits,
            }
        })
        .collect();
    PruneMask::new(entries)
}

/// Share of pruned weights that sit in fully pruned kernels.
pub fn sparse_kernel_ratio(m_imp: &PruneMask) -> Result<f64> {
    check_conv(m_imp)?;
    let (mut in_dead, mut pruned) = (0usize, 0usize);
    for e in m_imp.entries() {
        for k in e.bits.chunks(kernel_len(e)) {
            let p = k.iter().filter(|&&b| !b).count();
            pruned += p;
            if p == k.len() {
                in_dead += p;
            }
        }
    }
    if pruned == 0 {
        return Err(Error::UndefinedMetric(
            "sparse kernel ratio with no pruned weights".into(),
        ));
    }
    Ok(in_dead as f64 / pruned as f64)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pattern {
    k: usize,
    bits: Vec<bool>,
}

impl Pattern {
    pub fn new(k: usize, bits: Vec<bool>) -> Result<Self> {
        if k == 0 || bits.len() != k * k {
            return Err(Error::contract(format!(
                "pattern needs {} bits, got {}",
                k * k,
                bits.len()
            )));
        }
        if !bits.iter().any(|&b| b) {
            return Err(Error::contract("pattern keeps no weights"));
        }
        Ok(Pattern { k, bits })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn nnz(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn to_bitstring(&self) -> String {
        bitstring(&self.bits)
    }

    fn retained(&self, mags: &[f64]) -> f64 {
        self.bits.iter().zip(mags).filter(|(&b, _)| b).map(|(_, &m)| m).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatternLibrary {
    k: usize,
    target_nnz: usize,
    patterns: Vec<Pattern>,
}

impl PatternLibrary {
    pub fn new(patterns: Vec<Pattern>) -> Result<Self> {
        let first = patterns
            .first()
            .ok_or_else(|| Error::EmptyLibrary("library has no patterns".into()))?;
        let (k, nnz) = (first.k, first.nnz());
        let mut seen = BTreeSet::new();
        for p in &patterns {
            if p.k != k || p.nnz() != nnz {
                return Err(Error::contract("library patterns must share k and nnz"));
            }
            if !seen.insert(&p.bits) {
                return Err(Error::contract(format!("duplicate pattern {}", p.to_bitstring())));
            }
        }
        Ok(PatternLibrary {
            k,
            target_nnz: nnz,
            patterns,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn target_nnz(&self) -> usize {
        self.target_nnz
    }

    pub fn patterns(&self) -> &[Pattern] {
        &self.patterns
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    pub fn position(&self, bits: &[bool]) -> Option<usize> {
        self.patterns.iter().position(|p| p.bits == bits)
    }

    /// JSON list of row-major bitstrings.
    pub fn to_json(&self) -> String {
        let list: Vec<String> = self.patterns.iter().map(Pattern::to_bitstring).collect();
        serde_json::to_string_pretty(&list).expect("string list serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let list: Vec<String> = serde_json::from_str(s)?;
        let patterns = list
            .iter()
            .map(|b| {
                let bits = parse_bitstring(b)?;
                let k = (bits.len() as f64).sqrt().round() as usize;
                if k * k != bits.len() {
                    return Err(Error::format(format!("pattern {b} is not square")));
                }
                Pattern::new(k, bits)
            })
            .collect::<Result<Vec<_>>>()?;
        PatternLibrary::new(patterns)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }
}

/// Indices of the `nnz` largest magnitudes; ties favour lower positions.
fn top_shape(mags: &[f64], nnz: usize) -> Vec<bool> {
    let mut idx: Vec<usize> = (0..mags.len()).collect();
    idx.sort_by(|&a, &b| mags[b].total_cmp(&mags[a]).then(a.cmp(&b)));
    let mut bits = vec![false; mags.len()];
    for &i in &idx[..nnz] {
        bits[i] = true;
    }
    bits
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Visits every `nnz`-subset of `0..n` as a bit vector.
fn for_each_combination(n: usize, nnz: usize, mut f: impl FnMut(&[bool])) {
    let mut idx: Vec<usize> = (0..nnz).collect();
    let mut bits = vec![false; n];
    loop {
        bits.iter_mut().for_each(|b| *b = false);
        for &i in &idx {
            bits[i] = true;
        }
        f(&bits);
        let mut j = nnz;
        loop {
            if j == 0 {
                return;
            }
            j -= 1;
            if idx[j] < n - nnz + j {
                break;
            }
            if j == 0 && idx[0] >= n - nnz {
                return;
            }
        }
        idx[j] += 1;
        for m in j + 1..nnz {
            idx[m] = idx[m - 1] + 1;
        }
    }
}

/// `|w|` of kernel weights, zeroed where `mask` pruned them.
fn masked_kernels<'a>(
    archive: &'a WeightArchive,
    mask: &'a PruneMask,
    alive: &'a PruneMask,
) -> impl Iterator<Item = Vec<f64>> + 'a {
    archive
        .tensors()
        .iter()
        .zip(mask.entries())
        .zip(alive.entries())
        .flat_map(|((t, m), a)| {
            let kk = t.shape[2] * t.shape[3];
            t.values
                .chunks(kk)
                .zip(m.bits.chunks(kk))
                .zip(a.bits.chunks(kk))
                .filter(|(_, a)| a[0])
                .map(|((w, m), _)| {
                    w.iter()
                        .zip(m)
                        .map(|(&w, &keep)| if keep { w.abs() as f64 } else { 0.0 })
                        .collect()
                })
        })
}

/// The `size` most frequent top-`target_nnz` shapes of the kernels alive in
/// `kernel_mask` (magnitudes taken under `m_imp`). Frequency ties go to the
/// lexicographically smaller bitstring. Short libraries are padded with the
/// unused shapes of highest total retained magnitude.
pub fn build_pattern_library(
    archive: &WeightArchive,
    m_imp: &PruneMask,
    kernel_mask: &PruneMask,
    size: usize,
    target_nnz: usize,
) -> Result<PatternLibrary> {
    m_imp.check_congruent(archive)?;
    kernel_mask.check_congruent(archive)?;
    let k = mask_kernel_size(m_imp)?;
    let kk = k * k;
    if size == 0 {
        return Err(Error::invalid_config("library size must be >= 1"));
    }
    if target_nnz == 0 || target_nnz > kk {
        return Err(Error::invalid_config(format!(
            "target_nnz {target_nnz} not in [1, {kk}]"
        )));
    }
    if size as u128 > binomial(kk, target_nnz) {
        return Err(Error::invalid_config(format!(
            "library size {size} exceeds the {} distinct {target_nnz}-of-{kk} shapes",
            binomial(kk, target_nnz)
        )));
    }

    let mut freq: HashMap<Vec<bool>, usize> = HashMap::new();
    let mut coverage = vec![0.0f64; kk];
    let mut eligible = 0usize;
    for mags in masked_kernels(archive, m_imp, kernel_mask) {
        eligible += 1;
        *freq.entry(top_shape(&mags, target_nnz)).or_default() += 1;
        for (c, m) in coverage.iter_mut().zip(&mags) {
            *c += m;
        }
    }
    if eligible == 0 {
        return Err(Error::EmptyLibrary("no kernels survive kernel pruning".into()));
    }

    let mut ranked: Vec<(Vec<bool>, usize)> = freq.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| bitstring(&a.0).cmp(&bitstring(&b.0))));
    let mut chosen: Vec<Vec<bool>> = ranked.into_iter().take(size).map(|(b, _)| b).collect();

    if chosen.len() < size {
        let used: BTreeSet<Vec<bool>> = chosen.iter().cloned().collect();
        let mut extra: Vec<(f64, String, Vec<bool>)> = Vec::new();
        for_each_combination(kk, target_nnz, |bits| {
            if !used.contains(bits) {
                let cov: f64 = bits.iter().zip(&coverage).filter(|(&b, _)| b).map(|(_, &c)| c).sum();
                extra.push((cov, bitstring(bits), bits.to_vec()));
            }
        });
        extra.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
        chosen.extend(extra.into_iter().take(size - chosen.len()).map(|e| e.2));
    }

    PatternLibrary::new(
        chosen
            .into_iter()
            .map(|bits| Pattern::new(k, bits))
            .collect::<Result<_>>()?,
    )
}

/// Pattern index retaining the most `|w|`; ties go to the lower index.
pub fn best_pattern(library: &PatternLibrary, mags: &[f64]) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, p) in library.patterns.iter().enumerate() {
        let v = p.retained(mags);
        if v.partial_cmp(&best_val) == Some(Ordering::Greater) {
            best = i;
            best_val = v;
        }
    }
    best
}

/// M′: every kernel alive in `kernel_mask` takes its best library pattern
/// (by raw `|w|`); dead kernels stay all-false.
pub fn assign_patterns(
    archive: &WeightArchive,
    kernel_mask: &PruneMask,
    library: &PatternLibrary,
) -> Result<PruneMask> {
    kernel_mask.check_congruent(archive)?;
    let k = mask_kernel_size(kernel_mask)?;
    if k != library.k {
        return Err(Error::contract(format!(
            "library is {}x{} but kernels are {k}x{k}",
            library.k, library.k
        )));
    }
    let kk = k * k;
    let entries: Vec<MaskEntry> = archive
        .tensors()
        .par_iter()
        .zip(kernel_mask.entries())
        .map(|(t, e)| {
            let mut bits = vec![false; t.len()];
            for ((w, alive), out) in t.values.chunks(kk).zip(e.bits.chunks(kk)).zip(bits.chunks_mut(kk)) {
                if !alive[0] {
                    continue;
                }
                let mags: Vec<f64> = w.iter().map(|v| v.abs() as f64).collect();
                out.copy_from_slice(&library.patterns[best_pattern(library, &mags)].bits);
            }
            MaskEntry {
                name: e.name.clone(),
                shape: e.shape.clone(),
                bits,
            }
        })
        .collect();
    PruneMask::new(entries)
}

/// Number of kernels using each library pattern.
pub fn pattern_histogram(mask: &PruneMask, library: &PatternLibrary) -> Result<Vec<usize>> {
    let kk = library.k * library.k;
    let mut hist = vec![0; library.len()];
    for e in mask.entries() {
        if crate::archive::conv_dims(&e.name, &e.shape)?.2 != library.k {
            return Err(Error::contract("mask kernel size differs from library"));
        }
        for kernel in e.bits.chunks(kk) {
            if let Some(i) = library.position(kernel) {
                hist[i] += 1;
            }
        }
    }
    Ok(hist)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaskStats {
    pub pruning_ratio: f64,
    pub imp_ratio: f64,
    pub sparse_kernel_ratio: f64,
    pub kept_per_tensor: Vec<(String, usize)>,
    pub pattern_histogram: Vec<usize>,
}

impl MaskStats {
    pub fn to_csv(&self) -> String {
        let mut head = vec![
            "pruning_ratio".to_string(),
            "imp_ratio".into(),
            "sparse_kernel_ratio".into(),
        ];
        let mut row = vec![
            format!("{:.6}", self.pruning_ratio),
            format!("{:.6}", self.imp_ratio),
            format!("{:.6}", self.sparse_kernel_ratio),
        ];
        for (i, c) in self.pattern_histogram.iter().enumerate() {
            head.push(format!("pattern_{i}"));
            row.push(c.to_string());
        }
        format!("{}\n{}\n", head.join(","), row.join(","))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HardwarePruneConfig {
    pub ratio: f64,
    pub rounds: usize,
    pub library_size: usize,
    pub target_nnz: usize,
}

impl Default for HardwarePruneConfig {
    fn default() -> Self {
        HardwarePruneConfig {
            ratio: 0.5,
            rounds: 3,
            library_size: DEFAULT_LIBRARY_SIZE,
            target_nnz: DEFAULT_TARGET_NNZ,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HardwarePruneResult {
    pub imp_mask: PruneMask,
    pub kernel_mask: PruneMask,
    /// M′.
    pub mask: PruneMask,
    pub library: PatternLibrary,
    pub stats: MaskStats,
    /// Weights after the final retrain, masked by M′.
    pub weights: WeightArchive,
}

/// IMP → kernel extraction → pattern assignment → one retrain under M′. A
/// fixed `library` skips library construction.
pub fn hardware_aware_prune(
    archive: &WeightArchive,
    config: &HardwarePruneConfig,
    library: Option<PatternLibrary>,
    retrainer: &mut dyn Retrainer,
) -> Result<HardwarePruneResult> {
    let imp = iterative_magnitude_prune(archive, config.ratio, config.rounds, retrainer)?;
    let kernel_mask = extract_kernel_mask(&imp.mask)?;
    let library = match library {
        Some(lib) => lib,
        None => build_pattern_library(
            &imp.weights,
            &imp.mask,
            &kernel_mask,
            config.library_size,
            config.target_nnz,
        )?,
    };
    let mask = assign_patterns(&imp.weights, &kernel_mask, &library)?;
    // Revived positions start from their pre-pruning values.
    let revived = apply_mask(archive, &mask)?;
    let weights = apply_mask(&call_retrainer(retrainer, &revived, &mask)?, &mask)?;
    let stats = MaskStats {
        pruning_ratio: mask.pruning_ratio(),
        imp_ratio: imp.mask.pruning_ratio(),
        sparse_kernel_ratio: sparse_kernel_ratio(&imp.mask).unwrap_or(0.0),
        kept_per_tensor: mask.entries().iter().map(|e| (e.name.clone(), e.kept())).collect(),
        pattern_histogram: pattern_histogram(&mask, &library)?,
    };
    Ok(HardwarePruneResult {
        imp_mask: imp.mask,
        kernel_mask,
        mask,
        library,
        stats,
        weights,
    })
}

/// Conv archive `conv{i}` with shapes `[f, c, k, k]` and weights drawn from
/// N(0, 1/fan_in).
pub fn synthetic_archive(shapes: &[[usize; 3]], rng: &mut Rng) -> Result<WeightArchive> {
    let tensors = shapes
        .iter()
        .enumerate()
        .map(|(i, &[f, c, k])| {
            let sigma = 1.0 / ((c * k * k).max(1) as f64).sqrt();
            let values = (0..f * c * k * k).map(|_| rng.normal(0.0, sigma) as f32).collect();
            Tensor::new(format!("conv{i}"), vec![f, c, k, k], values)
        })
        .collect::<Result<Vec<_>>>()?;
    WeightArchive::new(tensors)
}
