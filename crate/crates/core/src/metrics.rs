//! MOT evaluation: a greedy IoU tracker and the CLEAR-MOT / identity
//! metrics (IDSw, MOTA, IDF1) computed against [`ScenarioTruth`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::scenario::{BBox, ScenarioTruth};
use crate::{Error, Result};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.3;

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// One tracked detection within a frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Assigned {
    pub det: usize,
    pub id: u64,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrackAssignment {
    pub frames: Vec<Vec<Assigned>>,
    pub next_id: u64,
}

impl TrackAssignment {
    /// Applies a bijective id renaming.
    pub fn relabel(&self, mut f: impl FnMut(u64) -> u64) -> TrackAssignment {
        TrackAssignment {
            frames: self
                .frames
                .iter()
                .map(|fr| fr.iter().map(|a| Assigned { id: f(a.id), ..*a }).collect())
                .collect(),
            next_id: self.next_id,
        }
    }
}

/// Greedy matching by descending IoU among pairs at or above `threshold`.
/// Ties resolve to the lower left index, then the lower right key.
fn greedy_match<K: Ord + Copy>(left: &[BBox], right: &[(K, BBox)], threshold: f64) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for (i, a) in left.iter().enumerate() {
        for (j, (_, b)) in right.iter().enumerate() {
            let v = iou(a, b);
            if v >= threshold && v > 0.0 {
                pairs.push((v, i, j));
            }
        }
    }
    pairs.sort_by(|x, y| {
        y.0.total_cmp(&x.0)
            .then(x.1.cmp(&y.1))
            .then(right[x.2].0.cmp(&right[y.2].0))
    });
    let mut used_l = vec![false; left.len()];
    let mut used_r = vec![false; right.len()];
    let mut out = Vec::new();
    for (_, i, j) in pairs {
        if !used_l[i] && !used_r[j] {
            used_l[i] = true;
            used_r[j] = true;
            out.push((i, j));
        }
    }
    out
}

/// Frame-to-frame tracker: detections inherit the id of the previous-frame
/// track they overlap most; the rest open new ids.
pub fn greedy_iou_tracker(detections: &[Vec<BBox>], iou_threshold: f64) -> TrackAssignment {
    let mut next_id = 1u64;
    let mut prev: Vec<(u64, BBox)> = Vec::new();
    let mut frames = Vec::with_capacity(detections.len());
    for dets in detections {
        let mut ids: Vec<Option<u64>> = vec![None; dets.len()];
        for (i, j) in greedy_match(dets, &prev, iou_threshold) {
            ids[i] = Some(prev[j].0);
        }
        let assigned: Vec<Assigned> = dets
            .iter()
            .zip(ids)
            .enumerate()
            .map(|(det, (b, id))| {
                let id = id.unwrap_or_else(|| {
                    next_id += 1;
                    next_id - 1
                });
                Assigned { det, id, bbox: *b }
            })
            .collect();
        prev = assigned.iter().map(|a| (a.id, a.bbox)).collect();
        frames.push(assigned);
    }
    TrackAssignment { frames, next_id }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotScores {
    pub idsw: usize,
    pub mota: f64,
    pub idf1: f64,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub gt_total: usize,
}

struct ClearCounts {
    idsw: usize,
    fp: usize,
    fn_: usize,
    gt_total: usize,
}

fn check_range(truth: &ScenarioTruth, assignment: &TrackAssignment) -> Result<()> {
    if assignment.frames.len() != truth.n_frames {
        return Err(Error::contract(format!(
            "assignment covers {} frames, truth has {}",
            assignment.frames.len(),
            truth.n_frames
        )));
    }
    Ok(())
}

fn clear_counts(truth: &ScenarioTruth, assignment: &TrackAssignment, threshold: f64) -> Result<ClearCounts> {
    check_range(truth, assignment)?;
    let mut last: Vec<Option<u64>> = vec![None; truth.objects.len()];
    let mut c = ClearCounts {
        idsw: 0,
        fp: 0,
        fn_: 0,
        gt_total: 0,
    };
    for (t, preds) in assignment.frames.iter().enumerate() {
        let (gt_idx, gt_boxes): (Vec<usize>, Vec<BBox>) = truth
            .objects
            .iter()
            .enumerate()
            .filter_map(|(k, o)| o.boxes[t].map(|b| (k, b)))
            .unzip();
        let keyed: Vec<(usize, BBox)> = preds.iter().enumerate().map(|(j, a)| (j, a.bbox)).collect();
        let matches = greedy_match(&gt_boxes, &keyed, threshold);
        for &(g, p) in &matches {
            let obj = gt_idx[g];
            let id = preds[p].id;
            if matches!(last[obj], Some(prev) if prev != id) {
                c.idsw += 1;
            }
            last[obj] = Some(id);
        }
        c.gt_total += gt_boxes.len();
        c.fn_ += gt_boxes.len() - matches.len();
        c.fp += preds.len() - matches.len();
    }
    Ok(c)
}

pub fn count_idsw(truth: &ScenarioTruth, assignment: &TrackAssignment, iou_threshold: f64) -> Result<usize> {
    Ok(clear_counts(truth, assignment, iou_threshold)?.idsw)
}

pub fn mota(truth: &ScenarioTruth, assignment: &TrackAssignment, iou_threshold: f64) -> Result<f64> {
    let c = clear_counts(truth, assignment, iou_threshold)?;
    mota_from(&c)
}

fn mota_from(c: &ClearCounts) -> Result<f64> {
    if c.gt_total == 0 {
        return Err(Error::UndefinedMetric("MOTA with zero ground-truth boxes".into()));
    }
    Ok(1.0 - (c.fn_ + c.fp + c.idsw) as f64 / c.gt_total as f64)
}

/// Per (GT trajectory, predicted id) count of frames matched at
/// `threshold`, plus the predicted ids in ascending order and the number of
/// predicted boxes.
pub(crate) fn identity_overlaps(
    truth: &ScenarioTruth,
    assignment: &TrackAssignment,
    threshold: f64,
) -> (Vec<Vec<u64>>, Vec<u64>, usize) {
    let mut pred_ids: BTreeMap<u64, usize> = BTreeMap::new();
    let mut pred_total = 0;
    for fr in &assignment.frames {
        for a in fr {
            pred_ids.entry(a.id).or_insert(0);
            pred_total += 1;
        }
    }
    for (k, v) in pred_ids.values_mut().enumerate() {
        *v = k;
    }
    let mut overlaps = vec![vec![0u64; pred_ids.len()]; truth.objects.len()];
    for (t, fr) in assignment.frames.iter().enumerate() {
        for (g, o) in truth.objects.iter().enumerate() {
            let Some(gb) = o.boxes[t] else { continue };
            for a in fr {
                if iou(&gb, &a.bbox) >= threshold && iou(&gb, &a.bbox) > 0.0 {
                    overlaps[g][pred_ids[&a.id]] += 1;
                }
            }
        }
    }
    (overlaps, pred_ids.into_keys().collect(), pred_total)
}

pub fn idf1(truth: &ScenarioTruth, assignment: &TrackAssignment, iou_threshold: f64) -> Result<f64> {
    check_range(truth, assignment)?;
    let gt_total = truth.gt_total();
    if gt_total == 0 {
        return Err(Error::UndefinedMetric("IDF1 with zero ground-truth boxes".into()));
    }
    let (overlaps, _, pred_total) = identity_overlaps(truth, assignment, iou_threshold);
    let idtp = max_weight_matching(&overlaps);
    // IDFP = pred_total - IDTP, IDFN = gt_total - IDTP
    Ok(2.0 * idtp as f64 / (gt_total + pred_total) as f64)
}

pub fn evaluate(truth: &ScenarioTruth, assignment: &TrackAssignment, iou_threshold: f64) -> Result<MotScores> {
    let c = clear_counts(truth, assignment, iou_threshold)?;
    let mota = mota_from(&c)?;
    let idf1 = idf1(truth, assignment, iou_threshold)?;
    Ok(MotScores {
        idsw: c.idsw,
        mota,
        idf1,
        fp: c.fp,
        fn_: c.fn_,
        gt_total: c.gt_total,
    })
}

/// One CSV row: `scenario_id,drop_ratio,idsw,mota,idf1,fp,fn`.
pub fn scores_csv_row(scenario_id: &str, drop_ratio: f64, s: &MotScores) -> String {
    format!(
        "{},{},{},{:.6},{:.6},{},{}",
        scenario_id, drop_ratio, s.idsw, s.mota, s.idf1, s.fp, s.fn_
    )
}

pub const SCORES_CSV_HEADER: &str = "scenario_id,drop_ratio,idsw,mota,idf1,fp,fn";

/// Maximum total weight of a one-to-one matching between rows and columns
/// (Hungarian method with potentials, O(n²m)).
pub fn max_weight_matching(weights: &[Vec<u64>]) -> u64 {
    let rows = weights.len();
    let cols = weights.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return 0;
    }
    let transpose = rows > cols;
    let (n, m) = if transpose { (cols, rows) } else { (rows, cols) };
    let w = |i: usize, j: usize| -> i64 {
        if transpose {
            weights[j][i] as i64
        } else {
            weights[i][j] as i64
        }
    };
    let max_w = weights.iter().flatten().copied().max().unwrap_or(0) as i64;
    let cost = |i: usize, j: usize| max_w - w(i, j);

    // 1-based potentials; p[j] = row matched to column j.
    let inf = i64::MAX / 4;
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=m).filter(|&j| p[j] != 0).map(|j| w(p[j] - 1, j - 1) as u64).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::ObjectTrack;

    fn truth_from(objects: Vec<Vec<Option<BBox>>>) -> ScenarioTruth {
        let n = objects[0].len();
        let objects: Vec<ObjectTrack> = objects
            .into_iter()
            .enumerate()
            .map(|(i, boxes)| ObjectTrack {
                id: i as u64 + 1,
                boxes,
            })
            .collect();
        let detections = (0..n)
            .map(|t| objects.iter().filter_map(|o| o.boxes[t]).collect())
            .collect();
        ScenarioTruth {
            width: 100,
            height: 100,
            n_frames: n,
            background: 0,
            seed: 0,
            objects,
            detections,
        }
    }

    fn assign(frames: Vec<Vec<(u64, BBox)>>) -> TrackAssignment {
        TrackAssignment {
            frames: frames
                .into_iter()
                .map(|f| {
                    f.into_iter()
                        .enumerate()
                        .map(|(det, (id, bbox))| Assigned { det, id, bbox })
                        .collect()
                })
                .collect(),
            next_id: 0,
        }
    }

    const A: BBox = BBox::new(0.0, 0.0, 10.0, 10.0);
    const B: BBox = BBox::new(50.0, 50.0, 60.0, 60.0);

    #[test]
    fn iou_examples() {
        assert_eq!(iou(&A, &A), 1.0);
        assert_eq!(iou(&A, &B), 0.0);
        let c = BBox::new(5.0, 0.0, 15.0, 10.0);
        assert!((iou(&A, &c) - 50.0 / 150.0).abs() < 1e-12);
        let z = BBox::new(1.0, 1.0, 1.0, 1.0);
        assert_eq!(iou(&z, &z), 0.0);
    }

    #[test]
    fn static_box_keeps_one_id() {
        let dets = vec![vec![A]; 10];
        let ta = greedy_iou_tracker(&dets, 0.3);
        assert_eq!(ta.frames.len(), 10);
        assert!(ta.frames.iter().all(|f| f.len() == 1 && f[0].id == 1));
        assert_eq!(ta.next_id, 2);
    }

    #[test]
    fn empty_detections() {
        let ta = greedy_iou_tracker(&[], 0.3);
        assert!(ta.frames.is_empty());
        let ta = greedy_iou_tracker(&[vec![], vec![]], 0.3);
        assert!(ta.frames.iter().all(Vec::is_empty));
    }

    #[test]
    fn idsw_flip_back_counts_twice() {
        let truth = truth_from(vec![vec![Some(A); 3]]);
        let ta = assign(vec![vec![(1, A)], vec![(2, A)], vec![(1, A)]]);
        assert_eq!(count_idsw(&truth, &ta, 0.5).unwrap(), 2);
    }

    #[test]
    fn gap_does_not_switch() {
        let truth = truth_from(vec![vec![Some(A); 3]]);
        let ta = assign(vec![vec![(1, A)], vec![], vec![(1, A)]]);
        assert_eq!(count_idsw(&truth, &ta, 0.5).unwrap(), 0);
        let perfect = assign(vec![vec![(1, A)]; 3]);
        assert_eq!(count_idsw(&truth, &perfect, 0.5).unwrap(), 0);
    }

    #[test]
    fn frame_range_mismatch_is_contract_error() {
        let truth = truth_from(vec![vec![Some(A); 3]]);
        let ta = assign(vec![vec![(1, A)]; 2]);
        assert!(matches!(count_idsw(&truth, &ta, 0.5), Err(Error::Contract(_))));
    }

    #[test]
    fn mota_examples() {
        let truth = truth_from(vec![vec![Some(A); 10], vec![Some(B); 10]]);
        let perfect = assign(vec![vec![(1, A), (2, B)]; 10]);
        assert_eq!(mota(&truth, &perfect, 0.5).unwrap(), 1.0);
        let empty = assign(vec![vec![]; 10]);
        assert_eq!(mota(&truth, &empty, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn mota_two_fp_one_fn_one_idsw_over_forty() {
        // 2 objects × 20 frames = 40 GT boxes.
        let far = BBox::new(80.0, 0.0, 90.0, 10.0);
        let mut frames: Vec<Vec<(u64, BBox)>> = vec![vec![(1, A), (2, B)]; 20];
        frames[3].push((9, far));
        frames[4].push((9, far));
        frames[7] = vec![(1, A)];
        for f in frames.iter_mut().skip(12) {
            f[1].0 = 3;
        }
        let truth = truth_from(vec![vec![Some(A); 20], vec![Some(B); 20]]);
        let s = evaluate(&truth, &assign(frames), 0.5).unwrap();
        assert_eq!((s.fp, s.fn_, s.idsw, s.gt_total), (2, 1, 1, 40));
        assert!((s.mota - 0.9).abs() < 1e-12);
    }

    #[test]
    fn zero_gt_is_undefined() {
        let truth = truth_from(vec![vec![None; 2]]);
        let ta = assign(vec![vec![]; 2]);
        assert!(matches!(mota(&truth, &ta, 0.5), Err(Error::UndefinedMetric(_))));
        assert!(matches!(idf1(&truth, &ta, 0.5), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn idf1_extremes() {
        let truth = truth_from(vec![vec![Some(A); 4], vec![Some(B); 4]]);
        let perfect = assign(vec![vec![(5, A), (6, B)]; 4]);
        assert_eq!(idf1(&truth, &perfect, 0.5).unwrap(), 1.0);
        let empty = assign(vec![vec![]; 4]);
        assert_eq!(idf1(&truth, &empty, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn idf1_two_by_two_matches_permutation_search() {
        let truth = truth_from(vec![vec![Some(A); 4], vec![Some(B); 4]]);
        // ids swap halfway: id 1 covers A then B, id 2 covers B then A.
        let ta = assign(vec![
            vec![(1, A), (2, B)],
            vec![(1, A), (2, B)],
            vec![(2, A), (1, B)],
            vec![(1, B), (2, A)],
        ]);
        let got = idf1(&truth, &ta, 0.5).unwrap();
        let (ov, _, pred_total) = identity_overlaps(&truth, &ta, 0.5);
        let best = (ov[0][0] + ov[1][1]).max(ov[0][1] + ov[1][0]);
        let want = 2.0 * best as f64 / (truth.gt_total() + pred_total) as f64;
        assert_eq!(got, want);
        assert_eq!(best, 4);
    }

    #[test]
    fn hungarian_rectangular() {
        assert_eq!(max_weight_matching(&[vec![3, 1], vec![4, 2], vec![9, 9]]), 13);
        assert_eq!(max_weight_matching(&[vec![1, 5, 3]]), 5);
        assert_eq!(max_weight_matching(&[]), 0);
        assert_eq!(max_weight_matching(&[vec![7, 5, 11], vec![5, 4, 1], vec![9, 3, 2]]), 24);
    }

    #[test]
    fn idf1_and_mota_invariant_to_relabeling() {
        let truth = truth_from(vec![vec![Some(A); 5], vec![Some(B); 5]]);
        let ta = assign(vec![
            vec![(1, A), (2, B)],
            vec![(1, A), (3, B)],
            vec![(2, A)],
            vec![(2, A), (3, B)],
            vec![(1, B)],
        ]);
        let base = evaluate(&truth, &ta, 0.5).unwrap();
        let re = evaluate(&truth, &ta.relabel(|id| 100 - id), 0.5).unwrap();
        assert_eq!(base, re);
    }
}
