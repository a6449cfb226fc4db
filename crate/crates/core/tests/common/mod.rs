//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use srf_tad::decode_eval::Detection;
use srf_tad::targets::ActionInstance;

/// Per-location `(label, (l*, r*), ctr*)`, with label 0 and `None` for background.
pub type OracleTarget = (usize, Option<(f64, f64)>, Option<f64>);

/// Exhaustive assignment: every location scans every instance.
pub fn oracle_assign(instances: &[ActionInstance], len: usize, stride: usize) -> Vec<OracleTarget> {
    let s = stride as f64;
    (0..len)
        .map(|x| {
            let f = s / 2.0 + x as f64 * s;
            let mut best: Option<&ActionInstance> = None;
            for inst in instances {
                if !(inst.start <= f && f <= inst.end) {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some(b) => {
                        let di = (f - (inst.start + inst.end) / 2.0).abs();
                        let db = (f - (b.start + b.end) / 2.0).abs();
                        if di != db {
                            di < db
                        } else if inst.start != b.start {
                            inst.start < b.start
                        } else if inst.end - inst.start != b.end - b.start {
                            inst.end - inst.start < b.end - b.start
                        } else {
                            inst.label < b.label
                        }
                    }
                };
                if better {
                    best = Some(inst);
                }
            }
            match best {
                None => (0, None, None),
                Some(b) => {
                    let (l, r) = (f - b.start, b.end - f);
                    let ctr = if l == 0.0 && r == 0.0 {
                        0.0
                    } else if l < r {
                        (l / r).sqrt()
                    } else {
                        (r / l).sqrt()
                    };
                    (b.label, Some((l, r)), Some(ctr))
                }
            }
        })
        .collect()
}

/// Random scene of up to `max_instances` possibly overlapping instances on a
/// coarse grid, so exact ties between centres actually occur.
pub fn random_scene(rng: &mut ChaCha8Rng, len: usize, stride: usize, max_instances: usize) -> Vec<ActionInstance> {
    let extent = (len * stride) as f64;
    let n = rng.random_range(0..=max_instances);
    (0..n)
        .map(|_| {
            let half = ((len * stride) as u32 / 2).max(1);
            let start = rng.random_range(0..half) as f64 * 2.0;
            let dur = rng.random_range(1..=(half / 2).max(1)) as f64 * 2.0;
            let end = (start + dur).min(extent);
            let end = if end > start { end } else { start + 1.0 };
            ActionInstance::new(start, end, rng.random_range(1..=4)).unwrap()
        })
        .collect()
}

fn iou_reference(a: &Detection, b: &Detection) -> f64 {
    let lo = if a.start > b.start { a.start } else { b.start };
    let hi = if a.end < b.end { a.end } else { b.end };
    if hi <= lo {
        return 0.0;
    }
    let inter = hi - lo;
    inter / ((a.end - a.start) + (b.end - b.start) - inter)
}

/// `true` when `a` should be visited before `b`.
fn ranks_before(a: &Detection, b: &Detection) -> bool {
    if a.score != b.score {
        return a.score > b.score;
    }
    if a.start != b.start {
        return a.start < b.start;
    }
    if a.label != b.label {
        return a.label < b.label;
    }
    a.end < b.end
}

/// Classic greedy NMS: per class, repeatedly take the best remaining
/// detection and discard everything overlapping it by more than `delta`.
pub fn oracle_nms(dets: &[Detection], delta: f64) -> Vec<Detection> {
    let mut labels: Vec<usize> = dets.iter().map(|d| d.label).collect();
    labels.sort_unstable();
    labels.dedup();
    let mut kept = Vec::new();
    for label in labels {
        let mut pool: Vec<Detection> = dets.iter().filter(|d| d.label == label).copied().collect();
        while !pool.is_empty() {
            let mut best = 0;
            for i in 1..pool.len() {
                if ranks_before(&pool[i], &pool[best]) {
                    best = i;
                }
            }
            let top = pool.swap_remove(best);
            pool.retain(|d| iou_reference(&top, d) <= delta);
            kept.push(top);
        }
    }
    sort_detections(&mut kept);
    kept
}

/// Insertion sort by the reference ranking, independent of the library's comparator.
pub fn sort_detections(dets: &mut [Detection]) {
    for i in 1..dets.len() {
        let mut j = i;
        while j > 0 && ranks_before(&dets[j], &dets[j - 1]) {
            dets.swap(j, j - 1);
            j -= 1;
        }
    }
}

/// Detections on a coarse grid with few distinct scores, so ties are common.
pub fn random_detections(rng: &mut ChaCha8Rng, n: usize) -> Vec<Detection> {
    (0..n)
        .map(|_| {
            let start = rng.random_range(0..40) as f64 * 2.5;
            let dur = rng.random_range(1..20) as f64 * 2.5;
            Detection {
                start,
                end: start + dur,
                label: rng.random_range(1..=3),
                score: rng.random_range(1..=8) as f64 / 8.0,
            }
        })
        .collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
