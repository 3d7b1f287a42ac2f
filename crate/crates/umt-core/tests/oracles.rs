//! Independent-oracle equivalence tests: a from-scratch reference
//! suppression for NMS and a brute-force precision/recall enumeration for
//! AP, both kept deliberately separate from the library implementations.

use rand::RngExt;
use umt_core::eval::{average_precision_from_records, DetRecord};
use umt_core::geometry::{iou, nms, BBox, Detection};
use umt_core::rng::{seeded, Rng64};

fn random_detection(rng: &mut Rng64) -> Detection {
    let score = rng.random_range(0.01..0.999);
    let rest = (1.0 - score) / 3.0;
    let mut probs = vec![rest; 4];
    probs[1] = score;
    Detection {
        bbox: BBox::new(
            rng.random_range(0.0..50.0),
            rng.random_range(0.0..50.0),
            rng.random_range(4.0..20.0),
            rng.random_range(4.0..20.0),
        ),
        class_id: 1,
        score,
        class_probs: probs,
        confidence: rng.random_range(0.0..1.0),
    }
}

/// Reference suppression without sorting: repeatedly extract the max-score
/// remaining detection (lowest index on ties) and erase everything it
/// overlaps above the threshold.
fn nms_reference(dets: &[Detection], threshold: f64) -> Vec<Detection> {
    let mut remaining: Vec<(usize, Detection)> = dets.iter().cloned().enumerate().collect();
    let mut kept = Vec::new();
    while !remaining.is_empty() {
        let mut best = 0;
        for i in 1..remaining.len() {
            if remaining[i].1.score > remaining[best].1.score {
                best = i;
            }
        }
        let (_, winner) = remaining.remove(best);
        remaining.retain(|(_, d)| iou(&winner.bbox, &d.bbox) <= threshold);
        kept.push(winner);
    }
    kept
}

#[test]
fn nms_matches_reference_on_random_fixtures() {
    let mut rng = seeded(4242);
    for case in 0..100 {
        let n = rng.random_range(0..=10usize);
        let dets: Vec<Detection> = (0..n).map(|_| random_detection(&mut rng)).collect();
        let threshold = rng.random_range(0.0..1.0);
        let got = nms(&dets, threshold);
        let want = nms_reference(&dets, threshold);
        assert_eq!(got, want, "case {case} with {n} detections");
    }
}

/// Brute-force AP: enumerate every cut point of the ranked list, compute
/// precision/recall directly from set counts, and integrate the envelope by
/// scanning all cut points for each recall level.
fn ap_reference(records: &[DetRecord], n_gts: usize) -> f64 {
    if n_gts == 0 || records.is_empty() {
        return 0.0;
    }
    let mut sorted = records.to_vec();
    sorted.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
    let cuts: Vec<(f64, f64)> = (1..=sorted.len())
        .map(|k| {
            let tp = sorted[..k].iter().filter(|r| r.tp).count();
            (
                tp as f64 / n_gts as f64,
                tp as f64 / k as f64,
            )
        })
        .collect();
    let mut recalls: Vec<f64> = cuts.iter().map(|(r, _)| *r).collect();
    recalls.dedup();
    let mut ap = 0.0;
    let mut prev = 0.0;
    for r in recalls {
        if r > prev {
            let p_interp = cuts
                .iter()
                .filter(|(cr, _)| *cr >= r)
                .map(|(_, cp)| *cp)
                .fold(0.0, f64::max);
            ap += (r - prev) * p_interp;
            prev = r;
        }
    }
    ap
}

#[test]
fn ap_matches_brute_force_enumeration_on_random_fixtures() {
    let mut rng = seeded(777);
    for case in 0..100 {
        let n = rng.random_range(1..=10usize);
        let n_gts = rng.random_range(1..=6usize);
        let mut records = Vec::new();
        let mut tp_budget = n_gts;
        for _ in 0..n {
            let tp = tp_budget > 0 && rng.random_range(0..2u32) == 1;
            if tp {
                tp_budget -= 1;
            }
            records.push(DetRecord {
                score: rng.random_range(0.0..1.0),
                tp,
            });
        }
        let got = average_precision_from_records(records.clone(), n_gts);
        let want = ap_reference(&records, n_gts);
        assert_eq!(got, want, "case {case}: {records:?} n_gts {n_gts}");
    }
}

#[test]
fn ap_reference_agrees_on_the_textbook_fixture() {
    // FP at 0.9 then TP at 0.8 with one gt: AP is exactly one half.
    let records = vec![
        DetRecord { score: 0.9, tp: false },
        DetRecord { score: 0.8, tp: true },
    ];
    assert_eq!(ap_reference(&records, 1), 0.5);
    assert_eq!(average_precision_from_records(records, 1), 0.5);
}
