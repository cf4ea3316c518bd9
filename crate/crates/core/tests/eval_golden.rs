use std::path::PathBuf;

use osfuse_core::evalkit::{
    average_precision, evaluate, format_detections, parse_detections, Detection, GroundTruth,
    NUM_CATEGORIES,
};
use osfuse_core::obbgeom::OrientedBox;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

fn fixture(name: &str) -> String {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "tests", "fixtures", name]
        .iter()
        .collect();
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn golden_inputs() -> (Vec<Detection>, Vec<GroundTruth>) {
    let dets = parse_detections(&fixture("golden_det.txt")).unwrap();
    let gts = parse_detections(&fixture("golden_gt.txt"))
        .unwrap()
        .into_iter()
        .map(|d| GroundTruth {
            image_id: d.image_id,
            category: d.category,
            bbox: d.bbox,
        })
        .collect();
    (dets, gts)
}

fn close(got: f64, want: &Value) -> bool {
    (got - want.as_f64().unwrap()).abs() < 1e-9
}

#[test]
fn matches_reference_evaluator() {
    let (dets, gts) = golden_inputs();
    let want: Value = serde_json::from_str(&fixture("golden_expected.json")).unwrap();
    let r = evaluate(&dets, &gts).unwrap();
    assert!(
        close(r.ap50, &want["ap50"]),
        "ap50 {} vs {}",
        r.ap50,
        want["ap50"]
    );
    assert!(
        close(r.ap75, &want["ap75"]),
        "ap75 {} vs {}",
        r.ap75,
        want["ap75"]
    );
    assert!(
        close(r.map, &want["map"]),
        "map {} vs {}",
        r.map,
        want["map"]
    );
    for (key, got) in [
        ("per_class_ap50", &r.per_class_ap50),
        ("per_class_ap75", &r.per_class_ap75),
    ] {
        for (k, g) in got.iter().enumerate() {
            match (g, &want[key][k]) {
                (None, Value::Null) => {}
                (Some(x), w) if close(*x, w) => {}
                (g, w) => panic!("{key}[{k}]: {g:?} vs {w}"),
            }
        }
    }
    assert_eq!(
        r.num_detections as u64,
        want["num_detections"].as_u64().unwrap()
    );
    assert_eq!(
        r.num_ground_truth as u64,
        want["num_ground_truth"].as_u64().unwrap()
    );
}

#[test]
fn report_is_bit_deterministic() {
    let (dets, gts) = golden_inputs();
    let a = serde_json::to_string(&evaluate(&dets, &gts).unwrap()).unwrap();
    let mut shuffled_gts = gts.clone();
    shuffled_gts.reverse();
    let b = serde_json::to_string(&evaluate(&dets, &shuffled_gts).unwrap()).unwrap();
    assert_eq!(
        a,
        serde_json::to_string(&evaluate(&dets, &gts).unwrap()).unwrap()
    );
    assert_eq!(a, b);
}

#[test]
fn detections_survive_format_round_trip() {
    let (dets, _) = golden_inputs();
    let again = parse_detections(&format_detections(&dets)).unwrap();
    assert_eq!(again.len(), dets.len());
    for (a, b) in dets.iter().zip(&again) {
        assert_eq!((&a.image_id, a.category), (&b.image_id, b.category));
        assert!((a.score - b.score).abs() < 1e-6);
        for (x, y) in a.bbox.to_array().iter().zip(b.bbox.to_array()) {
            assert!((x - y).abs() < 1e-6);
        }
    }
}

#[test]
fn hand_derived_precision_curves() {
    assert_eq!(average_precision(&[true, true], 2), Some(1.0));
    assert_eq!(average_precision(&[false, false], 2), Some(0.0));
    assert_eq!(average_precision(&[], 3), Some(0.0));
    assert_eq!(average_precision(&[true], 0), None);
    // TP, FP, TP over 2 ground truths: precision 1 up to recall 0.5, 2/3 beyond.
    let want = (51.0 + 50.0 * 2.0 / 3.0) / 101.0;
    assert!((average_precision(&[true, false, true], 2).unwrap() - want).abs() < 1e-15);
}

fn random_set(rng: &mut ChaCha8Rng) -> (Vec<Detection>, Vec<GroundTruth>) {
    let mut gts = Vec::new();
    let mut dets = Vec::new();
    for img in 0..rng.random_range(1..6) {
        let image_id = format!("i{img}");
        for _ in 0..rng.random_range(0..5) {
            let category = rng.random_range(0..NUM_CATEGORIES);
            let bbox = OrientedBox::new(
                rng.random_range(0.1..0.9),
                rng.random_range(0.1..0.9),
                rng.random_range(0.02..0.3),
                rng.random_range(0.02..0.3),
                rng.random_range(0.0..3.0),
            )
            .unwrap();
            gts.push(GroundTruth {
                image_id: image_id.clone(),
                category,
                bbox,
            });
            for _ in 0..rng.random_range(0..3) {
                let j = |rng: &mut ChaCha8Rng, s: f64| rng.random_range(-s..s);
                let moved = OrientedBox::new(
                    bbox.cx + j(rng, 0.03),
                    bbox.cy + j(rng, 0.03),
                    bbox.w * (1.0 + j(rng, 0.3)),
                    bbox.h * (1.0 + j(rng, 0.3)),
                    bbox.theta + j(rng, 0.3),
                )
                .unwrap();
                dets.push(Detection {
                    image_id: image_id.clone(),
                    category: if rng.random_bool(0.9) {
                        category
                    } else {
                        rng.random_range(0..NUM_CATEGORIES)
                    },
                    bbox: moved,
                    score: rng.random(),
                });
            }
        }
    }
    (dets, gts)
}

#[test]
fn map_never_exceeds_ap50() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..100 {
        let (dets, gts) = random_set(&mut rng);
        let r = evaluate(&dets, &gts).unwrap();
        assert!(r.map <= r.ap50 + 1e-12, "{} > {}", r.map, r.ap50);
        assert!(r.ap75 <= r.ap50 + 1e-12);
        assert!((0.0..=100.0).contains(&r.ap50));
    }
}
