use osfuse_core::datasetio::{
    dataset_stats, decode_pnm, encode_pnm, format_label_file, load_label_dir, mutual_information,
    parse_label_file, read_image, to_ground_truth, write_image, LabeledInstance,
};
use osfuse_core::error::Error;
use osfuse_core::filters::Image;
use osfuse_core::obbgeom::{obb_to_quad, OrientedBox};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn instance_strategy() -> impl Strategy<Value = LabeledInstance> {
    (
        0usize..6,
        0.3f64..0.7,
        0.3f64..0.7,
        0.02f64..0.3,
        0.02f64..0.3,
        0.0f64..3.2,
    )
        .prop_map(|(cat, cx, cy, w, h, t)| {
            let b = OrientedBox::new(cx, cy, w, h, t).unwrap();
            LabeledInstance::from_quad(cat, obb_to_quad(&b)).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn labels_round_trip(insts in prop::collection::vec(instance_strategy(), 0..12)) {
        let once = parse_label_file(&format_label_file(&insts)).unwrap();
        prop_assert_eq!(once.len(), insts.len());
        for (a, b) in insts.iter().zip(&once) {
            prop_assert_eq!(a.category, b.category);
            for (x, y) in a.quad.flat().iter().zip(b.quad.flat()) {
                prop_assert!((x - y).abs() <= 5e-7 + 1e-12);
            }
        }
        let twice = parse_label_file(&format_label_file(&once)).unwrap();
        prop_assert_eq!(twice, once);
    }

    #[test]
    fn pnm_round_trip(
        (h, w, c, bytes) in (1usize..12, 1usize..12, prop::sample::select(vec![1usize, 3]))
            .prop_flat_map(|(h, w, c)| (Just(h), Just(w), Just(c), prop::collection::vec(any::<u8>(), h * w * c)))
    ) {
        let img = Image::new(h, w, c, bytes.iter().map(|&b| b as f64 / 255.0).collect()).unwrap();
        let encoded = encode_pnm(&img);
        prop_assert_eq!(decode_pnm(&encoded).unwrap(), img);
        prop_assert!(encoded.ends_with(&bytes));
    }
}

#[test]
fn malformed_lines_report_their_line() {
    let good = "0 0.1 0.1 0.2 0.1 0.2 0.2 0.1 0.2";
    let cases = [
        (format!("{good}\n{good}\n3 0.1 0.1"), 3),
        (format!("{good}\n\n0 0.1 0.1 0.2 0.1 0.2 0.2 0.1 x"), 3),
        (format!("{good}\n9 0.1 0.1 0.2 0.1 0.2 0.2 0.1 0.2"), 2),
        (format!("0 -0.1 0.1 0.2 0.1 0.2 0.2 0.1 0.2\n{good}"), 1),
    ];
    for (text, want) in cases {
        match parse_label_file(&text).unwrap_err() {
            Error::Parse { line, .. } | Error::Validation { line, .. } => {
                assert_eq!(line, want, "{text}")
            }
            e => panic!("unexpected {e}"),
        }
    }
}

#[test]
fn label_directory_loads_sorted_by_stem() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("b.txt"),
        "1 0.1 0.1 0.2 0.1 0.2 0.2 0.1 0.2\n",
    )
    .unwrap();
    std::fs::write(dir.path().join("a.txt"), "").unwrap();
    std::fs::write(dir.path().join("notes.md"), "ignored").unwrap();
    let labels = load_label_dir(dir.path()).unwrap();
    assert_eq!(labels.keys().collect::<Vec<_>>(), ["a", "b"]);
    let gts = to_ground_truth(&labels);
    assert_eq!(gts.len(), 1);
    assert_eq!((gts[0].image_id.as_str(), gts[0].category), ("b", 1));
    std::fs::write(dir.path().join("c.txt"), "1 0.1\n").unwrap();
    let e = load_label_dir(dir.path()).unwrap_err();
    assert!(e.to_string().contains("c.txt"), "{e}");
}

#[test]
fn image_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.ppm");
    let img = Image::new(3, 2, 3, (0..18).map(|i| (i * 15) as f64 / 255.0).collect()).unwrap();
    write_image(&path, &img).unwrap();
    assert_eq!(read_image(&path).unwrap(), img);
    let png = dir.path().join("x.png");
    std::fs::write(&png, b"\x89PNG\r\n\x1a\n").unwrap();
    assert!(matches!(read_image(&png), Err(Error::Format(_))));
}

#[test]
fn stats_recover_generated_composition() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut counts = [0usize; 6];
    let mut labels: Vec<Vec<LabeledInstance>> = Vec::new();
    let mut total = 0;
    while total < 100 {
        let n = rng.random_range(0..6).min(100 - total);
        let image: Vec<LabeledInstance> = (0..n)
            .map(|_| {
                let cat = rng.random_range(0..6);
                counts[cat] += 1;
                let b = OrientedBox::new(
                    0.5,
                    0.5,
                    rng.random_range(0.02..0.3),
                    rng.random_range(0.02..0.3),
                    rng.random_range(0.0..1.5),
                )
                .unwrap();
                LabeledInstance::from_quad(cat, obb_to_quad(&b)).unwrap()
            })
            .collect();
        total += n;
        labels.push(image);
    }
    let s = dataset_stats(&labels, 512).unwrap();
    assert_eq!(s.counts, counts);
    assert_eq!(s.num_instances, 100);
    assert_eq!(s.num_images, labels.len());
    assert_eq!(s.angle_histogram.iter().sum::<usize>(), 100);
    assert_eq!(s.aspect_histogram.iter().sum::<usize>(), 100);
    assert!((s.percentages.iter().sum::<f64>() - 100.0).abs() < 1e-9);
    for k in 0..6 {
        assert!((s.percentages[k] - counts[k] as f64).abs() < 1e-12);
    }
}

#[test]
fn independent_noise_shares_little_information() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut noise = || {
        Image::gray(
            1000,
            1000,
            (0..1_000_000).map(|_| rng.random::<f64>()).collect(),
        )
        .unwrap()
    };
    let (a, b) = (noise(), noise());
    let mi = mutual_information(&a, &b).unwrap();
    assert!((0.0..0.02).contains(&mi), "{mi}");
}
