use osfuse_core::areafusion::{
    afm_fuse, area_merge, area_partition, attention_weights, AfmParams, AreaConfig, Axis,
};
use osfuse_core::numcore::Tensor;
use osfuse_core::scanorders::{FeatureMap, PatchSequence, ScanKind};
use osfuse_core::ssmfusion::{
    cmim_forward, scan_states, selective_scan, CmimConfig, CmimParams, ScanInputs, SsmParams,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn softplus(x: f64) -> f64 {
    (1.0 + x.exp()).ln()
}

/// Step-by-step recurrence written straight from the parameter definitions.
fn recurrence_oracle(x: &[Vec<f64>], p: &SsmParams) -> Vec<Vec<f64>> {
    let (ch, n) = (p.channels, p.state_dim);
    let at = |t: &Tensor, r: usize, c: usize| t.data()[r * t.shape()[1] + c];
    let mut h = vec![vec![0.0; n]; ch];
    let mut out = Vec::new();
    for xt in x {
        let proj = |w: &Tensor, bias: &Tensor, j: usize| {
            bias.data()[j] + (0..ch).map(|i| xt[i] * at(w, i, j)).sum::<f64>()
        };
        let b: Vec<f64> = (0..n).map(|j| proj(&p.w_b, &p.b_b, j)).collect();
        let c: Vec<f64> = (0..n).map(|j| proj(&p.w_c, &p.b_c, j)).collect();
        let mut yt = Vec::with_capacity(ch);
        for k in 0..ch {
            let delta = softplus(proj(&p.w_delta, &p.b_delta, k));
            let mut y = p.d.data()[k] * xt[k];
            for s in 0..n {
                let a = -at(&p.a_log, k, s).exp();
                h[k][s] = (delta * a).exp() * h[k][s] + delta * b[s] * xt[k];
                y += c[s] * h[k][s];
            }
            yt.push(y);
        }
        out.push(yt);
    }
    out
}

fn random_params(rng: &mut ChaCha8Rng, ch: usize, n: usize) -> SsmParams {
    let mut p = SsmParams::init(ch, n, || rng.random_range(-1.0..1.0)).unwrap();
    for t in [
        &mut p.b_b,
        &mut p.b_c,
        &mut p.b_delta,
        &mut p.d,
        &mut p.a_log,
    ] {
        t.data_mut()
            .iter_mut()
            .for_each(|v| *v += rng.random_range(-0.5..0.5));
    }
    p
}

#[test]
fn scan_matches_recurrence_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let (ch, n, len) = (
            rng.random_range(1..5),
            rng.random_range(1..=4),
            rng.random_range(1..=64),
        );
        let p = random_params(&mut rng, ch, n);
        let x: Vec<Vec<f64>> = (0..len)
            .map(|_| (0..ch).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let y = selective_scan(&PatchSequence::from_entries(ch, &x).unwrap(), &p).unwrap();
        let want = recurrence_oracle(&x, &p);
        for (t, row) in want.iter().enumerate() {
            for (a, b) in row.iter().zip(y.entry(t)) {
                assert!((a - b).abs() < 1e-12, "t={t}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn hidden_state_stays_bounded_over_4096_steps() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (len, ch, n) = (4096, 3, 4);
    let tensor = |rng: &mut ChaCha8Rng, r: usize, c: usize, lo: f64, hi: f64| {
        Tensor::new(
            vec![r, c],
            (0..r * c).map(|_| rng.random_range(lo..hi)).collect(),
        )
        .unwrap()
    };
    let x = tensor(&mut rng, len, ch, -1.0, 1.0);
    let delta = tensor(&mut rng, len, ch, 0.01, 2.0);
    let a = tensor(&mut rng, ch, n, -3.0, -0.01);
    let b = tensor(&mut rng, len, n, -1.0, 1.0);
    let c = tensor(&mut rng, len, n, -1.0, 1.0);
    let d = tensor(&mut rng, 1, ch, -1.0, 1.0);
    let (y, states) = scan_states(ScanInputs {
        x: &x,
        delta: &delta,
        a: &a,
        b: &b,
        c: &c,
        d: &d,
    })
    .unwrap();
    let a_bar_max = (0..len * ch)
        .flat_map(|tk| (0..n).map(move |s| (tk, s)))
        .map(|(tk, s)| (delta.data()[tk] * a.data()[(tk % ch) * n + s]).exp())
        .fold(0.0f64, f64::max);
    let b_bar_max = (0..len * ch)
        .flat_map(|tk| (0..n).map(move |s| (tk, s)))
        .map(|(tk, s)| (delta.data()[tk] * b.data()[(tk / ch) * n + s]).abs())
        .fold(0.0f64, f64::max);
    let bound = b_bar_max / (1.0 - a_bar_max) + 1.0;
    let peak = states.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(peak <= bound, "{peak} > {bound}");
    assert!(y.all_finite());
}

fn feature_map(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> FeatureMap {
    FeatureMap::new(
        3,
        h,
        w,
        c,
        (0..h * w * c)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )
    .unwrap()
}

#[test]
fn cmim_preserves_shape_for_every_kind() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for kind in ScanKind::ALL {
        for (h, w) in [(1, 1), (3, 5), (4, 4), (6, 2)] {
            let (o, s) = (
                feature_map(&mut rng, h, w, 3),
                feature_map(&mut rng, h, w, 3),
            );
            let params = CmimParams::init(3, 2, || rng.random_range(-1.0..1.0)).unwrap();
            let cfg = CmimConfig {
                scan: kind,
                ..CmimConfig::default()
            };
            let (fo, fs) = cmim_forward(&o, &s, &params, &cfg).unwrap();
            assert!(fo.same_shape(&o) && fs.same_shape(&s));
            assert!(fo.data().iter().chain(fs.data()).all(|v| v.is_finite()));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn partition_then_merge_is_identity(
        (h, w, c) in (1usize..10, 1usize..10, 1usize..4),
        k in 1usize..6,
        vertical in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let fm = feature_map(&mut ChaCha8Rng::seed_from_u64(seed), h, w, c);
        let axis = if vertical { Axis::Vertical } else { Axis::Horizontal };
        let cfg = AreaConfig { k, axis, head_dim: 4 };
        let blocks = area_partition(&fm, &cfg).unwrap();
        prop_assert_eq!(blocks.len(), k);
        prop_assert_eq!(area_merge(&blocks, axis, h, w).unwrap(), fm);
    }

    #[test]
    fn attention_rows_are_distributions(
        (m, n, d) in (1usize..8, 1usize..8, 1usize..5),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = |r: usize| Tensor::new(vec![r, d], (0..r * d).map(|_| rng.random_range(-5.0..5.0)).collect()).unwrap();
        let (q, k) = (t(m), t(n));
        let a = attention_weights(&q, &k).unwrap();
        for r in 0..m {
            prop_assert!(a.row(r).iter().all(|v| *v >= 0.0));
            prop_assert!((a.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn strips_do_not_interact(seed in any::<u64>(), k in 2usize..4, vertical in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w, c) = (6, 6, 2);
        let axis = if vertical { Axis::Vertical } else { Axis::Horizontal };
        let cfg = AreaConfig { k, axis, head_dim: 3 };
        let params = AfmParams::init(c, 3, || rng.random_range(-1.0..1.0)).unwrap();
        let (o, s) = (feature_map(&mut rng, h, w, c), feature_map(&mut rng, h, w, c));
        let base = afm_fuse(&o, &s, &params, &cfg).unwrap();
        let mut moved = o.data().to_vec();
        // Perturb one cell of the last strip.
        let (r, col) = match axis { Axis::Horizontal => (h - 1, 0), Axis::Vertical => (0, w - 1) };
        moved[(r * w + col) * c] += 3.0;
        let o2 = FeatureMap::new(3, h, w, c, moved).unwrap();
        let out = afm_fuse(&o2, &s, &params, &cfg).unwrap();
        let len = cfg.strip_len(h, w);
        let touched = (h.max(w) - 1) / len;
        for rr in 0..h {
            for cc in 0..w {
                let pos = match axis { Axis::Horizontal => rr, Axis::Vertical => cc };
                if pos / len != touched {
                    prop_assert_eq!(base.cell(rr, cc), out.cell(rr, cc));
                }
            }
        }
    }
}
