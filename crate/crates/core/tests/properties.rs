use hiant::anticipation::expand_durations;
use hiant::datasets::{sample_windows, window_len};
use hiant::evaluation::{frame_accuracy, moc_accuracy};
use hiant::segmentation::{seg_layer, SegLayerParams};
use hiant::training::lr_schedule;
use hiant::{Mat, TrainConfig};
use proptest::prelude::*;

fn labels_and_perm(max_len: usize, classes: usize) -> impl Strategy<Value = (Vec<usize>, Vec<usize>, Vec<usize>)> {
    (1..=max_len).prop_flat_map(move |n| {
        (
            prop::collection::vec(0..classes, n),
            prop::collection::vec(0..classes, n),
            Just((0..n).collect::<Vec<_>>()).prop_shuffle(),
        )
    })
}

fn mat(rows: usize, cols: usize) -> impl Strategy<Value = Mat> {
    prop::collection::vec(-2.0f64..2.0, rows * cols).prop_map(move |v| Mat::from_vec(rows, cols, v))
}

fn close(a: &Mat, b: &Mat) -> bool {
    a.data().iter().zip(b.data()).all(|(x, y)| (x - y).abs() <= 1e-12 * (1.0 + y.abs()))
}

proptest! {
    #[test]
    fn moc_ignores_frame_order((pred, truth, perm) in labels_and_perm(40, 5)) {
        let p: Vec<usize> = perm.iter().map(|&i| pred[i]).collect();
        let t: Vec<usize> = perm.iter().map(|&i| truth[i]).collect();
        let a = moc_accuracy(&pred, &truth, 5).unwrap();
        let b = moc_accuracy(&p, &t, 5).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn moc_of_single_class_truth_is_frame_accuracy(pred in prop::collection::vec(0usize..4, 1..40), c in 0usize..4) {
        let truth = vec![c; pred.len()];
        let moc = moc_accuracy(&pred, &truth, 4).unwrap();
        prop_assert_eq!(moc, frame_accuracy(&pred, &truth).unwrap());
    }

    #[test]
    fn expansion_tiles_the_horizon(
        weights in prop::collection::vec(0.01f64..1.0, 1..9),
        horizon in 1usize..300,
    ) {
        let z: f64 = weights.iter().sum();
        let fractions: Vec<f64> = weights.iter().map(|w| w / z).collect();
        let labels: Vec<usize> = (0..fractions.len()).collect();
        let out = expand_durations(&fractions, &labels, horizon);
        prop_assert_eq!(out.len(), horizon);
        prop_assert!(out.windows(2).all(|w| w[0] <= w[1]));
        // each query owns the frames whose index falls in its cumulative interval
        let mut lo = 0.0;
        for (q, f) in fractions.iter().enumerate() {
            let hi = lo + f * horizon as f64;
            let want = if q + 1 == fractions.len() {
                (0..horizon).filter(|&t| t as f64 >= lo).count()
            } else {
                (0..horizon).filter(|&t| t as f64 >= lo && (t as f64) < hi).count()
            };
            prop_assert_eq!(out.iter().filter(|&&l| l == q).count(), want, "query {}", q);
            lo = hi;
        }
    }

    #[test]
    fn layer_commutes_with_permutations(
        (h, pos, perm) in (1usize..6).prop_flat_map(|n| (mat(n, 4), mat(n, 4), Just((0..n).collect::<Vec<_>>()).prop_shuffle())),
        seed in 0u64..1000,
        literal in any::<bool>(),
    ) {
        let p = SegLayerParams::init(4, 2, 8, seed, "l");
        let out = seg_layer(&h, &p, &pos, literal).unwrap();
        let permuted = seg_layer(&h.select_rows(&perm), &p, &pos.select_rows(&perm), literal).unwrap();
        prop_assert!(close(&permuted, &out.select_rows(&perm)));
    }

    #[test]
    fn identical_rows_stay_identical_without_positions(row in mat(1, 4), n in 1usize..6, seed in 0u64..1000) {
        let h = row.select_rows(&vec![0; n]);
        let p = SegLayerParams::init(4, 2, 8, seed, "l");
        let out = seg_layer(&h, &p, &Mat::zeros(n, 4), true).unwrap();
        for r in 1..n {
            prop_assert_eq!(out.row(r), out.row(0));
        }
    }

    #[test]
    fn lr_decays_after_warmup(a in 10.0f64..60.0, b in 10.0f64..60.0) {
        let cfg = TrainConfig::default();
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(lr_schedule(hi, &cfg).unwrap() <= lr_schedule(lo, &cfg).unwrap());
    }

    #[test]
    fn windows_are_ceilings(k in 1usize..100, j in 1usize..100, frames in 1usize..3000) {
        let alpha = k as f64 / 100.0;
        let beta = j as f64 / 100.0;
        let obs = (k * frames).div_ceil(100);
        let fut = (j * frames).div_ceil(100);
        prop_assert_eq!(window_len(alpha, frames), obs);
        let want = (obs + fut <= frames).then_some((obs, fut));
        prop_assert_eq!(sample_windows(frames, alpha, beta), want);
    }
}
