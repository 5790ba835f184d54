//! Property tests for kernel, weighting, metric and data invariants.

use proptest::prelude::*;
use shortcut_prior::data::{
    apply_pattern, inject, make_batches, select_count, DatasetSplit, ImageRecord, ShortcutSpec, SplitRole, IMAGE_BYTES,
};
use shortcut_prior::metrics::{aggregate_runs, logit, Condition, EvalResult, ObResult, ResultRecord, SetCounts};
use shortcut_prior::pipeline::normalize_batch_iws;
use shortcut_prior::tensor::{conv2d_reference, Tape, Tensor};

fn conv_case() -> impl Strategy<Value = ([usize; 4], [usize; 4], usize, usize, u64)> {
    (1usize..=2, 1usize..=4, 1usize..=3, 0usize..=1, 1usize..=2)
        .prop_flat_map(|(n, c, k, padding, stride)| {
            (3usize..=9, 3usize..=9, 1usize..=3, 1usize..=3)
                .prop_map(move |(h, w, kh, kw)| ([n, c, h, w], [k, c, kh, kw], padding, stride))
        })
        .prop_flat_map(|(i, k, p, s)| any::<u64>().prop_map(move |seed| (i, k, p, s, seed)))
}

fn pseudo(len: usize, seed: u64) -> Vec<f64> {
    let mut z = seed;
    (0..len)
        .map(|_| {
            z = shortcut_prior::seeds::splitmix64(z);
            (z >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        })
        .collect()
}

fn record(label: u8, index: u32, fill: u8) -> ImageRecord {
    let pixels: Vec<u8> = (0..IMAGE_BYTES).map(|i| (i as u8).wrapping_mul(fill)).collect();
    ImageRecord::new(&pixels, label, index)
}

fn result(condition: Condition, run: u64, x: f64) -> ResultRecord {
    let eval = EvalResult {
        condition,
        run,
        acc_congruent: x,
        acc_incongruent: 1.0 - x,
        acc_neutral: x / 2.0,
        counts: SetCounts {
            congruent: 100,
            incongruent: 100,
            neutral: 100,
        },
    };
    ResultRecord::new(
        [1, 6],
        "local",
        &eval,
        ObResult {
            gain: x,
            loss: -x,
            overall: 0.0,
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_matches_direct_loops((ishape, kshape, padding, stride, seed) in conv_case()) {
        let (ph, pw) = (ishape[2] + 2 * padding, ishape[3] + 2 * padding);
        prop_assume!(ph >= kshape[2] && pw >= kshape[3]);
        // geometries with a fractional output size are rejected by design
        prop_assume!((ph - kshape[2]) % stride == 0 && (pw - kshape[3]) % stride == 0);
        let input = pseudo(ishape.iter().product(), seed);
        let kernels = pseudo(kshape.iter().product(), seed ^ 1);
        let bias = pseudo(kshape[0], seed ^ 2);
        let expected = conv2d_reference(&input, ishape, &kernels, kshape, &bias, padding, stride);
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::new(ishape.to_vec(), input).unwrap());
        let k = tape.constant(Tensor::new(kshape.to_vec(), kernels).unwrap());
        let b = tape.constant(Tensor::new(vec![kshape[0]], bias).unwrap());
        let y = tape.conv2d(x, k, b, padding, stride).unwrap();
        let got = tape.value(y).data();
        prop_assert_eq!(got.len(), expected.len());
        for (g, e) in got.iter().zip(&expected) {
            prop_assert!((g - e).abs() <= 1e-5, "{} vs {}", g, e);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one_and_xent_is_non_negative(
        logits in prop::collection::vec(-30.0f64..30.0, 2..=40),
        shift in -50.0f64..50.0,
    ) {
        let classes = 2;
        let rows = logits.len() / classes;
        prop_assume!(rows > 0);
        let data = logits[..rows * classes].to_vec();
        let labels: Vec<usize> = (0..rows).map(|i| i % classes).collect();
        let run = |d: Vec<f64>| {
            let mut tape = Tape::<f64>::new();
            let x = tape.constant(Tensor::new(vec![rows, classes], d).unwrap());
            let l = tape.softmax_cross_entropy(x, &labels).unwrap();
            (tape.value(l).data().to_vec(), tape.probabilities(l).unwrap().data().to_vec())
        };
        let (losses, probs) = run(data.clone());
        for row in probs.chunks(classes) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
        prop_assert!(losses.iter().all(|&l| l >= 0.0 && l.is_finite()));
        let (shifted, _) = run(data.iter().map(|v| v + shift).collect());
        for (a, b) in losses.iter().zip(&shifted) {
            prop_assert!((a - b).abs() < 1e-9, "{} vs {}", a, b);
        }
    }

    #[test]
    fn normalized_batch_weights_sum_to_one(raw in prop::collection::vec(0.0f64..=1.0, 1..=256)) {
        prop_assume!(raw.iter().sum::<f64>() > 0.0);
        let w = normalize_batch_iws(&raw).unwrap();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(w.iter().all(|&v| v >= 0.0));
        // ratios are preserved
        let (i, j) = (0, raw.len() - 1);
        prop_assert!((w[i] * raw[j] - w[j] * raw[i]).abs() < 1e-12);
    }

    #[test]
    fn negative_weight_is_rejected(raw in prop::collection::vec(0.0f64..=1.0, 1..=64), at in 0usize..64, v in -1.0f64..-1e-9) {
        let mut raw = raw;
        let at = at % raw.len();
        raw[at] = v;
        prop_assert!(normalize_batch_iws(&raw).is_err());
    }

    #[test]
    fn logit_is_monotone_and_antisymmetric(a in 0.0f64..=1.0, b in 0.0f64..=1.0, n in 1usize..5000) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(logit(lo, n) <= logit(hi, n));
        prop_assert!((logit(a, n) + logit(1.0 - a, n)).abs() < 1e-9);
        prop_assert!(logit(a, n).is_finite());
    }

    #[test]
    fn aggregate_ignores_run_order(xs in prop::collection::vec(0.0f64..1.0, 1..8), rot in 0usize..8) {
        let mut records: Vec<ResultRecord> = xs
            .iter()
            .enumerate()
            .flat_map(|(i, &x)| [result(Condition::Ordinary, i as u64, x), result(Condition::LcnIw, i as u64, 1.0 - x)])
            .collect();
        let a = aggregate_runs(&records).unwrap();
        records.reverse();
        let len = records.len();
        records.rotate_left(rot % len);
        let b = aggregate_runs(&records).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn batches_partition_the_index_set(n in 1usize..2000, batch in 1usize..300, seed in any::<u64>()) {
        let batches = make_batches(n, batch, seed);
        prop_assert_eq!(batches.len(), n.div_ceil(batch));
        prop_assert!(batches.iter().all(|b| !b.is_empty() && b.len() <= batch));
        let mut all: Vec<usize> = batches.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn injection_touches_only_chosen_images_and_line_pixels(
        n0 in 0usize..40,
        n1 in 0usize..40,
        prevalence in 0.0f64..=1.0,
        seed in any::<u64>(),
    ) {
        let records: Vec<ImageRecord> = (0..n0 + n1)
            .map(|i| record((i >= n0) as u8, i as u32, (i % 7 + 1) as u8))
            .collect();
        let split = DatasetSplit::clean(SplitRole::Train, records);
        let spec = ShortcutSpec::local(prevalence, seed).unwrap();
        let out = inject(&split, &spec).unwrap();
        let flagged = |class: u8| (0..out.len()).filter(|&i| out.records[i].label == class && out.shortcut_flags[i]).count();
        prop_assert_eq!(flagged(0), select_count(prevalence, n0));
        prop_assert_eq!(flagged(1), select_count(prevalence, n1));
        for i in 0..out.len() {
            let (before, after) = (&split.records[i], &out.records[i]);
            prop_assert_eq!(before.label, after.label);
            prop_assert_eq!(before.source_index, after.source_index);
            if out.shortcut_flags[i] {
                let mut expect = before.pixels.clone();
                apply_pattern(&mut expect, &spec.pattern, before.label as usize);
                prop_assert_eq!(&expect, &after.pixels);
                let changed: Vec<usize> = (0..IMAGE_BYTES).filter(|&p| before.pixels[p] != after.pixels[p]).collect();
                for p in changed {
                    let (y, x) = ((p % 1024) / 32, p % 32);
                    prop_assert!(y == 1 && (1..=3).contains(&x), "pixel {} changed", p);
                }
            } else {
                prop_assert_eq!(&before.pixels, &after.pixels);
            }
        }
        prop_assert_eq!(inject(&split, &spec).unwrap(), out);
    }
}
