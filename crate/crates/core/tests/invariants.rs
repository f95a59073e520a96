use emberflow::data::{parse_fer_csv, read_fer_csv, write_fer_csv, Dataset, Example};
use emberflow::nn::{maxpool_forward, softmax, softmax_cross_entropy};
use emberflow::optim::Sgd;
use emberflow::tensor::{col2im, im2col, Rng, Tensor};
use proptest::prelude::*;

fn random_vec(n: usize, rng: &mut Rng) -> Vec<f64> {
    (0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    // <im2col(x), c> == <x, col2im(c)> for every geometry.
    #[test]
    fn im2col_col2im_adjoint(
        c in 1usize..4, h in 1usize..9, w in 1usize..9,
        k in prop::sample::select(vec![1usize, 3]),
        p in 0usize..2, seed in any::<u64>(),
    ) {
        prop_assume!(h + 2 * p >= k && w + 2 * p >= k);
        let mut rng = Rng::seed(seed);
        let x = Tensor::from_vec(&[c, h, w], random_vec(c * h * w, &mut rng)).unwrap();
        let cols = im2col(&x, k, 1, p).unwrap();
        let r = Tensor::from_vec(cols.shape(), random_vec(cols.len(), &mut rng)).unwrap();
        let back = col2im(&r, c, h, w, k, 1, p).unwrap();
        let lhs = cols.dot(&r).unwrap();
        let rhs = x.dot(&back).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-5 * (1.0 + lhs.abs()), "{lhs} vs {rhs}");
    }

    #[test]
    fn softmax_rows_are_distributions(b in 1usize..5, scale in 0.0f64..2000.0, seed in any::<u64>()) {
        let mut rng = Rng::seed(seed);
        let data: Vec<f64> = random_vec(b * 7, &mut rng).into_iter().map(|v| v * scale).collect();
        let logits = Tensor::from_vec(&[b, 7], data).unwrap();
        let probs = softmax(&logits).unwrap();
        for row in probs.data().chunks(7) {
            let s: f64 = row.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
            prop_assert!(row.iter().all(|p| (0.0..=1.0).contains(p)));
        }
        let labels: Vec<usize> = (0..b).map(|_| rng.below(7)).collect();
        let (loss, grad) = softmax_cross_entropy(&logits, &labels).unwrap();
        prop_assert!(loss.is_finite() && loss >= 0.0);
        prop_assert!(grad.all_finite());
    }

    #[test]
    fn maxpool_picks_window_maximum(c in 1usize..3, hw in 1usize..5, seed in any::<u64>()) {
        let (h, w) = (2 * hw, 2 * hw);
        let mut rng = Rng::seed(seed);
        let x = Tensor::from_vec(&[1, c, h, w], random_vec(c * h * w, &mut rng)).unwrap();
        let (y, idx) = maxpool_forward(&x, 2, 2).unwrap();
        for (o, (&v, &src)) in y.data().iter().zip(idx.argmax()).enumerate() {
            prop_assert_eq!(v, x.data()[src]);
            let (ch, rest) = (o / (hw * hw), o % (hw * hw));
            let (oy, ox) = (rest / hw, rest % hw);
            let base = ch * h * w;
            let window = [
                base + 2 * oy * w + 2 * ox,
                base + 2 * oy * w + 2 * ox + 1,
                base + (2 * oy + 1) * w + 2 * ox,
                base + (2 * oy + 1) * w + 2 * ox + 1,
            ];
            let m = window.iter().map(|&i| x.data()[i]).fold(f64::MIN, f64::max);
            prop_assert_eq!(v, m);
        }
    }

    #[test]
    fn sgd_lr_non_increasing(lr in 1e-4f64..1.0, decay in 0.0f64..1e-2, steps in 1usize..50) {
        let mut opt = Sgd::new(lr, decay).unwrap();
        let mut prev = opt.effective_lr();
        prop_assert_eq!(prev, lr);
        for _ in 0..steps {
            let mut slot = emberflow::nn::ParamSlot::new("w", Tensor::<f32>::zeros(&[1]).unwrap());
            opt.step(&mut [&mut slot]).unwrap();
            let now = opt.effective_lr();
            prop_assert!(now > 0.0 && now <= prev);
            prev = now;
        }
    }

    // write -> parse recovers labels and 0..=255 intensities exactly.
    #[test]
    fn fer_csv_round_trip(rows in prop::collection::vec((0u8..7, any::<u64>()), 1..6)) {
        let examples: Vec<Example> = rows
            .iter()
            .map(|&(label, seed)| {
                let mut rng = Rng::seed(seed);
                let bytes: Vec<u8> = (0..2304).map(|_| rng.below(256) as u8).collect();
                Example::from_bytes(label, &bytes).unwrap()
            })
            .collect();
        let ds = Dataset::new(examples);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fer.csv");
        write_fer_csv(&ds, &path).unwrap();
        let back = parse_fer_csv(&path).unwrap();
        prop_assert_eq!(back.examples, ds.examples.clone());
        let text = std::fs::read(&path).unwrap();
        prop_assert_eq!(read_fer_csv(text.as_slice()).unwrap(), ds.examples);
    }
}
