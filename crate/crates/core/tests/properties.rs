use gumbel_mmt::data::{self, vocab, SyntheticTaskSpec};
use gumbel_mmt::gradcheck::check_gradients;
use gumbel_mmt::gumbel::gumbel_sigmoid;
use gumbel_mmt::train::{corpus_bleu, epoch_order};
use gumbel_mmt::{GateMode, NoiseSource, Tape, Temperature, Tensor};
use proptest::prelude::*;

fn matrix(max_rows: usize, max_cols: usize) -> impl Strategy<Value = Tensor> {
    wide_matrix(max_rows, 1, max_cols)
}

fn wide_matrix(max_rows: usize, min_cols: usize, max_cols: usize) -> impl Strategy<Value = Tensor> {
    (1..=max_rows, min_cols..=max_cols).prop_flat_map(|(r, c)| {
        prop::collection::vec(-5.0f64..5.0, r * c)
            .prop_map(move |d| Tensor::new([r, c], d).unwrap())
    })
}

fn sentence() -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(0u8..6, 0..9)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn softmax_rows_are_distributions(x in matrix(5, 8)) {
        let mut tape = Tape::new();
        let v = tape.constant(x);
        let y = tape.softmax_rows(v).unwrap();
        let y = tape.value(y);
        for r in 0..y.rows() {
            let row = y.row(r);
            prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    // at width 2 the normalized output is ±1 whatever the input, so the
    // gradient is pure rounding noise
    #[test]
    fn layer_norm_gradient(x in wide_matrix(3, 3, 6)) {
        let n = x.cols();
        let gain = Tensor::full([n], 1.3);
        let bias = Tensor::full([n], -0.2);
        let errs = check_gradients(&[x, gain, bias], 1e-5, |t, v| {
            let y = t.layer_norm(v[0], v[1], v[2])?;
            let y = t.mul(y, y)?;
            let y = t.sigmoid(y);
            Ok(t.sum(y))
        })
        .unwrap();
        prop_assert!(errs.iter().all(|&e| e < 1e-4), "{:?}", errs);
    }

    #[test]
    fn infer_gates_are_binary_and_noise_free(e in matrix(4, 7), seed in any::<u64>()) {
        let mut tape = Tape::new();
        let v = tape.constant(e.clone());
        let mut src = NoiseSource::new(seed);
        let g = gumbel_sigmoid(&mut tape, v, Temperature::default(), &mut src, GateMode::infer()).unwrap();
        prop_assert_eq!(src.draws(), 0);
        for (&gate, &logit) in tape.value(g).data().iter().zip(e.data()) {
            prop_assert_eq!(gate, if logit > 0.0 { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn bleu_is_bounded_and_order_free(
        pairs in prop::collection::vec((sentence(), sentence()), 1..8),
        rotate in 0usize..8,
    ) {
        let (hyps, refs): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let b = corpus_bleu(&hyps, &refs, 4).unwrap();
        prop_assert!((0.0..=1.0).contains(&b));

        let k = rotate % hyps.len();
        let (mut h2, mut r2) = (hyps.clone(), refs.clone());
        h2.rotate_left(k);
        r2.rotate_left(k);
        prop_assert!((corpus_bleu(&h2, &r2, 4).unwrap() - b).abs() < 1e-12);
    }

    #[test]
    fn shuffles_are_permutations(seed in any::<u64>(), epoch in 0usize..50, n in 0usize..300) {
        let mut order = epoch_order(seed, epoch, n);
        order.sort_unstable();
        prop_assert_eq!(order, (0..n).collect::<Vec<_>>());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn generated_examples_are_well_formed(seed in any::<u64>(), vocab in 8usize..40) {
        let spec = SyntheticTaskSpec {
            vocab_size: vocab,
            d_image: 4,
            n_regions: 9,
            n_train: 20,
            n_val: 5,
            n_test: 5,
            seed,
            ..SyntheticTaskSpec::default()
        };
        let d = data::generate(&spec).unwrap();
        for ex in d.train.iter().chain(&d.val).chain(&d.test) {
            let content = ex.src.len() - 2;
            prop_assert!((spec.min_len..=spec.max_len).contains(&content));
            prop_assert_eq!((ex.src[0], ex.src[content + 1]), (vocab::BOS, vocab::EOS));
            prop_assert!(ex.src.iter().all(|&t| t < spec.src_vocab_size()));
            prop_assert!(ex.tgt.iter().all(|&t| t < spec.tgt_vocab_size()));
            let pos = ex.meta.ambiguous_pos.unwrap();
            let label = ex.meta.label.unwrap() as usize;
            prop_assert_eq!(ex.tgt[pos], data::READINGS[label]);
            prop_assert_eq!(ex.meta.relevant_regions.len(), spec.n_relevant_regions);
        }
    }
}
