use ogan::gradsuite::{check_primitive, DEFAULT_STEP, DEFAULT_TOLERANCE, PRIMITIVES};
use ogan::ndnum::{Feeds, Graph, Rng, Tensor};
use ogan::nets::NetSpec;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn every_primitive_matches_finite_differences(seed in any::<u64>()) {
        for name in PRIMITIVES {
            for entry in check_primitive(name, seed, DEFAULT_STEP, DEFAULT_TOLERANCE).unwrap() {
                prop_assert!(entry.report.pass, "{entry:?}");
            }
        }
    }

    #[test]
    fn rng_state_resumes_the_stream(seed in any::<u64>(), skip in 0usize..50) {
        let mut a = Rng::new(seed);
        for _ in 0..skip {
            a.next_u64();
        }
        let (s, c) = a.state();
        let mut b = Rng::from_state(s, c);
        for _ in 0..10 {
            prop_assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn network_rows_are_batch_independent(seed in any::<u64>(), rows in 1usize..9) {
        let mut rng = Rng::new(seed);
        let net = NetSpec::encoder(3, 5, &[7, 4]).build(&mut rng).unwrap();
        let x = Tensor::new(vec![rows, 3], rng.normal_vec(rows * 3)).unwrap();
        let batch = net.forward(&x).unwrap();
        for r in 0..rows {
            let single = Tensor::new(vec![1, 3], x.row(r).to_vec()).unwrap();
            let out = net.forward(&single).unwrap();
            prop_assert_eq!(out.data(), batch.row(r));
        }
    }

    #[test]
    fn linear_roots_have_exact_gradients(seed in any::<u64>()) {
        // d/dA Σ (A·B) = 1·Bᵀ summed over output columns
        let mut rng = Rng::new(seed);
        let a = Tensor::new(vec![2, 3], rng.normal_vec(6)).unwrap();
        let b = Tensor::new(vec![3, 4], rng.normal_vec(12)).unwrap();
        let mut g = Graph::new();
        let an = g.leaf("a", &[2, 3]);
        let bn = g.leaf("b", &[3, 4]);
        let m = g.matmul(an, bn);
        let root = g.sum(m);
        let feeds: Feeds = [("a".to_string(), a), ("b".to_string(), b.clone())].into();
        g.forward(root, &feeds).unwrap();
        let grads = g.backward(root).unwrap();
        let ga = grads.leaf("a").unwrap();
        for i in 0..2 {
            for k in 0..3 {
                let expected: f32 = b.row(k).iter().sum();
                prop_assert!((ga.data()[i * 3 + k] - expected).abs() < 1e-5);
            }
        }
    }
}
