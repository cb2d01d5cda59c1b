use nnsem_core::fuzz::{generate_inputs, generate_tree, GenConfig};
use nnsem_core::rng::Rng;
use nnsem_core::semantics::eval_unchecked;
use nnsem_core::validator::{infer_shapes, validate_model, Report};
use proptest::prelude::*;
use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    // The validator and the raw kernels must reject the same models at the
    // same layer, and agree on every shape of the ones they accept.
    #[test]
    fn validator_and_kernels_agree_on_random_trees(seed in any::<u64>()) {
        let cfg = GenConfig::default();
        let mut rng = Rng::new(seed);
        let mut tree = generate_tree(&cfg, &mut rng).unwrap();
        let g = tree.freeze(&cfg, &mut rng).graph;
        let inputs = generate_inputs(&g, &cfg, &mut rng);

        let violations = validate_model(&g, Some(&inputs), Report::First);
        match eval_unchecked(&g, &inputs) {
            Ok(trace) => {
                prop_assert!(violations.is_empty(), "kernels accept, validator says {:?}", violations);
                let shapes = infer_shapes(&g, Some(&inputs), Report::First).shapes;
                for (id, t) in &trace {
                    prop_assert_eq!(&t.dims()[1..], &shapes[id][..], "shape of {}", id);
                }
            }
            Err(failure) => {
                prop_assert!(!violations.is_empty(), "kernels fail at {}, validator accepts", failure.layer_id);
                prop_assert_eq!(&violations[0].layer_id, &failure.layer_id);
            }
        }
    }

    #[test]
    fn reported_violations_are_well_formed(seed in any::<u64>()) {
        let cfg = GenConfig::default();
        let mut rng = Rng::new(seed);
        let mut tree = generate_tree(&cfg, &mut rng).unwrap();
        let g = tree.freeze(&cfg, &mut rng).graph;
        for v in validate_model(&g, None, Report::All) {
            prop_assert!(g.node(&v.layer_id).is_some() || g.is_input(&v.layer_id));
            prop_assert!(v.badness >= 0.0 && v.badness.is_finite());
            prop_assert!(v.message.starts_with(v.code.category().as_str()));
        }
    }

    #[test]
    fn rng_matches_rand_xoshiro(seed in any::<u64>()) {
        let mut ours = Rng::new(seed);
        let mut theirs = Xoshiro256StarStar::seed_from_u64(seed);
        for _ in 0..64 {
            prop_assert_eq!(ours.next_u64(), theirs.next_u64());
        }
    }
}
