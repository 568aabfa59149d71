//! Finite-difference checks for the ablation variants. The 50-seed check of
//! the full model runs in the acceptance suite.

mod common;

use llmrg::recommend::{Model, Params, Variant};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::gradcheck::{check_seed, toy_config};
use common::toy::{random_examples, toy_catalog};

#[test]
fn ablation_gradients_match_finite_differences() {
    for variant in [Variant::NoDivergent, Variant::BaseOnly, Variant::NoVerification] {
        for seed in [3, 99] {
            let check = check_seed(seed, variant);
            assert!(check.checked > 500);
            assert!(check.failures.is_empty(), "{variant:?}: {:?}", check.failures);
        }
    }
}

#[test]
fn inactive_encoders_get_no_gradient() {
    for variant in [Variant::NoDivergent, Variant::BaseOnly] {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let catalog = toy_catalog(20);
        let examples = random_examples(&mut rng, &catalog, 5, 6, 8);
        let model = Model::new(toy_config(variant), 5, 0.5).unwrap();
        let mut grad = Params::zeros(&model.config);
        for ex in &examples {
            model.loss_and_grad(ex, &mut grad);
        }
        let zero = |p: &llmrg::encode::EncoderParams| {
            let mut all = true;
            p.visit(|_, t| all &= t.iter().all(|x| *x == 0.0));
            all
        };
        assert!(zero(&grad.div));
        assert_eq!(zero(&grad.ori), variant == Variant::BaseOnly);
    }
}
