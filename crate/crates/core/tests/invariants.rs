use voxmoe::verify::{gradcheck_config, gradcheck_suite, structural_suite};

#[test]
fn gradient_check_model_is_small() {
    use voxmoe::model::{convert_to_moe, init_base};
    let cfg = gradcheck_config();
    let m = convert_to_moe(&init_base(&cfg, 0).unwrap(), &cfg.vocab, 0).unwrap();
    assert!(m.network().num_params() <= 10_000, "{}", m.network().num_params());
}

#[test]
fn analytic_gradients_match_finite_differences() {
    for r in gradcheck_suite(250, 17).unwrap() {
        println!("{}: {}", r.name, r.detail);
        assert!(r.passed, "{}: {}", r.name, r.detail);
    }
}

#[test]
fn structural_invariants_hold() {
    for r in structural_suite(3).unwrap() {
        println!("{}: {}", r.name, r.detail);
        assert!(r.passed, "{}: {}", r.name, r.detail);
    }
}
