use ccstat::parallel;
use ccstat_core::demo::random_instance;
use ccstat_core::verify::{certify, validate_lemma5, validate_theorem1, LambdaChoice};
use nalgebra::DVector;

#[test]
fn parallel_certification_matches_serial() {
    for seed in 0..4 {
        let inst = random_instance(seed);
        let u = DVector::zeros(inst.spec.input_len());
        let serial = certify(&inst.spec, &u, &inst.model, 5000, 11).unwrap();
        let par = parallel::certify(&inst.spec, &u, &inst.model, 5000, 11).unwrap();
        assert_eq!(serial, par);
    }
}

#[test]
fn parallel_validation_matches_serial() {
    let lambdas = [LambdaChoice::AboveFloor(0.1), LambdaChoice::Absolute(3.0)];
    assert_eq!(
        validate_theorem1(&[10, 50], &lambdas, 3000, 5).unwrap(),
        parallel::validate_theorem1(&[10, 50], &lambdas, 3000, 5).unwrap()
    );
    assert_eq!(
        validate_lemma5(&[2, 50], &lambdas, 3000, 5).unwrap(),
        parallel::validate_lemma5(&[2, 50], &lambdas, 3000, 5).unwrap()
    );
}
