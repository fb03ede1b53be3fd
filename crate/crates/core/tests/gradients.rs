#[path = "common/gradcheck.rs"]
#[allow(dead_code)]
mod gradcheck;

use gradcheck::TOL;

fn assert_within(what: &str, worst: f64, tol: f64) {
    assert!(worst <= tol, "{what}: worst relative error {worst:e} over {} seeds", gradcheck::SEEDS);
}

#[test]
fn separable_conv() {
    assert_within("separable conv", gradcheck::separable_conv(), TOL);
}

#[test]
fn relu() {
    assert_within("relu", gradcheck::relu(), 1e-6);
}

#[test]
fn maxpool() {
    assert_within("max pool", gradcheck::maxpool(), TOL);
}

#[test]
fn upsample() {
    assert_within("upsample", gradcheck::upsample(), TOL);
}

#[test]
fn batchnorm_train_mode() {
    assert_within("batch norm", gradcheck::batchnorm_train_mode(), TOL);
}

#[test]
fn softmax_cross_entropy() {
    // the fused gradient is held to the tighter bound
    assert_within("softmax cross-entropy", gradcheck::softmax_cross_entropy(), 1e-5);
}

#[test]
fn whole_model() {
    assert_within("whole model", gradcheck::whole_model(), TOL);
}
