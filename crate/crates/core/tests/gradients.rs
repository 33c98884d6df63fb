mod common;

#[test]
fn network_parameter_gradients_match_finite_differences() {
    common::criteria::gradients();
}
