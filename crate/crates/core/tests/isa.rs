mod common;

#[test]
fn sdotp_matches_sign_extended_oracle() {
    common::criteria::sdotp();
}
