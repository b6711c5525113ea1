//! Central finite-difference checks of every differentiable op and of whole
//! small networks, in double precision.

#[path = "common/gradcheck.rs"]
mod gradcheck;

use dpn_core::model::{NetworkSpec, VariantKind};
use gradcheck::REL_TOL;

fn check(what: &str, err: f64) {
    assert!(err < REL_TOL, "{what}: relative error {err:e}");
}

#[test]
fn conv_gradients() {
    check("conv", gradcheck::conv(1));
}

#[test]
fn relu_gradient() {
    check("relu", gradcheck::relu(2));
}

#[test]
fn add_gradient_is_passthrough() {
    check("add", gradcheck::add_op(3));
}

#[test]
fn mse_gradient() {
    check("mse", gradcheck::mse(4));
}

#[test]
fn six_conv_network_all_variants() {
    for (i, kind) in VariantKind::ALL.into_iter().enumerate() {
        check(kind.name(), gradcheck::network(&kind.apply(&gradcheck::six_conv_spec()), 10 + i as u64));
    }
}

#[test]
fn identity_skip_network_both_orders() {
    for (i, kind) in [VariantKind::IdentityAfter, VariantKind::IdentityPre].into_iter().enumerate() {
        check(kind.name(), gradcheck::network(&kind.apply(&gradcheck::identity_spec()), 20 + i as u64));
    }
}

#[test]
fn without_global_residual() {
    let spec = NetworkSpec {
        global_residual: false,
        ..gradcheck::six_conv_spec()
    };
    check("no global residual", gradcheck::network(&spec, 30));
}
