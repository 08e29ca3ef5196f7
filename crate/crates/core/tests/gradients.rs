mod common;

use common::grad_suite::{failures, run, GROUPS};

fn assert_group(name: &str) {
    let (_, group) = GROUPS.iter().find(|(n, _)| *n == name).expect("known group");
    let worst = run(*group);
    assert!(!worst.is_empty());
    assert!(failures(&worst).is_empty(), "{name}: {worst:?}");
}

#[test]
fn unary_ops() {
    assert_group("unary ops");
}

#[test]
fn binary_ops() {
    assert_group("binary ops");
}

#[test]
fn reductions_and_indexing() {
    assert_group("reductions and indexing");
}

#[test]
fn matmul_and_conv() {
    assert_group("matmul and conv2d");
}

#[test]
fn fake_quantize_ste() {
    assert_group("fake-quantize STE");
}

#[test]
fn harmony_losses() {
    assert_group("harmony losses");
}

#[test]
fn focal_loss() {
    assert_group("focal loss");
}

#[test]
fn box_geometry() {
    assert_group("box geometry");
}
