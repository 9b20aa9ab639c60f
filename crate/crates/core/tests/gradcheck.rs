mod common;

use common::fd::{gat_error, op_error, OPS};
use common::{random_graph, random_model, rng, small_config};

#[test]
fn every_op_matches_central_differences() {
    for op in OPS {
        let mut r = rng(11);
        for instance in 0..20 {
            let err = op_error(op, &mut r);
            assert!(err < 1e-5, "{op} instance {instance}: relative error {err:e}");
        }
    }
}

#[test]
fn gat_gradients_match_central_differences() {
    let mut r = rng(5);
    for instance in 0..20u64 {
        let n = 3 + instance as usize % 5;
        let g = random_graph(&mut r, n, 3, 2);
        let m = random_model(small_config(), 100 + instance);
        let err = gat_error(&m, &g);
        assert!(err < 1e-4, "instance {instance}: relative error {err:e}");
    }
}
