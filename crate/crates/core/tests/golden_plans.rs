mod common;

use dlflow::logical::{canonical_serialize, compile_program};

#[test]
fn pregel_logical_plan_matches_golden() {
    let lp = compile_program(&common::pregel()).unwrap();
    assert_eq!(canonical_serialize(&lp), common::golden("pregel.logical.txt"));
}

#[test]
fn imru_logical_plan_matches_golden() {
    let lp = compile_program(&common::imru()).unwrap();
    assert_eq!(canonical_serialize(&lp), common::golden("imru.logical.txt"));
}
