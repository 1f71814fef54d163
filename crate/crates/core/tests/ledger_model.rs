//! Randomized interleavings of ledger calls checked against a model.

mod common;

use common::{check, Op};
use proptest::prelude::*;

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        3 => Just(Op::Submit),
        4 => (0u64..4).prop_map(Op::Assign),
        3 => (0usize..64, 0usize..5).prop_map(|(p, c)| Op::Complete(p, c)),
        1 => (0u64..5).prop_map(Op::Requeue),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn ledger_matches_model(ops in prop::collection::vec(op(), 0..120)) {
        if let Err(e) = check(&ops) {
            return Err(TestCaseError::fail(e));
        }
    }
}

#[test]
fn resurrected_worker_scenario() {
    use Op::*;
    // A takes 0, dies, B reruns 0, then A's late result arrives
    let ops = [Submit, Assign(1), Requeue(1), Assign(2), Complete(0, 4), Complete(0, 4), Assign(3)];
    check(&ops).unwrap();
}
