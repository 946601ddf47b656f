//! The explicit per-pair update rule and the straight-through masked
//! implementation must produce the same weight trajectory when momentum and
//! weight decay are off.

mod common;

use dnw::data::gen_spirals;
use dnw::engine::Model;
use dnw::numerics::Activation;
use dnw::st::train_straight_through;
use dnw::train::{train, TrainConfig};
use dnw::GraphSpec;

#[test]
fn fifty_step_trajectories_coincide() {
    let spec = GraphSpec {
        blocks: vec![2, 4, 3, 2],
        k: 14,
        activation: Activation::Relu,
        seed: 33,
        standardize: true,
        adjacent_only: false,
    };
    let data = gen_spirals(50, 2, 0.1, 9);
    // 10 epochs x 5 batches of 16 on the 80-sample train split = 50 steps.
    let config = TrainConfig {
        learning_rate: 0.08,
        epochs: 10,
        batch_size: 16,
        seed: 77,
        plain: true,
        ..TrainConfig::default()
    };
    let explicit = train(Model::new(&spec, 2, 2).unwrap(), &data, &config, "dnw").unwrap();
    let st = train_straight_through(Model::new(&spec, 2, 2).unwrap(), &data, &config, "dnw_st")
        .unwrap();
    assert_eq!(explicit.iterations, 50);
    assert_eq!(st.iterations, 50);

    let mut max_diff: f64 = 0.0;
    for idx in 0..explicit.model.store.num_candidates() {
        let diff = (explicit.model.store.weight(idx) - st.model.store.weight(idx)).abs();
        max_diff = max_diff.max(diff);
    }
    assert!(max_diff < 1e-9, "max weight discrepancy {max_diff:e}");

    // Node params and io maps ride along identically as well.
    for v in 0..explicit.model.topology.num_nodes() {
        assert!((explicit.model.params.scale[v] - st.model.params.scale[v]).abs() < 1e-9);
        assert!((explicit.model.params.shift[v] - st.model.params.shift[v]).abs() < 1e-9);
    }
    for i in 0..explicit.model.io.output_weight.len() {
        assert!(
            (explicit.model.io.output_weight[i] - st.model.io.output_weight[i]).abs() < 1e-9
        );
    }
}
