//! Every analytic gradient in the static engine against the
//! central-finite-difference oracle: real edge weights, node scale/shift,
//! both io maps, and the per-node input gradients dL/dI.

mod common;

use common::{at_relu_kink, check_model_gradients, random_batch, random_labels, random_spec};
use dnw::engine::Model;
use dnw::numerics::{Activation, BatchVec, Rng};
use dnw::params::Mode;

const H: f64 = 1e-5;
const TOL: f64 = 1e-5;

#[test]
fn gradients_match_finite_differences_across_random_graphs() {
    let mut rng = Rng::new(0x9d2c);
    let mut graphs = 0;
    while graphs < 12 {
        let activation = match graphs % 3 {
            0 => Activation::Relu,
            1 => Activation::Tanh,
            _ => Activation::Identity,
        };
        let spec = random_spec(&mut rng, 20, activation);
        let features = 1 + rng.index(3);
        let classes = 2 + rng.index(2);
        let batch = 1 + rng.index(8);
        let model = Model::new(&spec, features, classes).unwrap();
        let x = random_batch(&mut rng, features, batch);
        let y = random_labels(&mut rng, classes, batch);
        {
            let edges = model.select();
            let state = model.forward(&edges, &x, Mode::Train).unwrap();
            if at_relu_kink(&model, &state) {
                continue; // not differentiable there; draw another graph
            }
        }
        let worst = check_model_gradients(&model, &x, &y, H);
        assert!(
            worst < TOL,
            "graph {graphs} ({:?}, blocks {:?}): worst rel err {worst:e}",
            activation,
            spec.blocks
        );
        graphs += 1;
    }
}

#[test]
fn single_edge_graph_input_gradient_matches_oracle() {
    let spec = dnw::GraphSpec {
        blocks: vec![1, 1],
        k: 1,
        activation: Activation::Identity,
        seed: 2,
        standardize: false,
        adjacent_only: false,
    };
    let model = Model::new(&spec, 1, 2).unwrap();
    let features = vec![BatchVec::from_vec(vec![0.7, -0.4, 1.2])];
    let labels = vec![0, 1, 0];
    let worst = check_model_gradients(&model, &features, &labels, H);
    assert!(worst < 1e-6, "worst rel err {worst:e}");
}
