//! Compares the network's analytic parameter gradients with central
//! differences on a random patch graph.
//!
//! cargo run --release --example gradient_check -- [seed]

use graphite::graph::Radius;
use graphite::model::OutputGrads;
use graphite::nn::gradcheck::{central_difference, relative_error};
use graphite::{GraphiteModel, PatchGraph};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> graphite::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nodes: Vec<[f64; 6]> = (0..20)
        .map(|_| {
            let n = Vector3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), 1.0).normalize();
            [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-0.3..0.3), n.x, n.y, n.z]
        })
        .collect();
    let graph = PatchGraph::build(nodes, Radius::Relative(2.5))?;
    let model = GraphiteModel::init(seed);
    let wd: Vec<f64> = (0..32).map(|_| rng.random_range(-1.0..1.0)).collect();
    let loss = |m: &GraphiteModel| -> graphite::Result<f64> {
        let o = m.forward(&graph)?;
        Ok(o.descriptor.iter().zip(&wd).map(|(a, b)| a * b).sum::<f64>() + o.score)
    };

    let (_, trace) = model.forward_trace(&graph)?;
    let grads = model.backward(&trace, &OutputGrads { descriptor: Some(&wd), score: Some(1.0), ..Default::default() })?;
    let analytic: Vec<f64> = grads.tensors().iter().flat_map(|t| t.data().to_vec()).collect();
    println!("{} parameters", analytic.len());
    let mut worst = 0.0f64;
    for idx in (0..analytic.len()).step_by(97) {
        let num = central_difference(|h| {
            let mut m = model.clone();
            let mut k = idx;
            for t in m.params.tensors_mut() {
                if k < t.len() {
                    t.data_mut()[k] += h;
                    break;
                }
                k -= t.len();
            }
            loss(&m).expect("forward")
        });
        let err = relative_error(analytic[idx], num);
        worst = worst.max(err);
        println!("param {idx:>5}  analytic {:>12.5e}  numeric {num:>12.5e}  rel err {err:.1e}", analytic[idx]);
    }
    println!("worst relative error {worst:.1e}");
    Ok(())
}
