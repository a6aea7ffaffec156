//! Full pyramid forward on a random 128×128 image, then a backward pass seeded
//! with ones at every level.
//!
//! ```text
//! cargo run --release --example pyramid
//! ```

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use acfpn::graph::Params;
use acfpn::pyramid::{acfpn_build, acfpn_forward_with_activations, pyramid_backward, AcfpnConfig, Pyramid, IMAGE_INPUT};
use acfpn::Tensor;

fn main() -> acfpn::Result<()> {
    let graph = acfpn_build(&AcfpnConfig::default())?;
    let params = Params::<f32>::init(&graph, 0);
    println!("{} nodes, {} parameters", graph.nodes().len(), params.numel());

    let image = Tensor::<f32>::rand_uniform((1, 3, 128, 128), 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(0));
    let t = Instant::now();
    let acts = acfpn_forward_with_activations(&graph, &params, &image)?;
    let pyramid = Pyramid::from_activations(&acts)?;
    println!("forward {:.2?}", t.elapsed());
    for (name, stride, level) in pyramid.iter() {
        println!("{name} stride {stride:>2} {}", level.shape());
    }

    let ones = Pyramid { levels: pyramid.levels.clone().map(|l| Tensor::full(l.shape(), 1.0)) };
    let t = Instant::now();
    let grads = pyramid_backward(&graph, &params, &acts, &ones)?;
    println!("backward {:.2?}", t.elapsed());
    let gi = &grads.inputs[IMAGE_INPUT];
    println!("image grad {} sum {:.3e}", gi.shape(), gi.sum());
    Ok(())
}
