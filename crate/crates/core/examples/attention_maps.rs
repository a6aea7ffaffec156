//! Runs both attention blocks on random features and writes the two maps as
//! graymaps into the current directory.
//!
//! ```text
//! cargo run --example attention_maps
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use acfpn::attention::{am_build, am_fuse, cnam_forward, cxam_forward, AmConfig, CnamWeights, CxamWeights};
use acfpn::graph::Params;
use acfpn::io::{normalize_map, write_pgm};
use acfpn::Tensor;

fn main() -> acfpn::Result<()> {
    let cfg = AmConfig { channels: 64, key_channels: 32, context_channels: 128, cnam_channels: 32, ..AmConfig::default() };
    let params = Params::<f32>::init(&am_build(&cfg)?, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let f = Tensor::<f32>::rand_uniform((1, 64, 24, 32), -1.0, 1.0, &mut rng);
    let f5 = Tensor::<f32>::rand_uniform((1, 128, 24, 32), 0.0, 1.0, &mut rng);

    let cx = cxam_forward(&f, &CxamWeights::from_params(&params)?)?;
    let cn = cnam_forward(&f5, &cx.v, &CnamWeights::from_params(&params)?)?;
    let fused = am_fuse(&f, &cx.e, &cn.d)?;
    println!("fused {} (input {})", fused.shape(), f.shape());

    for (name, map) in [("cxam_attn.pgm", &cx.attn), ("cnam_attn.pgm", &cn.attn)] {
        let (gray, norm) = normalize_map(map, 0)?;
        write_pgm(name, &gray)?;
        println!("{name}: {}x{} range [{:.4}, {:.4}]", gray.width, gray.height, norm.min, norm.max);
    }
    Ok(())
}
