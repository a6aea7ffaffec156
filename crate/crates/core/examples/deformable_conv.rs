//! A deformable convolution with zero offsets matches the dilated convolution;
//! shifting every tap by half a pixel blends neighbours bilinearly.
//!
//! ```text
//! cargo run --example deformable_conv
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use acfpn::ops::conv2d;
use acfpn::{deform_conv2d, deform_conv2d_backward, ConvSpec, DeformConv2d, Tensor};

fn main() -> acfpn::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Tensor::<f64>::rand_uniform((1, 2, 8, 8), -1.0, 1.0, &mut rng);
    let w = Tensor::<f64>::rand_uniform((3, 2, 3, 3), -1.0, 1.0, &mut rng);
    let b = Tensor::<f64>::zeros((3, 1, 1, 1));
    let spec = ConvSpec::atrous3x3(2);

    let mut layer = DeformConv2d::new(w.clone(), b.clone(), spec);
    let plain = conv2d(&x, &w, Some(&b), &spec)?;
    println!("zero offsets: max |deform - conv| = {:.1e}", deform_conv2d(&x, &layer)?.max_abs_diff(&plain));

    // channel 2t is dy, 2t+1 is dx
    layer.offset_bias = Tensor::from_fn((18, 1, 1, 1), |n, _, _, _| if n % 2 == 1 { 0.5 } else { 0.0 });
    let shifted = deform_conv2d(&x, &layer)?;
    println!("dx = 0.5: max change {:.3}", shifted.max_abs_diff(&plain));

    let pair = deform_conv2d_backward(&x, &layer, &Tensor::full(shifted.shape(), 1.0))?;
    for slot in ["input", "weight", "offset_weight", "offset_bias"] {
        let g = pair.grad(slot);
        println!("grad {slot:<14} {} sum {:+.4}", g.shape(), g.sum());
    }
    Ok(())
}
