//! Dilated convolution forward and backward on a small input.
//!
//! ```text
//! cargo run --example conv_basics
//! ```

use acfpn::ops::{conv2d, conv2d_backward};
use acfpn::{ConvSpec, Tensor};

fn main() -> acfpn::Result<()> {
    let x = Tensor::<f64>::from_fn((1, 1, 6, 6), |_, _, y, x| (y * 6 + x) as f64);
    let w = Tensor::<f64>::full((1, 1, 3, 3), 1.0 / 9.0);

    for spec in [ConvSpec::square(3), ConvSpec::atrous3x3(2), ConvSpec::square(3).with_stride(2).with_padding(1)] {
        let y = conv2d(&x, &w, None, &spec)?;
        println!("{spec:?}\n  -> {} first row {:?}", y.shape(), &y.data()[..y.shape().w()]);
    }

    let spec = ConvSpec::atrous3x3(2);
    let grad_out = Tensor::full(conv2d(&x, &w, None, &spec)?.shape(), 1.0);
    let pair = conv2d_backward(&x, &w, None, &spec, &grad_out)?;
    // each input pixel's gradient counts the taps that read it
    let gi = pair.grad("input");
    for y in 0..6 {
        let row: Vec<String> = (0..6).map(|x| format!("{:.2}", gi.at(0, 0, y, x))).collect();
        println!("{}", row.join(" "));
    }
    println!("weight grad {:?}", pair.grad("weight").data());
    Ok(())
}
