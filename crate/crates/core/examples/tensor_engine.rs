//! The network layer on its own: build a small model from a descriptor and
//! fit it to a smoothing task.
//!
//! cargo run --release --example tensor_engine

use interfero::network::{fit, FitOptions, Network};
use interfero::tensor::{AdamConfig, NetTensor};
use rand::{Rng, SeedableRng};

fn main() -> interfero::Result<()> {
    let mut net = Network::from_descriptor("conv(1,4,relu);maxpool(2);conv(4,4,relu);upsample(2);conv(4,1,none)", 1)?;
    println!("{}  ({} parameters)", net.descriptor(), net.parameter_count());

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
    let (mut inputs, mut targets) = (Vec::new(), Vec::new());
    for _ in 0..64 {
        let (fy, fx) = (rng.random_range(0.1..0.4), rng.random_range(0.1..0.4));
        let clean: Vec<f64> = (0..256).map(|i| ((i / 16) as f64 * fy + (i % 16) as f64 * fx).sin()).collect();
        let noisy = clean.iter().map(|v| v + rng.random_range(-0.5..0.5)).collect();
        inputs.push(NetTensor::new(&[1, 16, 16], noisy)?);
        targets.push(NetTensor::new(&[1, 16, 16], clean)?);
    }
    let options = FitOptions {
        epochs: 30,
        batch_size: 8,
        seed: 3,
        adam: AdamConfig {
            lr: 5e-3,
            ..AdamConfig::default()
        },
    };
    let history = fit(&mut net, &inputs, Some(&targets), &options, |e, l| {
        if e % 5 == 0 {
            println!("epoch {e:>2}  mse {l:.4}");
        }
    })?;
    println!("final mse {:.4}", history[history.len() - 1]);
    Ok(())
}
