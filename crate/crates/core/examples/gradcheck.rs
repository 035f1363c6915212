//! Reverse-mode gradients of a small conv + linear network compared against
//! central finite differences.

use autosculpt::numerics::{Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = Tensor::uniform(&[2, 1, 5, 5], 1.0, &mut rng);
    let conv = Tensor::uniform(&[3, 1, 3, 3], 0.5, &mut rng);
    let head = Tensor::uniform(&[12, 2], 0.5, &mut rng);
    let labels = [0usize, 1];

    let loss = |conv: &Tensor, head: &Tensor| -> Result<(f64, Vec<Tensor>), Box<dyn std::error::Error>> {
        let tape = Tape::new();
        let (c, h) = (tape.param(conv.clone()), tape.param(head.clone()));
        let y = tape.constant(x.clone()).conv2d(c, 2, 0)?.relu().reshape(&[2, 12])?.matmul(h)?;
        let l = y.cross_entropy(&labels)?;
        let grads = tape.backward(l)?;
        Ok((l.value().data()[0], vec![grads.wrt(c), grads.wrt(h)]))
    };

    let (value, grads) = loss(&conv, &head)?;
    println!("loss {value:.6}");
    let step = 1e-5;
    let mut worst = 0.0f64;
    for (which, g) in grads.iter().enumerate() {
        for i in 0..g.numel() {
            let mut params = [conv.clone(), head.clone()];
            params[which].data_mut()[i] += step;
            let up = loss(&params[0], &params[1])?.0;
            params[which].data_mut()[i] -= 2.0 * step;
            let down = loss(&params[0], &params[1])?.0;
            let numeric = (up - down) / (2.0 * step);
            worst = worst.max((numeric - g.data()[i]).abs() / numeric.abs().max(g.data()[i].abs()).max(1e-3));
        }
    }
    println!("largest relative gradient error over {} parameters: {worst:.2e}", conv.numel() + head.numel());
    Ok(())
}
