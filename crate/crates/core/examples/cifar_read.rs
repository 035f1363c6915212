//! Read CIFAR-10 binary batches from the directory given as the first
//! argument. Without one, parses a two-record batch built in memory.

use autosculpt::harness::{cifar_split, encode_cifar_record, load_cifar10};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    match std::env::args().nth(1) {
        Some(dir) => {
            let data = load_cifar10(std::path::Path::new(&dir), 0)?;
            println!("train {} / val {} / test {}", data.train.len(), data.val.len(), data.test.len());
        }
        None => {
            let mut bytes = encode_cifar_record(3, &[128; 3072]);
            bytes.extend(encode_cifar_record(7, &[255; 3072]));
            let split = cifar_split(&bytes)?;
            println!("shape {:?}, labels {:?}, first pixel {:.4}", split.inputs.shape(), split.labels, split.inputs.data()[0]);
        }
    }
    Ok(())
}
