//! Codes 10^5 symbols drawn from random discretised Gaussians with rANS,
//! decodes them back and compares the payload with the model's estimate.
//!
//! cargo run --release --example entropy_roundtrip

use noisecodec::entropy::{rans, DiscretizedGaussian};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha20Rng::seed_from_u64(42);
    let n = 100_000;
    let mut tables = Vec::with_capacity(n);
    let mut symbols = Vec::with_capacity(n);
    for _ in 0..n {
        let mean = rng.random_range(-4.0..4.0);
        let scale = rng.random_range(0.11..8.0);
        let model = DiscretizedGaussian::new(mean, scale)?;
        let x: f64 = Normal::new(mean, scale)?.sample(&mut rng);
        symbols.push(model.clamp_symbol(x.round() as i32));
        tables.push(model.table());
    }
    let bytes = rans::encode(&symbols, &tables)?;
    let decoded = rans::decode(&bytes, &tables)?;
    assert_eq!(decoded, symbols);
    let estimate = rans::rate_estimate(&symbols, &tables)?;
    let actual = (bytes.len() * 8) as f64;
    println!("{n} symbols: {actual} bits coded, {estimate:.1} bits estimated ({:+.3}%)", 100.0 * (actual / estimate - 1.0));
    Ok(())
}
