//! Pretrains an observation encoder with the temporal triplet loss on
//! random-walk episodes, then reports triplet accuracy on fresh triplets.
//!
//! cargo run --release --example triplet_encoder -- [steps]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sfl::encoder::{sample_triplets, train_encoder, triplet_accuracy, EncoderTrainConfig, EpisodeBuffer, LearnedEncoder};
use sfl::gridworld::{GridMap, World};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let steps: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(1_000);
    let map = GridMap::parse(include_str!("../maps/fourroom.txt"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let buffer = EpisodeBuffer::random_walks(&map, 50, 100, &mut rng);
    let held_out = EpisodeBuffer::random_walks(&map, 20, 100, &mut rng);

    let input = map.observation(&map.start_state()).len();
    let mut encoder = LearnedEncoder::new(input, &[64], 32, 10.0, &mut rng);
    let config = EncoderTrainConfig::default();
    let probe = sample_triplets(&held_out, 512, config.windows, config.margin, &mut rng)?;
    println!("held-out triplet accuracy before: {:.3}", triplet_accuracy(&encoder, &probe)?);

    let report = train_encoder(&mut encoder, &buffer, steps, &config, &mut rng)?;
    for (i, chunk) in report.losses.chunks((steps / 10).max(1)).enumerate() {
        let mean = chunk.iter().sum::<f64>() / chunk.len() as f64;
        println!("  steps {:>5}..  loss {mean:.4}", i * (steps / 10).max(1));
    }
    println!("held-out triplet accuracy after:  {:.3}", triplet_accuracy(&encoder, &probe)?);
    Ok(())
}
