//! Writes a synthetic prediction dump that is calibrated by construction:
//! records are grouped into confidence levels and, within each level, the
//! fraction of correct predictions equals the level's confidence.
//!
//! Usage: `cargo run --example calibrated_dump -- OUT [RECORDS_PER_LEVEL]`

use std::path::PathBuf;

use msc_sampler::io::{write_dump, DumpHeader};
use msc_sampler::PredictionRecord;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const NUM_CLASSES: usize = 10;
const EMBED_DIM: usize = 4;
const LEVELS: [f64; 5] = [0.55, 0.65, 0.75, 0.85, 0.95];
const SIDES: [u32; 3] = [160, 224, 288];

fn main() {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().expect("output path required"));
    let per_level: usize = args.next().map_or(600, |s| s.parse().expect("record count"));

    let mut rng = ChaCha8Rng::seed_from_u64(20_231_115);
    let mut records = Vec::new();
    for (li, &conf) in LEVELS.iter().enumerate() {
        let correct = (conf * per_level as f64).round() as usize;
        let mut outcomes: Vec<bool> = (0..per_level).map(|i| i < correct).collect();
        outcomes.shuffle(&mut rng);
        for (i, ok) in outcomes.into_iter().enumerate() {
            let predicted = rng.gen_range(0..NUM_CLASSES);
            let label = if ok {
                predicted
            } else {
                (predicted + rng.gen_range(1..NUM_CLASSES)) % NUM_CLASSES
            };
            let rest = (1.0 - conf) / (NUM_CLASSES - 1) as f64;
            let mut probs = vec![rest; NUM_CLASSES];
            probs[predicted] = conf;
            let side = SIDES[i % SIDES.len()];
            let embedding = (0..EMBED_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect();
            records.push(PredictionRecord {
                image_id: format!("img{li}-{:05}", i / SIDES.len()),
                label: label as u32,
                probs,
                eval_height: side,
                eval_width: side,
                embedding: Some(embedding),
                epoch: None,
            });
        }
    }
    write_dump(&out, &DumpHeader::new(NUM_CLASSES, Some(EMBED_DIM)), &records).expect("write dump");
    println!("wrote {} records to {}", records.len(), out.display());
}
