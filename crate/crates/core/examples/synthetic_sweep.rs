//! Trains one loss on the synthetic Zipf corpus and reports test metrics
//! after every epoch.
//!
//! ```text
//! cargo run --release --example synthetic_sweep -- top1 4096 2
//! ```
//! Arguments: loss (default bpr-max), extra samples (2048), epochs (3).

use std::time::Instant;

use sessrec::synth::{zipf_markov_split, ZipfMarkov};
use sessrec::trainer::Trainer;
use sessrec::{evaluate, LossName, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let loss: LossName = args.first().map_or("bpr-max", |s| s.as_str()).parse()?;
    let n_additional: usize = args.get(1).map_or(Ok(2048), |s| s.parse())?;
    let epochs: usize = args.get(2).map_or(Ok(3), |s| s.parse())?;

    let (train, test) = zipf_markov_split(&ZipfMarkov::default(), 0.1)?;
    println!(
        "{} items, {} train events in {} sessions, {} test pairs",
        train.n_items(),
        train.n_events(),
        train.sessions().len(),
        test.n_pairs()
    );
    let cfg = TrainConfig {
        loss,
        n_additional,
        epochs,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::<f32>::new(&train, cfg)?;
    println!("epoch\tloss\tRecall@20\tMRR@20\tseconds");
    for _ in 0..epochs {
        let start = Instant::now();
        let log = trainer.run_epoch()?.clone();
        let r = evaluate(trainer.params(), &test, 20, None)?;
        println!("{}\t{:.4}\t{:.4}\t{:.4}\t{:.1}", log.epoch, log.mean_loss, r.recall, r.mrr, start.elapsed().as_secs_f64());
    }
    Ok(())
}
