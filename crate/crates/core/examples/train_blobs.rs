//! Trains the small network on the synthetic blob dataset and prints the
//! validation F1 after every epoch.
//!
//! Usage: `cargo run --release --example train_blobs -- [loss] [epochs] [lr]`

use std::time::Instant;

use resseg::losses::LossId;
use resseg::synthetic::{blob_dataset, positive_fraction, BlobConfig};
use resseg::trainer::{evaluate_f1, train_with, TinyFcn, TrainConfig, DEFAULT_WIDTHS};

fn main() -> resseg::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let loss: LossId = args.get(1).map_or(Ok(LossId::DiceFocal), |s| s.parse())?;
    let epochs = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(30);
    let lr = args
        .get(3)
        .and_then(|s| s.parse().ok())
        .unwrap_or(TrainConfig::default().initial_lr);

    let data = blob_dataset(200, &BlobConfig::default(), 11);
    let (train, val) = data.split_at(160);
    println!("positive fraction {:.4}", positive_fraction(&data));

    let cfg = TrainConfig {
        loss,
        max_epochs: epochs,
        initial_lr: lr,
        seed: 5,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let model = TinyFcn::new(&DEFAULT_WIDTHS, 5)?;
    let outcome = train_with(model, train, val, &cfg, |row| {
        println!(
            "epoch {:>3}  train {:.5}  val {:.5}  lr {:e}  t {:.1}s",
            row.epoch,
            row.train_loss,
            row.val_loss,
            row.lr,
            start.elapsed().as_secs_f64()
        );
    })?;
    println!("val F1 {:.4}", evaluate_f1(&outcome.model, val, 0.5)?);
    Ok(())
}
