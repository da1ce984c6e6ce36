//! The stopping rule on a scripted validation-CER curve.
//!
//! `cargo run --example early_stopping -- [patience]`

use cerhv::detector::{run_with_early_stopping, EpochRecord, EpochRunner};

struct Curve(Vec<f64>);

impl EpochRunner for Curve {
    type Error = std::convert::Infallible;

    fn run_epoch(&mut self, epoch: usize) -> Result<EpochRecord, Self::Error> {
        Ok(EpochRecord {
            epoch,
            train_loss: 0.0,
            val_cer: self.0[epoch - 1],
            learning_rate: 0.0,
        })
    }

    fn improved(&mut self, epoch: usize) {
        println!("  epoch {epoch}: new best {:.3}, checkpoint kept", self.0[epoch - 1]);
    }
}

fn main() {
    let patience = std::env::args().nth(1).and_then(|p| p.parse().ok()).unwrap_or(3);
    let curve = vec![0.9, 0.6, 0.4, 0.35, 0.35, 0.36, 0.33, 0.34, 0.34, 0.35, 0.30, 0.31];
    let s = run_with_early_stopping(&mut Curve(curve.clone()), curve.len(), patience).unwrap();
    println!(
        "patience {patience}: stopped at epoch {} (early: {}), best epoch {} with CER {:.3}",
        s.stop_epoch, s.stopped_early, s.best_epoch, s.best_val_cer
    );
}
