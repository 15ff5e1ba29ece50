//! End to end on a small problem: pre-train on labeled auxiliary schemes,
//! save and reload the checkpoint, then cluster an unlabeled target.
//!
//! ```text
//! cargo run --release --example pretrain_and_cluster
//! ```

use dtc::dataset::{generate_synthetic, ModulationScheme};
use dtc::metrics::evaluate;
use dtc::trainer::{finetune_cluster, pretrain, TrainConfig};
use dtc::ModelState;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let aux = generate_synthetic(&ModulationScheme::parse_list("8PSK,16QAM,GFSK")?, 60, 128, 15, 1)?;
    let target = generate_synthetic(&ModulationScheme::parse_list("QPSK,CPFSK,8ASK")?, 60, 128, 15, 2)?;

    let cfg = TrainConfig { max_epochs: 10, batch_size: 32, seed: 3, ..TrainConfig::default() };
    let pre = pretrain(ModelState::init(128, 3, cfg.seed)?, &aux, &cfg)?;
    for rec in &pre.log {
        println!("{rec}");
    }
    println!("best epoch {} with validation loss {:.5}", pre.best_epoch, pre.best_val_loss);

    let dir = std::env::temp_dir().join("dtc_example.ckpt");
    pre.model.save_checkpoint(&dir)?;
    let model = ModelState::load_checkpoint(&dir)?;

    let result = finetune_cluster(model, &target, &cfg)?;
    for rec in &result.log {
        println!("{rec}");
    }
    let truth = target.labels().expect("synthetic data is labeled");
    let report = evaluate(&truth, &result.assignments, 3)?;
    println!(
        "{} epochs, nmi {:.3} ari {:.3} acc {:.3}",
        result.epochs_run, report.nmi, report.ari, report.acc
    );
    Ok(())
}
