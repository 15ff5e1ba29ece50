//! Clusters a synthetic 4-scheme target three ways: K-means on raw
//! samples, the network from a random start, and the network pre-trained on
//! four other schemes.
//!
//! ```text
//! cargo run --release --example transfer_ablation -- [seeds] [pretrain_epochs] [finetune_epochs]
//! ```

use std::time::Instant;

use dtc::cli::flatten_records;
use dtc::dataset::{generate_synthetic, ModulationScheme};
use dtc::metrics::{evaluate, kmeans, ContingencyTable};
use dtc::trainer::{finetune_cluster, pretrain, TrainConfig};
use dtc::ModelState;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse().expect("integer argument")).collect();
    let seeds = args.first().copied().unwrap_or(3) as u64;
    let defaults = TrainConfig::default();
    let pre_epochs = args.get(1).copied().unwrap_or(defaults.max_epochs);
    let ft_epochs = args.get(2).copied().unwrap_or(defaults.max_epochs);

    let target_schemes = ModulationScheme::parse_list("BPSK,QPSK,4PAM,CPFSK")?;
    let aux_schemes = ModulationScheme::parse_list("8PSK,16QAM,8ASK,GFSK")?;
    let mut totals = [0.0; 3];
    for seed in 0..seeds {
        let target = generate_synthetic(&target_schemes, 250, 128, 10, 1000 + seed)?;
        let aux = generate_synthetic(&aux_schemes, 250, 128, 10, 2000 + seed)?;
        let truth = target.labels().expect("synthetic data is labeled");

        let t = Instant::now();
        let km = kmeans(&flatten_records(&target), 256, 4, seed, 300)?;
        let km_acc = evaluate(&truth, &km.assignments, 4)?.acc;
        println!("seed {seed}: kmeans acc {km_acc:.4} ({:.1?})", t.elapsed());

        let cfg = TrainConfig { seed, max_epochs: ft_epochs, ..TrainConfig::default() };
        let t = Instant::now();
        let scratch = finetune_cluster(ModelState::init(128, 4, seed)?, &target, &cfg)?;
        let scratch_acc = evaluate(&truth, &scratch.assignments, 4)?.acc;
        println!("seed {seed}: no-pretrain acc {scratch_acc:.4} epochs {} ({:.1?})", scratch.epochs_run, t.elapsed());

        let t = Instant::now();
        let pre_cfg = TrainConfig { seed, max_epochs: pre_epochs, ..TrainConfig::default() };
        let pre = pretrain(ModelState::init(128, 4, seed)?, &aux, &pre_cfg)?;
        let transferred = finetune_cluster(pre.model, &target, &cfg)?;
        let transfer_acc = evaluate(&truth, &transferred.assignments, 4)?.acc;
        println!(
            "seed {seed}: pretrained acc {transfer_acc:.4} (best epoch {}, finetune epochs {}) ({:.1?})",
            pre.best_epoch,
            transferred.epochs_run,
            t.elapsed()
        );
        println!("  no-pretrain contingency {:?}", ContingencyTable::new(&truth, &scratch.assignments)?.counts);
        println!("  pretrained contingency {:?}", ContingencyTable::new(&truth, &transferred.assignments)?.counts);
        totals[0] += km_acc;
        totals[1] += scratch_acc;
        totals[2] += transfer_acc;
    }
    let n = seeds as f64;
    println!(
        "mean acc: kmeans {:.4}  no-pretrain {:.4}  pretrained {:.4}",
        totals[0] / n,
        totals[1] / n,
        totals[2] / n
    );
    Ok(())
}
