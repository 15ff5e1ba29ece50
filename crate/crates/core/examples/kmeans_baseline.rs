//! K-means on raw flattened samples, scored with NMI, ARI and ACC.
//! Works on separable power levels, fails on zero-mean symbol streams.

use dtc::cli::flatten_records;
use dtc::dataset::{generate_synthetic, ModulationScheme, SignalDataset, SignalRecord};
use dtc::metrics::{evaluate, kmeans, ContingencyTable};

fn tones() -> SignalDataset {
    let length = 32;
    let records = (0..40)
        .map(|n| {
            let label = n % 2;
            let amp = if label == 0 { 0.2 } else { 1.5 };
            let wobble = 0.01 * (n as f32);
            let iq = (0..2 * length).map(|t| amp + wobble * ((t as f32) * 0.3).sin()).collect();
            SignalRecord { iq, label: Some(label), snr_db: None, source_id: n as u64 }
        })
        .collect();
    SignalDataset { records, signal_length: length, class_names: vec!["low".into(), "high".into()], labeled: true }
}

fn score(name: &str, ds: &SignalDataset, k: usize) -> Result<(), Box<dyn std::error::Error>> {
    let fit = kmeans(&flatten_records(ds), 2 * ds.signal_length, k, 0, 300)?;
    let truth = ds.labels().expect("labeled");
    let r = evaluate(&truth, &fit.assignments, k)?;
    println!("{name}: {} iterations, inertia {:.2}", fit.iterations, fit.inertia);
    println!("  nmi {:.3} ari {:.3} acc {:.3}", r.nmi, r.ari, r.acc);
    println!("  contingency {:?}", ContingencyTable::new(&truth, &fit.assignments)?.counts);
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    score("two tones", &tones(), 2)?;
    let schemes = ModulationScheme::parse_list("BPSK,QPSK,4PAM,CPFSK")?;
    score("four schemes", &generate_synthetic(&schemes, 100, 128, 10, 5)?, 4)?;
    Ok(())
}
