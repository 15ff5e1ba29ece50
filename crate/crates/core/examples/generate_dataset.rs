//! Generates a labeled synthetic dataset, writes it in the neutral binary
//! format and reads it back.
//!
//! ```text
//! cargo run --release --example generate_dataset -- [out.dtc]
//! ```

use dtc::dataset::{generate_synthetic, load_neutral, save_neutral, ModulationScheme};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "synthetic.dtc".into());
    let schemes = ModulationScheme::parse_list("BPSK,QPSK,16QAM,CPFSK")?;
    let ds = generate_synthetic(&schemes, 50, 128, 10, 42)?;
    save_neutral(&ds, &path)?;

    let back = load_neutral(&path)?;
    assert_eq!(back.records, ds.records);
    println!("wrote {} records of length {} to {path}", back.len(), back.signal_length);
    for (c, name) in back.class_names.iter().enumerate() {
        let members: Vec<_> = back.records.iter().filter(|r| r.label == Some(c)).collect();
        let power = members.iter().map(|r| r.average_power()).sum::<f64>() / members.len() as f64;
        println!("  {name:<6} {:>3} records, mean power {power:.3}", members.len());
    }
    Ok(())
}
