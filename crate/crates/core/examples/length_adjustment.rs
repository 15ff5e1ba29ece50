//! Shows how records are brought to a common length: longer channels are
//! subsampled at evenly spaced positions, shorter ones are tiled.

use dtc::dataset::{adjust_channel, adjust_length, generate_synthetic, ModulationScheme};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let chars: Vec<char> = "abb".chars().collect();
    let tiled: String = adjust_channel(&chars, 8)?.into_iter().collect();
    println!("tile    abb -> {tiled}");

    let ramp: Vec<usize> = (0..10).collect();
    println!("shrink  0..10 -> 4: {:?}", adjust_channel(&ramp, 4)?);
    println!("shrink  0..10 -> 7: {:?}", adjust_channel(&ramp, 7)?);

    // I and Q are adjusted independently and stay aligned.
    let iq: Vec<char> = "abbxyy".chars().collect();
    let both: String = adjust_length(&iq, 8)?.into_iter().collect();
    println!("iq      abb|xyy -> {}|{}", &both[..8], &both[8..]);

    let ds = generate_synthetic(&ModulationScheme::parse_list("QPSK")?, 3, 200, 10, 1)?;
    let short = ds.adjust_length(128)?;
    println!("dataset length {} -> {}", ds.signal_length, short.signal_length);
    Ok(())
}
