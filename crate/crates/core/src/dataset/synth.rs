use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{DatasetError, Result, SignalDataset, SignalRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SchemeKind {
    Bpsk,
    Qpsk,
    Psk8,
    Qam16,
    Qam64,
    Pam4,
    Ask8,
    Cpfsk,
    GfskApprox,
    Oqpsk,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 10] = [
        SchemeKind::Bpsk,
        SchemeKind::Qpsk,
        SchemeKind::Psk8,
        SchemeKind::Qam16,
        SchemeKind::Qam64,
        SchemeKind::Pam4,
        SchemeKind::Ask8,
        SchemeKind::Cpfsk,
        SchemeKind::GfskApprox,
        SchemeKind::Oqpsk,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::Bpsk => "BPSK",
            SchemeKind::Qpsk => "QPSK",
            SchemeKind::Psk8 => "8PSK",
            SchemeKind::Qam16 => "16QAM",
            SchemeKind::Qam64 => "64QAM",
            SchemeKind::Pam4 => "4PAM",
            SchemeKind::Ask8 => "8ASK",
            SchemeKind::Cpfsk => "CPFSK",
            SchemeKind::GfskApprox => "GFSK",
            SchemeKind::Oqpsk => "OQPSK",
        }
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchemeKind {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_uppercase();
        let key = key.strip_suffix("-APPROX").unwrap_or(&key);
        SchemeKind::ALL
            .into_iter()
            .find(|kind| kind.name() == key)
            .ok_or_else(|| DatasetError::UnknownScheme(s.to_string()))
    }
}

/// A modulation scheme together with its sampling parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModulationScheme {
    pub kind: SchemeKind,
    pub samples_per_symbol: usize,
    /// Frequency-shift keying index; unused by the linear schemes.
    pub modulation_index: f64,
}

impl ModulationScheme {
    pub const DEFAULT_SAMPLES_PER_SYMBOL: usize = 8;

    pub fn new(kind: SchemeKind) -> Self {
        ModulationScheme {
            kind,
            samples_per_symbol: Self::DEFAULT_SAMPLES_PER_SYMBOL,
            modulation_index: 0.5,
        }
    }

    pub fn with_samples_per_symbol(mut self, sps: usize) -> Self {
        self.samples_per_symbol = sps;
        self
    }

    /// Parses a comma-separated scheme list such as `"BPSK,QPSK,4PAM"`.
    pub fn parse_list(list: &str) -> Result<Vec<ModulationScheme>> {
        list.split(',')
            .filter(|token| !token.trim().is_empty())
            .map(|token| token.parse().map(ModulationScheme::new))
            .collect()
    }

    /// Unit-average-power symbol table for the memoryless schemes.
    pub fn constellation(&self) -> Option<Vec<(f64, f64)>> {
        let points = match self.kind {
            SchemeKind::Bpsk => vec![(-1.0, 0.0), (1.0, 0.0)],
            SchemeKind::Qpsk | SchemeKind::Oqpsk => [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)]
                .iter()
                .map(|&(i, q)| (i * FRAC_1_SQRT_2, q * FRAC_1_SQRT_2))
                .collect(),
            SchemeKind::Psk8 => (0..8)
                .map(|k| {
                    let phase = 2.0 * PI * f64::from(k) / 8.0;
                    (phase.cos(), phase.sin())
                })
                .collect(),
            SchemeKind::Qam16 => square_qam(4),
            SchemeKind::Qam64 => square_qam(8),
            SchemeKind::Pam4 => pam(4),
            SchemeKind::Ask8 => pam(8),
            SchemeKind::Cpfsk | SchemeKind::GfskApprox => return None,
        };
        Some(points)
    }

    /// Noise-free complex baseband of `len` samples.
    fn modulate(&self, len: usize, rng: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
        let sps = self.samples_per_symbol;
        let n_symbols = len.div_ceil(sps) + 1;
        match self.kind {
            SchemeKind::Cpfsk | SchemeKind::GfskApprox => {
                let bits: Vec<f64> = (0..n_symbols)
                    .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
                    .collect();
                let freq: Vec<f64> = (0..len).map(|n| bits[n / sps]).collect();
                let freq = if self.kind == SchemeKind::GfskApprox {
                    gaussian_smooth(&freq, (sps / 2).max(1))
                } else {
                    freq
                };
                let step = PI * self.modulation_index / sps as f64;
                let mut phase = 0.0_f64;
                freq.iter()
                    .map(|f| {
                        let sample = (phase.cos(), phase.sin());
                        phase += step * f;
                        sample
                    })
                    .collect()
            }
            SchemeKind::Oqpsk => {
                let table = self.constellation().expect("linear scheme");
                let symbols: Vec<(f64, f64)> = (0..n_symbols)
                    .map(|_| table[rng.random_range(0..table.len())])
                    .collect();
                let half = sps / 2;
                (0..len)
                    .map(|n| (symbols[n / sps].0, symbols[(n + sps - half) / sps].1))
                    .collect()
            }
            _ => {
                let table = self.constellation().expect("linear scheme");
                let symbols: Vec<(f64, f64)> = (0..n_symbols)
                    .map(|_| table[rng.random_range(0..table.len())])
                    .collect();
                (0..len).map(|n| symbols[n / sps]).collect()
            }
        }
    }
}

fn square_qam(side: usize) -> Vec<(f64, f64)> {
    let levels: Vec<f64> = (0..side).map(|i| (2 * i) as f64 - (side - 1) as f64).collect();
    let points: Vec<(f64, f64)> = levels
        .iter()
        .flat_map(|&i| levels.iter().map(move |&q| (i, q)))
        .collect();
    normalize_table(points)
}

fn pam(levels: usize) -> Vec<(f64, f64)> {
    let points = (0..levels)
        .map(|i| ((2 * i) as f64 - (levels - 1) as f64, 0.0))
        .collect();
    normalize_table(points)
}

fn normalize_table(points: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    let power = points.iter().map(|(i, q)| i * i + q * q).sum::<f64>() / points.len() as f64;
    let scale = power.sqrt().recip();
    points.into_iter().map(|(i, q)| (i * scale, q * scale)).collect()
}

/// Three-tap `[1/4, 1/2, 1/4]` smoothing with taps `spacing` samples apart.
fn gaussian_smooth(x: &[f64], spacing: usize) -> Vec<f64> {
    let last = x.len() - 1;
    (0..x.len())
        .map(|n| {
            let before = x[n.saturating_sub(spacing)];
            let after = x[(n + spacing).min(last)];
            0.25 * before + 0.5 * x[n] + 0.25 * after
        })
        .collect()
}

/// Generates `per_class` noisy records of every scheme, class-major.
///
/// Each record gets its own ChaCha stream keyed by its position, so the
/// output depends only on the arguments. Noise power is `10^(-snr/10)`
/// relative to the unit-power constellation, split evenly over I and Q, and
/// each record is rescaled to unit average power afterwards.
pub fn generate_synthetic(
    schemes: &[ModulationScheme],
    per_class: usize,
    length: usize,
    snr_db: i16,
    seed: u64,
) -> Result<SignalDataset> {
    if schemes.is_empty() {
        return Err(DatasetError::NoSchemes);
    }
    if per_class == 0 {
        return Err(DatasetError::EmptyClass);
    }
    if let Some(s) = schemes.iter().find(|s| s.samples_per_symbol == 0 || length < s.samples_per_symbol) {
        return Err(DatasetError::LengthTooShort {
            length,
            samples_per_symbol: s.samples_per_symbol,
        });
    }
    let noise_std = (10f64.powf(-f64::from(snr_db) / 10.0) / 2.0).sqrt();

    let mut records = Vec::with_capacity(schemes.len() * per_class);
    for (class, scheme) in schemes.iter().enumerate() {
        for index in 0..per_class {
            let source_id = (class * per_class + index) as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(source_id);
            let clean = scheme.modulate(length, &mut rng);
            let noisy: Vec<(f64, f64)> = clean
                .into_iter()
                .map(|(i, q)| {
                    let ni: f64 = rng.sample(StandardNormal);
                    let nq: f64 = rng.sample(StandardNormal);
                    (i + noise_std * ni, q + noise_std * nq)
                })
                .collect();
            let power = noisy.iter().map(|(i, q)| i * i + q * q).sum::<f64>() / length as f64;
            let scale = if power > 0.0 { power.sqrt().recip() } else { 1.0 };
            let mut iq: Vec<f32> = noisy.iter().map(|(i, _)| (i * scale) as f32).collect();
            iq.extend(noisy.iter().map(|(_, q)| (q * scale) as f32));
            records.push(SignalRecord {
                iq,
                label: Some(class),
                snr_db: Some(snr_db),
                source_id,
            });
        }
    }
    Ok(SignalDataset {
        records,
        class_names: schemes.iter().map(|s| s.kind.name().to_string()).collect(),
        signal_length: length,
        labeled: true,
    })
}
