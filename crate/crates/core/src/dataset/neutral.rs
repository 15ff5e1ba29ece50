//! Little-endian neutral dataset file.
//!
//! ```text
//! "DTCSIG01" | u32 version | u32 n | u32 L | u32 k | k x (u32 len, utf-8 name)
//! n x (u16 label | i16 snr_db | L x f32 I | L x f32 Q)
//! ```
//! Label `0xFFFF` marks an unlabeled record and SNR `0x7FFF` an absent tag.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{DatasetError, Result, SignalDataset, SignalRecord};

pub const MAGIC: [u8; 8] = *b"DTCSIG01";
pub const VERSION: u32 = 1;

const NO_LABEL: u16 = 0xFFFF;
const NO_SNR: i16 = 0x7FFF;

pub fn write_neutral<W: Write>(ds: &SignalDataset, mut out: W) -> Result<()> {
    ds.validate()?;
    out.write_all(&MAGIC)?;
    for value in [VERSION, ds.len() as u32, ds.signal_length as u32, ds.num_classes() as u32] {
        out.write_all(&value.to_le_bytes())?;
    }
    for name in &ds.class_names {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
    }
    for record in &ds.records {
        let label = match record.label {
            Some(label) if label < NO_LABEL as usize => label as u16,
            Some(label) => {
                return Err(DatasetError::ClassOutOfRange {
                    class: label,
                    num_classes: NO_LABEL as usize,
                })
            }
            None => NO_LABEL,
        };
        out.write_all(&label.to_le_bytes())?;
        out.write_all(&record.snr_db.unwrap_or(NO_SNR).to_le_bytes())?;
        for sample in &record.iq {
            out.write_all(&sample.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn save_neutral(ds: &SignalDataset, path: impl AsRef<Path>) -> Result<()> {
    let file = fs::File::create(path)?;
    write_neutral(ds, BufWriter::new(file))
}

pub fn load_neutral(path: impl AsRef<Path>) -> Result<SignalDataset> {
    read_neutral(&fs::read(path)?)
}

struct Cursor<'a> {
    bytes: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        if self.bytes.len() < n {
            return Err(DatasetError::Truncated(what));
        }
        let (head, tail) = self.bytes.split_at(n);
        self.bytes = tail;
        Ok(head)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn read_neutral(bytes: &[u8]) -> Result<SignalDataset> {
    let mut cur = Cursor { bytes };
    let magic = cur.take(MAGIC.len(), "missing magic")?;
    if magic != MAGIC {
        return Err(DatasetError::BadMagic {
            expected: MAGIC,
            found: magic.to_vec(),
        });
    }
    let version = cur.u32("missing version")?;
    if version != VERSION {
        return Err(DatasetError::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }
    let n = cur.u32("missing record count")? as usize;
    let length = cur.u32("missing signal length")? as usize;
    let k = cur.u32("missing class count")? as usize;
    if length == 0 {
        return Err(DatasetError::NonPositiveLength {
            source_len: 0,
            target_len: 0,
        });
    }
    let mut class_names = Vec::with_capacity(k.min(1 << 16));
    for _ in 0..k {
        let len = cur.u32("class name length")? as usize;
        let raw = cur.take(len, "class name")?;
        let name = std::str::from_utf8(raw).map_err(|_| DatasetError::BadClassName)?;
        class_names.push(name.to_string());
    }

    let record_bytes = 4 + 8 * length;
    let body = cur.bytes.len();
    if body % record_bytes != 0 {
        if body / record_bytes < n {
            return Err(DatasetError::Truncated("partial record"));
        }
        return Err(DatasetError::CountMismatch {
            declared: n,
            actual: body / record_bytes,
        });
    }
    if body / record_bytes != n {
        return Err(DatasetError::CountMismatch {
            declared: n,
            actual: body / record_bytes,
        });
    }

    let mut records = Vec::with_capacity(n);
    for (index, chunk) in cur.bytes.chunks_exact(record_bytes).enumerate() {
        let label = u16::from_le_bytes([chunk[0], chunk[1]]);
        let snr = i16::from_le_bytes([chunk[2], chunk[3]]);
        let iq = chunk[4..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        records.push(SignalRecord {
            iq,
            label: (label != NO_LABEL).then_some(label as usize),
            snr_db: (snr != NO_SNR).then_some(snr),
            source_id: index as u64,
        });
    }
    let labeled = records.iter().all(|r| r.label.is_some());
    let ds = SignalDataset {
        records,
        class_names,
        signal_length: length,
        labeled,
    };
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, ModulationScheme, SchemeKind};

    fn sample() -> SignalDataset {
        let schemes: Vec<_> = [SchemeKind::Qam16, SchemeKind::Oqpsk]
            .into_iter()
            .map(ModulationScheme::new)
            .collect();
        generate_synthetic(&schemes, 3, 24, -3, 5).unwrap()
    }

    fn encode(ds: &SignalDataset) -> Vec<u8> {
        let mut buf = Vec::new();
        write_neutral(ds, &mut buf).unwrap();
        buf
    }

    #[test]
    fn round_trip_is_lossless() {
        let ds = sample();
        assert_eq!(read_neutral(&encode(&ds)).unwrap(), ds);
    }

    #[test]
    fn unlabeled_and_untagged_records() {
        let mut ds = sample();
        ds.labeled = false;
        ds.records[1].label = None;
        ds.records[2].snr_db = None;
        let back = read_neutral(&encode(&ds)).unwrap();
        assert_eq!(back, ds);
        assert!(!back.labeled);
    }

    #[test]
    fn header_layout() {
        let buf = encode(&sample());
        assert_eq!(&buf[..8], b"DTCSIG01");
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[12..16].try_into().unwrap()), 6);
        assert_eq!(u32::from_le_bytes(buf[16..20].try_into().unwrap()), 24);
        assert_eq!(u32::from_le_bytes(buf[20..24].try_into().unwrap()), 2);
        assert_eq!(buf.len(), 24 + (4 + 5) + (4 + 5) + 6 * (4 + 8 * 24));
    }

    #[test]
    fn distinct_diagnostics() {
        let good = encode(&sample());
        assert!(matches!(read_neutral(&[]), Err(DatasetError::Truncated(_))));

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(read_neutral(&bad), Err(DatasetError::BadMagic { .. })));

        let mut bad = good.clone();
        bad[8] = 2;
        assert!(matches!(read_neutral(&bad), Err(DatasetError::VersionMismatch { found: 2, .. })));

        assert!(matches!(read_neutral(&good[..good.len() - 3]), Err(DatasetError::Truncated(_))));
        assert!(matches!(read_neutral(&good[..30]), Err(DatasetError::Truncated(_))));

        let record = 4 + 8 * 24;
        assert!(matches!(
            read_neutral(&good[..good.len() - record]),
            Err(DatasetError::CountMismatch { declared: 6, actual: 5 })
        ));
        let mut extra = good.clone();
        extra.extend_from_slice(&good[good.len() - record..]);
        assert!(matches!(
            read_neutral(&extra),
            Err(DatasetError::CountMismatch { declared: 6, actual: 7 })
        ));
    }
}
