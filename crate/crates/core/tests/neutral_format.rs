//! The neutral dataset file as written by external converters: files are
//! assembled byte by byte here, independently of the crate's writer.

use dtc::dataset::{load_neutral, read_neutral, save_neutral, write_neutral, DatasetError};

struct Fixture {
    names: Vec<&'static str>,
    length: u32,
    records: Vec<(u16, i16, Vec<f32>)>,
}

impl Fixture {
    fn bytes(&self) -> Vec<u8> {
        self.bytes_declaring(self.records.len() as u32)
    }

    fn bytes_declaring(&self, n: u32) -> Vec<u8> {
        let mut out = b"DTCSIG01".to_vec();
        out.extend(1u32.to_le_bytes());
        out.extend(n.to_le_bytes());
        out.extend(self.length.to_le_bytes());
        out.extend((self.names.len() as u32).to_le_bytes());
        for name in &self.names {
            out.extend((name.len() as u32).to_le_bytes());
            out.extend(name.as_bytes());
        }
        for (label, snr, iq) in &self.records {
            out.extend(label.to_le_bytes());
            out.extend(snr.to_le_bytes());
            for v in iq {
                out.extend(v.to_le_bytes());
            }
        }
        out
    }
}

/// Two-class miniature in the converter's layout: names in sorted order,
/// per-record SNR tags, single-precision samples including awkward values.
fn two_class_fixture() -> Fixture {
    Fixture {
        names: vec!["8PSK", "BPSK"],
        length: 4,
        records: vec![
            (1, -20, vec![0.1, -0.2, 0.3, -0.4, 1e-40, -0.0, f32::MIN_POSITIVE, 3.4e38]),
            (0, 18, vec![0.5; 8]),
            (1, 0, vec![-1.25, 2.5, 1.0 / 3.0, 7.0, 0.0, 1.0, -1.0, 0.123_456_79]),
        ],
    }
}

#[test]
fn converter_style_file_loads_bit_exactly() {
    let fixture = two_class_fixture();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mini.dtc");
    std::fs::write(&path, fixture.bytes()).unwrap();

    let ds = load_neutral(&path).unwrap();
    ds.validate().unwrap();
    assert_eq!(ds.len(), 3);
    assert_eq!(ds.signal_length, 4);
    assert_eq!(ds.class_names, vec!["8PSK", "BPSK"]);
    assert!(ds.labeled);
    assert_eq!(ds.labels().unwrap(), vec![1, 0, 1]);
    for (record, (label, snr, iq)) in ds.records.iter().zip(&fixture.records) {
        assert_eq!(record.label, Some(*label as usize));
        assert_eq!(record.snr_db, Some(*snr));
        let got: Vec<u32> = record.iq.iter().map(|v| v.to_bits()).collect();
        let want: Vec<u32> = iq.iter().map(|v| v.to_bits()).collect();
        assert_eq!(got, want);
    }
    assert_eq!(ds.records[0].i(), &fixture.records[0].2[..4]);
    assert_eq!(ds.records[0].q(), &fixture.records[0].2[4..]);
}

#[test]
fn writer_reproduces_the_fixture_bytes() {
    let bytes = two_class_fixture().bytes();
    let ds = read_neutral(&bytes).unwrap();
    let mut out = Vec::new();
    write_neutral(&ds, &mut out).unwrap();
    assert_eq!(out, bytes);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("again.dtc");
    save_neutral(&ds, &path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
}

#[test]
fn unlabeled_and_untagged_records() {
    let mut fixture = two_class_fixture();
    fixture.records[1].0 = 0xFFFF;
    fixture.records[2].1 = 0x7FFF;
    let ds = read_neutral(&fixture.bytes()).unwrap();
    assert!(!ds.labeled);
    assert!(ds.labels().is_none());
    assert_eq!(ds.records[1].label, None);
    assert_eq!(ds.records[2].snr_db, None);
    assert_eq!(ds.records[0].label, Some(1));

    let mut out = Vec::new();
    write_neutral(&ds, &mut out).unwrap();
    assert_eq!(out, fixture.bytes());
}

#[test]
fn damaged_files_are_rejected() {
    let fixture = two_class_fixture();
    let good = fixture.bytes();

    assert!(matches!(read_neutral(&[]), Err(DatasetError::Truncated(_))));
    assert!(matches!(read_neutral(&good[..20]), Err(DatasetError::Truncated(_))));
    assert!(matches!(read_neutral(&good[..good.len() - 3]), Err(DatasetError::Truncated(_))));

    let mut magic = good.clone();
    magic[0] = b'X';
    assert!(matches!(read_neutral(&magic), Err(DatasetError::BadMagic { .. })));

    let mut version = good.clone();
    version[8] = 2;
    assert!(matches!(
        read_neutral(&version),
        Err(DatasetError::VersionMismatch { found: 2, expected: 1 })
    ));

    assert!(matches!(
        read_neutral(&fixture.bytes_declaring(5)),
        Err(DatasetError::CountMismatch { declared: 5, actual: 3 })
    ));
    assert!(matches!(
        read_neutral(&fixture.bytes_declaring(2)),
        Err(DatasetError::CountMismatch { declared: 2, actual: 3 })
    ));

    let mut bad_label = two_class_fixture();
    bad_label.records[0].0 = 7;
    assert!(read_neutral(&bad_label.bytes()).is_err());

    let mut bad_name = good.clone();
    let name_start = 8 + 16 + 4;
    bad_name[name_start] = 0xFF;
    assert!(matches!(read_neutral(&bad_name), Err(DatasetError::BadClassName)));
}

#[test]
fn missing_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_neutral(dir.path().join("absent.dtc")), Err(DatasetError::Io(_))));
}
