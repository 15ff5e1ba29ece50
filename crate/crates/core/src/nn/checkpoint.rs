//! Checkpoint file.
//!
//! ```text
//! "DTCCKPT1" | u32 version | u32 tensor count
//! per tensor: u32 name length, utf-8 name, u8 rank, rank x u32 extents, f64 data
//! u64 step
//! ```
//! The first tensor, `meta.dims`, holds `[signal_length, num_classes]`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{ModelState, NnError, Result, Tensor};

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"DTCCKPT1";
pub const CHECKPOINT_VERSION: u32 = 1;
const DIMS_TENSOR: &str = "meta.dims";

impl ModelState {
    /// Every stored tensor with its checkpoint name, excluding `meta.dims`.
    fn tensor_table(&self) -> Vec<(String, &Tensor)> {
        let names = ModelState::parameter_names();
        let mut table: Vec<(String, &Tensor)> = names.iter().cloned().zip(self.parameters()).collect();
        for (name, bn) in ["bn1", "bn2", "bn2_pool", "bn3", "bn3_pool", "bn4"].iter().zip(&self.bn) {
            table.push((format!("{name}.running_mean"), &bn.running_mean));
            table.push((format!("{name}.running_var"), &bn.running_var));
        }
        for (name, m) in names.iter().zip(&self.first_moment) {
            table.push((format!("adam.m.{name}"), m));
        }
        for (name, v) in names.iter().zip(&self.second_moment) {
            table.push((format!("adam.v.{name}"), v));
        }
        table
    }

    fn tensor_table_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        let ModelState {
            conv,
            bn,
            dense,
            first_moment,
            second_moment,
            ..
        } = self;
        let [c1, c2, c3, c4] = conv;
        let [b1, b2, b2p, b3, b3p, b4] = bn;
        let [d1, d2] = dense;
        out.extend([
            &mut c1.weight, &mut c1.bias, &mut b1.scale, &mut b1.shift,
            &mut c2.weight, &mut c2.bias, &mut b2.scale, &mut b2.shift, &mut b2p.scale, &mut b2p.shift,
            &mut c3.weight, &mut c3.bias, &mut b3.scale, &mut b3.shift, &mut b3p.scale, &mut b3p.shift,
            &mut c4.weight, &mut c4.bias, &mut b4.scale, &mut b4.shift,
            &mut d1.weight, &mut d1.bias, &mut d2.weight, &mut d2.bias,
        ]);
        out.extend([
            &mut b1.running_mean, &mut b1.running_var, &mut b2.running_mean, &mut b2.running_var,
            &mut b2p.running_mean, &mut b2p.running_var, &mut b3.running_mean, &mut b3.running_var,
            &mut b3p.running_mean, &mut b3p.running_var, &mut b4.running_mean, &mut b4.running_var,
        ]);
        out.extend(first_moment.iter_mut());
        out.extend(second_moment.iter_mut());
        out
    }

    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> Result<()> {
        let table = self.tensor_table();
        if table.iter().any(|(_, t)| !t.is_finite()) {
            return Err(NnError::NonFinite("model state"));
        }
        let dims = Tensor::from_vec(vec![2], vec![self.signal_length as f64, self.num_classes as f64]);
        out.write_all(&CHECKPOINT_MAGIC)?;
        out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        out.write_all(&((table.len() + 1) as u32).to_le_bytes())?;
        for (name, tensor) in std::iter::once((DIMS_TENSOR.to_string(), &dims)).chain(table) {
            out.write_all(&(name.len() as u32).to_le_bytes())?;
            out.write_all(name.as_bytes())?;
            out.write_all(&[tensor.shape().len() as u8])?;
            for &extent in tensor.shape() {
                out.write_all(&(extent as u32).to_le_bytes())?;
            }
            for v in tensor.data() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        out.write_all(&self.step.to_le_bytes())?;
        out.flush()?;
        Ok(())
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_checkpoint(BufWriter::new(fs::File::create(path)?))
    }

    pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelState> {
        ModelState::read_checkpoint(&fs::read(path)?)
    }

    pub fn read_checkpoint(bytes: &[u8]) -> Result<ModelState> {
        let mut cur = Reader { bytes };
        let magic = cur.take(8)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(NnError::BadMagic);
        }
        let version = cur.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(NnError::VersionMismatch {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let count = cur.u32()? as usize;
        let mut entries = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let name_len = cur.u32()? as usize;
            let name = std::str::from_utf8(cur.take(name_len)?)
                .map_err(|_| NnError::ShapeTable("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = cur.take(1)?[0] as usize;
            let shape = (0..rank).map(|_| cur.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
            let len: usize = shape.iter().product();
            let raw = cur.take(len.checked_mul(8).ok_or(NnError::Truncated)?)?;
            let data = raw
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect();
            entries.push((name, Tensor::from_vec(shape, data)));
        }
        let step = u64::from_le_bytes(cur.take(8)?.try_into().unwrap());
        if !cur.bytes.is_empty() {
            return Err(NnError::ShapeTable(format!("{} trailing bytes", cur.bytes.len())));
        }

        let mut entries = entries.into_iter();
        let dims = match entries.next() {
            Some((name, t)) if name == DIMS_TENSOR && t.shape() == [2] => t,
            _ => return Err(NnError::ShapeTable(format!("first tensor must be `{DIMS_TENSOR}`"))),
        };
        let (signal_length, num_classes) = (dims.data()[0] as usize, dims.data()[1] as usize);
        let mut model = ModelState::init(signal_length, num_classes, 0)
            .map_err(|e| NnError::ShapeTable(format!("stored dimensions are invalid: {e}")))?;
        let expected: Vec<(String, Vec<usize>)> = model
            .tensor_table()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec()))
            .collect();
        if expected.len() + 1 != count {
            return Err(NnError::ShapeTable(format!(
                "file holds {count} tensors, model needs {}",
                expected.len() + 1
            )));
        }
        for ((slot, (name, tensor)), (exp_name, exp_shape)) in model.tensor_table_mut().into_iter().zip(entries).zip(&expected) {
            if &name != exp_name || tensor.shape() != exp_shape.as_slice() {
                return Err(NnError::ShapeTable(format!(
                    "found `{name}` {:?} where `{exp_name}` {exp_shape:?} was expected",
                    tensor.shape()
                )));
            }
            *slot = tensor;
        }
        model.step = step;
        Ok(model)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() < n {
            return Err(NnError::Truncated);
        }
        let (head, tail) = self.bytes.split_at(n);
        self.bytes = tail;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn encoded(model: &ModelState) -> Vec<u8> {
        let mut buf = Vec::new();
        model.write_checkpoint(&mut buf).unwrap();
        buf
    }

    #[test]
    fn round_trip_preserves_everything() {
        let mut model = ModelState::init(16, 3, 7).unwrap();
        let batch = Tensor::from_vec(vec![4, 2, 16], (0..128).map(|v| (v as f64 * 0.3).sin()).collect());
        let (f, trace) = model.forward_train(&batch).unwrap();
        let grads = model.backward(&trace, f.values()).unwrap();
        model.adam_step(&grads, 1e-3).unwrap();

        let back = ModelState::read_checkpoint(&encoded(&model)).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.step, 1);
        assert_eq!(back.forward_eval(&batch).unwrap(), model.forward_eval(&batch).unwrap());
    }

    #[test]
    fn rejects_damaged_files() {
        let model = ModelState::init(8, 2, 1).unwrap();
        let buf = encoded(&model);
        assert!(matches!(ModelState::read_checkpoint(&buf[..buf.len() - 1]), Err(NnError::Truncated)));
        assert!(matches!(ModelState::read_checkpoint(&[]), Err(NnError::Truncated)));
        let mut bad = buf.clone();
        bad[3] ^= 0xFF;
        assert!(matches!(ModelState::read_checkpoint(&bad), Err(NnError::BadMagic)));
        let mut bad = buf.clone();
        bad[8] = 9;
        assert!(matches!(ModelState::read_checkpoint(&bad), Err(NnError::VersionMismatch { found: 9, .. })));
    }

    #[test]
    fn detects_class_count_mismatch() {
        let model = ModelState::init(16, 10, 1).unwrap();
        let back = ModelState::read_checkpoint(&encoded(&model)).unwrap();
        assert!(matches!(back.ensure_dims(16, 4), Err(NnError::ShapeTable(_))));
        back.ensure_dims(16, 10).unwrap();
    }
}
