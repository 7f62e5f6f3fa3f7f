//! Self-describing binary model file.
//!
//! Layout (little-endian): magic `SDLM`, u16 version, u32 n_s,
//! u32 num_features, u64 build seed, u64 training fingerprint, u8 kernel
//! count followed by three tap positions per kernel, u32 combination count
//! and per combination {u8 kernel, u32 dilation index, u32 dilation,
//! u8 channel, u8 padding, u16 bias count, u64 fit example (all ones when
//! unset), f64 biases}; then u32 feature count, f64 means, f64 scales,
//! f64 weights, f64 intercept, f64 lambda. A SHA-256 of everything before it
//! closes the file.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::kernels::{Channel, Combination, KernelBank, Padding};
use super::ridge::LinearModel;
use super::LearnedDetector;
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"SDLM";
pub const MODEL_VERSION: u16 = 1;

pub fn encode(det: &LearnedDetector) -> Vec<u8> {
    let bank = &det.bank;
    let model = &det.model;
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&(bank.n_s as u32).to_le_bytes());
    out.extend_from_slice(&(bank.num_features as u32).to_le_bytes());
    out.extend_from_slice(&bank.seed.to_le_bytes());
    out.extend_from_slice(&det.training_fingerprint.to_le_bytes());
    out.push(bank.kernels.len() as u8);
    for k in &bank.kernels {
        out.extend_from_slice(k);
    }
    out.extend_from_slice(&(bank.combinations.len() as u32).to_le_bytes());
    for c in &bank.combinations {
        out.push(c.kernel as u8);
        out.extend_from_slice(&(c.dilation_index as u32).to_le_bytes());
        out.extend_from_slice(&(c.dilation as u32).to_le_bytes());
        out.push(c.channel.code());
        out.push(c.padding.code());
        out.extend_from_slice(&(c.n_biases as u16).to_le_bytes());
        out.extend_from_slice(&c.fit_example.map_or(u64::MAX, |i| i as u64).to_le_bytes());
        for b in &c.biases {
            out.extend_from_slice(&b.to_le_bytes());
        }
    }
    out.extend_from_slice(&(model.weights.len() as u32).to_le_bytes());
    for v in model.mean.iter().chain(&model.scale).chain(&model.weights) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&model.intercept.to_le_bytes());
    out.extend_from_slice(&model.lambda.to_le_bytes());
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format {
                path: self.path.to_path_buf(),
                reason: "unexpected end of model file".into(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }

    fn bad(&self, reason: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            reason: reason.into(),
        }
    }
}

pub fn decode(buf: &[u8], path: &Path) -> Result<LearnedDetector> {
    if buf.len() < 4 + 2 + 32 || &buf[..4] != MODEL_MAGIC {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: "missing SDLM magic".into(),
        });
    }
    let version = u16::from_le_bytes([buf[4], buf[5]]);
    if version != MODEL_VERSION {
        return Err(Error::Version {
            path: path.to_path_buf(),
            found: version,
            expected: MODEL_VERSION,
        });
    }
    let (body, digest) = buf.split_at(buf.len() - 32);
    let actual = Sha256::digest(body);
    if actual.as_slice() != digest {
        return Err(Error::Checksum {
            path: path.to_path_buf(),
            expected: hex::encode(digest),
            actual: hex::encode(actual),
        });
    }
    let mut r = Reader {
        buf: body,
        pos: 6,
        path,
    };
    let n_s = r.u32()? as usize;
    let num_features = r.u32()? as usize;
    let seed = r.u64()?;
    let training_fingerprint = r.u64()?;
    let n_kernels = r.u8()? as usize;
    let kernels = (0..n_kernels)
        .map(|_| {
            let k = r.take(3)?;
            Ok([k[0], k[1], k[2]])
        })
        .collect::<Result<Vec<_>>>()?;
    let n_combos = r.u32()? as usize;
    let mut combinations = Vec::with_capacity(n_combos);
    let mut dilations: Vec<usize> = Vec::new();
    for _ in 0..n_combos {
        let kernel = r.u8()? as usize;
        let dilation_index = r.u32()? as usize;
        let dilation = r.u32()? as usize;
        let channel = Channel::from_code(r.u8()?).ok_or_else(|| r.bad("bad channel code"))?;
        let padding = Padding::from_code(r.u8()?).ok_or_else(|| r.bad("bad padding code"))?;
        let n_biases = r.u16()? as usize;
        let fit = r.u64()?;
        let biases = r.f64s(n_biases)?;
        if kernel >= kernels.len() {
            return Err(r.bad("kernel index out of range"));
        }
        if dilations.len() == dilation_index {
            dilations.push(dilation);
        }
        combinations.push(Combination {
            kernel,
            dilation_index,
            dilation,
            channel,
            padding,
            n_biases,
            fit_example: (fit != u64::MAX).then_some(fit as usize),
            biases,
        });
    }
    let p = r.u32()? as usize;
    let mean = r.f64s(p)?;
    let scale = r.f64s(p)?;
    let weights = r.f64s(p)?;
    let intercept = r.f64()?;
    let lambda = r.f64()?;
    if r.pos != body.len() {
        return Err(r.bad("trailing bytes after model body"));
    }
    if p != num_features {
        return Err(r.bad(format!("{p} weights for {num_features} features")));
    }
    Ok(LearnedDetector {
        bank: KernelBank {
            n_s,
            num_features,
            seed,
            kernels,
            dilations,
            combinations,
        },
        model: LinearModel {
            weights,
            intercept,
            mean,
            scale,
            lambda,
        },
        training_fingerprint,
    })
}

pub fn save(det: &LearnedDetector, path: &Path) -> Result<()> {
    crate::harness::write_atomic(path, &encode(det))
}

pub fn load(path: &Path) -> Result<LearnedDetector> {
    let buf = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    decode(&buf, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learned::kernels::build_kernel_bank;
    use num_complex::Complex64;

    fn detector() -> LearnedDetector {
        let mut bank = build_kernel_bank(40, 252, 5).unwrap();
        let ex: Vec<Complex64> = (0..40)
            .map(|i| Complex64::new((i as f64 * 0.3).sin(), (i as f64 * 0.17).cos()))
            .collect();
        bank.fit_biases_from(&[ex]).unwrap();
        let p = bank.num_features;
        LearnedDetector {
            bank,
            model: LinearModel {
                weights: (0..p).map(|i| i as f64 * 0.01).collect(),
                intercept: -0.3,
                mean: vec![0.5; p],
                scale: vec![0.25; p],
                lambda: 10.0,
            },
            training_fingerprint: 0xABCD,
        }
    }

    #[test]
    fn round_trip() {
        let det = detector();
        let bytes = encode(&det);
        let back = decode(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, det);
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = encode(&detector());
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        assert!(matches!(
            decode(&bytes, Path::new("mem")),
            Err(Error::Checksum { .. })
        ));
        let bytes = encode(&detector());
        assert!(decode(&bytes[..bytes.len() - 5], Path::new("mem")).is_err());
    }

    #[test]
    fn version_is_checked() {
        let mut bytes = encode(&detector());
        bytes[4] = 9;
        assert!(matches!(
            decode(&bytes, Path::new("mem")),
            Err(Error::Version { found: 9, .. })
        ));
    }
}
