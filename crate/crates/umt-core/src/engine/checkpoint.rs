//! Versioned binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic            8  b"UMTCKPT1"
//! format version   4  u32
//! arch digest      8  u64
//! step             8  u64
//! n_params         8  u64
//! student          8n f64
//! teacher          8n f64
//! momentum         8n f64
//! rng seed        32  ChaCha key
//! rng stream       8  u64
//! rng word pos    16  u128
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::detector::{ArchConfig, DetectorParams};
use crate::rng::RngSnapshot;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"UMTCKPT1";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arch_digest: u64,
    pub step: u64,
    pub student: Vec<f64>,
    pub teacher: Vec<f64>,
    pub momentum: Vec<f64>,
    pub rng: RngSnapshot,
}

impl Checkpoint {
    /// Rebuilds typed parameters, refusing on digest or length mismatch.
    pub fn into_params(self, arch: &ArchConfig) -> Result<(DetectorParams, DetectorParams, Vec<f64>, u64, RngSnapshot)> {
        let expected = arch.digest();
        if self.arch_digest != expected {
            return Err(Error::DigestMismatch {
                found: self.arch_digest,
                expected,
            });
        }
        let student = DetectorParams::from_vec(arch, self.student)?;
        let teacher = DetectorParams::from_vec(arch, self.teacher)?;
        if self.momentum.len() != student.len() {
            return Err(Error::corrupt("momentum buffer length mismatch"));
        }
        Ok((student, teacher, self.momentum, self.step, self.rng))
    }
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let n = ckpt.student.len();
    if ckpt.teacher.len() != n || ckpt.momentum.len() != n {
        return Err(Error::config("checkpoint vectors must share one length"));
    }
    let file = File::create(path)?;
    let mut out = BufWriter::new(file);
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&ckpt.arch_digest.to_le_bytes())?;
    out.write_all(&ckpt.step.to_le_bytes())?;
    out.write_all(&(n as u64).to_le_bytes())?;
    for vec in [&ckpt.student, &ckpt.teacher, &ckpt.momentum] {
        for v in vec.iter() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.write_all(&ckpt.rng.seed)?;
    out.write_all(&ckpt.rng.stream.to_le_bytes())?;
    out.write_all(&ckpt.rng.word_pos.to_le_bytes())?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = File::open(path)
        .map_err(|_| Error::missing(format!("checkpoint {}", path.display())))?;
    let mut inp = BufReader::new(file);
    let bad = |what: &str| Error::corrupt(format!("checkpoint {}: {what}", path.display()));
    let mut magic = [0u8; 8];
    inp.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("bad magic"));
    }
    let mut b4 = [0u8; 4];
    inp.read_exact(&mut b4)?;
    if u32::from_le_bytes(b4) != VERSION {
        return Err(bad("unsupported format version"));
    }
    let mut b8 = [0u8; 8];
    let mut read_u64 = |inp: &mut BufReader<File>| -> Result<u64> {
        inp.read_exact(&mut b8)?;
        Ok(u64::from_le_bytes(b8))
    };
    let arch_digest = read_u64(&mut inp)?;
    let step = read_u64(&mut inp)?;
    let n = read_u64(&mut inp)? as usize;
    if n == 0 || n > 1 << 24 {
        return Err(bad("implausible parameter count"));
    }
    let read_vec = |inp: &mut BufReader<File>| -> Result<Vec<f64>> {
        let mut out = vec![0.0; n];
        let mut b = [0u8; 8];
        for v in &mut out {
            inp.read_exact(&mut b)?;
            *v = f64::from_le_bytes(b);
        }
        Ok(out)
    };
    let student = read_vec(&mut inp)?;
    let teacher = read_vec(&mut inp)?;
    let momentum = read_vec(&mut inp)?;
    let mut seed = [0u8; 32];
    inp.read_exact(&mut seed)?;
    let mut b8b = [0u8; 8];
    inp.read_exact(&mut b8b)?;
    let stream = u64::from_le_bytes(b8b);
    let mut b16 = [0u8; 16];
    inp.read_exact(&mut b16)?;
    let word_pos = u128::from_le_bytes(b16);
    Ok(Checkpoint {
        arch_digest,
        step,
        student,
        teacher,
        momentum,
        rng: RngSnapshot {
            seed,
            stream,
            word_pos,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{seeded, RngSnapshot};

    #[test]
    fn checkpoint_roundtrip_is_exact() {
        let dir = std::env::temp_dir().join(format!("umt_ckpt_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.ckpt");
        let ckpt = Checkpoint {
            arch_digest: 0xdead_beef,
            step: 1234,
            student: (0..100).map(|i| (i as f64).sin()).collect(),
            teacher: (0..100).map(|i| (i as f64).cos()).collect(),
            momentum: vec![0.5; 100],
            rng: RngSnapshot::capture(&seeded(9)),
        };
        write_checkpoint(&path, &ckpt).unwrap();
        let back = read_checkpoint(&path).unwrap();
        assert_eq!(ckpt, back);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn digest_mismatch_is_reported_with_both_values() {
        let arch = crate::detector::ArchConfig::default();
        let n = crate::detector::DetectorParams::zeros(&arch).len();
        let ckpt = Checkpoint {
            arch_digest: 1,
            step: 0,
            student: vec![0.0; n],
            teacher: vec![0.0; n],
            momentum: vec![0.0; n],
            rng: RngSnapshot::capture(&seeded(1)),
        };
        let err = ckpt.into_params(&arch).unwrap_err().to_string();
        assert!(err.contains("mismatch"), "{err}");
    }
}
