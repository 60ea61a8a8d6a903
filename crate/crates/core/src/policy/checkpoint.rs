//! Binary parameter container.
//!
//! Little-endian layout:
//!
//! ```text
//! magic "TRJLBPOL" | u32 version | u32 bins, features, embed, hidden, length, context
//! f64 z_max | u32 horizon | f64 mu[horizon][2] | f64 sigma[horizon][2]
//! u32 tag_len | tag (utf-8) | u64 count | f64 values[count] (row-major)
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{Context, Policy, PolicyParams, Shape, Tokenizer};
use crate::error::{Error, Result};
use crate::StepStats;

const MAGIC: &[u8; 8] = b"TRJLBPOL";
const VERSION: u32 = 1;

/// Policy plus the config hash of the run that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub policy: Policy,
    pub config_hash: String,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let p = &self.policy;
        let s = p.params.shape();
        let mut out = Vec::with_capacity(64 + 8 * s.len());
        out.extend_from_slice(MAGIC);
        for v in [
            VERSION,
            s.bins as u32,
            s.features as u32,
            s.embed as u32,
            s.hidden as u32,
            s.length as u32,
            s.context.code(),
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&p.tokenizer.z_max.to_le_bytes());
        out.extend_from_slice(&(p.stats.mu.len() as u32).to_le_bytes());
        for v in p.stats.mu.iter().chain(&p.stats.sigma).flatten() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.config_hash.len() as u32).to_le_bytes());
        out.extend_from_slice(self.config_hash.as_bytes());
        out.extend_from_slice(&(s.len() as u64).to_le_bytes());
        for v in p.params.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let shape = Shape {
            bins: r.u32()? as usize,
            features: r.u32()? as usize,
            embed: r.u32()? as usize,
            hidden: r.u32()? as usize,
            length: r.u32()? as usize,
            context: Context::from_code(r.u32()?).ok_or_else(|| Error::Checkpoint("unknown context code".into()))?,
        };
        let tokenizer = Tokenizer {
            bins: shape.bins,
            z_max: r.f64()?,
        };
        tokenizer.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
        let horizon = r.u32()? as usize;
        if horizon != crate::traj::HORIZON {
            return Err(Error::Checkpoint(format!("horizon {horizon} unsupported")));
        }
        let mut pairs = |n: usize| -> Result<Vec<[f64; 2]>> { (0..n).map(|_| Ok([r.f64()?, r.f64()?])).collect() };
        let mu = pairs(horizon)?;
        let sigma = pairs(horizon)?;
        let stats = StepStats::new(mu, sigma).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let tag_len = r.u32()? as usize;
        let config_hash = String::from_utf8(r.take(tag_len)?.to_vec())
            .map_err(|_| Error::Checkpoint("config hash is not utf-8".into()))?;
        let count = r.u64()? as usize;
        if count != shape.len() {
            return Err(Error::Checkpoint(format!("value count {count} does not match shape")));
        }
        let data = (0..count).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(Self {
            policy: Policy {
                params: PolicyParams::from_parts(shape, data)?,
                tokenizer,
                stats,
            },
            config_hash,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
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
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        Checkpoint {
            policy: Policy {
                params: PolicyParams::init(64, &mut rng),
                tokenizer: Tokenizer::default(),
                stats: StepStats::uniform([1.5, -0.25], [2.0, 0.75]).unwrap(),
            },
            config_hash: "0123abcd".into(),
        }
    }

    #[test]
    fn bit_exact_round_trip() {
        let c = sample();
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ckpt");
        let c = sample();
        c.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), c);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }
}
