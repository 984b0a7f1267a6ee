//! Bit-exact binary checkpoints of parameters and optimizer state.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! "DLMM"  u32 version (=1)
//! u32 K, c, J, height, width, mode code, flags (bit0 tied adjoint, bit1 shared operator)
//! per parameter tensor:  u64 length, length x f64
//! u64 Adam step, f64 Adam learning rate
//! per parameter tensor:  u64 length, length x f64   (first moments)
//! per parameter tensor:  u64 length, length x f64   (second moments)
//! u64 FNV-1a digest of every preceding byte
//! ```

use std::path::Path;

use crate::cdp::OperatorMode;
use crate::datakit::write_atomic;
use crate::error::{Error, Result};
use crate::net::params::{NetConfig, NetParams};
use crate::train::adam::AdamState;

pub const MAGIC: &[u8; 4] = b"DLMM";
pub const VERSION: u32 = 1;

const FLAG_TIED: u32 = 1;
const FLAG_SHARED: u32 = 2;

/// FNV-1a, 64-bit.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// A loaded checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: NetParams,
    pub adam: AdamState,
}

fn put_tensor(out: &mut Vec<u8>, data: &[f64]) {
    out.extend((data.len() as u64).to_le_bytes());
    for v in data {
        out.extend(v.to_le_bytes());
    }
}

pub fn encode(params: &NetParams, adam: &AdamState) -> Result<Vec<u8>> {
    let tensors = params.tensors();
    if adam.first_moments().len() != tensors.len()
        || tensors
            .iter()
            .zip(adam.first_moments())
            .any(|(t, m)| t.data.len() != m.len())
    {
        return Err(Error::dim("optimizer state does not match parameters"));
    }
    let c = params.config();
    let mut out = Vec::new();
    out.extend(MAGIC);
    let mut flags = 0;
    if c.tie_adjoint {
        flags |= FLAG_TIED;
    }
    if c.share_operator {
        flags |= FLAG_SHARED;
    }
    for v in [
        VERSION,
        c.stages as u32,
        c.channels as u32,
        c.mask_count as u32,
        c.height as u32,
        c.width as u32,
        c.mode.code(),
        flags,
    ] {
        out.extend(v.to_le_bytes());
    }
    for t in &tensors {
        put_tensor(&mut out, t.data);
    }
    out.extend(adam.step().to_le_bytes());
    out.extend(adam.lr.to_le_bytes());
    for m in adam.first_moments().iter().chain(adam.second_moments()) {
        put_tensor(&mut out, m);
    }
    let digest = fnv1a64(&out);
    out.extend(digest.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::format(self.pos as u64, format!("truncated while reading {what}"))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    /// Read a length-prefixed tensor whose length must equal `expected`.
    fn tensor_into(&mut self, dst: &mut [f64], name: &str) -> Result<()> {
        let at = self.pos as u64;
        let len = self.u64(name)?;
        if len != dst.len() as u64 {
            return Err(Error::format(
                at,
                format!("tensor {name} has length {len}, expected {}", dst.len()),
            ));
        }
        let raw = self.take(dst.len() * 8, name)?;
        for (d, chunk) in dst.iter_mut().zip(raw.chunks_exact(8)) {
            *d = f64::from_le_bytes(chunk.try_into().unwrap());
        }
        Ok(())
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::format(0, "bad magic (not a checkpoint)"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            expected: VERSION,
        });
    }
    let mut header = [0u32; 7];
    for (v, name) in header
        .iter_mut()
        .zip(["K", "channels", "J", "height", "width", "mode", "flags"])
    {
        *v = r.u32(name)?;
    }
    let [stages, channels, masks, height, width, mode, flags] = header;
    let mode = OperatorMode::from_code(mode)
        .ok_or_else(|| Error::format(28, format!("unknown operator mode code {mode}")))?;
    if flags & !(FLAG_TIED | FLAG_SHARED) != 0 {
        return Err(Error::format(32, format!("unknown flag bits {flags:#x}")));
    }
    let config = NetConfig::new(height as usize, width as usize)
        .with_stages(stages as usize)
        .with_channels(channels as usize)
        .with_mask_count(masks as usize)
        .with_mode(mode)
        .with_tied_adjoint(flags & FLAG_TIED != 0)
        .with_shared_operator(flags & FLAG_SHARED != 0);
    config
        .validate()
        .map_err(|e| Error::format(8, format!("invalid header: {e}")))?;

    let mut params = NetParams::init(config, 0)?;
    for t in params.tensors_mut() {
        r.tensor_into(t.data, &t.name)?;
    }
    let step = r.u64("adam step")?;
    let lr = r.f64("adam learning rate")?;
    let lengths: Vec<usize> = params.tensors().iter().map(|t| t.data.len()).collect();
    let names: Vec<String> = params.tensors().into_iter().map(|t| t.name).collect();
    let mut moments = [Vec::new(), Vec::new()];
    for (which, dst) in moments.iter_mut().enumerate() {
        for (len, name) in lengths.iter().zip(&names) {
            let mut buf = vec![0.0; *len];
            r.tensor_into(&mut buf, &format!("{name}.moment{}", which + 1))?;
            dst.push(buf);
        }
    }
    let body_end = r.pos;
    let stored = r.u64("digest")?;
    if stored != fnv1a64(&bytes[..body_end]) {
        return Err(Error::format(body_end as u64, "digest mismatch"));
    }
    if r.pos != bytes.len() {
        return Err(Error::format(r.pos as u64, "trailing bytes after digest"));
    }
    let [first, second] = moments;
    Ok(Checkpoint {
        params,
        adam: AdamState::from_parts(lr, step, first, second),
    })
}

/// Write atomically: a failed save never leaves a partial file behind.
pub fn checkpoint_save(path: &Path, params: &NetParams, adam: &AdamState) -> Result<()> {
    write_atomic(path, &encode(params, adam)?)
}

pub fn checkpoint_load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn random_params(cfg: NetConfig, seed: u64) -> (NetParams, AdamState) {
        let mut p = NetParams::init(cfg, seed).unwrap();
        let mut rng = SeededRng::new(seed, 99);
        for t in p.tensors_mut() {
            for v in t.data.iter_mut() {
                *v = rng.normal();
            }
        }
        let first: Vec<Vec<f64>> = p
            .tensors()
            .iter()
            .map(|t| rng.uniform_vec(t.data.len()))
            .collect();
        let second: Vec<Vec<f64>> = p
            .tensors()
            .iter()
            .map(|t| rng.uniform_vec(t.data.len()))
            .collect();
        (p, AdamState::from_parts(3e-4, 17, first, second))
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a64(b"a"), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x8594_4171_f739_67e8);
    }

    #[test]
    fn roundtrip_all_modes() {
        for (mode, tied, shared) in [
            (OperatorMode::Structured, false, false),
            (OperatorMode::Structured, true, true),
            (OperatorMode::Dense, false, false),
            (OperatorMode::Dense, true, false),
            (OperatorMode::Fixed, false, false),
        ] {
            let cfg = NetConfig::new(8, 8)
                .with_stages(2)
                .with_channels(3)
                .with_mask_count(2)
                .with_mode(mode)
                .with_tied_adjoint(tied)
                .with_shared_operator(shared);
            let (p, a) = random_params(cfg, 4);
            let bytes = encode(&p, &a).unwrap();
            let back = decode(&bytes).unwrap();
            assert_eq!(back.params, p);
            assert_eq!(back.adam, a);
            assert_eq!(encode(&back.params, &back.adam).unwrap(), bytes);
        }
    }

    #[test]
    fn header_layout() {
        let cfg = NetConfig::new(8, 16).with_stages(3).with_channels(2);
        let p = NetParams::init(cfg, 0).unwrap();
        let bytes = encode(&p, &AdamState::new(&p, 1e-3)).unwrap();
        assert_eq!(&bytes[..4], b"DLMM");
        let words: Vec<u32> = bytes[4..36]
            .chunks(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        assert_eq!(words, vec![1, 3, 2, 4, 8, 16, 1, 0]);
        let n = bytes.len();
        let digest = u64::from_le_bytes(bytes[n - 8..].try_into().unwrap());
        assert_eq!(digest, fnv1a64(&bytes[..n - 8]));
    }

    fn sample_bytes() -> Vec<u8> {
        let cfg = NetConfig::new(8, 8)
            .with_stages(1)
            .with_channels(2)
            .with_mask_count(2);
        let (p, a) = random_params(cfg, 1);
        encode(&p, &a).unwrap()
    }

    #[test]
    fn corrupted_magic() {
        let mut b = sample_bytes();
        b[0] = b'X';
        assert!(matches!(decode(&b), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn wrong_version() {
        let mut b = sample_bytes();
        b[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            decode(&b),
            Err(Error::UnsupportedVersion {
                found: 2,
                expected: 1
            })
        ));
    }

    #[test]
    fn truncation_reports_offset() {
        let b = sample_bytes();
        for cut in [2, 20, 40, b.len() / 2, b.len() - 3] {
            match decode(&b[..cut]) {
                Err(Error::Format { offset, .. }) => assert!(offset as usize <= cut),
                other => panic!("cut {cut}: {other:?}"),
            }
        }
    }

    #[test]
    fn flipped_payload_bit_fails_digest() {
        let mut b = sample_bytes();
        let at = b.len() / 2;
        b[at] ^= 0x10;
        assert!(matches!(decode(&b), Err(Error::Format { .. })));
    }

    #[test]
    fn save_load_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let cfg = NetConfig::new(8, 8).with_stages(2).with_channels(2);
        let (p, a) = random_params(cfg, 8);
        checkpoint_save(&path, &p, &a).unwrap();
        let back = checkpoint_load(&path).unwrap();
        assert_eq!(back.params, p);
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
        assert!(checkpoint_load(&dir.path().join("missing"))
            .unwrap_err()
            .is_io());
    }
}
