//! The `.jdc` container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "JDCB" | version u16 | flags u16 | quality u8
//! | width u32 | height u32 | padded width u32 | padded height u32
//! | len u32 | z2 payload | len u32 | z1 payload | crc32 u32
//! ```
//!
//! Flag bit 0 marks a context-model stream, bit 1 an MS-SSIM-optimised
//! model. The trailing CRC32 covers the two payloads (z2 then z1), so any
//! flipped payload byte is reported as a checksum error before decoding.

use super::EntropyError;

pub const MAGIC: [u8; 4] = *b"JDCB";
pub const VERSION: u16 = 1;
/// Container bytes outside the two payloads: header, lengths and CRC.
pub const OVERHEAD_BYTES: usize = 4 + 2 + 2 + 1 + 16 + 4 + 4 + 4;

const FLAG_CONTEXT: u16 = 1;
const FLAG_MSSSIM: u16 = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bitstream {
    pub context: bool,
    pub msssim: bool,
    pub quality: u8,
    pub width: u32,
    pub height: u32,
    pub padded_width: u32,
    pub padded_height: u32,
    pub z2: Vec<u8>,
    pub z1: Vec<u8>,
}

fn checksum(z2: &[u8], z1: &[u8]) -> u32 {
    let mut h = crc32fast::Hasher::new();
    h.update(z2);
    h.update(z1);
    h.finalize()
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], EntropyError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.data.len()).ok_or(EntropyError::Truncated)?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, EntropyError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, EntropyError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, EntropyError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

impl Bitstream {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(OVERHEAD_BYTES + self.z1.len() + self.z2.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let flags = if self.context { FLAG_CONTEXT } else { 0 } | if self.msssim { FLAG_MSSSIM } else { 0 };
        out.extend_from_slice(&flags.to_le_bytes());
        out.push(self.quality);
        for v in [self.width, self.height, self.padded_width, self.padded_height] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for seg in [&self.z2, &self.z1] {
            out.extend_from_slice(&(seg.len() as u32).to_le_bytes());
            out.extend_from_slice(seg);
        }
        out.extend_from_slice(&checksum(&self.z2, &self.z1).to_le_bytes());
        out
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self, EntropyError> {
        let mut r = Reader { data, pos: 0 };
        if r.take(4).map_err(|_| EntropyError::BadMagic)? != MAGIC {
            return Err(EntropyError::BadMagic);
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(EntropyError::UnsupportedVersion(version));
        }
        let flags = r.u16()?;
        if flags & !(FLAG_CONTEXT | FLAG_MSSSIM) != 0 {
            return Err(EntropyError::Corrupt(format!("unknown flags {flags:#06x}")));
        }
        let quality = r.u8()?;
        let (width, height, padded_width, padded_height) = (r.u32()?, r.u32()?, r.u32()?, r.u32()?);
        let n2 = r.u32()? as usize;
        let z2 = r.take(n2)?.to_vec();
        let n1 = r.u32()? as usize;
        let z1 = r.take(n1)?.to_vec();
        let stored = r.u32()?;
        if r.pos != data.len() {
            return Err(EntropyError::Corrupt(format!("{} trailing bytes after container", data.len() - r.pos)));
        }
        let computed = checksum(&z2, &z1);
        if stored != computed {
            return Err(EntropyError::Checksum { stored, computed });
        }
        if width == 0 || height == 0 || width > padded_width || height > padded_height {
            return Err(EntropyError::Corrupt(format!(
                "geometry {width}x{height} in {padded_width}x{padded_height}"
            )));
        }
        Ok(Bitstream {
            context: flags & FLAG_CONTEXT != 0,
            msssim: flags & FLAG_MSSSIM != 0,
            quality,
            width,
            height,
            padded_width,
            padded_height,
            z2,
            z1,
        })
    }
}
