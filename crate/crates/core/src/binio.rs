//! Little-endian encoding helpers shared by the dataset and checkpoint formats.

use thiserror::Error;

use crate::kinematics::{ArmSpec, Variant};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic bytes: expected {expected:?}")]
    BadMagic { expected: &'static str },
    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("file is truncated")]
    Truncated,
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("invalid content: {0}")]
    Invalid(String),
    #[error("arm spec mismatch: {0}")]
    SpecMismatch(String),
}

#[derive(Default)]
pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u32(&mut self, x: u32) {
        self.buf.extend_from_slice(&x.to_le_bytes());
    }

    pub fn u64(&mut self, x: u64) {
        self.buf.extend_from_slice(&x.to_le_bytes());
    }

    pub fn f64(&mut self, x: f64) {
        self.buf.extend_from_slice(&x.to_le_bytes());
    }

    pub fn f64s(&mut self, xs: &[f64]) {
        self.buf.reserve(xs.len() * 8);
        for &x in xs {
            self.f64(x);
        }
    }

    pub fn arm_spec(&mut self, spec: &ArmSpec) {
        self.u32(spec.variant.code());
        self.u32(spec.n_joints as u32);
        self.f64(spec.tilt_max);
        self.f64(spec.stretch_max);
        self.f64(spec.base_height);
        self.f64(spec.gear_radius);
    }

    /// Appends the CRC32 of everything written so far and returns the bytes.
    pub fn finish(mut self) -> Vec<u8> {
        let crc = crc32fast::hash(&self.buf);
        self.u32(crc);
        self.buf
    }
}

pub(crate) struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    /// Checks magic, version and trailing CRC, returning a reader positioned after the version.
    pub fn open(data: &'a [u8], magic: &'static str, version: u32) -> Result<Self, FormatError> {
        let m = magic.as_bytes();
        if data.len() < m.len() || &data[..m.len()] != m {
            return Err(FormatError::BadMagic { expected: magic });
        }
        if data.len() < m.len() + 4 + 4 {
            return Err(FormatError::Truncated);
        }
        let found = u32::from_le_bytes(data[m.len()..m.len() + 4].try_into().expect("4 bytes"));
        if found != version {
            return Err(FormatError::Version { found, expected: version });
        }
        Ok(Self {
            data,
            pos: m.len() + 4,
        })
    }

    /// Verifies the trailing CRC32 of the whole buffer.
    pub fn verify_crc(&self) -> Result<(), FormatError> {
        let n = self.data.len();
        let stored = u32::from_le_bytes(self.data[n - 4..].try_into().expect("4 bytes"));
        let computed = crc32fast::hash(&self.data[..n - 4]);
        if stored != computed {
            return Err(FormatError::Checksum { stored, computed });
        }
        Ok(())
    }

    fn payload_end(&self) -> usize {
        self.data.len() - 4
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        if self.pos + n > self.payload_end() {
            return Err(FormatError::Truncated);
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn f64(&mut self) -> Result<f64, FormatError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>, FormatError> {
        let bytes = self.take(n.checked_mul(8).ok_or(FormatError::Truncated)?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    pub fn arm_spec(&mut self) -> Result<ArmSpec, FormatError> {
        let code = self.u32()?;
        let variant = Variant::from_code(code).ok_or_else(|| FormatError::Invalid(format!("unknown variant code {code}")))?;
        let spec = ArmSpec {
            variant,
            n_joints: self.u32()? as usize,
            tilt_max: self.f64()?,
            stretch_max: self.f64()?,
            base_height: self.f64()?,
            gear_radius: self.f64()?,
        };
        spec.validate().map_err(|e| FormatError::Invalid(e.to_string()))?;
        Ok(spec)
    }

    pub fn finish(self) -> Result<(), FormatError> {
        if self.pos != self.payload_end() {
            return Err(FormatError::Invalid(format!(
                "{} unexpected trailing bytes",
                self.payload_end() - self.pos
            )));
        }
        Ok(())
    }
}

/// Stable 32-bit fingerprint of an arm spec's serialized form.
pub fn spec_fingerprint(spec: &ArmSpec) -> u32 {
    let mut w = Writer::default();
    w.arm_spec(spec);
    crc32fast::hash(&w.buf)
}
