//! Raw float32 array records: `"MSAB"`, version, then `N, T, d` as u32 LE,
//! followed by `N*T*d` little-endian f32 values in row-major order.

use std::io::{Read, Write};

pub(crate) const MAGIC: &[u8; 4] = b"MSAB";
pub(crate) const VERSION: u32 = 1;
pub(crate) const HEADER_LEN: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Header {
    pub n: usize,
    pub t: usize,
    pub d: usize,
}

impl Header {
    pub fn numel(&self) -> usize {
        self.n * self.t * self.d
    }
}

#[derive(Debug)]
pub(crate) enum RecordError {
    Io(std::io::Error),
    Format(String),
}

impl From<std::io::Error> for RecordError {
    fn from(e: std::io::Error) -> Self {
        RecordError::Io(e)
    }
}

impl std::fmt::Display for RecordError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RecordError::Io(e) => write!(f, "{e}"),
            RecordError::Format(m) => f.write_str(m),
        }
    }
}

pub(crate) fn write_record<W: Write>(w: &mut W, header: Header, data: &[f32]) -> std::io::Result<()> {
    debug_assert_eq!(data.len(), header.numel());
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * data.len());
    buf.extend_from_slice(MAGIC);
    for v in [VERSION as usize, header.n, header.t, header.d] {
        let v = u32::try_from(v).map_err(|_| {
            std::io::Error::new(std::io::ErrorKind::InvalidInput, "dimension exceeds u32")
        })?;
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for x in data {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&buf)
}

pub(crate) fn read_header<R: Read>(r: &mut R) -> Result<Header, RecordError> {
    let mut raw = [0u8; HEADER_LEN];
    r.read_exact(&mut raw).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => RecordError::Format("truncated header".into()),
        _ => RecordError::Io(e),
    })?;
    if &raw[0..4] != MAGIC {
        return Err(RecordError::Format(format!(
            "bad magic {:?} (expected \"MSAB\")",
            String::from_utf8_lossy(&raw[0..4])
        )));
    }
    let word = |i: usize| u32::from_le_bytes(raw[4 * i..4 * i + 4].try_into().unwrap()) as usize;
    let version = word(1);
    if version != VERSION as usize {
        return Err(RecordError::Format(format!("unsupported version {version}")));
    }
    Ok(Header {
        n: word(2),
        t: word(3),
        d: word(4),
    })
}

pub(crate) fn read_payload<R: Read>(r: &mut R, header: Header) -> Result<Vec<f32>, RecordError> {
    let mut bytes = vec![0u8; header.numel() * 4];
    r.read_exact(&mut bytes).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => RecordError::Format(format!(
            "payload shorter than header shape {}x{}x{}",
            header.n, header.t, header.d
        )),
        _ => RecordError::Io(e),
    })?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}
