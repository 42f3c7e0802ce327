//! Binary output frames.
//!
//! Layout, all little-endian:
//!
//! ```text
//! b"PQGF"  u32 version  u32 nx  u32 ny  u32 nz  f64 time  u32 nfields
//! nfields × (u32 name length, UTF-8 name)
//! nfields × (nz·ny·nx f64 values, x fastest)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array3;

use crate::dynamics::{DiagnosticState, PrognosticState};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PQGF";
pub const VERSION: u32 = 1;

/// Field order written by [`Frame::from_state`].
pub const FIELD_ORDER: [&str; 13] = [
    "pv_anomaly",
    "m",
    "phi",
    "u",
    "v",
    "zeta",
    "theta",
    "theta_e",
    "q_v",
    "q_c",
    "q_r",
    "w",
    "saturated",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub time: f64,
    pub fields: Vec<(String, Array3<f64>)>,
}

impl Frame {
    pub fn from_state(s: &PrognosticState, d: &DiagnosticState) -> Frame {
        let saturated = ndarray::Zip::from(&d.q_v)
            .and(&d.q_vs)
            .map_collect(|&v, &qs| if v >= qs { 1.0 } else { 0.0 });
        let w = d.w.clone().unwrap_or_else(|| Array3::zeros(s.q.raw_dim()));
        let values = [
            s.q.clone(),
            s.m.clone(),
            d.phi.clone(),
            d.u.clone(),
            d.v.clone(),
            d.zeta.clone(),
            d.theta.clone(),
            d.theta_e.clone(),
            d.q_v.clone(),
            d.q_c.clone(),
            d.q_r.clone(),
            w,
            saturated,
        ];
        Frame {
            time: s.t,
            fields: FIELD_ORDER.iter().map(|n| n.to_string()).zip(values).collect(),
        }
    }

    pub fn field(&self, name: &str) -> Option<&Array3<f64>> {
        self.fields.iter().find(|(n, _)| n == name).map(|(_, f)| f)
    }

    fn shape(&self) -> Result<(usize, usize, usize)> {
        let first = self.fields.first().ok_or_else(|| Error::Format("frame has no fields".into()))?;
        let dim = first.1.dim();
        if self.fields.iter().any(|(_, f)| f.dim() != dim) {
            return Err(Error::Format("fields have inconsistent grids".into()));
        }
        Ok(dim)
    }

    pub fn encode(&self, out: &mut impl Write) -> Result<()> {
        let (nz, ny, nx) = self.shape()?;
        out.write_all(MAGIC)?;
        out.write_u32::<LittleEndian>(VERSION)?;
        for n in [nx, ny, nz] {
            out.write_u32::<LittleEndian>(n as u32)?;
        }
        out.write_f64::<LittleEndian>(self.time)?;
        out.write_u32::<LittleEndian>(self.fields.len() as u32)?;
        for (name, _) in &self.fields {
            out.write_u32::<LittleEndian>(name.len() as u32)?;
            out.write_all(name.as_bytes())?;
        }
        for (_, f) in &self.fields {
            for &v in f.iter() {
                out.write_f64::<LittleEndian>(v)?;
            }
        }
        Ok(())
    }

    pub fn decode(input: &mut impl Read) -> Result<Frame> {
        let truncated = |e: std::io::Error| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::Format("truncated frame".into())
            } else {
                Error::Io(e)
            }
        };
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic).map_err(truncated)?;
        if &magic != MAGIC {
            return Err(Error::Format(format!("bad magic bytes {magic:?}")));
        }
        let version = input.read_u32::<LittleEndian>().map_err(truncated)?;
        if version != VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                expected: VERSION,
            });
        }
        let mut dims = [0usize; 3];
        for d in &mut dims {
            *d = input.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        }
        let [nx, ny, nz] = dims;
        let time = input.read_f64::<LittleEndian>().map_err(truncated)?;
        let count = input.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        let mut names = Vec::with_capacity(count);
        for _ in 0..count {
            let len = input.read_u32::<LittleEndian>().map_err(truncated)? as usize;
            let mut bytes = vec![0u8; len];
            input.read_exact(&mut bytes).map_err(truncated)?;
            names.push(String::from_utf8(bytes).map_err(|_| Error::Format("field name is not UTF-8".into()))?);
        }
        let mut fields = Vec::with_capacity(count);
        for name in names {
            let mut values = vec![0.0; nx * ny * nz];
            input.read_f64_into::<LittleEndian>(&mut values).map_err(truncated)?;
            let field = Array3::from_shape_vec((nz, ny, nx), values).map_err(|e| Error::Format(e.to_string()))?;
            fields.push((name, field));
        }
        Ok(Frame { time, fields })
    }
}

pub fn write_frame(frame: &Frame, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    frame.encode(&mut out)?;
    out.flush()?;
    Ok(())
}

pub fn read_frame(path: &Path) -> Result<Frame> {
    Frame::decode(&mut BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Frame {
        Frame {
            time: 1234.5,
            fields: vec![
                ("a".into(), Array3::from_shape_fn((2, 3, 4), |(k, j, i)| (k * 100 + j * 10 + i) as f64 * 0.1)),
                ("b".into(), Array3::from_elem((2, 3, 4), f64::MIN_POSITIVE)),
            ],
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let f = sample();
        let mut buf = Vec::new();
        f.encode(&mut buf).unwrap();
        let back = Frame::decode(&mut buf.as_slice()).unwrap();
        assert_eq!(back.time.to_bits(), f.time.to_bits());
        for ((n1, a), (n2, b)) in f.fields.iter().zip(&back.fields) {
            assert_eq!(n1, n2);
            assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn x_varies_fastest() {
        let mut buf = Vec::new();
        sample().encode(&mut buf).unwrap();
        let header = 4 + 4 + 12 + 8 + 4 + (4 + 1) * 2;
        let second = f64::from_le_bytes(buf[header + 8..header + 16].try_into().unwrap());
        assert_eq!(second, 0.1);
    }

    #[test]
    fn version_bump_rejected() {
        let mut buf = Vec::new();
        sample().encode(&mut buf).unwrap();
        buf[4] = 2;
        assert!(matches!(
            Frame::decode(&mut buf.as_slice()),
            Err(Error::UnsupportedVersion { found: 2, expected: 1 })
        ));
    }

    #[test]
    fn truncation_detected() {
        let mut buf = Vec::new();
        sample().encode(&mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(Frame::decode(&mut buf.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn bad_magic_rejected() {
        let mut buf = Vec::new();
        sample().encode(&mut buf).unwrap();
        buf[0] = b'X';
        assert!(matches!(Frame::decode(&mut buf.as_slice()), Err(Error::Format(_))));
    }
}
