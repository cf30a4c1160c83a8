//! Bit-exact binary snapshot files.
//!
//! Layout (all little-endian regardless of host):
//!
//! ```text
//! magic   8 bytes  "TDCGL1\0\0"
//! nx      u32
//! ny      u32
//! h       f64
//! z       f64      plane position
//! kind    u8       0 = intensity, 1 = phase, 2 = complex interleaved
//! payload nx*ny f64, row-major; re,im interleaved when kind = 2
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::field_grid::{ComplexField2D, GridSpec, ScalarField2D};

pub const MAGIC: [u8; 8] = *b"TDCGL1\0\0";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SnapshotKind {
    Intensity,
    Phase,
    Complex,
}

impl SnapshotKind {
    fn to_byte(self) -> u8 {
        match self {
            SnapshotKind::Intensity => 0,
            SnapshotKind::Phase => 1,
            SnapshotKind::Complex => 2,
        }
    }

    fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(SnapshotKind::Intensity),
            1 => Some(SnapshotKind::Phase),
            2 => Some(SnapshotKind::Complex),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub enum SnapshotData {
    Scalar(ScalarField2D),
    Complex(ComplexField2D),
}

#[derive(Clone, Debug)]
pub struct Snapshot {
    pub kind: SnapshotKind,
    pub z_position: f64,
    pub data: SnapshotData,
}

impl Snapshot {
    pub fn scalar(kind: SnapshotKind, z_position: f64, field: ScalarField2D) -> Self {
        Self {
            kind,
            z_position,
            data: SnapshotData::Scalar(field),
        }
    }

    pub fn complex(z_position: f64, field: ComplexField2D) -> Self {
        Self {
            kind: SnapshotKind::Complex,
            z_position,
            data: SnapshotData::Complex(field),
        }
    }

    pub fn spec(&self) -> GridSpec {
        match &self.data {
            SnapshotData::Scalar(f) => f.spec(),
            SnapshotData::Complex(f) => f.spec(),
        }
    }

    pub fn scalar_field(&self) -> Option<&ScalarField2D> {
        match &self.data {
            SnapshotData::Scalar(f) => Some(f),
            SnapshotData::Complex(_) => None,
        }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn format_err(path: &Path, why: impl Into<String>) -> Error {
    Error::Format {
        path: path.display().to_string(),
        why: why.into(),
    }
}

pub fn write_snapshot(path: &Path, snap: &Snapshot) -> Result<()> {
    let spec = snap.spec();
    if matches!(snap.kind, SnapshotKind::Complex) != matches!(snap.data, SnapshotData::Complex(_))
    {
        return Err(Error::InvalidParameter {
            what: "snapshot kind",
            why: "complex kind requires complex payload and vice versa".into(),
        });
    }
    let n_values = match &snap.data {
        SnapshotData::Scalar(_) => spec.len(),
        SnapshotData::Complex(_) => 2 * spec.len(),
    };
    let mut buf = Vec::with_capacity(33 + 8 * n_values);
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&(spec.nx() as u32).to_le_bytes());
    buf.extend_from_slice(&(spec.ny() as u32).to_le_bytes());
    buf.extend_from_slice(&spec.h().to_le_bytes());
    buf.extend_from_slice(&snap.z_position.to_le_bytes());
    buf.push(snap.kind.to_byte());
    match &snap.data {
        SnapshotData::Scalar(f) => {
            for v in f.values() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        SnapshotData::Complex(f) => {
            for (re, im) in f.re().values().iter().zip(f.im().values()) {
                buf.extend_from_slice(&re.to_le_bytes());
                buf.extend_from_slice(&im.to_le_bytes());
            }
        }
    }
    let mut file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    file.write_all(&buf).map_err(|e| io_err(path, e))
}

pub fn read_snapshot(path: &Path) -> Result<Snapshot> {
    let mut buf = Vec::new();
    fs::File::open(path)
        .map_err(|e| io_err(path, e))?
        .read_to_end(&mut buf)
        .map_err(|e| io_err(path, e))?;
    if buf.len() < 33 {
        return Err(format_err(path, "truncated header"));
    }
    if buf[..8] != MAGIC {
        return Err(format_err(path, "bad magic"));
    }
    let nx = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
    let ny = u32::from_le_bytes(buf[12..16].try_into().unwrap()) as usize;
    let h = f64::from_le_bytes(buf[16..24].try_into().unwrap());
    let z = f64::from_le_bytes(buf[24..32].try_into().unwrap());
    let kind = SnapshotKind::from_byte(buf[32])
        .ok_or_else(|| format_err(path, format!("unknown kind byte {}", buf[32])))?;
    if nx != ny {
        return Err(format_err(path, format!("non-square grid {nx}x{ny}")));
    }
    let spec = GridSpec::new(nx)
        .map_err(|e| format_err(path, format!("bad grid: {e}")))?;
    if (spec.h() - h).abs() > 1e-12 * spec.h() {
        return Err(format_err(
            path,
            format!("header spacing {h} does not match unit square for nx = {nx}"),
        ));
    }
    let n_values = match kind {
        SnapshotKind::Complex => 2 * spec.len(),
        _ => spec.len(),
    };
    let payload = &buf[33..];
    if payload.len() != 8 * n_values {
        return Err(format_err(
            path,
            format!(
                "payload length {} does not match {} f64 values",
                payload.len(),
                n_values
            ),
        ));
    }
    let mut values = Vec::with_capacity(n_values);
    for chunk in payload.chunks_exact(8) {
        values.push(f64::from_le_bytes(chunk.try_into().unwrap()));
    }
    let data = match kind {
        SnapshotKind::Complex => {
            let mut re = Vec::with_capacity(spec.len());
            let mut im = Vec::with_capacity(spec.len());
            for pair in values.chunks_exact(2) {
                re.push(pair[0]);
                im.push(pair[1]);
            }
            SnapshotData::Complex(ComplexField2D::new(
                ScalarField2D::from_values(spec, re)
                    .map_err(|e| format_err(path, e.to_string()))?,
                ScalarField2D::from_values(spec, im)
                    .map_err(|e| format_err(path, e.to_string()))?,
            )?)
        }
        _ => SnapshotData::Scalar(
            ScalarField2D::from_values(spec, values)
                .map_err(|e| format_err(path, e.to_string()))?,
        ),
    };
    Ok(Snapshot {
        kind,
        z_position: z,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let spec = GridSpec::new(9).unwrap();
        let f = ScalarField2D::from_fn(spec, |x, y| (x * 31.7).sin() + y * 1e-17 + 0.1);
        let path = dir.path().join("a.snap");
        write_snapshot(
            &path,
            &Snapshot::scalar(SnapshotKind::Intensity, 1e-4, f.clone()),
        )
        .unwrap();
        let bytes1 = std::fs::read(&path).unwrap();
        let snap = read_snapshot(&path).unwrap();
        assert_eq!(snap.kind, SnapshotKind::Intensity);
        assert_eq!(snap.z_position, 1e-4);
        let g = snap.scalar_field().unwrap();
        assert_eq!(f.values(), g.values());

        // write what we read: bytes must match exactly
        let path2 = dir.path().join("b.snap");
        write_snapshot(&path2, &snap).unwrap();
        let bytes2 = std::fs::read(&path2).unwrap();
        assert_eq!(bytes1, bytes2);
    }

    #[test]
    fn complex_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = GridSpec::new(7).unwrap();
        let re = ScalarField2D::from_fn(spec, |x, y| x - y);
        let im = ScalarField2D::from_fn(spec, |x, y| x * y + 2.0);
        let psi = ComplexField2D::new(re, im).unwrap();
        let path = dir.path().join("c.snap");
        write_snapshot(&path, &Snapshot::complex(0.5, psi.clone())).unwrap();
        let snap = read_snapshot(&path).unwrap();
        match snap.data {
            SnapshotData::Complex(q) => {
                assert_eq!(q.re().values(), psi.re().values());
                assert_eq!(q.im().values(), psi.im().values());
            }
            _ => panic!("expected complex payload"),
        }
    }

    #[test]
    fn corrupted_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.snap");
        std::fs::write(&path, b"not a snapshot").unwrap();
        assert!(matches!(
            read_snapshot(&path),
            Err(Error::Format { .. })
        ));

        // valid header, wrong payload length
        let spec = GridSpec::new(5).unwrap();
        let f = ScalarField2D::zeros(spec);
        let good = dir.path().join("good.snap");
        write_snapshot(&good, &Snapshot::scalar(SnapshotKind::Phase, 0.0, f)).unwrap();
        let mut bytes = std::fs::read(&good).unwrap();
        bytes.truncate(bytes.len() - 8);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_snapshot(&path), Err(Error::Format { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]

        #[test]
        fn payload_survives_round_trip(z in -1.0f64..1.0, seed in 0u64..100) {
            let dir = tempfile::tempdir().unwrap();
            let spec = GridSpec::new(6).unwrap();
            let f = ScalarField2D::from_fn(spec, |x, y| {
                ((x * 13.0 + seed as f64).sin() * 1e3).mul_add(y, seed as f64 * 1e-8)
            });
            let path = dir.path().join("p.snap");
            write_snapshot(&path, &Snapshot::scalar(SnapshotKind::Phase, z, f.clone())).unwrap();
            let snap = read_snapshot(&path).unwrap();
            prop_assert_eq!(snap.z_position.to_bits(), z.to_bits());
            prop_assert_eq!(snap.scalar_field().unwrap().values(), f.values());
        }
    }
}
