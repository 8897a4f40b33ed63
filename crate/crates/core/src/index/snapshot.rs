//! Binary snapshot format.
//!
//! All integers little-endian. Strings are a `u32` byte length followed by UTF-8.
//!
//! ```text
//! header  "CVCH" | version u32 | dim u32 | count u64 | lambda f64 | encoder_id str
//! entry   id u64 | dim x f32 | response_text str | audio_ref str (len 0 = none)
//!         | source u8 | created_at i64
//! trailer crc32 u32 over every preceding byte
//! ```

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Inner, Record, StoreMeta, VectorStore};
use crate::embedding::UNIT_NORM_TOLERANCE;
use crate::error::{Error, Result};
use crate::index::EntrySource;

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"CVCH";
pub const SNAPSHOT_VERSION: u32 = 1;

/// Longest string accepted when reading, guarding against corrupt length fields.
const MAX_STRING_BYTES: u32 = 64 * 1024 * 1024;

struct CrcWriter<W> {
    inner: W,
    hasher: crc32fast::Hasher,
}

impl<W: Write> Write for CrcWriter<W> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.hasher.update(&buf[..n]);
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

struct CrcReader<R> {
    inner: R,
    hasher: crc32fast::Hasher,
}

impl<R: Read> Read for CrcReader<R> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.hasher.update(&buf[..n]);
        Ok(n)
    }
}

fn write_str(w: &mut impl Write, s: &str) -> io::Result<()> {
    let len = u32::try_from(s.len()).map_err(|_| io::Error::other("string too long"))?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(s.as_bytes())
}

fn truncated(e: io::Error) -> Error {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        Error::Format("file is truncated".into())
    } else {
        Error::Io(e)
    }
}

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(truncated)?;
    Ok(buf)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    Ok(u64::from_le_bytes(read_array(r)?))
}

fn read_str(r: &mut impl Read) -> Result<String> {
    let len = read_u32(r)?;
    if len > MAX_STRING_BYTES {
        return Err(Error::Format(format!("string length {len} exceeds limit")));
    }
    let mut buf = vec![0u8; len as usize];
    r.read_exact(&mut buf).map_err(truncated)?;
    String::from_utf8(buf).map_err(|_| Error::Format("string is not UTF-8".into()))
}

impl VectorStore {
    /// Writes the store to `path` (via a temporary file and rename).
    pub fn save_snapshot(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        {
            let file = File::create(&tmp)?;
            let mut w = CrcWriter {
                inner: BufWriter::new(file),
                hasher: crc32fast::Hasher::new(),
            };
            self.write_to(&mut w)?;
            let crc = w.hasher.finalize();
            let mut inner = w.inner;
            inner.write_all(&crc.to_le_bytes())?;
            inner.flush()?;
            inner.get_ref().sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let inner = self.inner.read();
        let dim = u32::try_from(self.meta.dim).map_err(|_| Error::invalid("dimension exceeds u32"))?;
        w.write_all(SNAPSHOT_MAGIC)?;
        w.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
        w.write_all(&dim.to_le_bytes())?;
        w.write_all(&(inner.records.len() as u64).to_le_bytes())?;
        w.write_all(&self.meta.lambda.to_le_bytes())?;
        write_str(w, &self.meta.encoder_id)?;
        for (row, rec) in inner.vectors.chunks_exact(self.meta.dim).zip(&inner.records) {
            w.write_all(&rec.id.to_le_bytes())?;
            for v in row {
                w.write_all(&v.to_le_bytes())?;
            }
            write_str(w, &rec.response_text)?;
            write_str(w, rec.audio_ref.as_deref().unwrap_or(""))?;
            w.write_all(&[rec.source.to_byte()])?;
            w.write_all(&rec.created_at.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn load_snapshot(path: impl AsRef<Path>) -> Result<Self> {
        let file = File::open(path)?;
        let mut r = CrcReader {
            inner: BufReader::new(file),
            hasher: crc32fast::Hasher::new(),
        };
        let store = Self::read_from(&mut r)?;
        let computed = r.hasher.finalize();
        let mut rest = r.inner;
        let stored = read_u32(&mut rest)?;
        if stored != computed {
            return Err(Error::Format(format!(
                "checksum mismatch: stored {stored:08x}, computed {computed:08x}"
            )));
        }
        let mut extra = [0u8; 1];
        if rest.read(&mut extra)? != 0 {
            return Err(Error::Format("trailing bytes after checksum".into()));
        }
        Ok(store)
    }

    /// Loads a snapshot and requires its dimension to be `expected_dim`.
    pub fn load_snapshot_with_dim(path: impl AsRef<Path>, expected_dim: usize) -> Result<Self> {
        let store = Self::load_snapshot(path)?;
        if store.dim() != expected_dim {
            return Err(Error::DimensionMismatch {
                expected: expected_dim,
                actual: store.dim(),
            });
        }
        Ok(store)
    }

    /// Reads only the header fields.
    pub fn read_snapshot_header(path: impl AsRef<Path>) -> Result<(StoreMeta, u64)> {
        let mut r = BufReader::new(File::open(path)?);
        read_header(&mut r)
    }

    fn read_from(r: &mut impl Read) -> Result<Self> {
        let (meta, count) = read_header(r)?;
        let dim = meta.dim;
        let cap = usize::try_from(count).unwrap_or(usize::MAX).min(1 << 16);
        let mut inner = Inner {
            vectors: Vec::with_capacity(cap * dim),
            records: Vec::with_capacity(cap),
            next_id: 0,
        };
        let mut row = vec![0u8; dim * 4];
        for i in 0..count {
            let id = read_u64(r)?;
            if i > 0 && id < inner.next_id {
                return Err(Error::Format(format!("entry ids not increasing at {id}")));
            }
            r.read_exact(&mut row).map_err(truncated)?;
            let start = inner.vectors.len();
            inner.vectors.extend(
                row.chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])),
            );
            let values = &inner.vectors[start..];
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Format(format!("entry {id} has non-finite values")));
            }
            let norm = values.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
                return Err(Error::Format(format!("entry {id} is not unit norm")));
            }
            let response_text = read_str(r)?;
            let audio_ref = Some(read_str(r)?).filter(|a| !a.is_empty());
            let [b] = read_array::<1>(r)?;
            let source = EntrySource::from_byte(b).ok_or_else(|| Error::Format(format!("unknown entry source {b}")))?;
            let created_at = i64::from_le_bytes(read_array(r)?);
            inner.records.push(Record {
                id,
                response_text,
                audio_ref,
                source,
                created_at,
            });
            inner.next_id = id + 1;
        }
        Ok(VectorStore {
            meta,
            inner: parking_lot::RwLock::new(inner),
        })
    }
}

fn read_header(r: &mut impl Read) -> Result<(StoreMeta, u64)> {
    let magic: [u8; 4] = read_array(r)?;
    if &magic != SNAPSHOT_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let version = read_u32(r)?;
    if version != SNAPSHOT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let dim = read_u32(r)? as usize;
    if dim == 0 {
        return Err(Error::Format("dimension is zero".into()));
    }
    let count = read_u64(r)?;
    let lambda = f64::from_le_bytes(read_array(r)?);
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::Format(format!("invalid lambda {lambda}")));
    }
    let encoder_id = read_str(r)?;
    Ok((
        StoreMeta {
            dim,
            lambda,
            encoder_id,
        },
        count,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::Embedding;
    use crate::index::NewEntry;

    fn sample_store() -> VectorStore {
        let store = VectorStore::new(2, 0.25, "enc").unwrap();
        let e = Embedding::from_f64_normalized(&[3.0, 4.0]).unwrap();
        store
            .append(
                NewEntry::new(e.clone(), "héllo", EntrySource::Seeded)
                    .with_audio_ref("clip-1")
                    .with_created_at(1_700_000_000),
            )
            .unwrap();
        store
            .append(NewEntry::new(e, "bye", EntrySource::Generated).with_created_at(-5))
            .unwrap();
        store
    }

    fn bytes_of(store: &VectorStore) -> Vec<u8> {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.cvch");
        store.save_snapshot(&p).unwrap();
        fs::read(p).unwrap()
    }

    #[test]
    fn layout_is_bit_exact() {
        let bytes = bytes_of(&sample_store());
        let mut want = Vec::new();
        want.extend_from_slice(b"CVCH");
        want.extend_from_slice(&1u32.to_le_bytes());
        want.extend_from_slice(&2u32.to_le_bytes());
        want.extend_from_slice(&2u64.to_le_bytes());
        want.extend_from_slice(&0.25f64.to_le_bytes());
        want.extend_from_slice(&3u32.to_le_bytes());
        want.extend_from_slice(b"enc");
        want.extend_from_slice(&0u64.to_le_bytes());
        want.extend_from_slice(&0.6f32.to_le_bytes());
        want.extend_from_slice(&0.8f32.to_le_bytes());
        want.extend_from_slice(&6u32.to_le_bytes());
        want.extend_from_slice("héllo".as_bytes());
        want.extend_from_slice(&6u32.to_le_bytes());
        want.extend_from_slice(b"clip-1");
        want.push(0);
        want.extend_from_slice(&1_700_000_000i64.to_le_bytes());
        want.extend_from_slice(&1u64.to_le_bytes());
        want.extend_from_slice(&0.6f32.to_le_bytes());
        want.extend_from_slice(&0.8f32.to_le_bytes());
        want.extend_from_slice(&3u32.to_le_bytes());
        want.extend_from_slice(b"bye");
        want.extend_from_slice(&0u32.to_le_bytes());
        want.push(1);
        want.extend_from_slice(&(-5i64).to_le_bytes());
        let crc = crc32fast::hash(&want);
        want.extend_from_slice(&crc.to_le_bytes());
        assert_eq!(bytes, want);
    }

    #[test]
    fn round_trip_preserves_entries() {
        let store = sample_store();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.cvch");
        store.save_snapshot(&p).unwrap();
        let back = VectorStore::load_snapshot(&p).unwrap();
        assert_eq!(back.meta(), store.meta());
        assert_eq!(back.entries(), store.entries());
        // New ids continue after the loaded ones.
        let e = Embedding::from_f64_normalized(&[1.0, 0.0]).unwrap();
        assert_eq!(back.append(NewEntry::new(e, "x", EntrySource::Generated)).unwrap(), 2);
    }

    #[test]
    fn empty_round_trip() {
        let store = VectorStore::new(16, 0.5, "e").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.cvch");
        store.save_snapshot(&p).unwrap();
        let back = VectorStore::load_snapshot(&p).unwrap();
        assert!(back.is_empty());
        assert_eq!(back.dim(), 16);
    }

    fn load_bytes(bytes: &[u8]) -> Result<VectorStore> {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.cvch");
        fs::write(&p, bytes).unwrap();
        VectorStore::load_snapshot(&p)
    }

    #[test]
    fn corruption_is_format_error() {
        let good = bytes_of(&sample_store());

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(matches!(load_bytes(&bad_magic), Err(Error::Format(_))));

        let mut bad_version = good.clone();
        bad_version[4] = 9;
        assert!(matches!(load_bytes(&bad_version), Err(Error::Format(_))));

        let mut flipped = good.clone();
        let mid = good.len() / 2;
        flipped[mid] ^= 0x01;
        assert!(matches!(load_bytes(&flipped), Err(Error::Format(_))));

        assert!(matches!(load_bytes(&good[..good.len() - 3]), Err(Error::Format(_))));

        let mut extra = good.clone();
        extra.push(0);
        assert!(matches!(load_bytes(&extra), Err(Error::Format(_))));
    }

    #[test]
    fn expected_dim_is_enforced() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.cvch");
        sample_store().save_snapshot(&p).unwrap();
        assert!(matches!(
            VectorStore::load_snapshot_with_dim(&p, 3),
            Err(Error::DimensionMismatch { expected: 3, actual: 2 })
        ));
        let (meta, count) = VectorStore::read_snapshot_header(&p).unwrap();
        assert_eq!((meta.dim, count, meta.encoder_id.as_str()), (2, 2, "enc"));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            VectorStore::load_snapshot("/nonexistent/dir/file.cvch"),
            Err(Error::Io(_))
        ));
    }
}
