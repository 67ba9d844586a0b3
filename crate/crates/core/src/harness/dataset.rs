//! Binary dataset files.
//!
//! Layout (little endian):
//!
//! ```text
//! b"MOFDSET\0"  u32 version  u32 n  n bytes of TOML header
//! repeated:    u64 n  n bytes of record payload
//! ```
//!
//! A record payload is `u64 index, u64 seed, u32 dim, u32 len`, then `len`
//! vectors of `u32 time, u32 traj_index, u32 sensor, dim x f64`, then the
//! four f64 field-of-view bounds, `u32 n_truth` and `n_truth x 4 f64`.

use std::fs::{File, OpenOptions};
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::TaskSpec;
use super::pipeline::Record;
use crate::dataprep::{InputSequence, InputVector};
use crate::error::{Error, IoContext, Result};
use crate::linalg::State;

pub const MAGIC: &[u8; 8] = b"MOFDSET\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub spec: TaskSpec,
    /// Decimal seed; kept as text so the full `u64` range survives TOML.
    pub seed: String,
    pub stream: String,
    pub group_size: usize,
}

fn format_err(detail: impl Into<String>) -> Error {
    Error::Format {
        what: "dataset",
        detail: detail.into(),
    }
}

pub fn encode_record(r: &Record) -> Vec<u8> {
    let mut b = Vec::with_capacity(32 + r.seq.len() * (12 + 8 * r.seq.dim) + 36 * r.truth.len());
    b.extend_from_slice(&r.index.to_le_bytes());
    b.extend_from_slice(&r.seed.to_le_bytes());
    b.extend_from_slice(&(r.seq.dim as u32).to_le_bytes());
    b.extend_from_slice(&(r.seq.len() as u32).to_le_bytes());
    for v in &r.seq.vectors {
        for x in [v.time, v.traj_index, v.sensor] {
            b.extend_from_slice(&(x as u32).to_le_bytes());
        }
        for x in &v.values {
            b.extend_from_slice(&x.to_le_bytes());
        }
    }
    for x in r.bounds {
        b.extend_from_slice(&x.to_le_bytes());
    }
    b.extend_from_slice(&(r.truth.len() as u32).to_le_bytes());
    for s in &r.truth {
        for x in s.iter() {
            b.extend_from_slice(&x.to_le_bytes());
        }
    }
    b
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| format_err("record payload is truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_record(buf: &[u8]) -> Result<Record> {
    let mut c = Cursor { buf, pos: 0 };
    let index = c.u64()?;
    let seed = c.u64()?;
    let dim = c.u32()? as usize;
    let len = c.u32()? as usize;
    let mut vectors = Vec::with_capacity(len.min(buf.len()));
    for _ in 0..len {
        let time = c.u32()? as usize;
        let traj_index = c.u32()? as usize;
        let sensor = c.u32()? as usize;
        let values = (0..dim).map(|_| c.f64()).collect::<Result<Vec<_>>>()?;
        vectors.push(InputVector {
            values,
            time,
            traj_index,
            sensor,
        });
    }
    let mut bounds = [0.0; 4];
    for b in &mut bounds {
        *b = c.f64()?;
    }
    let n = c.u32()? as usize;
    let mut truth = Vec::with_capacity(n.min(buf.len()));
    for _ in 0..n {
        truth.push(State::new(c.f64()?, c.f64()?, c.f64()?, c.f64()?));
    }
    if c.pos != buf.len() {
        return Err(format_err(format!(
            "{} trailing bytes in record {index}",
            buf.len() - c.pos
        )));
    }
    Ok(Record {
        index,
        seed,
        seq: InputSequence { dim, vectors },
        bounds,
        truth,
    })
}

fn write_header(w: &mut impl Write, header: &DatasetHeader) -> Result<()> {
    let text = toml::to_string(header).map_err(|e| format_err(e.to_string()))?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(text.len() as u32).to_le_bytes())?;
    w.write_all(text.as_bytes())?;
    Ok(())
}

fn read_header(r: &mut impl Read) -> Result<(DatasetHeader, u64)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| format_err("file too short"))?;
    if &magic != MAGIC {
        return Err(format_err("bad magic"));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word).map_err(|_| format_err("file too short"))?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(Error::Version {
            what: "dataset",
            found: version,
            expected: VERSION,
        });
    }
    r.read_exact(&mut word).map_err(|_| format_err("file too short"))?;
    let n = u32::from_le_bytes(word) as usize;
    let mut text = vec![0u8; n];
    r.read_exact(&mut text).map_err(|_| format_err("header is truncated"))?;
    let text = String::from_utf8(text).map_err(|_| format_err("header is not UTF-8"))?;
    let header = toml::from_str(&text).map_err(|e| format_err(format!("header: {e}")))?;
    Ok((header, 16 + n as u64))
}

/// Appends records to a dataset file.
pub struct DatasetWriter {
    out: BufWriter<File>,
    pub header: DatasetHeader,
    pub records: u64,
}

impl DatasetWriter {
    pub fn create(path: &Path, header: DatasetHeader) -> Result<Self> {
        let file = File::create(path).io_context(|| format!("creating {}", path.display()))?;
        let mut out = BufWriter::new(file);
        write_header(&mut out, &header)?;
        Ok(DatasetWriter {
            out,
            header,
            records: 0,
        })
    }

    /// Reopen an interrupted file, dropping any incomplete trailing group.
    /// The stored header must equal `header`.
    pub fn resume(path: &Path, header: DatasetHeader) -> Result<Self> {
        let mut file = OpenOptions::new()
            .read(true)
            .write(true)
            .open(path)
            .io_context(|| format!("opening {}", path.display()))?;
        let (stored, mut offset) = read_header(&mut BufReader::new(&mut file))?;
        if stored != header {
            return Err(Error::Config(format!(
                "{} was generated with a different configuration",
                path.display()
            )));
        }
        let total = file.metadata()?.len();
        let group = header.group_size.max(1) as u64;
        let mut keep = offset;
        let mut count = 0u64;
        file.seek(SeekFrom::Start(offset))?;
        let mut reader = BufReader::new(&mut file);
        loop {
            let mut word = [0u8; 8];
            if reader.read_exact(&mut word).is_err() {
                break;
            }
            let n = u64::from_le_bytes(word);
            if offset + 8 + n > total {
                break;
            }
            reader.seek_relative(n as i64)?;
            offset += 8 + n;
            count += 1;
            if count.is_multiple_of(group) {
                keep = offset;
            }
        }
        drop(reader);
        let records = count - count % group;
        file.set_len(keep)?;
        file.seek(SeekFrom::Start(keep))?;
        Ok(DatasetWriter {
            out: BufWriter::new(file),
            header,
            records,
        })
    }

    pub fn push(&mut self, r: &Record) -> Result<()> {
        if r.index != self.records {
            return Err(Error::InvalidArgument(format!(
                "record {} written at position {}",
                r.index, self.records
            )));
        }
        let payload = encode_record(r);
        self.out.write_all(&(payload.len() as u64).to_le_bytes())?;
        self.out.write_all(&payload)?;
        self.records += 1;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

pub fn read_dataset(path: &Path) -> Result<(DatasetHeader, Vec<Record>)> {
    let file = File::open(path).io_context(|| format!("opening {}", path.display()))?;
    let mut r = BufReader::new(file);
    let (header, _) = read_header(&mut r)?;
    let mut records = Vec::new();
    loop {
        let mut word = [0u8; 8];
        match r.read_exact(&mut word) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        let n = u64::from_le_bytes(word) as usize;
        let mut payload = vec![0u8; n];
        r.read_exact(&mut payload)
            .map_err(|_| format_err(format!("record {} is truncated", records.len())))?;
        let rec = decode_record(&payload)?;
        if rec.index != records.len() as u64 {
            return Err(format_err(format!(
                "record {} stored at position {}",
                rec.index,
                records.len()
            )));
        }
        records.push(rec);
    }
    Ok((header, records))
}
