//! Shared text and binary file formats.
//!
//! * Vector text files: `id v1 v2 ... vk` per line (GloVe layout). Used for
//!   word vectors, concept embedding tables and pretrained KG vectors.
//! * Feature files: little-endian `b"OZFT"`, `u32` version, `u64` rows,
//!   `u64` dim, then `f32` values row-major.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::numcore::Tensor;

pub const FEATURE_MAGIC: &[u8; 4] = b"OZFT";
pub const FEATURE_VERSION: u32 = 1;

pub(crate) fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

pub(crate) fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Reads non-empty lines as `(1-based line number, line)`.
pub(crate) fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let reader = open(path)?;
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        out.push((i + 1, line.to_string()));
    }
    Ok(out)
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Ordered `id -> vector` table with a fixed dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorTable {
    dim: usize,
    rows: IndexMap<String, Vec<f64>>,
}

impl VectorTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            rows: IndexMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn insert(&mut self, id: impl Into<String>, v: Vec<f64>) -> Result<()> {
        let id = id.into();
        if v.len() != self.dim {
            return Err(Error::Shape(format!(
                "vector for `{id}` has {} entries, table dimension is {}",
                v.len(),
                self.dim
            )));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("vector for `{id}`")));
        }
        self.rows.insert(id, v);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.rows.get(id).map(Vec::as_slice)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.rows.contains_key(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.rows.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.rows.keys().map(String::as_str)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut table: Option<Self> = None;
        for (ln, line) in read_lines(path)? {
            let mut parts = line.split_whitespace();
            let id = parts.next().expect("non-empty line");
            let values = parts
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::parse(path, ln, format!("bad float: {e}")))?;
            if values.is_empty() {
                return Err(Error::parse(path, ln, "identifier without values"));
            }
            let t = table.get_or_insert_with(|| Self::new(values.len()));
            t.insert(id, values)
                .map_err(|e| Error::parse(path, ln, e.to_string()))?;
        }
        table.ok_or_else(|| Error::parse(path, 0, "empty vector file"))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (id, v) in &self.rows {
            s.push_str(id);
            for x in v {
                s.push(' ');
                s.push_str(&x.to_string());
            }
            s.push('\n');
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_text())
    }
}

pub fn write_features(path: &Path, features: &Tensor) -> Result<()> {
    let mut w = create(path)?;
    let run = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        w.write_all(FEATURE_MAGIC)?;
        w.write_u32::<LittleEndian>(FEATURE_VERSION)?;
        w.write_u64::<LittleEndian>(features.rows() as u64)?;
        w.write_u64::<LittleEndian>(features.cols() as u64)?;
        for &v in features.data() {
            w.write_f32::<LittleEndian>(v as f32)?;
        }
        w.flush()
    };
    run(&mut w).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: &Path) -> Result<Tensor> {
    let mut r = open(path)?;
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
    if &magic != FEATURE_MAGIC {
        return Err(Error::Format(format!(
            "{}: bad magic {magic:?}",
            path.display()
        )));
    }
    let io = |e| Error::io(path, e);
    let version = r.read_u32::<LittleEndian>().map_err(io)?;
    if version != FEATURE_VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported feature file version {version}",
            path.display()
        )));
    }
    let rows = r.read_u64::<LittleEndian>().map_err(io)? as usize;
    let cols = r.read_u64::<LittleEndian>().map_err(io)? as usize;
    let mut data = vec![0f32; rows * cols];
    r.read_f32_into::<LittleEndian>(&mut data).map_err(io)?;
    let mut rest = Vec::new();
    r.read_to_end(&mut rest).map_err(io)?;
    if !rest.is_empty() {
        return Err(Error::Format(format!(
            "{}: {} trailing bytes",
            path.display(),
            rest.len()
        )));
    }
    Tensor::new(rows, cols, data.into_iter().map(f64::from).collect())
}

/// Shapes followed by `f32` data blocks, the body shared by model checkpoints.
pub(crate) fn write_blocks<W: Write>(w: &mut W, tensors: &[&Tensor]) -> std::io::Result<()> {
    w.write_u32::<LittleEndian>(tensors.len() as u32)?;
    for t in tensors {
        w.write_u32::<LittleEndian>(t.rows() as u32)?;
        w.write_u32::<LittleEndian>(t.cols() as u32)?;
    }
    for t in tensors {
        for &v in t.data() {
            w.write_f32::<LittleEndian>(v as f32)?;
        }
    }
    Ok(())
}

/// Inverse of [`write_blocks`]; `expected` is the block count.
pub(crate) fn read_blocks<R: Read>(r: &mut R, path: &Path, expected: usize) -> Result<Vec<Tensor>> {
    let io = |e| Error::io(path, e);
    let count = r.read_u32::<LittleEndian>().map_err(io)? as usize;
    if count != expected {
        return Err(Error::Format(format!(
            "{}: expected {expected} weight blocks, found {count}",
            path.display()
        )));
    }
    let mut shapes = Vec::with_capacity(count);
    for _ in 0..count {
        let rows = r.read_u32::<LittleEndian>().map_err(io)? as usize;
        let cols = r.read_u32::<LittleEndian>().map_err(io)? as usize;
        shapes.push((rows, cols));
    }
    let mut out = Vec::with_capacity(count);
    for (rows, cols) in shapes {
        let mut buf = vec![0f32; rows * cols];
        r.read_f32_into::<LittleEndian>(&mut buf).map_err(io)?;
        out.push(Tensor::new(
            rows,
            cols,
            buf.into_iter().map(f64::from).collect(),
        )?);
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest).map_err(io)?;
    if !rest.is_empty() {
        return Err(Error::Format(format!(
            "{}: {} trailing bytes",
            path.display(),
            rest.len()
        )));
    }
    Ok(out)
}

/// Reads and checks a 4-byte magic and `u32` version.
pub(crate) fn read_header<R: Read>(
    r: &mut R,
    path: &Path,
    magic: &[u8; 4],
    version: u32,
) -> Result<()> {
    let mut m = [0u8; 4];
    r.read_exact(&mut m).map_err(|e| Error::io(path, e))?;
    if &m != magic {
        return Err(Error::Format(format!(
            "{}: bad magic {m:?}",
            path.display()
        )));
    }
    let v = r
        .read_u32::<LittleEndian>()
        .map_err(|e| Error::io(path, e))?;
    if v != version {
        return Err(Error::Format(format!(
            "{}: unsupported version {v}",
            path.display()
        )));
    }
    Ok(())
}

/// One identifier per line.
pub fn read_id_list(path: &Path) -> Result<Vec<String>> {
    Ok(read_lines(path)?
        .into_iter()
        .map(|(_, l)| l.trim().to_string())
        .collect())
}

pub fn write_id_list(path: &Path, ids: &[String]) -> Result<()> {
    let mut s = String::new();
    for id in ids {
        s.push_str(id);
        s.push('\n');
    }
    write_text(path, &s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vector_table_rejects_ragged_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.txt");
        std::fs::write(&p, "a 1 2\nb 3\n").unwrap();
        match VectorTable::read(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn feature_file_rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.bin");
        std::fs::write(&p, b"NOPE\x01\x00\x00\x00").unwrap();
        assert!(matches!(read_features(&p), Err(Error::Format(_))));
    }

    #[test]
    fn feature_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.bin");
        let t = Tensor::new(2, 3, vec![0.5, -1.25, 3.0, 0.0, 1e-3, 7.0]).unwrap();
        write_features(&p, &t).unwrap();
        let back = read_features(&p).unwrap();
        assert_eq!(back.shape(), [2, 3]);
        assert!(back.max_abs_diff(&t) < 1e-6);
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(bytes.len(), 4 + 4 + 8 + 8 + 6 * 4);
    }
}
