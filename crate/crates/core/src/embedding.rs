//! Pre-trained word and entity vectors.
//!
//! Text format: one `token v1 .. v_dim` line per vector, whitespace separated,
//! with an optional word2vec `count dim` header line.
//!
//! Binary cache format, little-endian:
//!
//! ```text
//! magic   b"CEMB"
//! version u32 (= 1)
//! dim     u32
//! count   u64           rows excluding the pad row
//! tokens  count x (u32 byte length, utf-8 bytes)
//! rows    count x dim x f64
//! ```

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};

pub const PAD_TOKEN: &str = "<pad>";

const CACHE_MAGIC: &[u8; 4] = b"CEMB";
const CACHE_VERSION: u32 = 1;

/// Dense vectors indexed by token. Row 0 is the all-zero padding row, which
/// also serves every out-of-vocabulary lookup.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn new(dim: usize) -> Self {
        EmbeddingMatrix {
            dim,
            tokens: vec![PAD_TOKEN.to_owned()],
            index: HashMap::new(),
            data: vec![0.0; dim],
        }
    }

    /// Appends a row; returns false and keeps the existing row if the token is taken.
    pub fn push(&mut self, token: &str, row: &[f64]) -> Result<bool> {
        if row.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                found: row.len(),
            });
        }
        if token == PAD_TOKEN || self.index.contains_key(token) {
            return Ok(false);
        }
        self.index.insert(token.to_owned(), self.tokens.len());
        self.tokens.push(token.to_owned());
        self.data.extend_from_slice(row);
        Ok(true)
    }

    pub fn from_rows<S: AsRef<str>>(dim: usize, rows: impl IntoIterator<Item = (S, Vec<f64>)>) -> Result<Self> {
        let mut m = EmbeddingMatrix::new(dim);
        for (t, r) in rows {
            m.push(t.as_ref(), &r)?;
        }
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of rows including the pad row.
    pub fn rows(&self) -> usize {
        self.tokens.len()
    }

    /// Number of stored vectors, excluding the pad row.
    pub fn len(&self) -> usize {
        self.tokens.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, row: usize) -> &str {
        &self.tokens[row]
    }

    pub fn row_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.dim..(row + 1) * self.dim]
    }

    pub fn row_mut(&mut self, row: usize) -> &mut [f64] {
        &mut self.data[row * self.dim..(row + 1) * self.dim]
    }

    /// The stored vector, or the zero vector for unknown tokens.
    pub fn lookup(&self, token: &str) -> &[f64] {
        self.row(self.row_of(token).unwrap_or(0))
    }

    /// Flat row-major storage, pad row first.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// All rows after the pad row, flat and row-major.
    pub fn vectors_mut(&mut self) -> &mut [f64] {
        &mut self.data[self.dim..]
    }

    /// A matrix whose row `i` holds the vector for vocabulary id `i`.
    /// Tokens without a vector keep a zero row.
    pub fn aligned(&self, vocab: &Vocabulary) -> EmbeddingMatrix {
        let mut out = EmbeddingMatrix::new(self.dim);
        for token in vocab.tokens_by_id().into_iter().skip(1) {
            out.index.insert(token.to_owned(), out.tokens.len());
            out.tokens.push(token.to_owned());
            out.data.extend_from_slice(self.lookup(token));
        }
        out
    }

    pub fn save_text(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
            for r in 1..self.rows() {
                w.write_all(self.tokens[r].as_bytes())?;
                for v in self.row(r) {
                    write!(w, " {v}")?;
                }
                w.write_all(b"\n")?;
            }
            w.flush()
        };
        write(&mut w).map_err(|e| Error::io(path, e))
    }

    pub fn write_cache<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(CACHE_MAGIC)?;
        w.write_all(&CACHE_VERSION.to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        for t in &self.tokens[1..] {
            w.write_all(&(t.len() as u32).to_le_bytes())?;
            w.write_all(t.as_bytes())?;
        }
        for v in &self.data[self.dim..] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()
    }

    pub fn read_cache<R: Read>(mut r: R) -> Result<Self> {
        let corrupt = |what: &str| Error::Validation(format!("embedding cache: {what}"));
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| corrupt("truncated header"))?;
        if &magic != CACHE_MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = read_u32(&mut r).map_err(|_| corrupt("truncated header"))?;
        if version != CACHE_VERSION {
            return Err(corrupt(&format!("unsupported version {version}")));
        }
        let dim = read_u32(&mut r).map_err(|_| corrupt("truncated header"))? as usize;
        let count = read_u64(&mut r).map_err(|_| corrupt("truncated header"))? as usize;
        let mut m = EmbeddingMatrix::new(dim);
        let mut tokens = Vec::with_capacity(count.min(1 << 24));
        for _ in 0..count {
            let len = read_u32(&mut r).map_err(|_| corrupt("truncated token table"))? as usize;
            let mut buf = vec![0u8; len];
            r.read_exact(&mut buf).map_err(|_| corrupt("truncated token table"))?;
            tokens.push(String::from_utf8(buf).map_err(|_| corrupt("token is not utf-8"))?);
        }
        let mut buf = [0u8; 8];
        let mut row = vec![0.0; dim];
        for t in tokens {
            for v in row.iter_mut() {
                r.read_exact(&mut buf).map_err(|_| corrupt("truncated rows"))?;
                *v = f64::from_le_bytes(buf);
            }
            if !m.push(&t, &row)? {
                return Err(corrupt(&format!("duplicate token `{t}`")));
            }
        }
        Ok(m)
    }

    pub fn save_cache(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_cache(BufWriter::new(file)).map_err(|e| Error::io(path, e))
    }

    pub fn load_cache(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_cache(BufReader::new(file))
    }
}

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Parses the whitespace text format. `source` labels error locations.
pub fn read_embeddings<R: BufRead>(reader: R, source: &str, expected_dim: Option<usize>) -> Result<EmbeddingMatrix> {
    let mut m: Option<EmbeddingMatrix> = expected_dim.map(EmbeddingMatrix::new);
    let mut row = Vec::new();
    let mut first = true;
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(source, e))?;
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else { continue };
        let rest: Vec<&str> = fields.collect();
        if first {
            first = false;
            if rest.len() == 1 && token.parse::<u64>().is_ok() && rest[0].parse::<u64>().is_ok() {
                continue;
            }
        }
        row.clear();
        for f in &rest {
            let v: f64 = f.parse().map_err(|_| {
                Error::parse(format!("{source}:{lineno}"), format!("non-numeric field `{f}`"))
            })?;
            row.push(v);
        }
        let m = m.get_or_insert_with(|| EmbeddingMatrix::new(row.len()));
        if row.len() != m.dim || row.is_empty() {
            return Err(Error::parse(
                format!("{source}:{lineno}"),
                format!("expected {} values, found {}", m.dim, row.len()),
            ));
        }
        if !m.push(token, &row)? {
            warn!("{source}:{lineno}: duplicate token `{token}` ignored");
        }
    }
    m.ok_or_else(|| Error::Validation(format!("{source}: no vectors found")))
}

pub fn load_embeddings(path: &Path, expected_dim: Option<usize>) -> Result<EmbeddingMatrix> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_embeddings(BufReader::new(file), &path.display().to_string(), expected_dim)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CosineDistance {
    pub value: f64,
    /// Set when either vector has zero norm and the value is the convention 1.
    pub degenerate: bool,
}

/// `1 - x.y / (|x| |y|)`, clamped to [0, 2]; 1 when either norm is zero.
pub fn cosine_distance(x: &[f64], y: &[f64]) -> Result<CosineDistance> {
    if x.len() != y.len() {
        return Err(Error::Dimension {
            expected: x.len(),
            found: y.len(),
        });
    }
    let (mut dot, mut xx, mut yy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        dot += a * b;
        xx += a * a;
        yy += b * b;
    }
    if xx == 0.0 || yy == 0.0 {
        return Ok(CosineDistance {
            value: 1.0,
            degenerate: true,
        });
    }
    // a single square root keeps d(x, x) = 0 and d(x, -x) = 2 exact
    let value = (1.0 - dot / (xx * yy).sqrt()).clamp(0.0, 2.0);
    Ok(CosineDistance {
        value,
        degenerate: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub fraction: f64,
    pub covered: usize,
    pub total: usize,
    pub missing: Vec<String>,
}

pub fn coverage<S: AsRef<str>>(m: &EmbeddingMatrix, vocabulary: &[S]) -> Result<Coverage> {
    if vocabulary.is_empty() {
        return Err(Error::Validation("vocabulary is empty".into()));
    }
    let missing: Vec<String> = vocabulary
        .iter()
        .map(AsRef::as_ref)
        .filter(|t| !m.contains(t))
        .map(str::to_owned)
        .collect();
    let total = vocabulary.len();
    let covered = total - missing.len();
    Ok(Coverage {
        fraction: covered as f64 / total as f64,
        covered,
        total,
        missing,
    })
}
