//! Binary checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! | field            | encoding                                         |
//! |------------------|--------------------------------------------------|
//! | magic            | `HAGMNCK\0`                                      |
//! | version          | u32, currently 1                                 |
//! | seed             | u64                                              |
//! | config           | u32 byte length + UTF-8 JSON of the train config |
//! | parameter count  | u32                                              |
//! | per parameter    | name (u32 length + UTF-8), rows u32, cols u32, row-major f64 values |
//! | Adam step        | u64                                              |
//! | Adam moments     | first then second moment for every parameter, each rows u32, cols u32, values |
//! | history length   | u32                                              |
//! | per epoch        | epoch u64, pairs u64, perm f64, tcp f64, total f64 |
//!
//! Writing the same state twice gives identical bytes.

use std::path::Path;

use hagmn_core::net::ModelParams;
use hagmn_core::tensor::{AdamState, DenseMatrix};
use hagmn_core::train::{EpochStats, LossReport, TrainConfig};

use crate::error::{Error, Result};
use crate::io::write_bytes;

pub const MAGIC: &[u8; 8] = b"HAGMNCK\0";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub params: ModelParams,
    pub adam: AdamState,
    pub history: Vec<EpochStats>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&u32::try_from(v).expect("value fits in u32").to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn bytes(&mut self, b: &[u8]) {
        self.u32(b.len());
        self.0.extend_from_slice(b);
    }

    fn matrix(&mut self, m: &DenseMatrix) {
        self.u32(m.rows());
        self.u32(m.cols());
        for &v in m.data() {
            self.f64(v);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::format(self.path, format!("truncated checkpoint at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()?;
        self.take(n)
    }

    fn string(&mut self) -> Result<String> {
        let path = self.path;
        String::from_utf8(self.bytes()?.to_vec()).map_err(|_| Error::format(path, "invalid UTF-8 in checkpoint"))
    }

    fn matrix(&mut self) -> Result<DenseMatrix> {
        let (rows, cols) = (self.u32()?, self.u32()?);
        let len = rows
            .checked_mul(cols)
            .filter(|&l| l.saturating_mul(8) <= self.buf.len() - self.pos)
            .ok_or_else(|| Error::format(self.path, format!("bad tensor shape {rows}x{cols}")))?;
        let data = (0..len).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Ok(DenseMatrix::from_vec(rows, cols, data)?)
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(VERSION as usize);
        w.u64(self.config.seed);
        w.bytes(serde_json::to_string(&self.config).expect("config serializes").as_bytes());
        let store = self.params.store();
        w.u32(store.len());
        for (name, value) in store.iter() {
            w.bytes(name.as_bytes());
            w.matrix(value);
        }
        w.u64(self.adam.step);
        for m in self.adam.first_moment.iter().chain(&self.adam.second_moment) {
            w.matrix(m);
        }
        w.u32(self.history.len());
        for h in &self.history {
            w.u64(h.epoch as u64);
            w.u64(h.pairs as u64);
            w.f64(h.loss.perm);
            w.f64(h.loss.tcp);
            w.f64(h.loss.total);
        }
        w.0
    }

    /// Parses a checkpoint; `path` is only used in error messages.
    pub fn from_bytes(buf: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { buf, pos: 0, path };
        if r.take(8)? != MAGIC {
            return Err(Error::format(path, "not a hagmn checkpoint"));
        }
        let version = r.u32()?;
        if version != VERSION as usize {
            return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
        }
        let seed = r.u64()?;
        let config: TrainConfig = serde_json::from_slice(r.bytes()?).map_err(|e| Error::json(path, e))?;
        if config.seed != seed {
            return Err(Error::format(path, "seed field disagrees with the stored configuration"));
        }
        config.validate()?;
        let mut params = ModelParams::new(config.model_config())?;
        let count = r.u32()?;
        if count != params.store().len() {
            return Err(Error::format(
                path,
                format!("expected {} tensors, found {count}", params.store().len()),
            ));
        }
        for _ in 0..count {
            let name = r.string()?;
            let value = r.matrix()?;
            params.store_mut().assign(&name, value)?;
        }
        let mut adam = AdamState::new(params.store(), config.adam_config());
        adam.step = r.u64()?;
        for k in 0..2 * count {
            let m = r.matrix()?;
            let expect = params.store().iter().nth(k % count).map(|(_, p)| p.shape());
            if Some(m.shape()) != expect {
                return Err(Error::format(path, "optimizer moment shape does not match its parameter"));
            }
            if k < count {
                adam.first_moment[k] = m;
            } else {
                adam.second_moment[k - count] = m;
            }
        }
        let epochs = r.u32()?;
        let mut history = Vec::with_capacity(epochs.min(1 << 16));
        for _ in 0..epochs {
            let epoch = r.u64()? as usize;
            let pairs = r.u64()? as usize;
            let loss = LossReport {
                perm: r.f64()?,
                tcp: r.f64()?,
                total: r.f64()?,
            };
            history.push(EpochStats { epoch, loss, pairs });
        }
        if r.pos != buf.len() {
            return Err(Error::format(path, "trailing bytes after checkpoint"));
        }
        Ok(Self {
            config,
            params,
            adam,
            history,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_bytes(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
