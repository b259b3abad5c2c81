//! Versioned checkpoint container.
//!
//! Layout (all integers little-endian u64 unless noted):
//!
//! ```text
//! magic   8 bytes  b"ADAVID1\n"
//! u64     config length, followed by that many bytes of canonical
//!         key=value text (sorted keys)
//! u64     blob count; per blob: u64 name length, name bytes,
//!         u64 data length, data bytes
//! u64     tensor count; per tensor: u64 name length, name bytes,
//!         u64 rows, u64 cols, rows*cols little-endian f64 values
//! ```
//!
//! Tensors are stored in parameter-store registration order; blobs in
//! insertion order. Writing the same state twice produces identical
//! bytes.

use crate::config::ConfigMap;
use crate::error::{Error, Result};
use crate::tensor::ParamStore;
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"ADAVID1\n";

#[derive(Debug, Clone, Default)]
pub struct Checkpoint {
    pub config: ConfigMap,
    pub blobs: Vec<(String, Vec<u8>)>,
    pub tensors: Vec<(String, usize, usize, Vec<f64>)>,
}

impl Checkpoint {
    pub fn new(config: ConfigMap) -> Self {
        Checkpoint {
            config,
            blobs: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn add_blob(&mut self, name: &str, data: Vec<u8>) {
        self.blobs.push((name.to_string(), data));
    }

    pub fn blob(&self, name: &str) -> Option<&[u8]> {
        self.blobs
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, d)| d.as_slice())
    }

    pub fn add_store(&mut self, store: &ParamStore) {
        for (_, p) in store.iter() {
            self.tensors
                .push((p.name.clone(), p.rows, p.cols, p.data.clone()));
        }
    }

    /// Copy tensor values into a store whose parameters were registered
    /// with the same names and shapes. Missing or extra names are errors.
    pub fn restore_store(&self, store: &mut ParamStore) -> Result<()> {
        if self.tensors.len() != store.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} tensors, store expects {}",
                self.tensors.len(),
                store.len()
            )));
        }
        for (name, rows, cols, data) in &self.tensors {
            let found = store
                .iter_mut()
                .find(|(_, p)| &p.name == name)
                .map(|(_, p)| p);
            let p = found.ok_or_else(|| Error::Checkpoint(format!("unknown tensor '{name}'")))?;
            if p.rows != *rows || p.cols != *cols {
                return Err(Error::Checkpoint(format!(
                    "tensor '{name}' is {rows}x{cols}, store expects {}x{}",
                    p.rows, p.cols
                )));
            }
            p.data.copy_from_slice(data);
        }
        Ok(())
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        let cfg = self.config.canonical_text();
        write_u64(w, cfg.len() as u64)?;
        w.write_all(cfg.as_bytes())?;

        write_u64(w, self.blobs.len() as u64)?;
        for (name, data) in &self.blobs {
            write_bytes(w, name.as_bytes())?;
            write_bytes(w, data)?;
        }

        write_u64(w, self.tensors.len() as u64)?;
        for (name, rows, cols, data) in &self.tensors {
            write_bytes(w, name.as_bytes())?;
            write_u64(w, *rows as u64)?;
            write_u64(w, *cols as u64)?;
            for v in data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint(format!(
                "bad magic {:?}; not a checkpoint container",
                String::from_utf8_lossy(&magic)
            )));
        }
        let cfg_len = read_u64(r)? as usize;
        let mut cfg_bytes = vec![0u8; cfg_len];
        r.read_exact(&mut cfg_bytes)?;
        let config = ConfigMap::parse(
            std::str::from_utf8(&cfg_bytes)
                .map_err(|_| Error::Checkpoint("config block is not utf-8".into()))?,
        )?;

        let n_blobs = read_u64(r)? as usize;
        let mut blobs = Vec::with_capacity(n_blobs);
        for _ in 0..n_blobs {
            let name = read_string(r)?;
            let data = read_bytes(r)?;
            blobs.push((name, data));
        }

        let n_tensors = read_u64(r)? as usize;
        let mut tensors = Vec::with_capacity(n_tensors);
        for _ in 0..n_tensors {
            let name = read_string(r)?;
            let rows = read_u64(r)? as usize;
            let cols = read_u64(r)? as usize;
            let mut data = vec![0.0f64; rows * cols];
            let mut buf = [0u8; 8];
            for v in data.iter_mut() {
                r.read_exact(&mut buf)?;
                *v = f64::from_le_bytes(buf);
            }
            tensors.push((name, rows, cols, data));
        }
        Ok(Checkpoint {
            config,
            blobs,
            tensors,
        })
    }

    /// Atomic save: write to a sibling temp file, then rename.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("ckpt.tmp");
        {
            let mut f = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
            self.write_to(&mut f)?;
            f.flush()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut f)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write_to(&mut out)?;
        Ok(out)
    }
}

fn write_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_bytes(w: &mut impl Write, b: &[u8]) -> Result<()> {
    write_u64(w, b.len() as u64)?;
    w.write_all(b)?;
    Ok(())
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_bytes(r: &mut impl Read) -> Result<Vec<u8>> {
    let len = read_u64(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_string(r: &mut impl Read) -> Result<String> {
    String::from_utf8(read_bytes(r)?).map_err(|_| Error::Checkpoint("non-utf8 name".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn sample_checkpoint() -> (Checkpoint, ParamStore) {
        let mut cfg = ConfigMap::new();
        cfg.set("model", "demo");
        cfg.set("seed", 7);
        let mut store = ParamStore::new();
        let mut rng = Rng::new(3);
        store.add_normal("a.w", 3, 4, 1.0, &mut rng);
        store.add_normal("b.w", 2, 2, 1.0, &mut rng);
        let mut ck = Checkpoint::new(cfg);
        ck.add_blob("vocab", b"drawer\t3\n".to_vec());
        ck.add_store(&store);
        (ck, store)
    }

    #[test]
    fn roundtrip_is_exact() {
        let (ck, store) = sample_checkpoint();
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::read_from(&mut bytes.as_slice()).unwrap();
        assert_eq!(back.config.get_str("model"), Some("demo"));
        assert_eq!(back.blob("vocab"), Some(b"drawer\t3\n".as_slice()));

        let mut store2 = store.clone();
        for (_, p) in store2.iter_mut() {
            p.data.iter_mut().for_each(|x| *x = 0.0);
        }
        back.restore_store(&mut store2).unwrap();
        for ((_, a), (_, b)) in store.iter().zip(store2.iter()) {
            assert_eq!(a.data, b.data);
        }
    }

    #[test]
    fn serialization_is_deterministic() {
        let (ck, _) = sample_checkpoint();
        assert_eq!(ck.to_bytes().unwrap(), ck.to_bytes().unwrap());
    }

    #[test]
    fn bad_magic_rejected() {
        let mut bytes = sample_checkpoint().0.to_bytes().unwrap();
        bytes[0] = b'X';
        assert!(matches!(
            Checkpoint::read_from(&mut bytes.as_slice()),
            Err(Error::Checkpoint(_))
        ));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let (ck, _) = sample_checkpoint();
        let mut other = ParamStore::new();
        let mut rng = Rng::new(4);
        other.add_normal("a.w", 4, 3, 1.0, &mut rng); // transposed shape
        other.add_normal("b.w", 2, 2, 1.0, &mut rng);
        assert!(ck.restore_store(&mut other).is_err());
    }
}
