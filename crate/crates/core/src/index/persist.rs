//! Little-endian index file: magic, version, config, quantizer, rotation,
//! centroids, per-list codes, external ids, optional raw vectors.

use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use super::{IndexConfig, IvfTqIndex, ListCodes};
use crate::error::{Error, Result};
use crate::lloydmax::ScalarQuantizer;
use crate::partition::CoarsePartition;
use crate::rotation::RotationMatrix;

const MAGIC: &[u8; 4] = b"IVTQ";
const VERSION: u16 = 1;

const FLAG_SIGN: u8 = 1;
const FLAG_RAW: u8 = 2;
const FLAG_FLAT: u8 = 4;

pub(crate) fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::format("file is truncated")
    } else {
        Error::Io(e)
    }
}

pub(crate) fn read_f32s(r: &mut impl Read, n: usize) -> Result<Vec<f32>> {
    let mut v = vec![0.0f32; n];
    r.read_f32_into::<LE>(&mut v).map_err(truncated)?;
    Ok(v)
}

pub(crate) fn read_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut v = vec![0.0f64; n];
    r.read_f64_into::<LE>(&mut v).map_err(truncated)?;
    Ok(v)
}

pub(crate) fn read_bytes(r: &mut impl Read, n: usize) -> Result<Vec<u8>> {
    let mut v = vec![0u8; n];
    r.read_exact(&mut v).map_err(truncated)?;
    Ok(v)
}

/// Guards allocations driven by header fields against corrupt input.
pub(crate) fn check_remaining(cur: &Cursor<&[u8]>, needed: u64) -> Result<()> {
    let left = cur.get_ref().len() as u64 - cur.position();
    if needed > left {
        return Err(Error::format("file is truncated"));
    }
    Ok(())
}

impl IvfTqIndex {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Vec::new();
        self.write_into(&mut w).expect("writing to memory");
        w
    }

    fn write_into(&self, w: &mut Vec<u8>) -> std::io::Result<()> {
        let c = &self.config;
        let q = &self.quantizer;
        w.write_all(MAGIC)?;
        w.write_u16::<LE>(VERSION)?;
        w.write_u32::<LE>(c.dim as u32)?;
        w.write_u8(c.bits as u8)?;
        w.write_u32::<LE>(if c.flat { 0 } else { self.n_lists() as u32 })?;
        let flags = (c.use_sign_bit as u8 * FLAG_SIGN) | (c.keep_raw as u8 * FLAG_RAW) | (c.flat as u8 * FLAG_FLAT);
        w.write_u8(flags)?;
        w.write_u64::<LE>(c.rotation_seed)?;
        w.write_u64::<LE>(c.kmeans_seed)?;
        w.write_u32::<LE>(c.kmeans_iters as u32)?;
        w.write_u64::<LE>(self.added_since_refresh)?;

        w.write_u32::<LE>(q.iterations() as u32)?;
        w.write_f64::<LE>(q.distortion())?;
        w.write_f64::<LE>(q.distortion_sign())?;
        let b = q.boundaries();
        for v in b[1..b.len() - 1].iter().chain(q.centroids()) {
            w.write_f64::<LE>(*v)?;
        }
        for [lo, hi] in q.half_bin_means() {
            w.write_f64::<LE>(*lo)?;
            w.write_f64::<LE>(*hi)?;
        }
        for v in self.rotation.as_slice() {
            w.write_f64::<LE>(*v)?;
        }
        if !c.flat {
            for v in self.partition.centroids() {
                w.write_f32::<LE>(*v)?;
            }
        }
        w.write_u64::<LE>(self.len() as u64)?;
        for (ids, s) in self.partition.lists.iter().zip(&self.store) {
            w.write_u32::<LE>(ids.len() as u32)?;
            for id in ids {
                w.write_u32::<LE>(*id)?;
            }
            w.write_all(&s.codes)?;
            w.write_all(&s.signs)?;
            for n in &s.norms {
                w.write_u16::<LE>(*n)?;
            }
        }
        for id in &self.external_ids {
            w.write_u64::<LE>(*id)?;
        }
        if let Some(raw) = &self.raw {
            for v in raw {
                w.write_f32::<LE>(*v)?;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor::new(bytes);
        let magic = read_bytes(&mut r, 4)?;
        if magic != MAGIC {
            return Err(Error::format("not an IVF-TQ index file (bad magic)"));
        }
        let version = r.read_u16::<LE>().map_err(truncated)?;
        if version != VERSION {
            return Err(Error::format(format!("unsupported index version {version}")));
        }
        let dim = r.read_u32::<LE>().map_err(truncated)? as usize;
        let bits = r.read_u8().map_err(truncated)? as u32;
        let stored_lists = r.read_u32::<LE>().map_err(truncated)? as usize;
        let flags = r.read_u8().map_err(truncated)?;
        let flat = flags & FLAG_FLAT != 0;
        let config = IndexConfig {
            dim,
            bits,
            n_lists: if flat { 1 } else { stored_lists },
            use_sign_bit: flags & FLAG_SIGN != 0,
            keep_raw: flags & FLAG_RAW != 0,
            flat,
            rotation_seed: r.read_u64::<LE>().map_err(truncated)?,
            kmeans_seed: r.read_u64::<LE>().map_err(truncated)?,
            kmeans_iters: r.read_u32::<LE>().map_err(truncated)? as usize,
        };
        let added_since_refresh = r.read_u64::<LE>().map_err(truncated)?;
        config.validate().map_err(|e| Error::format(format!("bad config block: {e}")))?;
        if flat != (stored_lists == 0) {
            return Err(Error::format("list count disagrees with the flat flag"));
        }

        let levels = 1usize << bits;
        let iterations = r.read_u32::<LE>().map_err(truncated)? as usize;
        let distortion = r.read_f64::<LE>().map_err(truncated)?;
        let distortion_sign = r.read_f64::<LE>().map_err(truncated)?;
        let interior = read_f64s(&mut r, levels - 1)?;
        let centroids = read_f64s(&mut r, levels)?;
        let half: Vec<[f64; 2]> = read_f64s(&mut r, 2 * levels)?.chunks_exact(2).map(|p| [p[0], p[1]]).collect();
        let quantizer =
            ScalarQuantizer::from_parts(bits, dim, interior, centroids, half, distortion, distortion_sign, iterations)?;

        check_remaining(&r, (dim * dim * 8) as u64)?;
        let rotation = RotationMatrix::from_parts(dim, config.rotation_seed, read_f64s(&mut r, dim * dim)?)?;

        let n_lists = config.n_lists;
        let partition_centroids = if flat {
            vec![0.0; dim]
        } else {
            check_remaining(&r, (n_lists * dim * 4) as u64)?;
            read_f32s(&mut r, n_lists * dim)?
        };

        let n = r.read_u64::<LE>().map_err(truncated)? as usize;
        let (cb, sb) = (config.code_bytes(), config.sign_bytes());
        let mut lists = Vec::with_capacity(n_lists);
        let mut store = Vec::with_capacity(n_lists);
        let mut locs = vec![(u32::MAX, 0u32); n.min(bytes.len())];
        let mut seen = 0usize;
        for l in 0..n_lists {
            let len = r.read_u32::<LE>().map_err(truncated)? as usize;
            check_remaining(&r, (len * (4 + cb + sb + 2)) as u64)?;
            let mut ids = Vec::with_capacity(len);
            for p in 0..len {
                let id = r.read_u32::<LE>().map_err(truncated)?;
                let slot = locs.get_mut(id as usize).ok_or_else(|| Error::format(format!("list id {id} out of range")))?;
                if slot.0 != u32::MAX {
                    return Err(Error::format(format!("id {id} stored twice")));
                }
                *slot = (l as u32, p as u32);
                ids.push(id);
            }
            let codes = read_bytes(&mut r, len * cb)?;
            let signs = read_bytes(&mut r, len * sb)?;
            let mut norms = vec![0u16; len];
            r.read_u16_into::<LE>(&mut norms).map_err(truncated)?;
            seen += len;
            lists.push(ids);
            store.push(ListCodes { codes, signs, norms });
        }
        if seen != n || locs.len() != n {
            return Err(Error::format(format!("lists hold {seen} vectors but header says {n}")));
        }
        check_remaining(&r, (n * 8) as u64)?;
        let mut external_ids = vec![0u64; n];
        r.read_u64_into::<LE>(&mut external_ids).map_err(truncated)?;
        let raw = if config.keep_raw {
            check_remaining(&r, (n * dim * 4) as u64)?;
            Some(read_f32s(&mut r, n * dim)?)
        } else {
            None
        };
        if (r.position() as usize) != bytes.len() {
            return Err(Error::format("trailing bytes after index data"));
        }

        let partition = CoarsePartition::from_raw_parts(partition_centroids, dim, lists);
        let lut = quantizer.reconstruction_table(config.use_sign_bit);
        Ok(IvfTqIndex { config, quantizer, rotation, partition, store, locs, external_ids, raw, lut, added_since_refresh })
    }
}
