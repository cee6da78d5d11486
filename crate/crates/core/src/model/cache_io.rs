//! Binary persistence for activation caches, with a JSON metadata sidecar.
//!
//! Blob layout (little endian): magic `PLMICACHE1`, precision width byte
//! (4 or 8), `u64` seq_len, `u64` entry count, then per entry a site tag byte,
//! three `u64` indices, a `u64` value count and the values.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ActivationCache, ActivationSite};
use crate::error::{Error, Result};
use crate::scalar::{Precision, Scalar};

const MAGIC: &[u8; 10] = b"PLMICACHE1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptRole {
    Clean,
    Corrupt,
}

/// Identity of a persisted cache.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheKey {
    pub pair_id: String,
    pub role: PromptRole,
    pub site_hash: String,
}

impl CacheKey {
    pub fn new(pair_id: &str, role: PromptRole, sites: &[ActivationSite]) -> Self {
        CacheKey {
            pair_id: pair_id.to_string(),
            role,
            site_hash: site_list_hash(sites),
        }
    }

    fn stem(&self) -> String {
        let role = match self.role {
            PromptRole::Clean => "clean",
            PromptRole::Corrupt => "corrupt",
        };
        format!("{}__{role}__{}", self.pair_id, self.site_hash)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheSidecar {
    pub pair_id: String,
    pub role: PromptRole,
    pub site_hash: String,
    pub precision: Precision,
    pub seq_len: usize,
    pub entries: usize,
    pub sites: Vec<String>,
}

/// Short hex digest of a site list, order-sensitive.
pub fn site_list_hash(sites: &[ActivationSite]) -> String {
    let mut h = Sha256::new();
    for s in sites {
        h.update(s.to_string().as_bytes());
        h.update(b";");
    }
    hex::encode(h.finalize())[..16].to_string()
}

fn site_code(site: &ActivationSite) -> (u8, [u64; 3]) {
    match *site {
        ActivationSite::ResidPre { layer, position } => (0, [layer as u64, position as u64, 0]),
        ActivationSite::HeadOutput { layer, head } => (1, [layer as u64, head as u64, 0]),
        ActivationSite::HeadOutputAt {
            layer,
            head,
            position,
        } => (2, [layer as u64, head as u64, position as u64]),
        ActivationSite::MlpOut { layer, position } => (3, [layer as u64, position as u64, 0]),
    }
}

fn site_from_code(tag: u8, ix: [u64; 3]) -> Option<ActivationSite> {
    let [a, b, c] = ix.map(|x| x as usize);
    Some(match tag {
        0 => ActivationSite::ResidPre { layer: a, position: b },
        1 => ActivationSite::HeadOutput { layer: a, head: b },
        2 => ActivationSite::HeadOutputAt {
            layer: a,
            head: b,
            position: c,
        },
        3 => ActivationSite::MlpOut { layer: a, position: b },
        _ => return None,
    })
}

fn width(p: Precision) -> u8 {
    match p {
        Precision::F32 => 4,
        Precision::F64 => 8,
    }
}

/// Writes `<stem>.bin` and `<stem>.json` under `dir`; returns both paths.
pub fn save_cache<S: Scalar>(dir: &Path, key: &CacheKey, cache: &ActivationCache<S>) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.push(width(S::PRECISION));
    buf.extend_from_slice(&(cache.seq_len() as u64).to_le_bytes());
    buf.extend_from_slice(&(cache.len() as u64).to_le_bytes());
    for (site, values) in cache.iter() {
        let (tag, ix) = site_code(site);
        buf.push(tag);
        for i in ix {
            buf.extend_from_slice(&i.to_le_bytes());
        }
        buf.extend_from_slice(&(values.len() as u64).to_le_bytes());
        for v in values {
            match S::PRECISION {
                Precision::F32 => buf.extend_from_slice(&(v.f64() as f32).to_le_bytes()),
                Precision::F64 => buf.extend_from_slice(&v.f64().to_le_bytes()),
            }
        }
    }
    let bin = dir.join(format!("{}.bin", key.stem()));
    fs::write(&bin, &buf).map_err(|e| Error::io(&bin, e))?;

    let sidecar = CacheSidecar {
        pair_id: key.pair_id.clone(),
        role: key.role,
        site_hash: key.site_hash.clone(),
        precision: S::PRECISION,
        seq_len: cache.seq_len(),
        entries: cache.len(),
        sites: cache.sites().map(ToString::to_string).collect(),
    };
    let json = dir.join(format!("{}.json", key.stem()));
    fs::write(&json, serde_json::to_vec_pretty(&sidecar)?).map_err(|e| Error::io(&json, e))?;
    Ok((bin, json))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let out = self.bytes.get(self.pos..self.pos + n).ok_or_else(|| Error::Format {
            path: self.path.to_path_buf(),
            message: format!("truncated at byte {}", self.pos),
        })?;
        self.pos += n;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Reads a blob written by [`save_cache`]; the stored precision must match `S`.
pub fn load_cache<S: Scalar>(path: &Path) -> Result<ActivationCache<S>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path,
    };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(bad("bad magic".into()));
    }
    let w = r.take(1)?[0];
    if w != width(S::PRECISION) {
        return Err(bad(format!("stored width {w} does not match {}", S::PRECISION)));
    }
    let seq_len = r.u64()? as usize;
    let n = r.u64()?;
    let mut cache = ActivationCache::new(seq_len);
    for _ in 0..n {
        let tag = r.take(1)?[0];
        let ix = [r.u64()?, r.u64()?, r.u64()?];
        let site = site_from_code(tag, ix).ok_or_else(|| bad(format!("unknown site tag {tag}")))?;
        let len = r.u64()? as usize;
        let mut values = Vec::with_capacity(len);
        for _ in 0..len {
            let v = match S::PRECISION {
                Precision::F32 => f64::from(f32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"))),
                Precision::F64 => f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")),
            };
            values.push(S::of(v));
        }
        cache.insert(site, values);
    }
    if r.pos != bytes.len() {
        return Err(bad("trailing bytes".into()));
    }
    Ok(cache)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_toy_model, HookedModel, ToyConfig, ToyModel};

    #[test]
    fn round_trip_through_disk() {
        let m: ToyModel<f64> = build_toy_model(ToyConfig::default()).unwrap();
        let prompt = "A is True, A and True is";
        let n = m.token_count(prompt).unwrap();
        let mut sites = ActivationSite::all_resid_pre(4, n);
        sites.extend(ActivationSite::all_head_output(4, 2));
        let (_, cache) = m.run_with_capture(prompt, &sites).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let key = CacheKey::new("p0", PromptRole::Clean, &sites);
        let (bin, json) = save_cache(dir.path(), &key, &cache).unwrap();
        let back: ActivationCache<f64> = load_cache(&bin).unwrap();
        assert_eq!(back, cache);

        let meta: CacheSidecar = serde_json::from_slice(&fs::read(json).unwrap()).unwrap();
        assert_eq!(meta.entries, sites.len());
        assert_eq!(meta.site_hash, site_list_hash(&sites));

        assert!(load_cache::<f32>(&bin).is_err());
    }

    #[test]
    fn hash_is_order_sensitive() {
        let a = ActivationSite::ResidPre { layer: 0, position: 0 };
        let b = ActivationSite::MlpOut { layer: 0, position: 0 };
        assert_ne!(site_list_hash(&[a, b]), site_list_hash(&[b, a]));
    }
}
