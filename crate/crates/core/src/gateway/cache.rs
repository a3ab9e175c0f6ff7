use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::GatewayError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CachePayload {
    Text(String),
    Vector(Vec<f64>),
}

/// On-disk record: `{request_hash, text | vector, created_at}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub request_hash: String,
    #[serde(flatten)]
    pub payload: CachePayload,
    pub created_at: String,
}

/// Content-addressed response store laid out as `<root>/<profile>/<hash>.json`.
/// Entries are written once (temp file + rename) and never modified.
#[derive(Debug, Clone)]
pub struct DiskCache {
    root: PathBuf,
}

impl DiskCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path(&self, profile: &str, key: &str) -> PathBuf {
        self.root.join(profile).join(format!("{key}.json"))
    }

    pub fn get(&self, profile: &str, key: &str) -> Result<Option<CacheEntry>, GatewayError> {
        let path = self.path(profile, key);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(GatewayError::Cache(format!("{}: {e}", path.display()))),
        };
        let entry: CacheEntry = serde_json::from_slice(&bytes)
            .map_err(|e| GatewayError::Cache(format!("{}: {e}", path.display())))?;
        if entry.request_hash != key {
            return Err(GatewayError::Cache(format!(
                "{}: hash mismatch",
                path.display()
            )));
        }
        Ok(Some(entry))
    }

    pub fn put(&self, profile: &str, key: &str, payload: CachePayload) -> Result<(), GatewayError> {
        let dir = self.root.join(profile);
        let final_path = self.path(profile, key);
        if final_path.exists() {
            return Ok(());
        }
        let err = |e: std::io::Error| GatewayError::Cache(format!("{}: {e}", dir.display()));
        fs::create_dir_all(&dir).map_err(err)?;
        let entry = CacheEntry {
            request_hash: key.to_string(),
            payload,
            created_at: chrono::Utc::now().to_rfc3339(),
        };
        let mut tmp = tempfile::Builder::new()
            .prefix(".tmp-")
            .tempfile_in(&dir)
            .map_err(err)?;
        serde_json::to_writer(&mut tmp, &entry).map_err(|e| GatewayError::Cache(e.to_string()))?;
        tmp.flush().map_err(err)?;
        tmp.persist(&final_path).map_err(|e| err(e.error))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entries_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let cache = DiskCache::new(dir.path());
        let v = vec![0.1, -1.0 / 3.0, 1e-300, 12345.678901234567];
        cache
            .put("emb", "abc", CachePayload::Vector(v.clone()))
            .unwrap();
        let got = cache.get("emb", "abc").unwrap().unwrap();
        assert_eq!(got.payload, CachePayload::Vector(v));
        assert!(cache.get("emb", "missing").unwrap().is_none());

        let raw: serde_json::Value =
            serde_json::from_slice(&fs::read(dir.path().join("emb/abc.json")).unwrap()).unwrap();
        assert!(raw.get("vector").is_some());
        assert!(raw.get("created_at").is_some());
        assert_eq!(raw["request_hash"], "abc");
    }

    #[test]
    fn existing_entry_is_immutable() {
        let dir = tempfile::tempdir().unwrap();
        let cache = DiskCache::new(dir.path());
        cache
            .put("c", "k", CachePayload::Text("first".into()))
            .unwrap();
        cache
            .put("c", "k", CachePayload::Text("second".into()))
            .unwrap();
        assert_eq!(
            cache.get("c", "k").unwrap().unwrap().payload,
            CachePayload::Text("first".into())
        );
    }
}
