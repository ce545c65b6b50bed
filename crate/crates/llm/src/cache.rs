//! Content-addressed record store: one JSON document per request hash.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use crate::record::CompletionRecord;

#[derive(Debug)]
pub struct Cache {
    dir: PathBuf,
    writes: Mutex<()>,
}

/// Write via a temporary file and rename, so readers never see a torn file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

impl Cache {
    pub fn open(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self {
            dir,
            writes: Mutex::new(()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn record_path(&self, hash: &str) -> PathBuf {
        self.dir.join(format!("{hash}.json"))
    }

    pub fn raw_path(&self, hash: &str) -> PathBuf {
        self.dir.join(format!("{hash}.raw"))
    }

    pub fn get(&self, hash: &str) -> io::Result<Option<CompletionRecord>> {
        match fs::read(self.record_path(hash)) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map(Some)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    /// Persist a response body verbatim, before anything parses it.
    pub fn put_raw(&self, hash: &str, body: &[u8]) -> io::Result<()> {
        let _guard = self.writes.lock().unwrap_or_else(|e| e.into_inner());
        write_atomic(&self.raw_path(hash), body)
    }

    pub fn put(&self, record: &CompletionRecord) -> io::Result<()> {
        let bytes = serde_json::to_vec_pretty(record)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
        let _guard = self.writes.lock().unwrap_or_else(|e| e.into_inner());
        write_atomic(&self.record_path(&record.request_hash), &bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::Prompt;

    #[test]
    fn put_then_get_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let cache = Cache::open(dir.path().join("c")).unwrap();
        assert!(cache.get("abc").unwrap().is_none());
        let record = CompletionRecord {
            request_hash: "abc".into(),
            provider: "mock:x".into(),
            prompt: Prompt::from("[ Heads,"),
            sample_index: 0,
            response_text: " Tails, Heads\u{e9}".into(),
            token_logprobs: None,
            timestamp: None,
            raw_body: Some("{\"x\": 1}".into()),
        };
        cache.put(&record).unwrap();
        assert_eq!(cache.get("abc").unwrap().unwrap(), record);
        cache.put_raw("abc", b"\x00raw").unwrap();
        assert_eq!(fs::read(cache.raw_path("abc")).unwrap(), b"\x00raw");
        let leftovers: Vec<_> = fs::read_dir(cache.dir())
            .unwrap()
            .filter_map(|e| e.ok())
            .filter(|e| e.file_name().to_string_lossy().contains(".tmp"))
            .collect();
        assert!(leftovers.is_empty());
    }
}
