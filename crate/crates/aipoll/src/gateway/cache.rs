//! Append-only record of every completed query, failures included. A rerun
//! skips any (key, repeat, prompt hash) already present.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use aipoll_core::PermutationKey;

use super::QueryRecord;
use crate::error::Result;
use crate::io::{read_log, Appender};

type Slot = (String, u32, String);

pub struct QueryCache {
    path: PathBuf,
    index: Mutex<BTreeMap<Slot, QueryRecord>>,
    appender: Mutex<Option<Appender>>,
}

impl QueryCache {
    pub fn open(path: &Path) -> Result<Self> {
        let mut index = BTreeMap::new();
        for r in read_log::<QueryRecord>(path)? {
            index.insert(slot(&r.key, r.repeat_index, &r.prompt_sha256), r);
        }
        Ok(QueryCache { path: path.to_path_buf(), index: Mutex::new(index), appender: Mutex::new(None) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.index.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &PermutationKey, repeat_index: u32, prompt_sha256: &str) -> Option<QueryRecord> {
        self.index.lock().expect("cache lock").get(&slot(key, repeat_index, prompt_sha256)).cloned()
    }

    pub fn append(&self, record: &QueryRecord) -> Result<()> {
        {
            let mut guard = self.appender.lock().expect("cache lock");
            if guard.is_none() {
                *guard = Some(Appender::open(&self.path)?);
            }
            guard.as_mut().expect("opened above").append(record)?;
        }
        self.index
            .lock()
            .expect("cache lock")
            .insert(slot(&record.key, record.repeat_index, &record.prompt_sha256), record.clone());
        Ok(())
    }
}

fn slot(key: &PermutationKey, repeat_index: u32, hash: &str) -> Slot {
    (key.canonical(), repeat_index, hash.to_string())
}
