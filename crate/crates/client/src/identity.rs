//! Locally persisted client identities, one per endpoint and session, so a
//! reconnecting client is recognized again.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use colier_core::document::{ClientId, Color};
use serde::{Deserialize, Serialize};

use crate::core::ClientError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StoredIdentity {
    pub client_id: ClientId,
    pub color: Color,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct FileContents {
    identities: BTreeMap<String, StoredIdentity>,
}

/// A small JSON file mapping `endpoint session` keys to identities.
#[derive(Debug)]
pub struct IdentityFile {
    path: PathBuf,
    contents: FileContents,
}

fn key(endpoint: &str, session_id: &str) -> String {
    format!("{endpoint} {session_id}")
}

impl IdentityFile {
    /// Opens `path`; a missing file is an empty store.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, ClientError> {
        let path = path.into();
        let err = |reason: String| ClientError::IdentityFile { path: path.display().to_string(), reason };
        let contents = match fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes).map_err(|e| err(e.to_string()))?,
            Err(e) if e.kind() == io::ErrorKind::NotFound => FileContents::default(),
            Err(e) => return Err(err(e.to_string())),
        };
        Ok(IdentityFile { path, contents })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn get(&self, endpoint: &str, session_id: &str) -> Option<&StoredIdentity> {
        self.contents.identities.get(&key(endpoint, session_id))
    }

    /// Records an identity and writes the file.
    pub fn set(&mut self, endpoint: &str, session_id: &str, identity: StoredIdentity) -> Result<(), ClientError> {
        self.contents.identities.insert(key(endpoint, session_id), identity);
        let bytes = serde_json::to_vec_pretty(&self.contents).expect("identities serialize");
        colier_core::persist::write_atomic(&self.path, &bytes).map_err(|e| ClientError::IdentityFile {
            path: self.path.display().to_string(),
            reason: e.to_string(),
        })
    }
}
