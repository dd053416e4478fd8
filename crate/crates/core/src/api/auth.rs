use std::collections::HashMap;
use std::sync::RwLock;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::UserId;

const SALT_LEN: usize = 16;

/// `salt || SHA-256(salt || secret)`.
pub fn hash_secret(secret: &str) -> Vec<u8> {
    let mut salt = [0u8; SALT_LEN];
    rand::rng().fill_bytes(&mut salt);
    let mut out = salt.to_vec();
    out.extend_from_slice(&salted(&salt, secret));
    out
}

fn salted(salt: &[u8], secret: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(salt);
    h.update(secret.as_bytes());
    h.finalize().into()
}

pub fn verify_secret(stored: &[u8], secret: &str) -> bool {
    if stored.len() != SALT_LEN + 32 {
        return false;
    }
    let (salt, expected) = stored.split_at(SALT_LEN);
    let actual = salted(salt, secret);
    expected
        .iter()
        .zip(actual.iter())
        .fold(0u8, |acc, (a, b)| acc | (a ^ b))
        == 0
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub token: String,
    pub user_id: UserId,
    /// Seconds since the Unix epoch.
    pub expires_at: u64,
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

/// In-memory bearer sessions. Tokens are 256 random bits, hex encoded.
pub struct Sessions {
    ttl: Duration,
    by_token: RwLock<HashMap<String, Session>>,
}

impl Sessions {
    pub fn new(ttl: Duration) -> Self {
        Sessions {
            ttl,
            by_token: RwLock::new(HashMap::new()),
        }
    }

    pub fn issue(&self, user_id: &UserId) -> Session {
        let mut bytes = [0u8; 32];
        rand::rng().fill_bytes(&mut bytes);
        let session = Session {
            token: hex::encode(bytes),
            user_id: user_id.clone(),
            expires_at: unix_now() + self.ttl.as_secs(),
        };
        let mut map = self.by_token.write().unwrap_or_else(|p| p.into_inner());
        let now = unix_now();
        map.retain(|_, s| s.expires_at > now);
        map.insert(session.token.clone(), session.clone());
        session
    }

    /// The live session for `token`, if any.
    pub fn resolve(&self, token: &str) -> Option<Session> {
        self.resolve_at(token, unix_now())
    }

    pub fn resolve_at(&self, token: &str, now: u64) -> Option<Session> {
        let map = self.by_token.read().unwrap_or_else(|p| p.into_inner());
        map.get(token).filter(|s| s.expires_at > now).cloned()
    }
}
