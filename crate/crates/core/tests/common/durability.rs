//! Crash harness: runs the real binary, writes to it from several clients,
//! kills it at a seeded point and checks every acknowledged write on reopen.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::Stdio;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use auralabel::domain::{AudioAsset, Project, Task, User};
use auralabel::storage::Store;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use tokio::io::{AsyncBufReadExt, BufReader};
use tokio::process::{Child, Command};

use super::{wav, ADMIN, ADMIN_SECRET};

pub const WORKERS: usize = 4;

#[derive(Debug, Clone)]
pub enum Ack {
    Project(String),
    User(String),
    Task(String),
}

pub struct Running {
    pub child: Child,
    pub addr: SocketAddr,
}

pub async fn spawn_server(data_dir: &Path) -> Running {
    let mut child = Command::new(env!("CARGO_BIN_EXE_auralabel"))
        .env_clear()
        .env("RUST_LOG", "warn")
        .args(["serve", "--listen", "127.0.0.1:0", "--data-dir"])
        .arg(data_dir)
        .args([
            "--bootstrap-user",
            ADMIN,
            "--bootstrap-secret",
            ADMIN_SECRET,
        ])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .kill_on_drop(true)
        .spawn()
        .expect("spawn server");
    let mut lines = BufReader::new(child.stdout.take().unwrap()).lines();
    let line = tokio::time::timeout(Duration::from_secs(10), lines.next_line())
        .await
        .expect("server announced its address")
        .unwrap()
        .expect("stdout line");
    let addr = line
        .strip_prefix("listening on ")
        .expect("listening line")
        .parse()
        .unwrap();
    Running { child, addr }
}

async fn login(http: &reqwest::Client, addr: SocketAddr) -> String {
    let v: Value = http
        .post(format!("http://{addr}/api/auth/login"))
        .json(&json!({"username": ADMIN, "secret": ADMIN_SECRET}))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    v["token"].as_str().unwrap().to_string()
}

/// One client's write loop. Only writes the server answered are recorded.
async fn worker(addr: SocketAddr, token: String, id: usize, acks: Arc<Mutex<Vec<Ack>>>) {
    let http = reqwest::Client::new();
    let base = format!("http://{addr}/api");
    for n in 0.. {
        let Ok(resp) = http
            .post(format!("{base}/projects"))
            .bearer_auth(&token)
            .json(&json!({"name": format!("crash {id}-{n}"), "ontology": ["x"]}))
            .send()
            .await
        else {
            return;
        };
        let Ok(project) = resp.json::<Value>().await else {
            return;
        };
        let Some(pid) = project["id"].as_str().map(str::to_string) else {
            return;
        };
        acks.lock().unwrap().push(Ack::Project(pid.clone()));

        let Ok(resp) = http
            .post(format!("{base}/projects/{pid}/members"))
            .bearer_auth(&token)
            .json(&json!({"username": format!("u{id}x{n}"), "role": "annotator", "secret": "s"}))
            .send()
            .await
        else {
            return;
        };
        let Ok(member) = resp.json::<Value>().await else {
            return;
        };
        let Some(uid) = member["user_id"].as_str() else {
            return;
        };
        acks.lock().unwrap().push(Ack::User(uid.to_string()));

        let seed = (id * 10_000 + n) as u16;
        let form = reqwest::multipart::Form::new().part(
            "file",
            reqwest::multipart::Part::bytes(wav(seed, 0.05)).file_name(format!("w{seed}.wav")),
        );
        let Ok(resp) = http
            .post(format!("{base}/projects/{pid}/tasks"))
            .bearer_auth(&token)
            .multipart(form)
            .send()
            .await
        else {
            return;
        };
        let Ok(up) = resp.json::<Value>().await else {
            return;
        };
        for r in up["results"].as_array().into_iter().flatten() {
            if let Some(t) = r["task_id"].as_str() {
                acks.lock().unwrap().push(Ack::Task(t.to_string()));
            }
        }
    }
}

/// Returns the acknowledged writes missing or damaged in `dir`.
pub fn verify(dir: &Path, acks: &[Ack]) -> Result<Vec<String>, String> {
    let store = Store::open(dir).map_err(|e| e.to_string())?;
    let mut missing = Vec::new();
    for ack in acks {
        match ack {
            Ack::Project(id) => {
                if store.get::<Project>(id).is_err() {
                    missing.push(id.clone());
                }
            }
            Ack::User(id) => {
                if store.get::<User>(id).is_err() {
                    missing.push(id.clone());
                }
            }
            Ack::Task(id) => {
                let intact = store.get::<Task>(id).ok().and_then(|t| {
                    let asset = store
                        .get::<AudioAsset>(t.value.audio_asset_id.as_str())
                        .ok()?;
                    let bytes = store.read_blob(&asset.value.digest).ok()?;
                    Some(hex::encode(Sha256::digest(&bytes)) == asset.value.digest)
                });
                if intact != Some(true) {
                    missing.push(id.clone());
                }
            }
        }
    }
    Ok(missing)
}

pub struct KillOutcome {
    pub seed: u64,
    pub kill_after: usize,
    pub acked: usize,
    pub missing: Vec<String>,
    pub reopen_error: Option<String>,
    pub restarted: bool,
}

impl KillOutcome {
    pub fn ok(&self) -> bool {
        self.missing.is_empty() && self.reopen_error.is_none() && self.restarted
    }
}

/// Kills the server with SIGKILL once `kill_after` writes are acknowledged,
/// plus a seeded sub-millisecond delay so the signal lands mid-request.
pub async fn kill_point(seed: u64) -> KillOutcome {
    let mut rng = StdRng::seed_from_u64(seed);
    let kill_after = rng.random_range(1..=40usize);
    let extra = Duration::from_micros(rng.random_range(0..1500));
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("data");
    let mut server = spawn_server(&dir).await;
    let token = login(&reqwest::Client::new(), server.addr).await;
    let acks = Arc::new(Mutex::new(Vec::new()));
    let workers: Vec<_> = (0..WORKERS)
        .map(|i| tokio::spawn(worker(server.addr, token.clone(), i, acks.clone())))
        .collect();
    while acks.lock().unwrap().len() < kill_after {
        tokio::time::sleep(Duration::from_micros(200)).await;
    }
    tokio::time::sleep(extra).await;
    server.child.start_kill().unwrap();
    let _ = server.child.wait().await;
    for w in workers {
        let _ = w.await;
    }
    let acks = acks.lock().unwrap().clone();
    let (missing, reopen_error) = match verify(&dir, &acks) {
        Ok(m) => (m, None),
        Err(e) => (Vec::new(), Some(e)),
    };
    // the directory must also serve again
    let mut again = spawn_server(&dir).await;
    let restarted = !login(&reqwest::Client::new(), again.addr).await.is_empty();
    again.child.start_kill().unwrap();
    let _ = again.child.wait().await;
    KillOutcome {
        seed,
        kill_after,
        acked: acks.len(),
        missing,
        reopen_error,
        restarted,
    }
}

pub struct CleanStop {
    pub exit_code: Option<i32>,
    pub acked: usize,
    pub missing: Vec<String>,
}

/// Writes a little, sends SIGINT, and checks the exit status and the data.
pub async fn sigint_stop() -> CleanStop {
    let tmp = tempfile::tempdir().unwrap();
    let dir: PathBuf = tmp.path().join("data");
    let mut server = spawn_server(&dir).await;
    let token = login(&reqwest::Client::new(), server.addr).await;
    let acks = Arc::new(Mutex::new(Vec::new()));
    let w = tokio::spawn(worker(server.addr, token, 0, acks.clone()));
    while acks.lock().unwrap().len() < 9 {
        tokio::time::sleep(Duration::from_millis(1)).await;
    }
    w.abort();
    let pid = server.child.id().unwrap() as libc::pid_t;
    // SAFETY: pid belongs to a child this test spawned and has not reaped
    unsafe {
        libc::kill(pid, libc::SIGINT);
    }
    let status = tokio::time::timeout(Duration::from_secs(10), server.child.wait())
        .await
        .expect("server stops after SIGINT")
        .unwrap();
    let acks = acks.lock().unwrap().clone();
    CleanStop {
        exit_code: status.code(),
        acked: acks.len(),
        missing: verify(&dir, &acks).unwrap_or_else(|e| vec![e]),
    }
}

/// Starts a second server on a directory already in use; returns its exit
/// code and stderr.
pub async fn second_instance() -> (Option<i32>, String) {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("data");
    let mut first = spawn_server(&dir).await;
    let out = Command::new(env!("CARGO_BIN_EXE_auralabel"))
        .env_clear()
        .args(["serve", "--listen", "127.0.0.1:0", "--data-dir"])
        .arg(&dir)
        .output()
        .await
        .unwrap();
    first.child.start_kill().unwrap();
    let _ = first.child.wait().await;
    (
        out.status.code(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}
