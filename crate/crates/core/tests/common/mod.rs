#![allow(dead_code)]

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use discopath::hierarchy::{LabelHierarchy, NodeId};
use discopath::mask::{MaskRole, MaskSubset};
use discopath::scoring::MaskDistributions;
use rand::Rng;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Surfaces at a depth, collected by scanning the node table.
fn surfaces(h: &LabelHierarchy, depth: usize) -> Vec<String> {
    h.nodes().iter().filter(|n| n.depth == depth).map(|n| n.surface.clone()).collect()
}

/// Every root-to-leaf chain found by recursive descent from the roots.
pub fn walk_paths(h: &LabelHierarchy) -> Vec<Vec<NodeId>> {
    fn descend(h: &LabelHierarchy, id: NodeId, prefix: &mut Vec<NodeId>, out: &mut Vec<Vec<NodeId>>) {
        prefix.push(id);
        let node = h.node(id);
        if node.children.is_empty() {
            out.push(prefix.clone());
        }
        for &c in &node.children {
            descend(h, c, prefix, out);
        }
        prefix.pop();
    }
    let mut out = Vec::new();
    for &r in h.roots() {
        descend(h, r, &mut Vec::new(), &mut out);
    }
    out
}

/// Brute-force joint score: a plain product of looked-up probabilities,
/// keyed by walked chain.
pub fn oracle_scores(d: &MaskDistributions, h: &LabelHierarchy, roles: &[MaskRole]) -> Vec<(Vec<NodeId>, f64)> {
    let tables: BTreeMap<usize, Vec<String>> = (1..=h.depth()).map(|k| (k, surfaces(h, k))).collect();
    walk_paths(h)
        .into_iter()
        .map(|chain| {
            let mut p = 1.0;
            for &role in roles {
                let depth = role.depth().expect("level role");
                let node = h.node(chain[depth - 1]);
                let idx = tables[&depth].iter().position(|s| *s == node.surface).expect("surface listed");
                p *= d.get(role).expect("role present")[idx];
            }
            (chain, p)
        })
        .collect()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

/// Random probability vector; roughly one vector in five gets a zero entry.
pub fn random_distribution<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(0.001..1.0)).collect();
    if n > 1 && rng.random_bool(0.2) {
        let k = rng.random_range(0..n);
        v[k] = 0.0;
    }
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    v
}

pub fn random_distributions<R: Rng>(rng: &mut R, h: &LabelHierarchy) -> MaskDistributions {
    MaskDistributions::from_pairs(MaskRole::LEVELS.into_iter().map(|r| {
        let n = h.level(r.depth().unwrap()).unwrap().len();
        (r, random_distribution(rng, n))
    }))
    .unwrap()
}

pub fn subset_roles(s: &MaskSubset) -> Vec<MaskRole> {
    s.iter().collect()
}

/// What the scripted server does with one request.
#[derive(Debug, Clone)]
pub enum Reply {
    Json(u16, String),
    /// Hold the connection open without answering.
    Stall(Duration),
}

/// Minimal HTTP/1.1 server answering each request through a script.
/// The script sees the zero-based hit number and the request body.
pub struct FakeServer {
    pub url: String,
    hits: Arc<AtomicUsize>,
}

impl FakeServer {
    pub fn start<F>(script: F) -> Self
    where
        F: Fn(usize, &str) -> Reply + Send + Sync + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let hits = Arc::new(AtomicUsize::new(0));
        let script = Arc::new(script);
        let counter = hits.clone();
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let script = script.clone();
                let counter = counter.clone();
                thread::spawn(move || serve(stream, &*script, &counter));
            }
        });
        Self { url, hits }
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}

fn serve(stream: TcpStream, script: &(dyn Fn(usize, &str) -> Reply + Send + Sync), hits: &AtomicUsize) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut length = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                length = v.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0u8; length];
    if reader.read_exact(&mut body).is_err() {
        return;
    }
    let n = hits.fetch_add(1, Ordering::SeqCst);
    let mut stream = stream;
    match script(n, &String::from_utf8_lossy(&body)) {
        Reply::Stall(d) => thread::sleep(d),
        Reply::Json(status, payload) => {
            let head = format!(
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n",
                payload.len()
            );
            let _ = stream.write_all(head.as_bytes());
            let _ = stream.write_all(payload.as_bytes());
            let _ = stream.flush();
        }
    }
}

/// A protocol response giving each requested role a uniform vector, with
/// the top vector scaled to sum to `top_sum`.
pub fn uniform_reply(body: &str, top_sum: f64) -> String {
    let req: serde_json::Value = serde_json::from_str(body).unwrap();
    let mut probs = serde_json::Map::new();
    for (role, cands) in req["candidates"].as_object().unwrap() {
        let n = cands.as_array().unwrap().len();
        let scale = if role == "top" { top_sum } else { 1.0 };
        probs.insert(role.clone(), serde_json::json!(vec![scale / n as f64; n]));
    }
    serde_json::json!({"v": 1, "probs": probs}).to_string()
}
