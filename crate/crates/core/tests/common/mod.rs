#![allow(dead_code)]

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use clausechain::schema::{load_dataset, Dataset, QuestionBank};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn dataset() -> Dataset {
    load_dataset(fixture("dataset.jsonl"), &QuestionBank::default_bank()).unwrap()
}

// ---------------------------------------------------------------------------
// Brute-force metric reference. Fractions are (numerator, denominator) pairs
// in lowest terms; undefined values are None.

pub type Frac = (u64, u64);

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 { a } else { gcd(b, a % b) }
}

pub fn reduce(n: u64, d: u64) -> Frac {
    let g = gcd(n, d).max(1);
    (n / g, d / g)
}

pub fn ref_exact_match(pred: &[BTreeSet<char>], gold: &[BTreeSet<char>]) -> Frac {
    let mut hits = 0;
    for i in 0..pred.len() {
        let mut same = pred[i].len() == gold[i].len();
        for c in &pred[i] {
            if !gold[i].contains(c) {
                same = false;
            }
        }
        if same {
            hits += 1;
        }
    }
    reduce(hits, pred.len() as u64)
}

/// (tp, fp, fn, tn)
pub fn ref_confusion(pred: &[BTreeSet<char>], gold: &[BTreeSet<char>], option: char) -> (u64, u64, u64, u64) {
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for i in 0..pred.len() {
        let p = pred[i].iter().any(|&c| c == option);
        let g = gold[i].iter().any(|&c| c == option);
        if p && g {
            tp += 1;
        }
        if p && !g {
            fp += 1;
        }
        if !p && g {
            fn_ += 1;
        }
        if !p && !g {
            tn += 1;
        }
    }
    (tp, fp, fn_, tn)
}

pub fn ref_precision(tp: u64, fp: u64) -> Option<Frac> {
    if tp + fp == 0 { None } else { Some(reduce(tp, tp + fp)) }
}

pub fn ref_recall(tp: u64, fn_: u64) -> Option<Frac> {
    if tp + fn_ == 0 { None } else { Some(reduce(tp, tp + fn_)) }
}

/// Mean of the defined values and the number excluded.
pub fn ref_macro(values: &[Option<Frac>]) -> Option<(Frac, usize)> {
    let defined: Vec<Frac> = values.iter().flatten().copied().collect();
    if defined.is_empty() {
        return None;
    }
    let mut num: u128 = 0;
    let mut den: u128 = 1;
    for (n, d) in &defined {
        num = num * *d as u128 + *n as u128 * den;
        den *= *d as u128;
        let g = {
            let (mut a, mut b) = (num, den);
            while b != 0 {
                let t = a % b;
                a = b;
                b = t;
            }
            a.max(1)
        };
        num /= g;
        den /= g;
    }
    den *= defined.len() as u128;
    let (mut a, mut b) = (num, den);
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    let g = a.max(1);
    Some((((num / g) as u64, (den / g) as u64), values.len() - defined.len()))
}

pub fn frac_eq(r: num_rational::Ratio<u64>, f: Frac) -> bool {
    *r.numer() == f.0 && *r.denom() == f.1
}

// ---------------------------------------------------------------------------
// Minimal HTTP/1.1 server answering from a fixed list of (status, body).

pub struct CapturedRequest {
    pub path: String,
    pub headers: Vec<(String, String)>,
    pub body: String,
}

pub struct StubServer {
    pub base_url: String,
    pub requests: Arc<Mutex<Vec<CapturedRequest>>>,
    handle: Option<JoinHandle<()>>,
}

impl StubServer {
    pub fn start(responses: Vec<(u16, String)>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let base_url = format!("http://{}/v1", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let log = Arc::clone(&requests);
        let handle = std::thread::spawn(move || {
            for (status, body) in responses {
                let Ok((stream, _)) = listener.accept() else { return };
                if let Some(req) = serve_one(stream, status, &body) {
                    log.lock().unwrap().push(req);
                }
            }
        });
        Self {
            base_url,
            requests,
            handle: Some(handle),
        }
    }

    pub fn count(&self) -> usize {
        self.requests.lock().unwrap().len()
    }

    pub fn join(mut self) -> Vec<CapturedRequest> {
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
        std::mem::take(&mut *self.requests.lock().unwrap())
    }
}

fn serve_one(stream: TcpStream, status: u16, body: &str) -> Option<CapturedRequest> {
    let mut reader = BufReader::new(stream.try_clone().ok()?);
    let mut line = String::new();
    reader.read_line(&mut line).ok()?;
    let path = line.split_whitespace().nth(1).unwrap_or("").to_string();
    let mut headers = Vec::new();
    let mut len = 0usize;
    loop {
        let mut h = String::new();
        reader.read_line(&mut h).ok()?;
        let h = h.trim_end();
        if h.is_empty() {
            break;
        }
        if let Some((k, v)) = h.split_once(':') {
            let (k, v) = (k.trim().to_ascii_lowercase(), v.trim().to_string());
            if k == "content-length" {
                len = v.parse().unwrap_or(0);
            }
            headers.push((k, v));
        }
    }
    let mut buf = vec![0u8; len];
    reader.read_exact(&mut buf).ok()?;
    let reason = match status {
        200 => "OK",
        401 => "Unauthorized",
        429 => "Too Many Requests",
        500 => "Internal Server Error",
        _ => "Status",
    };
    let mut stream = stream;
    let _ = write!(
        stream,
        "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    let _ = stream.flush();
    Some(CapturedRequest {
        path,
        headers,
        body: String::from_utf8_lossy(&buf).into_owned(),
    })
}

pub fn chat_body(content: &str, finish: &str) -> String {
    serde_json::json!({
        "id": "chatcmpl-1",
        "object": "chat.completion",
        "choices": [{"index": 0, "message": {"role": "assistant", "content": content}, "finish_reason": finish}],
        "usage": {"prompt_tokens": 10, "completion_tokens": 3, "total_tokens": 13}
    })
    .to_string()
}
