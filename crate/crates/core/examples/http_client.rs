//! The HTTP generation and embedding clients. Point them at a running
//! server, or leave the URL off to start a tiny local stub that speaks the
//! same JSON protocol.
//!
//!     cargo run --example http_client [BASE_URL]
//!
//! The API key, if any, is read from `REQUAL_API_KEY`.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;

use requal::providers::http::{HttpConfig, HttpEmbedder, HttpGenerator};
use requal::providers::{EmbeddingProvider, GenerationProvider, GenerationRequest};
use requal::Result;
use serde_json::{json, Value};

fn main() -> Result<()> {
    let url = std::env::args().nth(1).unwrap_or_else(start_stub);
    let cfg = HttpConfig::new(&url).with_env_api_key();

    let llm = HttpGenerator::new(cfg.clone())?;
    let mut req = GenerationRequest::new("Complete the sentence: The engineer said that ...");
    req.logprobs = true;
    let c = llm.generate(&req)?;
    println!("completion: {:?} (token probs {:?})", c.text, c.token_probs);

    let embedder = HttpEmbedder::new(cfg)?;
    let vs = embedder.embed(&[c.text.clone(), "an unrelated sentence".into()])?;
    println!("embedded {} texts, dimension {:?}", vs.len(), embedder.dimension());
    println!("requests sent: {} completion, {} embedding", llm.requests_sent(), embedder.requests_sent());
    Ok(())
}

/// Serves `/v1/completions` and `/v1/embeddings` on an ephemeral port.
fn start_stub() -> String {
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind stub");
    let url = format!("http://{}", listener.local_addr().unwrap());
    std::thread::spawn(move || {
        for stream in listener.incoming().flatten() {
            let mut reader = BufReader::new(stream);
            let mut line = String::new();
            reader.read_line(&mut line).ok();
            let path = line.split_whitespace().nth(1).unwrap_or("").to_string();
            let mut len = 0;
            loop {
                let mut h = String::new();
                if reader.read_line(&mut h).unwrap_or(0) == 0 || h.trim().is_empty() {
                    break;
                }
                if let Some((k, v)) = h.split_once(':') {
                    if k.eq_ignore_ascii_case("content-length") {
                        len = v.trim().parse().unwrap_or(0);
                    }
                }
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).ok();
            let body: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
            let reply = if path.ends_with("embeddings") {
                let inputs = body["input"].as_array().cloned().unwrap_or_default();
                let vs: Vec<Vec<f64>> = inputs
                    .iter()
                    .map(|t| {
                        let n = t.as_str().unwrap_or("").len() as f64;
                        vec![1.0, n, n.sqrt()]
                    })
                    .collect();
                json!({"embeddings": vs, "dimension": 3, "model": "stub"})
            } else {
                json!({"text": "she would review the design", "token_logprobs": [-0.1, -0.4, -0.2]})
            };
            let payload = reply.to_string();
            let mut stream = reader.into_inner();
            let _ = write!(
                stream,
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
                payload.len()
            );
        }
    });
    url
}
