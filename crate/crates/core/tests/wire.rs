use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::thread;

use mrxai::imaging::Image;
use mrxai::oracle::wire::serve;
use mrxai::oracle::{Endpoint, FnOracle, Oracle, OracleError, Prediction, WireOracle};

enum Line {
    Client(String),
    Server(String),
}

fn transcript(text: &str) -> Vec<Line> {
    text.lines()
        .filter(|l| !l.is_empty())
        .map(|l| match l.split_at(2) {
            ("C ", rest) => Line::Client(rest.to_string()),
            ("S ", rest) => Line::Server(rest.to_string()),
            _ => panic!("bad transcript line {l:?}"),
        })
        .collect()
}

/// Plays the server side of `script` on one connection; returns the
/// client lines that did not match.
fn scripted_server(script: Vec<Line>) -> (String, thread::JoinHandle<Vec<String>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    let handle = thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut writer = stream;
        let mut mismatches = Vec::new();
        for line in script {
            match line {
                Line::Client(expected) => {
                    let mut got = String::new();
                    reader.read_line(&mut got).unwrap();
                    if got.trim_end_matches('\n') != expected {
                        mismatches.push(format!("expected {expected}\n     got {got}"));
                    }
                }
                Line::Server(reply) => {
                    writer.write_all(reply.as_bytes()).unwrap();
                    writer.write_all(b"\n").unwrap();
                }
            }
        }
        mismatches
    });
    (addr, handle)
}

#[test]
fn client_matches_golden_transcript() {
    let script = transcript(include_str!("fixtures/wire_client.transcript"));
    let (addr, server) = scripted_server(script);
    let oracle = WireOracle::connect(Endpoint::Tcp(addr)).unwrap();
    assert_eq!(oracle.labels(), ["no_tumor", "tumor"]);

    let a = Image::new(2, 2, 1, vec![0.0, 0.25, 0.5, 1.0]).unwrap();
    let p = oracle.classify(&a).unwrap();
    assert_eq!((p.label.as_str(), p.confidence), ("no_tumor", 0.5625));
    assert_eq!(p.score_for("tumor"), 0.4375);

    // Replies arrive out of order and are matched by id.
    let b = Image::new(1, 2, 1, vec![1.0, 0.5]).unwrap();
    let c = Image::new(1, 1, 3, vec![0.75; 3]).unwrap();
    let batch = oracle.classify_batch(&[b, c]).unwrap();
    assert_eq!((batch[0].label.as_str(), batch[0].confidence), ("tumor", 0.75));
    assert_eq!((batch[1].label.as_str(), batch[1].confidence), ("tumor", 0.9));
    assert!(batch[1].scores.is_none());

    let d = Image::new(1, 1, 1, vec![0.0]).unwrap();
    match oracle.classify(&d) {
        Err(OracleError::Rejected { id, message }) => assert_eq!((id, message.as_str()), (4, "model failure")),
        other => panic!("{other:?}"),
    }
    assert_eq!(oracle.query_count(), 4);
    drop(oracle);
    let mismatches = server.join().unwrap();
    assert!(mismatches.is_empty(), "{}", mismatches.join("\n"));
}

#[test]
fn server_matches_golden_transcript() {
    let lines = transcript(include_str!("fixtures/wire_server.transcript"));
    let mut input = String::new();
    let mut expected = String::new();
    for line in lines {
        match line {
            Line::Client(l) => input.push_str(&(l + "\n")),
            Line::Server(l) => expected.push_str(&(l + "\n")),
        }
    }
    let oracle = FnOracle::new(|img: &Image| {
        let v = img.intensities();
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let scores = BTreeMap::from([("no_tumor".to_string(), 1.0 - m), ("tumor".to_string(), m)]);
        Prediction::from_scores(scores).unwrap()
    });
    let labels = vec!["no_tumor".to_string(), "tumor".to_string()];
    let mut out = Vec::new();
    serve(&oracle, &labels, input.as_bytes(), &mut out).unwrap();
    assert_eq!(String::from_utf8(out).unwrap(), expected);
}

fn answer_one(stream: TcpStream, requests: usize) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut writer = stream;
    let mut line = String::new();
    reader.read_line(&mut line).unwrap();
    writer.write_all(b"{\"proto\":1,\"labels\":[\"a\",\"b\"]}\n").unwrap();
    for _ in 0..requests {
        line.clear();
        if reader.read_line(&mut line).unwrap() == 0 {
            return;
        }
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        writeln!(writer, "{{\"id\":{},\"label\":\"b\",\"confidence\":1.0}}", v["id"]).unwrap();
    }
}

#[test]
fn dropped_connection_is_unavailable_then_retried() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    let server = thread::spawn(move || {
        // First connection: handshake only, then hang up.
        answer_one(listener.accept().unwrap().0, 0);
        answer_one(listener.accept().unwrap().0, 0);
        answer_one(listener.accept().unwrap().0, 1);
    });
    let img = Image::filled(1, 1, 1, 0.5);
    let strict = WireOracle::connect(Endpoint::Tcp(addr.clone())).unwrap();
    let err = strict.classify(&img).unwrap_err();
    assert!(err.is_unavailable(), "{err:?}");
    drop(strict);

    let patient = WireOracle::connect(Endpoint::Tcp(addr)).unwrap().with_retries(1);
    assert_eq!(patient.classify(&img).unwrap().label, "b");
    server.join().unwrap();
}

#[test]
fn unreachable_endpoint_is_unavailable() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    drop(listener);
    match WireOracle::connect(Endpoint::Tcp(addr)) {
        Err(e) => assert!(e.is_unavailable(), "{e:?}"),
        Ok(_) => panic!("connected to a closed port"),
    }
}
