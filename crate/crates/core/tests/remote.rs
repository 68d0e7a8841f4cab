use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use serde_json::{json, Value};
use sumlens_core::backend::{predict_next, RemoteBackend};
use sumlens_core::{tokenize, AblationConfig, Backend, Error, Mode, Prefix, Vocab};

/// Serves `replies.len()` connections; each request body is forwarded on the
/// returned channel and answered with the matching `(status, body)`.
fn serve(replies: Vec<(u16, String)>) -> (String, mpsc::Receiver<Value>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for (status, body) in replies {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                if let Some((k, v)) = line.split_once(':') {
                    if k.eq_ignore_ascii_case("content-length") {
                        len = v.trim().parse().unwrap();
                    }
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            tx.send(serde_json::from_slice(&buf).unwrap()).unwrap();
            let head = format!("HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n", body.len());
            stream.write_all(head.as_bytes()).unwrap();
            stream.write_all(body.as_bytes()).unwrap();
        }
    });
    (url, rx)
}

fn vocab() -> Vocab {
    Vocab::with_specials(["a", "b", "c", "."]).unwrap()
}

#[test]
fn request_carries_ablation_and_response_is_decoded() {
    let v = vocab();
    let a = v.id("a").unwrap();
    let reply = json!({"version": 1, "probs": [{"id": a, "p": 0.7}, {"id": v.id("b").unwrap(), "p": 0.2}], "residual": 0.1});
    let (url, rx) = serve(vec![(200, reply.to_string())]);
    let backend = RemoteBackend::new(url, v.clone(), Duration::from_secs(5));
    let doc = tokenize("d", "a b . c a .", &v).unwrap();
    let prefix = Prefix::start(v.sos()).extended(a);
    let visible: BTreeSet<usize> = [1, 3, 4].into();
    let dist = predict_next(&backend, &AblationConfig::s_part(visible), &doc, &prefix).unwrap();

    let req = rx.recv().unwrap();
    assert_eq!(req["version"], 1);
    assert_eq!(req["config"], "S_PART");
    assert_eq!(req["visible"], json!([1, 3, 4]));
    let expect: Vec<usize> = [1, 3, 4].iter().map(|&i| doc.pieces()[i]).collect();
    assert_eq!(req["pieces"], json!(expect));
    assert_eq!(req["prefix"], json!([v.sos(), a]));

    assert!(dist.is_truncated());
    let unlisted = (v.len() - 2) as f64;
    assert!((dist.probs()[a] - 0.7).abs() < 1e-12);
    assert!((dist.probs()[v.id("c").unwrap()] - 0.1 / unlisted).abs() < 1e-12);
    assert!((dist.probs().iter().sum::<f64>() - 1.0).abs() < 1e-9);
}

#[test]
fn empty_source_sends_no_pieces() {
    let v = vocab();
    let reply = json!({"probs": [{"id": 0, "p": 1.0}]});
    let (url, rx) = serve(vec![(200, reply.to_string())]);
    let backend = RemoteBackend::new(url, v.clone(), Duration::from_secs(5));
    let doc = tokenize("d", "a b .", &v).unwrap();
    predict_next(&backend, &AblationConfig::lm_empty(), &doc, &Prefix::start(v.sos())).unwrap();
    let req = rx.recv().unwrap();
    assert_eq!(req["config"], "LM_EMPTY");
    assert_eq!(req["pieces"], json!([]));
    assert_eq!(req["visible"], json!([]));
}

#[test]
fn bad_responses_are_protocol_errors() {
    let v = vocab();
    let replies = vec![
        (200, "not json".to_string()),
        (200, json!({"probs": [{"id": 0, "p": 0.5}]}).to_string()),
        (200, json!({"probs": [{"id": 99, "p": 1.0}]}).to_string()),
    ];
    let n = replies.len();
    let (url, _rx) = serve(replies);
    let backend = RemoteBackend::new(url, v.clone(), Duration::from_secs(5));
    let doc = tokenize("d", "a .", &v).unwrap();
    for _ in 0..n {
        let r = backend.predict(Mode::SFull, &doc, &Prefix::start(v.sos()));
        assert!(matches!(r, Err(Error::Protocol(_))), "{r:?}");
    }
}

#[test]
fn server_errors_and_refusals_are_unavailable() {
    let v = vocab();
    let (url, _rx) = serve(vec![(500, "{}".into())]);
    let backend = RemoteBackend::new(url, v.clone(), Duration::from_secs(5));
    let doc = tokenize("d", "a .", &v).unwrap();
    let r = backend.predict(Mode::SFull, &doc, &Prefix::start(v.sos()));
    assert!(matches!(r, Err(Error::BackendUnavailable(_))), "{r:?}");

    let closed = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        format!("http://{}", l.local_addr().unwrap())
    };
    let backend = RemoteBackend::new(closed, v.clone(), Duration::from_secs(5));
    let r = backend.predict(Mode::SFull, &doc, &Prefix::start(v.sos()));
    assert!(matches!(r, Err(Error::BackendUnavailable(_))), "{r:?}");
}

#[test]
fn silent_server_times_out() {
    let v = vocab();
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let hold = thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        thread::sleep(Duration::from_millis(1500));
        drop(stream);
    });
    let backend = RemoteBackend::new(url, v.clone(), Duration::from_millis(200));
    let doc = tokenize("d", "a .", &v).unwrap();
    let r = backend.predict(Mode::SFull, &doc, &Prefix::start(v.sos()));
    assert!(matches!(r, Err(Error::BackendUnavailable(_))), "{r:?}");
    hold.join().unwrap();
}
