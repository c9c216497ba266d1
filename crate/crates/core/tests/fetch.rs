//! Archive download, extraction and caching against a local HTTP server.

use std::io::{BufRead, BufReader, Cursor, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use gnnlab::graphdata::{fetch_tu, parse_tu, raw_dir};
use gnnlab::Error;
use zip::write::SimpleFileOptions;

fn toy_zip(name: &str, with_labels: bool) -> Vec<u8> {
    let mut w = zip::ZipWriter::new(Cursor::new(Vec::new()));
    let opts = SimpleFileOptions::default();
    let mut files = vec![
        (format!("{name}/{name}_A.txt"), "1, 2\n2, 1\n3, 4\n4, 3\n"),
        (format!("{name}/{name}_graph_indicator.txt"), "1\n1\n2\n2\n"),
        (format!("{name}/README.md"), "not a data file\n"),
    ];
    if with_labels {
        files.push((format!("{name}/{name}_graph_labels.txt"), "1\n-1\n"));
    }
    w.add_directory(format!("{name}/"), opts).unwrap();
    for (path, body) in files {
        w.start_file(path, opts).unwrap();
        w.write_all(body.as_bytes()).unwrap();
    }
    w.finish().unwrap().into_inner()
}

/// Serves `/GOOD.zip` and `/BROKEN.zip`; everything else is a 404.
fn serve() -> (String, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            counter.fetch_add(1, Ordering::SeqCst);
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            loop {
                let mut header = String::new();
                if reader.read_line(&mut header).unwrap() == 0 || header == "\r\n" {
                    break;
                }
            }
            let path = request_line
                .split_whitespace()
                .nth(1)
                .unwrap_or("/")
                .to_string();
            let (status, body) = match path.as_str() {
                "/GOOD.zip" => ("200 OK", toy_zip("GOOD", true)),
                "/BROKEN.zip" => ("200 OK", toy_zip("BROKEN", false)),
                "/GARBAGE.zip" => ("200 OK", b"definitely not a zip".to_vec()),
                _ => ("404 Not Found", b"missing".to_vec()),
            };
            let head = format!(
                "HTTP/1.1 {status}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
                body.len()
            );
            stream.write_all(head.as_bytes()).unwrap();
            stream.write_all(&body).unwrap();
        }
    });
    (base, hits)
}

#[test]
fn download_then_cache_hit() {
    let (base, hits) = serve();
    let cache = tempfile::tempdir().unwrap();
    let first = fetch_tu("GOOD", &base, cache.path()).unwrap();
    assert!(!first.cached);
    assert_eq!(first.path, raw_dir(cache.path(), "GOOD"));
    assert!(first.path.join("GOOD_A.txt").is_file());
    assert!(!first.path.join("README.md").exists());
    assert_eq!(hits.load(Ordering::SeqCst), 1);

    let second = fetch_tu("GOOD", &base, cache.path()).unwrap();
    assert!(second.cached);
    assert_eq!(second.path, first.path);
    assert_eq!(hits.load(Ordering::SeqCst), 1);

    let ds = parse_tu(&first.path, "GOOD").unwrap();
    assert_eq!(ds.len(), 2);
    assert_eq!(ds.num_classes, 2);
}

#[test]
fn not_found_is_transport_error_with_status() {
    let (base, _) = serve();
    let cache = tempfile::tempdir().unwrap();
    match fetch_tu("NOPE", &base, cache.path()) {
        Err(Error::Transport { status, .. }) => assert_eq!(status, 404),
        other => panic!("expected transport error, got {other:?}"),
    }
    assert!(!raw_dir(cache.path(), "NOPE").exists());
}

#[test]
fn incomplete_or_corrupt_archives_are_integrity_errors() {
    let (base, _) = serve();
    let cache = tempfile::tempdir().unwrap();
    assert!(matches!(
        fetch_tu("BROKEN", &base, cache.path()),
        Err(Error::Integrity(_))
    ));
    assert!(!raw_dir(cache.path(), "BROKEN").exists());
    assert!(matches!(
        fetch_tu("GARBAGE", &base, cache.path()),
        Err(Error::Integrity(_))
    ));
}

#[test]
fn unreachable_host_is_transport_error() {
    // Bind then drop to get a port with nothing listening.
    let port = TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let cache = tempfile::tempdir().unwrap();
    let err = fetch_tu("GOOD", &format!("http://127.0.0.1:{port}"), cache.path()).unwrap_err();
    assert!(matches!(err, Error::Transport { status: 0, .. }));
}
