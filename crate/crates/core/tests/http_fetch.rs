use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;

use refsteg_core::carrier::{CarrierError, HttpFetcher};
use refsteg_core::fixtures;
use refsteg_core::protocol;
use refsteg_core::{CarrierSource, Resolver, SecretLocation, Segment};

struct Server {
    base: String,
    hits: Arc<AtomicUsize>,
}

/// Serves `body` at `/data`; honours single `Range` headers unless
/// `ignore_range`. Everything else is 404.
fn serve(body: Vec<u8>, ignore_range: bool) -> Server {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            counter.fetch_add(1, Ordering::SeqCst);
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let mut range = None;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line.trim().is_empty() {
                    break;
                }
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("range: bytes=") {
                    let (s, e) = v.trim().split_once('-').unwrap();
                    range = Some((s.parse::<usize>().unwrap(), e.parse::<usize>().unwrap()));
                }
            }
            let path = request_line.split_whitespace().nth(1).unwrap_or("");
            let (status, headers, payload): (&str, String, Vec<u8>) = if path != "/data" {
                ("404 Not Found", String::new(), b"missing".to_vec())
            } else {
                match range {
                    Some((s, e)) if !ignore_range => {
                        if s >= body.len() {
                            (
                                "416 Range Not Satisfiable",
                                format!("Content-Range: bytes */{}\r\n", body.len()),
                                Vec::new(),
                            )
                        } else {
                            let e = e.min(body.len() - 1);
                            (
                                "206 Partial Content",
                                format!("Content-Range: bytes {s}-{e}/{}\r\n", body.len()),
                                body[s..=e].to_vec(),
                            )
                        }
                    }
                    _ => ("200 OK", String::new(), body.clone()),
                }
            };
            let head = format!(
                "HTTP/1.1 {status}\r\n{headers}Content-Length: {}\r\nConnection: close\r\n\r\n",
                payload.len()
            );
            let _ = stream.write_all(head.as_bytes());
            let _ = stream.write_all(&payload);
        }
    });
    Server { base, hits }
}

fn body() -> Vec<u8> {
    (0..5000u32).map(|i| (i * 31 % 251) as u8).collect()
}

#[test]
fn range_requests_and_cache() {
    let data = body();
    let server = serve(data.clone(), false);
    let cache = tempfile::tempdir().unwrap();
    let url = format!("{}/data", server.base);
    let segs = [Segment::new(10, 20).unwrap(), Segment::new(4000, 4100).unwrap()];

    let fetcher = HttpFetcher::new().with_cache_dir(cache.path());
    let got = fetcher.fetch(&url, &segs).unwrap();
    let mut want = data[10..20].to_vec();
    want.extend_from_slice(&data[4000..4100]);
    assert_eq!(got, want);
    assert_eq!(server.hits.load(Ordering::SeqCst), 2);

    assert_eq!(fetcher.fetch(&url, &segs).unwrap(), want);
    assert_eq!(server.hits.load(Ordering::SeqCst), 2, "second fetch should be served from cache");

    let bypass = HttpFetcher::new().with_cache_dir(cache.path()).bypass_cache(true);
    assert_eq!(bypass.fetch(&url, &segs).unwrap(), want);
    assert_eq!(server.hits.load(Ordering::SeqCst), 4);

    assert_eq!(fetcher.fetch(&url, &[]).unwrap(), data);
}

#[test]
fn whole_body_reply_sliced_locally() {
    let data = body();
    let server = serve(data.clone(), true);
    let url = format!("{}/data", server.base);
    let fetcher = HttpFetcher::new();
    let got = fetcher
        .fetch(&url, &[Segment::new(100, 110).unwrap(), Segment::new(0, 5).unwrap()])
        .unwrap();
    let mut want = data[100..110].to_vec();
    want.extend_from_slice(&data[..5]);
    assert_eq!(got, want);
    assert_eq!(server.hits.load(Ordering::SeqCst), 1);

    assert!(matches!(
        fetcher.fetch(&url, &[Segment::new(4990, 6000).unwrap()]),
        Err(CarrierError::SegmentOutOfBounds { .. })
    ));
}

#[test]
fn out_of_range_and_missing() {
    let server = serve(body(), false);
    let fetcher = HttpFetcher::new();
    assert!(matches!(
        fetcher.fetch(&format!("{}/data", server.base), &[Segment::new(6000, 6010).unwrap()]),
        Err(CarrierError::SegmentOutOfBounds { len: 5000, .. })
    ));
    assert!(matches!(
        fetcher.fetch(&format!("{}/gone", server.base), &[]),
        Err(CarrierError::NotFound(_))
    ));
}

#[test]
fn unreachable_host_is_fetch_failure() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    assert!(matches!(
        HttpFetcher::new().fetch(&format!("http://{addr}/x"), &[]),
        Err(CarrierError::FetchFailed(_))
    ));
}

#[test]
fn hide_and_extract_over_http() {
    let image = fixtures::tree_image();
    let server = serve(image.clone(), false);
    let loc: SecretLocation = format!("{}/data#0-{}", server.base, image.len()).parse().unwrap();
    let resolver = Resolver::new();
    let carrier = resolver.resolve(&loc).unwrap();
    assert_eq!(carrier.bytes, image);
    let set = protocol::hide(b"knife", &carrier, &fixtures::experiment_one_model()).unwrap();
    assert_eq!(set.secret_difference.values(), &fixtures::EXPERIMENT_ONE_DIFFERENCE);
    assert_eq!(protocol::extract(&set, &resolver).unwrap(), b"knife");
}
