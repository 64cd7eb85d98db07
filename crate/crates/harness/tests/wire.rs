use std::io::{Cursor, Read, Write};
use std::net::{TcpListener, TcpStream};

use duel_align::{LabelMode, OracleSpec, RewardKind};
use duel_align_harness::wire::{self, LabelRequest, Reply, WirePair, MAX_FRAME_BYTES};
use duel_align_harness::{OracleService, ServiceConfig};

fn request() -> LabelRequest {
    LabelRequest {
        id: 42,
        pairs: vec![
            WirePair { ctx: vec![0.1, -2.5e-7], fy: vec![1.0, 0.3], fyp: vec![-0.7, 1.0 / 3.0] },
            WirePair { ctx: vec![], fy: vec![0.0, 0.0], fyp: vec![f64::MIN_POSITIVE, 0.5] },
        ],
        mode: LabelMode::Bernoulli,
        seed: u64::MAX,
    }
}

#[test]
fn encode_decode_is_identity() {
    let mut buf = Vec::new();
    wire::send(&mut buf, &request()).unwrap();
    assert_eq!(u32::from_be_bytes(buf[..4].try_into().unwrap()) as usize, buf.len() - 4);
    let mut cur = Cursor::new(buf);
    let body = wire::read_frame(&mut cur).unwrap().unwrap();
    let back: LabelRequest = wire::decode(&body).unwrap();
    assert_eq!(back, request());
    assert!(wire::read_frame(&mut cur).unwrap().is_none());
}

#[test]
fn request_json_uses_the_documented_field_names() {
    let v: serde_json::Value = serde_json::to_value(request()).unwrap();
    assert_eq!(v["mode"], "bernoulli");
    assert!(v["pairs"][0]["fyp"].is_array());
    let reply: Reply = serde_json::from_str(r#"{"id":3,"winners":[0,1],"probs":[0.5,0.25]}"#).unwrap();
    assert!(matches!(reply, Reply::Labels(r) if r.winners == vec![0, 1]));
    let reply: Reply = serde_json::from_str(r#"{"id":3,"error":"bad"}"#).unwrap();
    assert!(matches!(reply, Reply::Error(e) if e.id == 3));
}

#[test]
fn broken_frames_are_rejected() {
    let mut oversized = ((MAX_FRAME_BYTES + 1) as u32).to_be_bytes().to_vec();
    oversized.extend_from_slice(b"{}");
    assert!(wire::read_frame(&mut Cursor::new(oversized)).is_err());

    let mut truncated = 10u32.to_be_bytes().to_vec();
    truncated.extend_from_slice(b"{\"id\"");
    assert!(wire::read_frame(&mut Cursor::new(truncated)).is_err());

    assert!(wire::decode::<LabelRequest>(b"{\"id\": 1}").is_err());
}

fn service() -> OracleService {
    let oracle = OracleSpec::random(RewardKind::Linear, 2, 0, LabelMode::Deterministic);
    OracleService::start(TcpListener::bind("127.0.0.1:0").unwrap(), oracle, ServiceConfig::default()).unwrap()
}

fn reply_then_close(svc: &OracleService, body: &[u8]) -> Reply {
    let mut s = TcpStream::connect(svc.addr()).unwrap();
    wire::write_frame(&mut s, body).unwrap();
    let reply = wire::decode(&wire::read_frame(&mut s).unwrap().unwrap()).unwrap();
    let mut rest = Vec::new();
    assert_eq!(s.read_to_end(&mut rest).unwrap(), 0, "connection stays open");
    reply
}

#[test]
fn service_answers_malformed_requests_with_an_error_and_hangs_up() {
    let svc = service();
    match reply_then_close(&svc, br#"{"id": 9, "pairs": "nope"}"#) {
        Reply::Error(e) => assert_eq!(e.id, 9),
        other => panic!("{other:?}"),
    }
    assert!(matches!(reply_then_close(&svc, b"\xff\xfe garbage"), Reply::Error(_)));

    let mut bad = request();
    bad.pairs[0].fy.push(1.0);
    let body = serde_json::to_vec(&bad).unwrap();
    assert!(matches!(reply_then_close(&svc, &body), Reply::Error(e) if e.id == 42));

    // a length prefix that promises more than arrives
    let mut s = TcpStream::connect(svc.addr()).unwrap();
    s.write_all(&100u32.to_be_bytes()).unwrap();
    s.write_all(b"{}").unwrap();
    s.shutdown(std::net::Shutdown::Write).unwrap();
    let mut rest = Vec::new();
    s.read_to_end(&mut rest).unwrap();
    svc.shutdown();
}
