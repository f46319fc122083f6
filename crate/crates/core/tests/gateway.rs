//! Operator HTTP API, exercised with plain HTTP/1.1 over TCP.

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::sync::{Arc, RwLock};
use std::time::{Duration, Instant};

use serde_json::Value;

use medusa::config::Config;
use medusa::frames::{enu_to_geo, EnuPoint};
use medusa::link::telemetry::{PoseDoc, SafetyDoc, SampleDoc, Telemetry};
use medusa::mission::FlightMode;
use medusa::sim::{SimOptions, Simulation};
use medusa::station::gateway::{self, SharedStation};
use medusa::station::{MissionLog, Station};
use medusa::worldsim::{generate_world, Parameter};

fn setup(cfg: &Config) -> (SharedStation, gateway::GatewayHandle) {
    let world = generate_world(7, &cfg.world).unwrap();
    let st = Arc::new(RwLock::new(Station::new(cfg, &world.grid, MissionLog::in_memory())));
    let gw = gateway::spawn("127.0.0.1:0", st.clone()).unwrap();
    (st, gw)
}

fn request(addr: SocketAddr, method: &str, path: &str, body: Option<&str>) -> (u16, String) {
    let mut s = TcpStream::connect(addr).unwrap();
    s.set_read_timeout(Some(Duration::from_secs(10))).unwrap();
    let body = body.unwrap_or("");
    write!(
        s,
        "{method} {path} HTTP/1.1\r\nHost: test\r\nConnection: close\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{body}",
        body.len()
    )
    .unwrap();
    let mut raw = String::new();
    s.read_to_string(&mut raw).unwrap();
    let status = raw[9..12].parse().unwrap();
    let body = raw.split_once("\r\n\r\n").map(|x| x.1).unwrap_or("").to_string();
    (status, body)
}

fn get(addr: SocketAddr, path: &str) -> (u16, Value) {
    let (code, body) = request(addr, "GET", path, None);
    (code, serde_json::from_str(&body).unwrap_or(Value::Null))
}

fn post(addr: SocketAddr, path: &str, body: &str) -> (u16, Value) {
    let (code, body) = request(addr, "POST", path, Some(body));
    (code, serde_json::from_str(&body).unwrap_or(Value::Null))
}

fn goal_body(east: f64, north: f64) -> String {
    let g = enu_to_geo(Config::default().mission.origin, EnuPoint { east, north }).unwrap();
    format!(r#"{{"lat": {}, "lon": {}}}"#, g.lat, g.lon)
}

fn feed_samples(st: &SharedStation, n: usize) {
    let origin = Config::default().mission.origin;
    let mut st = st.write().unwrap();
    for i in 0..n {
        let p = EnuPoint { east: -250.0 + 20.0 * (i % 20) as f64, north: -100.0 + 20.0 * (i / 20) as f64 };
        let g = enu_to_geo(origin, p).unwrap();
        for param in [Parameter::Turbidity, Parameter::Ph] {
            let value = 7.0 + (p.east / 90.0).sin();
            st.ingest_doc(&Telemetry::Sample(SampleDoc { t: i as f64, lat: g.lat, lon: g.lon, param, value }))
                .unwrap();
        }
    }
}

#[test]
fn state_before_any_telemetry() {
    let (_st, gw) = setup(&Config::default());
    let (code, v) = get(gw.local_addr(), "/api/state");
    assert_eq!(code, 200);
    assert!(v["pose"].is_null() && v["battery"].is_null() && v["mode"].is_null());
    assert_eq!(v["sample_count"], 0);
    assert_eq!(v["track_points"], 0);
}

#[test]
fn goals_are_checked() {
    let (st, gw) = setup(&Config::default());
    let sent = Arc::new(std::sync::Mutex::new(Vec::new()));
    let sink = sent.clone();
    st.write().unwrap().set_command_sink(move |t, _| sink.lock().unwrap().push(t.to_string()));
    let a = gw.local_addr();

    assert_eq!(post(a, "/api/goal", &goal_body(60.0, 10.0)), (409, serde_json::json!({"error": "NotNavigable"})));
    assert_eq!(post(a, "/api/goal", &goal_body(0.0, 195.0)).1["error"], "OutsideGeofence");
    let (code, v) = post(a, "/api/goal", &goal_body(-100.0, -20.0));
    assert_eq!(code, 200, "{v}");
    assert_eq!(v["accepted"], true);
    assert_eq!(*sent.lock().unwrap(), vec!["cmd/1/goal".to_string()]);

    for bad in ["{", r#"{"lat": 37.4}"#, r#"{"lat": "x", "lon": 1}"#, r#"{"lat": 95.0, "lon": 0.0}"#] {
        let (code, v) = post(a, "/api/goal", bad);
        assert_eq!(code, 400, "{bad}");
        assert_eq!(v["error"], "BadRequest");
    }
}

#[test]
fn mode_requests() {
    let (st, gw) = setup(&Config::default());
    st.write().unwrap().set_command_sink(|_, _| {});
    let a = gw.local_addr();
    assert_eq!(post(a, "/api/mode", r#"{"mode": "AUTO"}"#).0, 200);
    assert_eq!(post(a, "/api/mode", r#"{"mode": "CRUISE"}"#).0, 400);
    st.write()
        .unwrap()
        .ingest_doc(&Telemetry::Safety(SafetyDoc { t: 0.0, flags: vec![], mode: Some(FlightMode::Failsafe) }))
        .unwrap();
    assert_eq!(post(a, "/api/mode", r#"{"mode": "AUTO"}"#), (409, serde_json::json!({"error": "IllegalTransition"})));
}

#[test]
fn grids_suggestions_and_compliance() {
    let (st, gw) = setup(&Config::default());
    let a = gw.local_addr();
    assert_eq!(get(a, "/api/grid/turbidity").0, 404);
    assert_eq!(get(a, "/api/grid/salinity").0, 400);

    feed_samples(&st, 60);
    let (code, v) = get(a, "/api/grid/turbidity");
    assert_eq!(code, 200);
    let cells = v["geometry"]["ncols"].as_u64().unwrap() * v["geometry"]["nrows"].as_u64().unwrap();
    assert_eq!(v["mean"].as_array().unwrap().len() as u64, cells);
    assert_eq!(v["sd"].as_array().unwrap().len() as u64, cells);
    assert!(v["mean"].as_array().unwrap().iter().any(Value::is_null), "land is null");

    let (code, v) = get(a, "/api/suggest");
    assert_eq!(code, 200);
    assert!(v["lat"].is_f64() && v["lon"].is_f64());

    let (code, v) = get(a, "/api/compliance");
    assert_eq!(code, 200);
    assert!(v["entries"].as_array().is_some_and(|e| !e.is_empty()));
}

#[test]
fn track_is_decimated() {
    let (st, gw) = setup(&Config::default());
    let origin = Config::default().mission.origin;
    {
        let mut st = st.write().unwrap();
        for i in 0..5000 {
            let g = enu_to_geo(origin, EnuPoint { east: -200.0 + 0.05 * i as f64, north: 0.0 }).unwrap();
            let doc = PoseDoc { t: i as f64, lat: g.lat, lon: g.lon, heading_rad: 0.0, speed_mps: 1.0 };
            st.ingest_doc(&Telemetry::Pose(doc)).unwrap();
        }
    }
    let (code, v) = get(gw.local_addr(), "/api/track/1");
    assert_eq!(code, 200);
    let pts = v["points"].as_array().unwrap();
    assert!(pts.len() <= 2000 && pts.len() > 1000);
    assert_eq!(pts.last().unwrap()["t"], 4999.0);
    assert_eq!(get(gw.local_addr(), "/api/track/9").0, 404);
}

#[test]
fn stream_pushes_events_and_heartbeats() {
    let mut cfg = Config::default();
    cfg.station.heartbeat_s = 0.3;
    let (st, gw) = setup(&cfg);
    let mut s = TcpStream::connect(gw.local_addr()).unwrap();
    s.set_read_timeout(Some(Duration::from_millis(100))).unwrap();
    write!(s, "GET /api/stream HTTP/1.1\r\nHost: test\r\n\r\n").unwrap();

    let mut seen = String::new();
    let mut read_for = |s: &mut TcpStream, until: &dyn Fn(&str) -> bool, limit: Duration| {
        let end = Instant::now() + limit;
        let mut buf = [0u8; 4096];
        while Instant::now() < end && !until(&seen) {
            if let Ok(n) = s.read(&mut buf) {
                seen.push_str(&String::from_utf8_lossy(&buf[..n]));
            }
        }
        until(&seen)
    };
    assert!(read_for(&mut s, &|t| t.contains("application/x-ndjson"), Duration::from_secs(2)));

    let published = Instant::now();
    let g = enu_to_geo(cfg.mission.origin, EnuPoint { east: 1.0, north: 2.0 }).unwrap();
    st.write()
        .unwrap()
        .ingest_doc(&Telemetry::Pose(PoseDoc { t: 5.0, lat: g.lat, lon: g.lon, heading_rad: 0.0, speed_mps: 0.0 }))
        .unwrap();
    assert!(read_for(&mut s, &|t| t.contains(r#""kind":"pose""#), Duration::from_secs(1)));
    assert!(published.elapsed() < Duration::from_secs(1));
    assert!(read_for(&mut s, &|t| t.contains(": heartbeat"), Duration::from_secs(2)));
}

#[test]
fn sample_count_never_decreases_during_a_run() {
    let cfg = Config::default();
    let opts = SimOptions { duration_s: 600.0, ..SimOptions::from_config(&cfg) };
    let sim = Simulation::new(cfg, &opts).unwrap();
    let gw = gateway::spawn("127.0.0.1:0", sim.station()).unwrap();
    let runner = std::thread::spawn(move || sim.run(Some(2000.0)).map(|(_, r)| r));
    let mut last = 0;
    let mut reads = 0;
    while !runner.is_finished() {
        let (code, v) = get(gw.local_addr(), "/api/state");
        assert_eq!(code, 200);
        let n = v["sample_count"].as_u64().unwrap();
        assert!(n >= last, "{n} < {last}");
        last = n;
        reads += 1;
        std::thread::sleep(Duration::from_millis(20));
    }
    let report = runner.join().unwrap().unwrap();
    assert!(reads > 5);
    assert_eq!(get(gw.local_addr(), "/api/state").1["sample_count"].as_u64().unwrap() as usize,
        report.samples.values().sum::<usize>());
}
