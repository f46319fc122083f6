//! Broker and bridge over real sockets.

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::thread;
use std::time::{Duration, Instant};

use medusa::bus::{topics, Bus, Payload};
use medusa::config::Config;
use medusa::frames::{EnuPoint, Pose};
use medusa::link::telemetry::PoseDoc;
use medusa::link::{encode, Bridge, Broker, Client, Decoder, Frame, FrameType, LinkConfig};
use medusa::mission::{FlightMode, MissionNode};
use medusa::worldsim::generate_world;

const WAIT: Duration = Duration::from_secs(2);

fn broker(cfg: &LinkConfig) -> Broker {
    Broker::bind("127.0.0.1:0", cfg).unwrap()
}

fn client(addr: SocketAddr, id: &str) -> Client {
    Client::connect(addr, id, WAIT).unwrap()
}

fn wait_until(limit: Duration, mut cond: impl FnMut() -> bool) -> bool {
    let end = Instant::now() + limit;
    while Instant::now() < end {
        if cond() {
            return true;
        }
        thread::sleep(Duration::from_millis(10));
    }
    cond()
}

#[test]
fn wildcard_routing() {
    let b = broker(&LinkConfig::default());
    let all = client(b.local_addr(), "all");
    let poses = client(b.local_addr(), "poses");
    let publisher = client(b.local_addr(), "pub");
    all.subscribe("asv/#").unwrap();
    // only a trailing '#' is a wildcard
    assert!(poses.subscribe("asv/+/pose").is_err());
    poses.subscribe("asv/1/pose").unwrap();

    publisher.publish("asv/1/pose", b"p").unwrap();
    publisher.publish("asv/1/samples", b"s").unwrap();
    publisher.publish("cmd/1/goal", b"g").unwrap();

    let got: Vec<String> = (0..2).filter_map(|_| all.recv_timeout(WAIT)).map(|m| m.topic).collect();
    assert_eq!(got, vec!["asv/1/pose", "asv/1/samples"]);
    let m = poses.recv_timeout(WAIT).unwrap();
    assert_eq!((m.topic.as_str(), m.payload.as_slice()), ("asv/1/pose", &b"p"[..]));
    assert!(poses.recv_timeout(Duration::from_millis(200)).is_none());
    assert!(all.recv_timeout(Duration::from_millis(100)).is_none());
}

#[test]
fn nothing_is_retained() {
    let b = broker(&LinkConfig::default());
    let publisher = client(b.local_addr(), "pub");
    publisher.publish("asv/1/pose", b"early").unwrap();
    thread::sleep(Duration::from_millis(100));
    let late = client(b.local_addr(), "late");
    late.subscribe("asv/#").unwrap();
    assert!(late.recv_timeout(Duration::from_millis(300)).is_none());
    publisher.publish("asv/1/pose", b"later").unwrap();
    assert_eq!(late.recv_timeout(WAIT).unwrap().payload, b"later");
}

#[test]
fn per_publisher_order_is_preserved() {
    let b = broker(&LinkConfig::default());
    let subs: Vec<Client> = (0..2)
        .map(|i| {
            let c = client(b.local_addr(), &format!("sub{i}"));
            c.subscribe("asv/#").unwrap();
            c
        })
        .collect();
    let handles: Vec<_> = (0..3)
        .map(|p| {
            let addr = b.local_addr();
            thread::spawn(move || {
                let c = client(addr, &format!("pub{p}"));
                for i in 0..1000u32 {
                    c.publish(&format!("asv/{p}/pose"), &i.to_be_bytes()).unwrap();
                    if i % 100 == 0 {
                        thread::yield_now();
                    }
                }
                // keep the connection open until the broker has read everything
                thread::sleep(Duration::from_millis(300));
            })
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
    for s in &subs {
        let mut next = [0u32; 3];
        for _ in 0..3000 {
            let m = s.recv_timeout(WAIT).expect("all 3000 messages arrive");
            let p: usize = m.topic.split('/').nth(1).unwrap().parse().unwrap();
            let i = u32::from_be_bytes(m.payload.try_into().unwrap());
            assert_eq!(i, next[p], "publisher {p} out of order");
            next[p] += 1;
        }
        assert_eq!(next, [1000; 3]);
    }
}

#[test]
fn misbehaving_connection_is_isolated() {
    let b = broker(&LinkConfig::default());
    let good = client(b.local_addr(), "good");
    good.subscribe("asv/#").unwrap();

    let mut raw = TcpStream::connect(b.local_addr()).unwrap();
    raw.write_all(&[0x4D, 0x4C, 0x7F, 0xFF, 0x00]).unwrap();
    raw.write_all(b"garbage that is not a frame").unwrap();
    drop(raw);

    let publisher = client(b.local_addr(), "pub");
    publisher.publish("asv/1/battery", b"ok").unwrap();
    assert_eq!(good.recv_timeout(WAIT).unwrap().payload, b"ok");
    assert!(good.is_connected());
}

#[test]
fn silent_connections_are_dropped_after_missed_pings() {
    let cfg = LinkConfig {
        ping_interval_s: 0.1,
        ..LinkConfig::default()
    };
    let b = broker(&cfg);
    let alive = client(b.local_addr(), "alive");

    let mut raw = TcpStream::connect(b.local_addr()).unwrap();
    raw.write_all(&encode(&Frame::new(FrameType::Connect, "mute", Vec::new())).unwrap())
        .unwrap();
    assert!(wait_until(WAIT, || b.connection_count() == 2));

    // a client that never answers PING is cut after three sweeps
    assert!(wait_until(Duration::from_secs(3), || b.connection_count() == 1));
    raw.set_read_timeout(Some(Duration::from_millis(500))).unwrap();
    let mut dec = Decoder::new();
    let mut buf = [0u8; 256];
    let mut pings = 0;
    loop {
        match raw.read(&mut buf) {
            Ok(0) | Err(_) => break,
            Ok(n) => {
                dec.feed(&buf[..n]);
                while let Ok(f) = dec.next_frame() {
                    pings += usize::from(f.kind == FrameType::Ping);
                }
            }
        }
    }
    assert_eq!(pings, 3);
    assert!(alive.is_connected());
}

fn bridge_config(port: u16) -> LinkConfig {
    LinkConfig {
        port,
        backoff_initial_s: 0.05,
        backoff_max_s: 0.2,
        connect_timeout_s: 0.5,
        ..LinkConfig::default()
    }
}

fn next_comms(sub: &medusa::bus::Subscription) -> Option<bool> {
    match sub.recv_timeout(Duration::from_secs(3))?.payload {
        Payload::Comms(up) => Some(up),
        _ => None,
    }
}

#[test]
fn bridge_carries_telemetry_up_and_commands_down() {
    let b = broker(&LinkConfig::default());
    let bus = Bus::new();
    let comms = bus.subscribe(&topics::comms("1")).unwrap();
    let goals = bus.subscribe(&topics::goal("1")).unwrap();
    let origin = Config::default().mission.origin;
    let bridge = Bridge::spawn(&bus, &bridge_config(b.local_addr().port()), "1", origin).unwrap();
    assert_eq!(next_comms(&comms), Some(true));

    let station = client(b.local_addr(), "station");
    station.subscribe("asv/#").unwrap();
    let pose = Pose::at(EnuPoint { east: 10.0, north: -5.0 }, 0.5);
    bus.publish(&topics::pose("1"), Payload::Pose(pose)).unwrap();
    let m = station.recv_timeout(WAIT).expect("pose uplinked");
    assert_eq!(m.topic, "asv/1/pose");
    let doc: PoseDoc = serde_json::from_slice(&m.payload).unwrap();
    let p = doc.position(origin).unwrap();
    assert!(p.distance(&pose.position) < 1e-6);
    assert!(m.payload.len() + m.topic.len() + 6 <= 256);

    station.publish("cmd/1/goal", br#"{"lat": 37.4186, "lon": -5.9872}"#).unwrap();
    let g = goals.recv_timeout(WAIT).expect("goal downlinked");
    assert!(matches!(g.payload, Payload::Goal(p) if p.lat == 37.4186 && p.lon == -5.9872));
    assert!(bridge.stats().uplinked.load(std::sync::atomic::Ordering::Relaxed) >= 1);
    bridge.stop();
}

/// Loses the broker, times out into HOLD and recovers after a restart on the
/// same port. Timings are scaled down: a 0.6 s watchdog instead of 30 s.
#[test]
fn comms_loss_holds_and_reconnects() {
    let cfg = Config::default();
    let world = generate_world(7, &cfg.world).unwrap();
    let b = broker(&LinkConfig::default());
    let addr = b.local_addr();
    let bus = Bus::new();
    let comms = bus.subscribe(&topics::comms("1")).unwrap();
    let mission_cfg = medusa::mission::MissionConfig {
        comms_timeout_s: 0.6,
        ..cfg.mission.clone()
    };
    let mut mission = MissionNode::new(&bus, mission_cfg, &world.grid, 2.0).unwrap();
    mission.load_plan(&cfg.mission.waypoints);
    bus.publish(&topics::pose("1"), Payload::Pose(Pose::at(cfg.mission.home, 0.0))).unwrap();

    let bridge = Bridge::spawn(&bus, &bridge_config(addr.port()), "1", cfg.mission.origin).unwrap();
    assert_eq!(next_comms(&comms), Some(true));
    let start = Instant::now();
    let now = || start.elapsed().as_secs_f64();
    mission.tick(now());
    assert_eq!(mission.mode(), FlightMode::Auto);

    b.shutdown();
    assert_eq!(next_comms(&comms), Some(false));
    let lost = now();
    while mission.mode() == FlightMode::Auto {
        mission.tick(now());
        assert!(now() - lost < 3.0, "no HOLD after comms loss");
        thread::sleep(Duration::from_millis(20));
    }
    assert_eq!(mission.mode(), FlightMode::Hold);
    assert!(mission.flags().contains("CommsLost"));

    let b2 = Broker::bind(&addr.to_string(), &LinkConfig::default()).unwrap();
    assert_eq!(next_comms(&comms), Some(true));
    mission.tick(now());
    assert!(!mission.flags().contains("CommsLost"));
    assert!(bridge.stats().connects.load(std::sync::atomic::Ordering::Relaxed) >= 2);
    bridge.stop();
    drop(b2);
}
