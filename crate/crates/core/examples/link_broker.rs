//! Local broker with one publisher and two subscribers.

use std::time::Duration;

use medusa::link::{Broker, Client, LinkConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let broker = Broker::bind("127.0.0.1:0", &LinkConfig::default())?;
    let addr = broker.local_addr();
    println!("broker on {addr}");

    let wait = Duration::from_secs(2);
    let everything = Client::connect(addr, "console", wait)?;
    everything.subscribe("asv/#")?;
    let poses = Client::connect(addr, "logger", wait)?;
    poses.subscribe("asv/1/pose")?;
    let vehicle = Client::connect(addr, "asv-1", wait)?;

    vehicle.publish("asv/1/pose", br#"{"t":0.0,"lat":37.41,"lon":-5.98}"#)?;
    vehicle.publish("asv/1/battery", br#"{"t":0.0,"pct":99.5}"#)?;
    vehicle.publish("cmd/1/mode", br#"{"mode":"HOLD"}"#)?;

    while let Some(m) = everything.recv_timeout(Duration::from_millis(300)) {
        println!("console <- {} {}", m.topic, String::from_utf8_lossy(&m.payload));
    }
    while let Some(m) = poses.recv_timeout(Duration::from_millis(300)) {
        println!("logger  <- {} {}", m.topic, String::from_utf8_lossy(&m.payload));
    }
    println!("{} messages routed", broker.routed());
    broker.shutdown();
    Ok(())
}
