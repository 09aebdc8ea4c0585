use std::collections::HashMap;

use super::packet::{PacketEvent, Protocol};

pub const DEFAULT_IDLE_TIMEOUT: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Forward,
    Backward,
}

/// Canonical five-tuple: the lexicographically smaller `(addr, port)`
/// endpoint is stored as `a`, so both directions of a conversation share a key.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FlowKey {
    pub addr_a: String,
    pub port_a: u16,
    pub addr_b: String,
    pub port_b: u16,
    pub protocol: Protocol,
}

impl FlowKey {
    /// Key for `ev` and whether `ev` travels from endpoint `a` to `b`.
    pub fn of(ev: &PacketEvent) -> (Self, bool) {
        let src = (ev.src_addr.as_str(), ev.src_port);
        let dst = (ev.dst_addr.as_str(), ev.dst_port);
        let a_to_b = src <= dst;
        let ((addr_a, port_a), (addr_b, port_b)) = if a_to_b { (src, dst) } else { (dst, src) };
        let key = FlowKey {
            addr_a: addr_a.to_string(),
            port_a,
            addr_b: addr_b.to_string(),
            port_b,
            protocol: ev.protocol,
        };
        (key, a_to_b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowPacket {
    pub timestamp: f64,
    pub length: u64,
    pub direction: Direction,
}

/// Time-ordered packets of one bidirectional conversation. `Forward` is the
/// direction of the first packet.
#[derive(Debug, Clone, PartialEq)]
pub struct Flow {
    pub key: FlowKey,
    pub packets: Vec<FlowPacket>,
    pub label: Option<usize>,
}

impl Flow {
    pub fn start(&self) -> f64 {
        self.packets[0].timestamp
    }
}

#[derive(Debug, Clone, Default)]
pub struct FlowAssembly {
    pub flows: Vec<Flow>,
    /// Events rejected by filtering.
    pub skipped: usize,
}

struct Active {
    flow: Flow,
    forward_is_a_to_b: bool,
    last: f64,
}

/// Group packets into bidirectional flows, splitting a key's packets into a
/// new flow whenever the gap between consecutive packets exceeds
/// `idle_timeout` seconds.
///
/// Events are sorted internally by a total order (timestamp, then tuple and
/// length) so the result does not depend on input order. Flows come back
/// ordered by start time, then key.
pub fn assemble_flows(events: &[PacketEvent], idle_timeout: f64) -> FlowAssembly {
    assert!(idle_timeout > 0.0, "idle_timeout must be positive");
    let mut valid: Vec<&PacketEvent> = Vec::with_capacity(events.len());
    let mut skipped = 0;
    for ev in events {
        if ev.is_valid() {
            valid.push(ev);
        } else {
            skipped += 1;
        }
    }
    valid.sort_by(|x, y| {
        x.timestamp.total_cmp(&y.timestamp).then_with(|| {
            (
                &x.src_addr,
                x.src_port,
                &x.dst_addr,
                x.dst_port,
                x.protocol,
                x.length,
            )
                .cmp(&(
                    &y.src_addr,
                    y.src_port,
                    &y.dst_addr,
                    y.dst_port,
                    y.protocol,
                    y.length,
                ))
        })
    });

    let mut active: HashMap<FlowKey, Active> = HashMap::new();
    let mut done = Vec::new();
    for ev in valid {
        let (key, a_to_b) = FlowKey::of(ev);
        if let Some(cur) = active.get(&key) {
            if ev.timestamp - cur.last > idle_timeout {
                done.push(active.remove(&key).unwrap().flow);
            }
        }
        let entry = active.entry(key.clone()).or_insert_with(|| Active {
            flow: Flow {
                key,
                packets: Vec::new(),
                label: None,
            },
            forward_is_a_to_b: a_to_b,
            last: ev.timestamp,
        });
        let direction = if a_to_b == entry.forward_is_a_to_b {
            Direction::Forward
        } else {
            Direction::Backward
        };
        entry.flow.packets.push(FlowPacket {
            timestamp: ev.timestamp,
            length: ev.length,
            direction,
        });
        entry.last = ev.timestamp;
    }
    done.extend(active.into_values().map(|a| a.flow));
    done.sort_by(|x, y| {
        x.start()
            .total_cmp(&y.start())
            .then_with(|| x.key.cmp(&y.key))
    });
    FlowAssembly {
        flows: done,
        skipped,
    }
}
