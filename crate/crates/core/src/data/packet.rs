use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Tcp,
    Udp,
}

impl FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tcp" | "6" => Ok(Protocol::Tcp),
            "udp" | "17" => Ok(Protocol::Udp),
            other => Err(format!("unknown protocol {other:?}")),
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::Tcp => "tcp",
            Protocol::Udp => "udp",
        })
    }
}

/// One captured packet header.
#[derive(Debug, Clone, PartialEq)]
pub struct PacketEvent {
    /// Seconds.
    pub timestamp: f64,
    pub src_addr: String,
    pub src_port: u16,
    pub dst_addr: String,
    pub dst_port: u16,
    pub protocol: Protocol,
    /// Bytes.
    pub length: u64,
}

impl PacketEvent {
    pub fn new(
        timestamp: f64,
        src: &str,
        sport: u16,
        dst: &str,
        dport: u16,
        protocol: Protocol,
        length: u64,
    ) -> Self {
        Self {
            timestamp,
            src_addr: src.to_string(),
            src_port: sport,
            dst_addr: dst.to_string(),
            dst_port: dport,
            protocol,
            length,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.timestamp.is_finite() && !self.src_addr.is_empty() && !self.dst_addr.is_empty()
    }
}

#[derive(Debug, Clone, Default)]
pub struct PacketLog {
    pub events: Vec<PacketEvent>,
    /// Lines that could not be parsed into an event.
    pub malformed: usize,
}

fn parse_line(line: &str) -> Option<PacketEvent> {
    let f: Vec<&str> = line.split(',').map(str::trim).collect();
    if f.len() != 7 {
        return None;
    }
    let timestamp: f64 = f[0].parse().ok()?;
    let src_port: u16 = f[2].parse().ok()?;
    let dst_port: u16 = f[4].parse().ok()?;
    let protocol: Protocol = f[5].parse().ok()?;
    let length: u64 = f[6].parse().ok()?;
    let ev = PacketEvent {
        timestamp,
        src_addr: f[1].to_string(),
        src_port,
        dst_addr: f[3].to_string(),
        dst_port,
        protocol,
        length,
    };
    ev.is_valid().then_some(ev)
}

/// Parse `timestamp,src,sport,dst,dport,proto,length` records. Blank lines
/// and `#` comments are ignored; anything else that fails to parse (ports out
/// of range, negative length, unknown protocol) is counted as malformed.
pub fn parse_packet_log(text: &str) -> PacketLog {
    let mut log = PacketLog::default();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match parse_line(line) {
            Some(ev) => log.events.push(ev),
            None => log.malformed += 1,
        }
    }
    log
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_counts_malformed() {
        let log = parse_packet_log(
            "# capture\n\
             0.5,10.0.0.1,1234,10.0.0.2,443,tcp,60\n\
             0.6,10.0.0.2,443,10.0.0.1,1234,TCP,1500\n\
             0.7,10.0.0.2,70000,10.0.0.1,1234,tcp,10\n\
             0.8,10.0.0.2,443,10.0.0.1,1234,icmp,10\n\
             0.9,10.0.0.2,443,10.0.0.1,1234,udp,-4\n\
             nan,a,1,b,2,udp,4\n\
             \n\
             1.0,10.0.0.3,53,10.0.0.1,5353,17,80\n",
        );
        assert_eq!(log.events.len(), 3);
        assert_eq!(log.malformed, 4);
        assert_eq!(log.events[2].protocol, Protocol::Udp);
    }
}
