//! Length-prefixed TCP framing for process-separated federation.
//!
//! ```text
//! frame   = length: u32 BE | type: u8 | payload: length bytes
//! payload = FETC parameter bytes | "key=value\n" metadata lines (UTF-8)
//! ```
//!
//! `length` counts the payload only. BROADCAST carries the global parameters
//! with `round`, `local_epochs` and `seed`; UPDATE carries the client's
//! parameters with `client_id`, `n_k` and `loss`; DONE has an empty payload.
//! Nothing is encrypted.

use std::io::{ErrorKind, Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::time::{Duration, Instant};

use super::aggregate::ClientUpdate;
use super::round::{
    convergence_check, local_train, ClientState, Convergence, FederationConfig, RoundRecord,
    ServerState,
};
use crate::error::{Error, Result};
use crate::nn::params::params_deserialize_prefix;
use crate::nn::{params_serialize, ParameterSet};

/// Frames larger than this are rejected before allocation.
pub const MAX_FRAME_LEN: u32 = 1 << 28;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum MessageType {
    Broadcast = 1,
    Update = 2,
    Done = 3,
}

impl TryFrom<u8> for MessageType {
    type Error = Error;

    fn try_from(b: u8) -> Result<Self> {
        match b {
            1 => Ok(Self::Broadcast),
            2 => Ok(Self::Update),
            3 => Ok(Self::Done),
            other => Err(Error::Protocol(format!("unknown message type {other}"))),
        }
    }
}

pub fn write_frame(w: &mut impl Write, kind: MessageType, payload: &[u8]) -> Result<()> {
    let len = u32::try_from(payload.len())
        .ok()
        .filter(|&l| l <= MAX_FRAME_LEN)
        .ok_or_else(|| {
            Error::Protocol(format!("payload of {} bytes is too large", payload.len()))
        })?;
    let mut buf = Vec::with_capacity(5 + payload.len());
    buf.extend_from_slice(&len.to_be_bytes());
    buf.push(kind as u8);
    buf.extend_from_slice(payload);
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

fn read_exact_or_protocol(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        ErrorKind::UnexpectedEof => Error::Protocol(format!("connection closed inside {what}")),
        _ => Error::Net(e),
    })
}

pub fn read_frame(r: &mut impl Read) -> Result<(MessageType, Vec<u8>)> {
    let mut header = [0u8; 5];
    read_exact_or_protocol(r, &mut header, "frame header")?;
    let len = u32::from_be_bytes([header[0], header[1], header[2], header[3]]);
    if len > MAX_FRAME_LEN {
        return Err(Error::Protocol(format!("frame length {len} exceeds limit")));
    }
    let kind = MessageType::try_from(header[4])?;
    let mut payload = vec![0u8; len as usize];
    read_exact_or_protocol(r, &mut payload, "frame payload")?;
    Ok((kind, payload))
}

pub fn encode_payload(params: &ParameterSet, meta: &[(&str, String)]) -> Vec<u8> {
    let mut out = params_serialize(params);
    for (k, v) in meta {
        out.extend_from_slice(format!("{k}={v}\n").as_bytes());
    }
    out
}

pub fn decode_payload(payload: &[u8]) -> Result<(ParameterSet, Vec<(String, String)>)> {
    if payload.is_empty() {
        return Err(Error::Protocol("empty payload".into()));
    }
    let (params, used) =
        params_deserialize_prefix(payload).map_err(|e| Error::Protocol(e.to_string()))?;
    let text = std::str::from_utf8(&payload[used..])
        .map_err(|_| Error::Protocol("metadata is not UTF-8".into()))?;
    let mut meta = Vec::new();
    for line in text.lines().filter(|l| !l.is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Protocol(format!("bad metadata line {line:?}")))?;
        meta.push((k.to_string(), v.to_string()));
    }
    Ok((params, meta))
}

fn field<T: std::str::FromStr>(meta: &[(String, String)], key: &str) -> Result<T> {
    let v = meta
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v)
        .ok_or_else(|| Error::Protocol(format!("metadata missing {key}")))?;
    v.parse()
        .map_err(|_| Error::Protocol(format!("bad {key} value {v:?}")))
}

pub fn encode_update(update: &ClientUpdate) -> Vec<u8> {
    encode_payload(
        &update.params,
        &[
            ("client_id", update.client_id.clone()),
            ("n_k", update.sample_count.to_string()),
            // Display for f64 is shortest round-trip, so the loss arrives bit-exact.
            ("loss", update.mean_local_loss.to_string()),
        ],
    )
}

pub fn decode_update(payload: &[u8]) -> Result<ClientUpdate> {
    let (params, meta) = decode_payload(payload)?;
    let client_id: String = field(&meta, "client_id")?;
    if client_id.is_empty() || client_id.contains(['\n', ';', ',']) {
        return Err(Error::Protocol(format!("invalid client_id {client_id:?}")));
    }
    Ok(ClientUpdate {
        client_id,
        params,
        sample_count: field(&meta, "n_k")?,
        mean_local_loss: field(&meta, "loss")?,
    })
}

struct Peer {
    stream: TcpStream,
    label: String,
}

fn accept_clients(listener: &TcpListener, expected: usize, deadline: Instant) -> Result<Vec<Peer>> {
    listener.set_nonblocking(true)?;
    let mut peers = Vec::new();
    while peers.len() < expected && Instant::now() < deadline {
        match listener.accept() {
            Ok((stream, addr)) => {
                stream.set_nonblocking(false)?;
                stream.set_nodelay(true)?;
                peers.push(Peer {
                    stream,
                    label: addr.to_string(),
                });
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => {
                std::thread::sleep(Duration::from_millis(5))
            }
            Err(e) => return Err(e.into()),
        }
    }
    listener.set_nonblocking(false)?;
    if peers.len() < expected {
        log::warn!(
            "only {} of {expected} clients connected before the timeout",
            peers.len()
        );
    }
    Ok(peers)
}

fn receive_update(
    peer: &mut Peer,
    deadline: Instant,
    global: &ParameterSet,
) -> Result<ClientUpdate> {
    let left = deadline
        .saturating_duration_since(Instant::now())
        .max(Duration::from_millis(1));
    peer.stream.set_read_timeout(Some(left))?;
    let (kind, payload) = read_frame(&mut peer.stream)?;
    if kind != MessageType::Update {
        return Err(Error::Protocol(format!("expected UPDATE, got {kind:?}")));
    }
    let update = decode_update(&payload)?;
    global.check_compatible(&update.params)?;
    Ok(update)
}

/// Run the federation over TCP. Waits up to `timeout_secs` for
/// `expected_clients` connections, then per round broadcasts the global model
/// and collects one UPDATE per live connection within the timeout. A client
/// that sends a malformed frame, disconnects or times out is logged, dropped
/// and excluded; the round aggregates over the rest.
pub fn serve_federation(
    server: &mut ServerState,
    listener: &TcpListener,
    config: &FederationConfig,
) -> Result<Vec<RoundRecord>> {
    config.validate()?;
    let (expected, timeout) = match &config.transport {
        super::round::Transport::Socket {
            expected_clients,
            timeout_secs,
            ..
        } => (*expected_clients, Duration::from_secs_f64(*timeout_secs)),
        super::round::Transport::InProcess => {
            return Err(Error::Config(
                "serve_federation needs socket transport".into(),
            ))
        }
    };
    let mut peers = accept_clients(listener, expected, Instant::now() + timeout)?;
    if peers.is_empty() {
        return Err(Error::Empty("connected clients"));
    }
    let mut records = Vec::new();
    for _ in 0..config.round_limit() {
        let round = server.next_round();
        let global = server.global_model.parameters();
        let payload = encode_payload(
            &global,
            &[
                ("round", round.to_string()),
                ("local_epochs", config.local_epochs.to_string()),
                ("seed", config.seed.to_string()),
            ],
        );
        let mut failures = Vec::new();
        let mut live = Vec::new();
        for mut p in peers.drain(..) {
            match write_frame(&mut p.stream, MessageType::Broadcast, &payload) {
                Ok(()) => live.push(p),
                Err(e) => {
                    log::warn!("round {round}: dropping {}: {e}", p.label);
                    failures.push((p.label, e.to_string()));
                }
            }
        }
        let deadline = Instant::now() + timeout;
        let mut updates: Vec<ClientUpdate> = Vec::new();
        for mut p in live {
            match receive_update(&mut p, deadline, &global) {
                Ok(u) if updates.iter().any(|o| o.client_id == u.client_id) => {
                    log::warn!(
                        "round {round}: dropping {}: duplicate client id {}",
                        p.label,
                        u.client_id
                    );
                    failures.push((p.label, format!("duplicate client id {}", u.client_id)));
                }
                Ok(u) => {
                    p.label = u.client_id.clone();
                    updates.push(u);
                    peers.push(p);
                }
                Err(e) => {
                    log::warn!("round {round}: dropping {}: {e}", p.label);
                    failures.push((p.label, e.to_string()));
                }
            }
        }
        let record = server
            .apply_updates(&updates, failures)
            .map_err(|e| Error::Round {
                round,
                source: Box::new(e),
            })?;
        records.push(record);
        if convergence_check(server.round_history(), &config.convergence) == Convergence::Converged
        {
            break;
        }
    }
    for mut p in peers {
        if let Err(e) = write_frame(&mut p.stream, MessageType::Done, &[]) {
            log::warn!("could not send DONE to {}: {e}", p.label);
        }
    }
    Ok(records)
}

/// Client side: connect, then train on every BROADCAST and answer with an
/// UPDATE until DONE. Returns the number of rounds served.
pub fn transport_connect(
    client: &mut ClientState,
    address: impl ToSocketAddrs,
    timeout: Duration,
) -> Result<usize> {
    let deadline = Instant::now() + timeout;
    let mut stream = loop {
        match TcpStream::connect(&address) {
            Ok(s) => break s,
            Err(e) if Instant::now() < deadline && e.kind() == ErrorKind::ConnectionRefused => {
                std::thread::sleep(Duration::from_millis(20))
            }
            Err(e) => return Err(e.into()),
        }
    };
    stream.set_nodelay(true)?;
    let mut rounds = 0;
    loop {
        let (kind, payload) = read_frame(&mut stream)?;
        match kind {
            MessageType::Done => return Ok(rounds),
            MessageType::Update => return Err(Error::Protocol("client received UPDATE".into())),
            MessageType::Broadcast => {
                let (params, meta) = decode_payload(&payload)?;
                let local_epochs: usize = field(&meta, "local_epochs")?;
                let seed: u64 = field(&meta, "seed")?;
                let mut global = client.local_model().clone();
                global.set_parameters(&params)?;
                client.install(&global)?;
                let update = local_train(client, local_epochs, seed)?;
                write_frame(&mut stream, MessageType::Update, &encode_update(&update))?;
                rounds += 1;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{ParamRole, Tensor};

    fn params() -> ParameterSet {
        let mut p = ParameterSet::new();
        p.push(0, ParamRole::Weight, Tensor::from_vec(vec![0.1, -2.5]))
            .unwrap();
        p.push(0, ParamRole::Bias, Tensor::from_vec(vec![1e-310]))
            .unwrap();
        p
    }

    #[test]
    fn frame_round_trip_and_layout() {
        let mut buf = Vec::new();
        write_frame(&mut buf, MessageType::Update, b"abc").unwrap();
        assert_eq!(buf, [0, 0, 0, 3, 2, b'a', b'b', b'c']);
        assert_eq!(
            read_frame(&mut buf.as_slice()).unwrap(),
            (MessageType::Update, b"abc".to_vec())
        );
    }

    #[test]
    fn malformed_frames() {
        assert!(matches!(
            read_frame(&mut [0u8, 0, 0].as_slice()),
            Err(Error::Protocol(_))
        ));
        assert!(matches!(
            read_frame(&mut [0u8, 0, 0, 9, 2, 1].as_slice()),
            Err(Error::Protocol(_))
        ));
        assert!(matches!(
            read_frame(&mut [0u8, 0, 0, 0, 7].as_slice()),
            Err(Error::Protocol(_))
        ));
        assert!(matches!(
            read_frame(&mut [0xffu8, 0xff, 0xff, 0xff, 2].as_slice()),
            Err(Error::Protocol(_))
        ));
    }

    #[test]
    fn update_round_trip_is_exact() {
        let u = ClientUpdate {
            client_id: "edge-7".into(),
            params: params(),
            sample_count: 42,
            mean_local_loss: 0.1 + 0.2,
        };
        assert_eq!(decode_update(&encode_update(&u)).unwrap(), u);
    }

    #[test]
    fn bad_update_payloads() {
        assert!(matches!(decode_update(&[]), Err(Error::Protocol(_))));
        let no_meta = encode_payload(&params(), &[]);
        assert!(decode_update(&no_meta).is_err());
        let bad_n = encode_payload(
            &params(),
            &[
                ("client_id", "a".into()),
                ("n_k", "x".into()),
                ("loss", "1".into()),
            ],
        );
        assert!(decode_update(&bad_n).is_err());
    }
}
