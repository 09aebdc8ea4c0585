//! Round engine behaviour: oracle equivalence with centralized training,
//! symmetry, failure handling and the TCP transport.

use std::io::Write;
use std::net::{TcpListener, TcpStream};
use std::thread;
use std::time::Duration;

use fededge::data::synth::{SynthConfig, SynthGenerator};
use fededge::data::{normalize, Fam};
use fededge::federated::*;
use fededge::models::vae::train_vae_from;
use fededge::models::{CnnConfig, FineTuneConfig, VaeConfig, VaeModel};
use fededge::nn::Optimizer;
use fededge::Error;

fn vae_config(seed: u64) -> VaeConfig {
    VaeConfig {
        input_dim: 12,
        hidden_dims: vec![10, 8],
        z_dim: 3,
        batch_size: 16,
        seed,
        ..VaeConfig::default()
    }
}

fn generator(seed: u64) -> SynthGenerator {
    let cfg = SynthConfig {
        num_classes: 3,
        width: 12,
        informative: 10,
        ..SynthConfig::default()
    };
    SynthGenerator::new(cfg, seed).unwrap()
}

fn shard(seed: u64, n: usize, stream: u64) -> Fam {
    normalize(&generator(seed).unlabeled(n, stream).unwrap()).unwrap()
}

fn fed(rounds: usize, local_epochs: usize, seed: u64) -> FederationConfig {
    FederationConfig {
        num_rounds: rounds,
        local_epochs,
        seed,
        convergence: ConvergenceCriteria {
            max_rounds: 1000,
            loss_delta_threshold: 0.0,
            patience: 1,
        },
        ..FederationConfig::default()
    }
}

#[test]
fn one_client_matches_centralized_training_every_round() {
    let seed = 11;
    let data = shard(seed, 70, 1);
    let vcfg = vae_config(seed);
    let mut server = ServerState::new(VaeModel::new(&vcfg).unwrap(), None);
    let mut clients = vec![ClientState::new("solo", data.clone(), &vcfg).unwrap()];

    let mut central = VaeModel::new(&vcfg).unwrap();
    let mut opt = Optimizer::new(vcfg.optimizer()).unwrap();
    let local_epochs = 2;
    let step = VaeConfig {
        num_epochs: local_epochs,
        ..vcfg.clone()
    };
    let config = fed(4, local_epochs, seed);
    for r in 0..4 {
        let record = run_round(&mut server, &mut clients, &config).unwrap();
        let h = train_vae_from(&mut central, &mut opt, &data, &step, r * local_epochs).unwrap();
        assert_eq!(
            record.global_params_digest,
            central.parameters().digest(),
            "round {}",
            r + 1
        );
        assert_eq!(record.aggregated_loss, h.epochs.last().unwrap().total);
    }
}

#[test]
fn run_federation_one_client_matches_train_vae() {
    let seed = 5;
    let data = shard(seed, 50, 2);
    let vcfg = vae_config(seed);
    let mut server = ServerState::new(VaeModel::new(&vcfg).unwrap(), None);
    let mut clients = vec![ClientState::new("solo", data.clone(), &vcfg).unwrap()];
    let (model, history) = run_federation(&fed(3, 1, seed), &mut clients, &mut server).unwrap();
    assert_eq!(history.len(), 3);
    let (central, _) = fededge::models::train_vae(
        &data,
        &VaeConfig {
            num_epochs: 3,
            ..vcfg
        },
    )
    .unwrap();
    assert_eq!(model.parameters().digest(), central.parameters().digest());
}

#[test]
fn identical_clients_aggregate_to_any_single_update() {
    let seed = 2;
    let data = shard(seed, 40, 3);
    let vcfg = vae_config(seed);
    let mut server = ServerState::new(VaeModel::new(&vcfg).unwrap(), None);
    let mut clients: Vec<_> = ["a", "b", "c"]
        .iter()
        .map(|id| ClientState::new(*id, data.clone(), &vcfg).unwrap())
        .collect();
    let record = run_round(&mut server, &mut clients, &fed(1, 2, seed)).unwrap();
    for c in &clients {
        assert_eq!(
            c.local_model().parameters().digest(),
            record.global_params_digest
        );
    }
    assert_eq!(record.participants, ["a", "b", "c"]);
}

#[test]
fn digest_changes_iff_training_happens() {
    let seed = 3;
    let vcfg = vae_config(seed);
    let initial = VaeModel::new(&vcfg).unwrap();
    let mut server = ServerState::new(initial.clone(), None);
    let mut clients = vec![
        ClientState::new("a", shard(seed, 30, 4), &vcfg).unwrap(),
        ClientState::new("b", shard(seed, 20, 5), &vcfg).unwrap(),
    ];
    let still = run_round(&mut server, &mut clients, &fed(1, 0, seed)).unwrap();
    assert_eq!(still.global_params_digest, initial.parameters().digest());
    let moved = run_round(&mut server, &mut clients, &fed(1, 1, seed)).unwrap();
    assert_ne!(moved.global_params_digest, initial.parameters().digest());
}

#[test]
fn zero_local_epochs_returns_broadcast_parameters() {
    let vcfg = vae_config(0);
    let server = ServerState::new(
        VaeModel::new(&VaeConfig {
            seed: 99,
            ..vcfg.clone()
        })
        .unwrap(),
        None,
    );
    let mut client = ClientState::new("a", shard(0, 10, 6), &vcfg).unwrap();
    assert_eq!(broadcast(&server, [&mut client]).unwrap(), 1);
    let u = local_train(&mut client, 0, 0).unwrap();
    assert_eq!(u.params.digest(), server.global_model.parameters().digest());
    assert_eq!(u.sample_count, 10);
    assert!(u.mean_local_loss.is_finite());
    assert_eq!(broadcast(&server, std::iter::empty()).unwrap(), 0);
}

#[test]
fn mismatched_client_is_named() {
    let vcfg = vae_config(0);
    let server = ServerState::new(VaeModel::new(&vcfg).unwrap(), None);
    let mut odd =
        ClientState::new("odd-one", shard(0, 10, 7), &VaeConfig { z_dim: 4, ..vcfg }).unwrap();
    let err = broadcast(&server, [&mut odd]).unwrap_err();
    assert!(
        matches!(err, Error::Client { ref client_id, .. } if client_id == "odd-one"),
        "{err}"
    );
}

#[test]
fn partial_failure_aggregates_survivors_and_total_failure_errors() {
    let vcfg = vae_config(1);
    let good = shard(1, 30, 8);
    let wild_rows: Vec<Vec<f64>> = (0..20)
        .map(|i| vec![if i % 2 == 0 { 1e300 } else { -1e300 }; 12])
        .collect();
    let wild = Fam::unlabeled("t", good.feature_names().to_vec(), wild_rows).unwrap();
    let mut server = ServerState::new(VaeModel::new(&vcfg).unwrap(), None);
    let mut clients = vec![
        ClientState::new("good", good, &vcfg).unwrap(),
        ClientState::new("wild", wild.clone(), &vcfg).unwrap(),
    ];
    let record = run_round(&mut server, &mut clients, &fed(1, 1, 1)).unwrap();
    assert_eq!(record.participants, ["good"]);
    assert_eq!(record.failures.len(), 1);
    assert_eq!(record.failures[0].0, "wild");

    let mut only_wild = vec![ClientState::new("wild", wild, &vcfg).unwrap()];
    let err = run_federation(&fed(2, 1, 1), &mut only_wild, &mut server).unwrap_err();
    assert!(matches!(err, Error::Round { round: 2, .. }), "{err}");
}

#[test]
fn stopping_rules() {
    let vcfg = vae_config(4);
    let make = || {
        (
            ServerState::new(VaeModel::new(&vcfg).unwrap(), None),
            vec![ClientState::new("a", shard(4, 20, 9), &vcfg).unwrap()],
        )
    };
    let (mut s, mut c) = make();
    let mut cfg = fed(5, 1, 4);
    cfg.convergence.loss_delta_threshold = f64::INFINITY;
    assert_eq!(run_federation(&cfg, &mut c, &mut s).unwrap().1.len(), 1);
    let (mut s, mut c) = make();
    assert_eq!(
        run_federation(&fed(4, 1, 4), &mut c, &mut s)
            .unwrap()
            .1
            .len(),
        4
    );
    let (mut s, mut c) = make();
    let mut cfg = fed(10, 1, 4);
    cfg.convergence.max_rounds = 2;
    assert_eq!(run_federation(&cfg, &mut c, &mut s).unwrap().1.len(), 2);
}

#[test]
fn client_sampling_uses_fraction() {
    let vcfg = vae_config(6);
    let mut server = ServerState::new(VaeModel::new(&vcfg).unwrap(), None);
    let mut clients: Vec<_> = (0..6)
        .map(|i| ClientState::new(format!("c{i}"), shard(6, 10, 20 + i), &vcfg).unwrap())
        .collect();
    let cfg = FederationConfig {
        client_fraction: 0.5,
        ..fed(1, 1, 6)
    };
    let record = run_round(&mut server, &mut clients, &cfg).unwrap();
    assert_eq!(record.participants.len(), 3);
}

#[test]
fn server_fine_tune_starts_from_global_encoder() {
    let vcfg = VaeConfig {
        z_dim: 8,
        ..vae_config(8)
    };
    let g = generator(8);
    let labeled = normalize(&g.balanced(5, 30).unwrap()).unwrap();
    let server = ServerState::new(
        VaeModel::new(&VaeConfig { seed: 77, ..vcfg }).unwrap(),
        Some(labeled),
    );
    let ft = FineTuneConfig {
        epochs: 0,
        ..FineTuneConfig::default()
    };
    let (model, losses) = server_fine_tune(&server, &CnnConfig::default(), &ft, false).unwrap();
    assert!(losses.is_empty());
    let enc = model.encoder_layers() as u32;
    assert_eq!(
        model.parameters().filter(|i| i < enc).digest(),
        server.global_model.encoder_parameters().digest()
    );
    let empty = ServerState::new(server.global_model.clone(), None);
    assert!(matches!(
        server_fine_tune(&empty, &CnnConfig::default(), &ft, false),
        Err(Error::Empty(_))
    ));
}

fn socket_config(seed: u64, rounds: usize, expected: usize, addr: String) -> FederationConfig {
    FederationConfig {
        transport: Transport::Socket {
            address: addr,
            expected_clients: expected,
            timeout_secs: 30.0,
        },
        ..fed(rounds, 1, seed)
    }
}

#[test]
fn loopback_rounds_equal_in_process_rounds() {
    let seed = 21;
    let vcfg = vae_config(seed);
    let shards = [("east", shard(seed, 40, 10)), ("west", shard(seed, 25, 11))];

    let mut local_server = ServerState::new(VaeModel::new(&vcfg).unwrap(), None);
    let mut local_clients: Vec<_> = shards
        .iter()
        .map(|(id, d)| ClientState::new(*id, d.clone(), &vcfg).unwrap())
        .collect();
    let (_, expected) =
        run_federation(&fed(3, 1, seed), &mut local_clients, &mut local_server).unwrap();

    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let handles: Vec<_> = shards
        .iter()
        .map(|(id, d)| {
            let mut client = ClientState::new(*id, d.clone(), &vcfg).unwrap();
            thread::spawn(move || {
                transport_connect(&mut client, addr, Duration::from_secs(30)).unwrap()
            })
        })
        .collect();
    let mut server = ServerState::new(VaeModel::new(&vcfg).unwrap(), None);
    let got = serve_federation(
        &mut server,
        &listener,
        &socket_config(seed, 3, 2, addr.to_string()),
    )
    .unwrap();
    for h in handles {
        assert_eq!(h.join().unwrap(), 3);
    }
    assert_eq!(got, expected);
}

#[test]
fn truncated_frame_excludes_only_that_client() {
    let seed = 22;
    let vcfg = vae_config(seed);
    let data = shard(seed, 30, 12);
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let good = {
        let mut client = ClientState::new("good", data.clone(), &vcfg).unwrap();
        thread::spawn(move || {
            transport_connect(&mut client, addr, Duration::from_secs(30)).unwrap()
        })
    };
    let bad = thread::spawn(move || {
        let mut s = TcpStream::connect(addr).unwrap();
        let _ = fededge::federated::transport::read_frame(&mut s).unwrap();
        // Header promises 1000 payload bytes, then the connection closes.
        s.write_all(&[0, 0, 0x03, 0xe8, 2, 1, 2, 3]).unwrap();
    });
    let mut server = ServerState::new(VaeModel::new(&vcfg).unwrap(), None);
    let records = serve_federation(
        &mut server,
        &listener,
        &socket_config(seed, 1, 2, addr.to_string()),
    )
    .unwrap();
    bad.join().unwrap();
    assert_eq!(good.join().unwrap(), 1);
    assert_eq!(records[0].participants, ["good"]);
    assert_eq!(records[0].failures.len(), 1);
    assert!(
        records[0].failures[0].1.contains("closed"),
        "{:?}",
        records[0].failures
    );
}
