use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::aggregate::{fedavg, weighted_loss, ClientUpdate};
use crate::data::Fam;
use crate::error::{Error, Result};
use crate::models::vae::train_vae_from;
use crate::models::{
    build_classifier, fine_tune, vae_eval_loss, CnnConfig, FineTuneConfig, SemiSupervisedModel,
    VaeConfig, VaeModel,
};
use crate::nn::Optimizer;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceCriteria {
    pub max_rounds: usize,
    /// Rounds whose aggregated loss moved by less than this count towards
    /// convergence. `inf` stops after the first round, `0` never converges
    /// early.
    pub loss_delta_threshold: f64,
    pub patience: usize,
}

impl Default for ConvergenceCriteria {
    fn default() -> Self {
        Self {
            max_rounds: 100,
            loss_delta_threshold: 1e-4,
            patience: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum Transport {
    InProcess,
    /// The server listens on `address` and waits for `expected_clients`
    /// connections. No confidentiality is provided; wrap the connection (TLS,
    /// VPN) if parameters must not travel in the clear.
    Socket {
        address: String,
        expected_clients: usize,
        timeout_secs: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FederationConfig {
    pub num_rounds: usize,
    pub local_epochs: usize,
    pub client_fraction: f64,
    pub convergence: ConvergenceCriteria,
    pub seed: u64,
    pub transport: Transport,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            num_rounds: 10,
            local_epochs: 1,
            client_fraction: 1.0,
            convergence: ConvergenceCriteria::default(),
            seed: 0,
            transport: Transport::InProcess,
        }
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_rounds == 0 {
            return Err(Error::Config("num_rounds must be at least 1".into()));
        }
        if !(self.client_fraction > 0.0 && self.client_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "client_fraction must lie in (0, 1], got {}",
                self.client_fraction
            )));
        }
        let c = &self.convergence;
        if c.max_rounds == 0
            || c.patience == 0
            || c.loss_delta_threshold.is_nan()
            || c.loss_delta_threshold < 0.0
        {
            return Err(Error::Config(
                "convergence needs max_rounds ≥ 1, patience ≥ 1 and a threshold ≥ 0".into(),
            ));
        }
        if let Transport::Socket {
            expected_clients,
            timeout_secs,
            ..
        } = &self.transport
        {
            if *expected_clients == 0 || !(*timeout_secs > 0.0) {
                return Err(Error::Config(
                    "socket transport needs expected_clients ≥ 1 and a positive timeout".into(),
                ));
            }
            // The wire protocol has no registration message, so the server
            // cannot sample by client id before the first update arrives.
            if self.client_fraction < 1.0 {
                return Err(Error::Config(
                    "socket transport requires client_fraction = 1".into(),
                ));
            }
        }
        Ok(())
    }

    /// Rounds actually allowed: the smaller of `num_rounds` and `max_rounds`.
    pub fn round_limit(&self) -> usize {
        self.num_rounds.min(self.convergence.max_rounds)
    }
}

/// An edge client: its unlabeled data never leaves this struct.
#[derive(Debug, Clone)]
pub struct ClientState {
    client_id: String,
    local_data: Fam,
    local_model: VaeModel,
    /// Kept across rounds so optimizer moments carry over like in one long
    /// centralized run.
    optimizer: Optimizer,
    epochs_trained: usize,
}

impl ClientState {
    pub fn new(client_id: impl Into<String>, local_data: Fam, config: &VaeConfig) -> Result<Self> {
        let client_id = client_id.into();
        let wrap = |e: Error| Error::Client {
            client_id: client_id.clone(),
            source: Box::new(e),
        };
        if local_data.is_empty() {
            return Err(wrap(Error::Empty("client data")));
        }
        if local_data.width() != config.input_dim {
            return Err(wrap(Error::Dimension {
                expected: vec![config.input_dim],
                found: vec![local_data.width()],
            }));
        }
        let local_model = VaeModel::new(config).map_err(wrap)?;
        let optimizer = Optimizer::new(config.optimizer()).map_err(wrap)?;
        Ok(Self {
            client_id,
            local_data,
            local_model,
            optimizer,
            epochs_trained: 0,
        })
    }

    pub fn client_id(&self) -> &str {
        &self.client_id
    }

    pub fn sample_count(&self) -> usize {
        self.local_data.len()
    }

    pub fn local_model(&self) -> &VaeModel {
        &self.local_model
    }

    pub fn epochs_trained(&self) -> usize {
        self.epochs_trained
    }

    /// Replace the local parameters with the global ones.
    pub fn install(&mut self, global: &VaeModel) -> Result<()> {
        let mismatch = global.layer_specs() != self.local_model.layer_specs()
            || global.config().reconstruction != self.local_model.config().reconstruction;
        if mismatch {
            return Err(Error::Client {
                client_id: self.client_id.clone(),
                source: Box::new(Error::Structural(
                    "client architecture differs from the global model".into(),
                )),
            });
        }
        self.local_model.set_parameters(&global.parameters())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    /// 1-based.
    pub round_index: usize,
    pub participants: Vec<String>,
    /// Clients that were selected but produced no usable update, with reason.
    pub failures: Vec<(String, String)>,
    pub aggregated_loss: f64,
    pub global_params_digest: String,
}

/// The aggregator. It holds labels but only ever sees [`ClientUpdate`]s from
/// clients.
#[derive(Debug, Clone)]
pub struct ServerState {
    pub global_model: VaeModel,
    pub labeled_data: Option<Fam>,
    round_history: Vec<RoundRecord>,
}

impl ServerState {
    pub fn new(global_model: VaeModel, labeled_data: Option<Fam>) -> Self {
        Self {
            global_model,
            labeled_data,
            round_history: Vec::new(),
        }
    }

    pub fn round_history(&self) -> &[RoundRecord] {
        &self.round_history
    }

    pub fn next_round(&self) -> usize {
        self.round_history.len() + 1
    }

    /// Aggregate one round's updates, install the result and log the round.
    pub fn apply_updates(
        &mut self,
        updates: &[ClientUpdate],
        failures: Vec<(String, String)>,
    ) -> Result<RoundRecord> {
        if updates.is_empty() {
            let reasons: Vec<String> = failures
                .iter()
                .map(|(id, why)| format!("{id}: {why}"))
                .collect();
            return Err(Error::AllClientsFailed(reasons.join("; ")));
        }
        let params = fedavg(updates)?;
        self.global_model.set_parameters(&params)?;
        let mut participants: Vec<String> = updates.iter().map(|u| u.client_id.clone()).collect();
        participants.sort();
        let record = RoundRecord {
            round_index: self.next_round(),
            participants,
            failures,
            aggregated_loss: weighted_loss(updates)?,
            global_params_digest: params.digest(),
        };
        self.round_history.push(record.clone());
        Ok(record)
    }
}

/// Install the global parameters on every client in `clients`.
pub fn broadcast<'a>(
    server: &ServerState,
    clients: impl IntoIterator<Item = &'a mut ClientState>,
) -> Result<usize> {
    let mut count = 0;
    for c in clients {
        c.install(&server.global_model)?;
        count += 1;
    }
    if count == 0 {
        log::warn!("broadcast to zero clients");
    }
    Ok(count)
}

/// Train the client's model for `local_epochs` epochs on its own data.
///
/// Epochs are numbered by how many the client has already run, so with one
/// client the shuffles and noise draws match a centralized run of the same
/// seed. With zero epochs the reported loss is the noise-free loss of the
/// installed parameters.
pub fn local_train(
    client: &mut ClientState,
    local_epochs: usize,
    seed: u64,
) -> Result<ClientUpdate> {
    let config = VaeConfig {
        num_epochs: local_epochs,
        seed,
        ..client.local_model.config().clone()
    };
    let wrap = |e: Error| Error::Client {
        client_id: client.client_id.clone(),
        source: Box::new(e),
    };
    let history = train_vae_from(
        &mut client.local_model,
        &mut client.optimizer,
        &client.local_data,
        &config,
        client.epochs_trained,
    )
    .map_err(wrap)?;
    client.epochs_trained += local_epochs;
    let mean_local_loss = match history.epochs.last() {
        Some(l) => l.total,
        None => {
            vae_eval_loss(&client.local_model, &client.local_data)
                .map_err(wrap)?
                .total
        }
    };
    Ok(ClientUpdate {
        client_id: client.client_id.clone(),
        params: client.local_model.parameters(),
        sample_count: client.sample_count(),
        mean_local_loss,
    })
}

/// Indices of the clients taking part in `round`: all of them at fraction 1,
/// otherwise ⌈fraction · K⌉ drawn uniformly without replacement.
pub fn select_clients(num_clients: usize, fraction: f64, seed: u64, round: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..num_clients).collect();
    if fraction >= 1.0 {
        return idx;
    }
    let m = ((fraction * num_clients as f64).ceil() as usize).clamp(1, num_clients);
    idx.shuffle(&mut rng::stream(seed, "client-sample", round as u64));
    idx.truncate(m);
    idx.sort_unstable();
    idx
}

/// One in-process round: select, broadcast, train locally, aggregate.
///
/// Selected clients train in parallel; each owns its model, data and
/// optimizer, and aggregation sorts updates by client id, so the result does
/// not depend on scheduling.
pub fn run_round(
    server: &mut ServerState,
    clients: &mut [ClientState],
    config: &FederationConfig,
) -> Result<RoundRecord> {
    config.validate()?;
    if clients.is_empty() {
        return Err(Error::Empty("federation clients"));
    }
    let mut ids: Vec<&str> = clients.iter().map(|c| c.client_id()).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Config(format!("duplicate client id {}", w[0])));
    }
    let round = server.next_round();
    let selected = select_clients(clients.len(), config.client_fraction, config.seed, round);
    let mut chosen: Vec<&mut ClientState> = clients
        .iter_mut()
        .enumerate()
        .filter(|(i, _)| selected.binary_search(i).is_ok())
        .map(|(_, c)| c)
        .collect();
    broadcast(server, chosen.iter_mut().map(|c| &mut **c))?;
    let results: Vec<Result<ClientUpdate>> = chosen
        .par_iter_mut()
        .map(|c| local_train(c, config.local_epochs, config.seed))
        .collect();
    let mut updates = Vec::new();
    let mut failures = Vec::new();
    for (c, r) in chosen.iter().zip(results) {
        match r {
            Ok(u) => updates.push(u),
            Err(e) => {
                log::warn!("round {round}: {e}");
                failures.push((c.client_id().to_string(), e.to_string()));
            }
        }
    }
    server.apply_updates(&updates, failures)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Convergence {
    Converged,
    Continue,
}

/// Converged once the last `patience` rounds each moved the aggregated loss by
/// less than the threshold, or once `max_rounds` rounds exist. The first round
/// has no predecessor; its delta counts as infinite.
pub fn convergence_check(history: &[RoundRecord], criteria: &ConvergenceCriteria) -> Convergence {
    let losses: Vec<f64> = history.iter().map(|r| r.aggregated_loss).collect();
    convergence_from_losses(&losses, criteria)
}

pub fn convergence_from_losses(losses: &[f64], criteria: &ConvergenceCriteria) -> Convergence {
    if losses.len() >= criteria.max_rounds {
        return Convergence::Converged;
    }
    if losses.len() < criteria.patience {
        return Convergence::Continue;
    }
    let settled = (losses.len() - criteria.patience..losses.len()).all(|t| {
        let delta = if t == 0 {
            f64::INFINITY
        } else {
            (losses[t] - losses[t - 1]).abs()
        };
        delta < criteria.loss_delta_threshold || criteria.loss_delta_threshold == f64::INFINITY
    });
    if settled {
        Convergence::Converged
    } else {
        Convergence::Continue
    }
}

/// Rounds until convergence or the round limit. Returns the final global model
/// and the full round history.
pub fn run_federation(
    config: &FederationConfig,
    clients: &mut [ClientState],
    server: &mut ServerState,
) -> Result<(VaeModel, Vec<RoundRecord>)> {
    config.validate()?;
    for _ in 0..config.round_limit() {
        let round = server.next_round();
        run_round(server, clients, config).map_err(|e| Error::Round {
            round,
            source: Box::new(e),
        })?;
        if convergence_check(server.round_history(), &config.convergence) == Convergence::Converged
        {
            break;
        }
    }
    Ok((server.global_model.clone(), server.round_history.clone()))
}

/// Build the classifier from the global VAE and fine-tune it on the server's
/// labeled data.
pub fn server_fine_tune(
    server: &ServerState,
    cnn: &CnnConfig,
    fine_tune_config: &FineTuneConfig,
    freeze_encoder: bool,
) -> Result<(SemiSupervisedModel, Vec<f64>)> {
    let labeled = server
        .labeled_data
        .as_ref()
        .ok_or(Error::Empty("server labeled data"))?;
    if labeled.is_empty() {
        return Err(Error::Empty("server labeled data"));
    }
    let mut model = build_classifier(
        &server.global_model,
        labeled.class_names().to_vec(),
        freeze_encoder,
        cnn,
        fine_tune_config.seed,
    )?;
    let losses = fine_tune(&mut model, labeled, fine_tune_config)?;
    Ok((model, losses))
}

/// `round_index,participants,aggregated_loss,digest`, participants joined by
/// `;`.
pub fn history_to_csv(history: &[RoundRecord]) -> String {
    let mut out = String::from("round_index,participants,aggregated_loss,digest\n");
    for r in history {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.round_index,
            r.participants.join(";"),
            r.aggregated_loss,
            r.global_params_digest
        );
    }
    out
}

pub fn write_history_csv(history: &[RoundRecord], path: &Path) -> Result<()> {
    std::fs::write(path, history_to_csv(history)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn crit(max_rounds: usize, threshold: f64, patience: usize) -> ConvergenceCriteria {
        ConvergenceCriteria {
            max_rounds,
            loss_delta_threshold: threshold,
            patience,
        }
    }

    #[test]
    fn convergence_rules() {
        use Convergence::*;
        let c = crit(100, 1e-3, 1);
        assert_eq!(convergence_from_losses(&[2.0], &c), Continue);
        assert_eq!(convergence_from_losses(&[2.0, 2.0], &c), Converged);
        let decreasing: Vec<f64> = (0..10).map(|i| 10.0 - i as f64).collect();
        assert_eq!(
            convergence_from_losses(&decreasing, &crit(11, 0.5, 1)),
            Continue
        );
        assert_eq!(
            convergence_from_losses(&decreasing, &crit(10, 0.5, 1)),
            Converged
        );
        let plateau = [5.0, 3.0, 3.0, 3.0];
        assert_eq!(
            convergence_from_losses(&plateau[..3], &crit(100, 0.1, 2)),
            Continue
        );
        assert_eq!(
            convergence_from_losses(&plateau, &crit(100, 0.1, 2)),
            Converged
        );
        assert_eq!(
            convergence_from_losses(&[7.0], &crit(100, f64::INFINITY, 1)),
            Converged
        );
        assert_eq!(
            convergence_from_losses(&[1.0, 1.0, 1.0], &crit(100, 0.0, 1)),
            Continue
        );
    }

    #[test]
    fn selection() {
        assert_eq!(select_clients(4, 1.0, 0, 1), vec![0, 1, 2, 3]);
        let s = select_clients(10, 0.25, 3, 2);
        assert_eq!(s.len(), 3);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(s, select_clients(10, 0.25, 3, 2));
        assert_eq!(select_clients(3, 0.01, 0, 1).len(), 1);
    }

    #[test]
    fn config_validation() {
        assert!(FederationConfig::default().validate().is_ok());
        assert!(FederationConfig {
            num_rounds: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(FederationConfig {
            client_fraction: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        let socket = Transport::Socket {
            address: "127.0.0.1:0".into(),
            expected_clients: 2,
            timeout_secs: 5.0,
        };
        assert!(FederationConfig {
            client_fraction: 0.5,
            transport: socket,
            ..Default::default()
        }
        .validate()
        .is_err());
        let text = "num_rounds = 3\n[convergence]\nloss_delta_threshold = inf\n[transport]\nmode = \"in_process\"\n";
        let cfg: FederationConfig = toml::from_str(text).unwrap();
        assert_eq!(cfg.num_rounds, 3);
        assert_eq!(cfg.convergence.loss_delta_threshold, f64::INFINITY);
    }

    #[test]
    fn history_csv_layout() {
        let r = RoundRecord {
            round_index: 1,
            participants: vec!["a".into(), "b".into()],
            failures: vec![],
            aggregated_loss: 0.25,
            global_params_digest: "ff".into(),
        };
        assert_eq!(
            history_to_csv(&[r]),
            "round_index,participants,aggregated_loss,digest\n1,a;b,0.25,ff\n"
        );
    }
}
