//! Federated VAE pretraining with sample-weighted FedAvg.
//!
//! The server broadcasts the global VAE, each client trains it on its own
//! unlabeled rows and returns a [`ClientUpdate`], and the server averages the
//! updates into the next global model. Labels stay on the server, which
//! fine-tunes the classifier once federation stops. Rounds run in process
//! ([`run_federation`]) or over TCP ([`transport`]).

pub mod aggregate;
pub mod round;
pub mod transport;

pub use aggregate::{fedavg, weighted_loss, ClientUpdate};
pub use round::{
    broadcast, convergence_check, history_to_csv, local_train, run_federation, run_round,
    select_clients, server_fine_tune, write_history_csv, ClientState, Convergence,
    ConvergenceCriteria, FederationConfig, RoundRecord, ServerState, Transport,
};
pub use transport::{serve_federation, transport_connect};
