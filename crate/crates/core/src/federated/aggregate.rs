use crate::error::{Error, Result};
use crate::nn::ParameterSet;

/// What a client sends back after local training. Only this crosses from a
/// client to the server.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client_id: String,
    pub params: ParameterSet,
    pub sample_count: usize,
    pub mean_local_loss: f64,
}

fn sorted(updates: &[ClientUpdate]) -> Result<Vec<&ClientUpdate>> {
    if updates.is_empty() {
        return Err(Error::Empty("client updates"));
    }
    let mut order: Vec<&ClientUpdate> = updates.iter().collect();
    order.sort_by(|a, b| a.client_id.cmp(&b.client_id));
    for pair in order.windows(2) {
        if pair[0].client_id == pair[1].client_id {
            return Err(Error::Data(format!(
                "duplicate update from client {}",
                pair[0].client_id
            )));
        }
    }
    for u in &order {
        if u.sample_count == 0 {
            return Err(Error::Data(format!(
                "client {} reported zero samples",
                u.client_id
            )));
        }
        order[0]
            .params
            .check_compatible(&u.params)
            .map_err(|e| Error::Client {
                client_id: u.client_id.clone(),
                source: Box::new(e),
            })?;
    }
    Ok(order)
}

/// Sample-weighted FedAvg, `w = Σ_k (n_k / n) w_k`.
///
/// Updates are summed in ascending client-id order whatever their arrival
/// order. The sum is taken as offsets from the first update,
/// `w_1 + Σ_k (n_k / n)(w_k − w_1)`, which is algebraically the same mean but
/// returns a lone update or identical updates bit for bit. Each result is then
/// clamped to the range of the client values so rounding can never leave their
/// convex hull.
pub fn fedavg(updates: &[ClientUpdate]) -> Result<ParameterSet> {
    let order = sorted(updates)?;
    let total: f64 = order.iter().map(|u| u.sample_count as f64).sum();
    let weights: Vec<f64> = order
        .iter()
        .map(|u| u.sample_count as f64 / total)
        .collect();
    let mut out = order[0].params.clone();
    for (ei, entry) in out.entries_mut().iter_mut().enumerate() {
        for (i, v) in entry.tensor.data_mut().iter_mut().enumerate() {
            let reference = *v;
            let (mut lo, mut hi, mut shift) = (reference, reference, 0.0);
            for (u, &w) in order.iter().zip(&weights).skip(1) {
                let x = u.params.entries()[ei].tensor.data()[i];
                lo = lo.min(x);
                hi = hi.max(x);
                shift += w * (x - reference);
            }
            if shift != 0.0 {
                *v = (reference + shift).clamp(lo, hi);
            }
        }
    }
    Ok(out)
}

/// Sample-weighted mean of the clients' final-epoch losses, in client-id order.
pub fn weighted_loss(updates: &[ClientUpdate]) -> Result<f64> {
    let order = sorted(updates)?;
    let total: f64 = order.iter().map(|u| u.sample_count as f64).sum();
    Ok(order
        .iter()
        .map(|u| u.sample_count as f64 * u.mean_local_loss)
        .sum::<f64>()
        / total)
}
