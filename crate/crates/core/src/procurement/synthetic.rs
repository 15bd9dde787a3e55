//! Offline stand-in for real providers.
//!
//! Draws `z_i = x + alpha * (mu - x) + eps_i` where `x` is the pivotal
//! embedding, `mu` the centroid of the class the pivotal truly belongs to,
//! and `eps_i ~ N(0, sigma^2 I)`. Sample `i` uses its own generator keyed by
//! `(seed, request_id, i)`, so results never depend on generation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{procured_record, Channel, ProcuredBatch, ProcurementError, ProcurementRequest};
use crate::data::EmbeddingStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticParams {
    pub alpha: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            sigma: 0.0,
            seed: 0,
        }
    }
}

impl SyntheticParams {
    pub fn validate(&self) -> Result<(), ProcurementError> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(ProcurementError::InvalidParams(format!(
                "alpha {} outside [0,1]",
                self.alpha
            )));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(ProcurementError::InvalidParams(format!(
                "sigma {} must be >= 0",
                self.sigma
            )));
        }
        Ok(())
    }

    /// Exact identity of the parameters, for cache validation.
    pub(crate) fn fingerprint(&self) -> String {
        format!(
            "{:016x}:{:016x}:{}",
            self.alpha.to_bits(),
            self.sigma.to_bits(),
            self.seed
        )
    }
}

fn sample_rng(seed: u64, request_id: &str, i: usize) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(request_id.as_bytes());
    h.update((i as u64).to_le_bytes());
    let key: [u8; 32] = h.finalize().as_slice().try_into().expect("sha256 is 32 bytes");
    ChaCha8Rng::from_seed(key)
}

pub fn procure_synthetic(
    request: &ProcurementRequest,
    pivotal: &[f32],
    centroid: &[f64],
    params: &SyntheticParams,
) -> Result<ProcuredBatch, ProcurementError> {
    if request.channel != Channel::Synthetic {
        return Err(ProcurementError::WrongChannel {
            request_id: request.request_id.clone(),
            expected: Channel::Synthetic,
            actual: request.channel,
        });
    }
    params.validate()?;
    let dim = pivotal.len();
    if centroid.len() != dim {
        return Err(ProcurementError::DimMismatch {
            expected: dim,
            found: centroid.len(),
        });
    }
    let center: Vec<f64> = pivotal
        .iter()
        .zip(centroid)
        .map(|(&x, &mu)| x as f64 + params.alpha * (mu - x as f64))
        .collect();

    let mut rows = Vec::with_capacity(request.count * dim);
    let mut records = Vec::with_capacity(request.count);
    for i in 0..request.count {
        let mut rng = sample_rng(params.seed, &request.request_id, i);
        for &c in &center {
            let eps: f64 = StandardNormal.sample(&mut rng);
            rows.push((c + params.sigma * eps) as f32);
        }
        records.push(procured_record(request, i));
    }
    Ok(ProcuredBatch {
        request_id: request.request_id.clone(),
        channel: Channel::Synthetic,
        records,
        embeddings: EmbeddingStore::new(dim, rows)?,
        image_refs: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Provenance;
    use crate::prompt::{Purpose, TextualDescription};

    fn request(count: usize) -> ProcurementRequest {
        ProcurementRequest {
            request_id: "r1".into(),
            description: TextualDescription {
                text: "a doctor".into(),
                purpose: Purpose::Weakspot,
                target_class: "doctor".into(),
                pivotal_id: Some("p".into()),
                tags: vec![],
            },
            channel: Channel::Synthetic,
            count,
            pivotal_id: Some("p".into()),
        }
    }

    fn params(alpha: f64, sigma: f64) -> SyntheticParams {
        SyntheticParams { alpha, sigma, seed: 11 }
    }

    #[test]
    fn degenerate_noise() {
        let x = [1.0f32, -2.0, 3.0];
        let mu = [5.0f64, 6.0, -7.0];
        let at_pivot = procure_synthetic(&request(4), &x, &mu, &params(0.0, 0.0)).unwrap();
        assert!(at_pivot.embeddings.rows().all(|r| r == x));
        let at_centroid = procure_synthetic(&request(4), &x, &mu, &params(1.0, 0.0)).unwrap();
        assert!(at_centroid.embeddings.rows().all(|r| r == [5.0, 6.0, -7.0]));
        assert!(at_pivot
            .records
            .iter()
            .all(|r| r.provenance == Provenance::Synthetic && r.true_class == "doctor"));
    }

    #[test]
    fn monte_carlo_mean() {
        let x = [0.0f32, 1.0, -1.0, 2.0];
        let mu = [1.0f64, 1.0, 1.0, 0.0];
        let (alpha, sigma, n) = (0.5, 0.1, 10_000);
        let b = procure_synthetic(&request(n), &x, &mu, &params(alpha, sigma)).unwrap();
        let tol = 4.0 * sigma / (n as f64).sqrt();
        for d in 0..x.len() {
            let mean = b.embeddings.rows().map(|r| r[d] as f64).sum::<f64>() / n as f64;
            let want = x[d] as f64 + alpha * (mu[d] - x[d] as f64);
            assert!((mean - want).abs() < tol, "coord {d}: {mean} vs {want}");
        }
    }

    #[test]
    fn order_independent_and_deterministic() {
        let x = [0.5f32, 0.5];
        let mu = [0.0f64, 0.0];
        let small = procure_synthetic(&request(3), &x, &mu, &params(0.5, 1.0)).unwrap();
        let large = procure_synthetic(&request(10), &x, &mu, &params(0.5, 1.0)).unwrap();
        for i in 0..3 {
            assert_eq!(small.embeddings.row(i), large.embeddings.row(i));
        }
        assert_eq!(
            small,
            procure_synthetic(&request(3), &x, &mu, &params(0.5, 1.0)).unwrap()
        );
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            procure_synthetic(&request(1), &[0.0], &[0.0, 1.0], &params(0.5, 0.1)),
            Err(ProcurementError::DimMismatch { .. })
        ));
        assert!(matches!(
            procure_synthetic(&request(1), &[0.0], &[0.0], &params(1.5, 0.1)),
            Err(ProcurementError::InvalidParams(_))
        ));
        let mut web = request(1);
        web.channel = Channel::Web;
        assert!(matches!(
            procure_synthetic(&web, &[0.0], &[0.0], &params(0.5, 0.1)),
            Err(ProcurementError::WrongChannel { .. })
        ));
    }
}
