//! String-to-vector embedding providers.

use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::numerics::rng;
use crate::{Error, Result};

/// Maps strings to fixed-dimension real vectors. Implementations must be
/// safe to call concurrently.
pub trait EmbeddingProvider: Send + Sync {
    fn name(&self) -> &str;

    fn output_dim(&self) -> usize;

    /// Whether identical inputs always yield identical vectors.
    fn deterministic(&self) -> bool;

    fn embed_batch(&self, inputs: &[&str]) -> Result<Vec<Vec<f64>>>;

    fn embed(&self, input: &str) -> Result<Vec<f64>> {
        let mut out = self.embed_batch(&[input])?;
        out.pop()
            .ok_or_else(|| Error::Provider(format!("{} returned no vector", self.name())))
    }
}

/// Hash-seeded stand-in for a real encoder.
#[derive(Debug, Clone)]
pub struct MockProvider {
    dim: usize,
}

impl MockProvider {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("embedding dimension must be positive"));
        }
        Ok(Self { dim })
    }
}

impl EmbeddingProvider for MockProvider {
    fn name(&self) -> &str {
        "mock"
    }

    fn output_dim(&self) -> usize {
        self.dim
    }

    fn deterministic(&self) -> bool {
        true
    }

    fn embed_batch(&self, inputs: &[&str]) -> Result<Vec<Vec<f64>>> {
        inputs.iter().map(|s| mock_embed(s, self.dim)).collect()
    }
}

/// Unit vector of `dim` uniform(-1, 1) draws seeded by the FNV-1a hash of
/// the input bytes.
pub fn mock_embed(input: &str, dim: usize) -> Result<Vec<f64>> {
    if input.is_empty() {
        return Err(Error::invalid("cannot embed an empty string"));
    }
    let mut g = rng::seeded(rng::fnv1a64(input.as_bytes()));
    let v: Vec<f64> = (0..dim).map(|_| g.gen_range(-1.0..1.0)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::NonFinite(format!("mock embedding of {input:?} has zero norm")));
    }
    Ok(v.into_iter().map(|x| x / norm).collect())
}

#[derive(Debug, Serialize)]
pub struct EmbedRequest<'a> {
    pub model: &'a str,
    pub inputs: &'a [&'a str],
}

#[derive(Debug, Deserialize)]
pub struct EmbedResponse {
    pub vectors: Vec<Vec<f64>>,
}

/// Client for a remote embedding service speaking `POST /embed`.
pub struct HttpProvider {
    endpoint: String,
    model: String,
    dim: usize,
    agent: ureq::Agent,
}

impl HttpProvider {
    pub fn new(endpoint: &str, model: &str, dim: usize, timeout: Duration) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("embedding dimension must be positive"));
        }
        Ok(Self {
            endpoint: endpoint.trim_end_matches('/').to_string(),
            model: model.to_string(),
            dim,
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
        })
    }
}

impl EmbeddingProvider for HttpProvider {
    fn name(&self) -> &str {
        &self.model
    }

    fn output_dim(&self) -> usize {
        self.dim
    }

    fn deterministic(&self) -> bool {
        false
    }

    fn embed_batch(&self, inputs: &[&str]) -> Result<Vec<Vec<f64>>> {
        if inputs.iter().any(|s| s.is_empty()) {
            return Err(Error::invalid("cannot embed an empty string"));
        }
        let url = format!("{}/embed", self.endpoint);
        let body = EmbedRequest { model: &self.model, inputs };
        let resp: EmbedResponse = self
            .agent
            .post(&url)
            .send_json(&body)
            .map_err(|e| Error::Provider(format!("{url}: {e}")))?
            .into_json()
            .map_err(|e| Error::Provider(format!("{url}: malformed response: {e}")))?;
        if resp.vectors.len() != inputs.len() {
            return Err(Error::Provider(format!(
                "{url}: {} vectors for {} inputs",
                resp.vectors.len(),
                inputs.len()
            )));
        }
        for v in &resp.vectors {
            if v.len() != self.dim {
                return Err(Error::Provider(format!(
                    "{url}: vector of dimension {}, expected {}",
                    v.len(),
                    self.dim
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Provider(format!("{url}: non-finite vector component")));
            }
        }
        Ok(resp.vectors)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mock_is_deterministic_unit_length() {
        let p = MockProvider::new(64).unwrap();
        let a = p.embed("flood in Houston").unwrap();
        let b = p.embed("flood in Houston").unwrap();
        assert_eq!(
            a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
        let norm = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
        assert!(p.embed("").is_err());
        assert!(MockProvider::new(0).is_err());
    }
}
