//! Versioned JSON checkpoints.
//!
//! Every network is stored with its layer widths followed by its parameters
//! flattened in canonical order. Values are written as `f64`, which holds any
//! `f32` exactly, so save/load is lossless in both precisions.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffcore::{MlpParams, Precision, Real, Tensor};
use crate::discriminator::{DiscriminatorParams, DiscriminatorSpec};
use crate::error::{Error, Result};
use crate::generator::{GeneratorParams, GeneratorSpec, InputNorm};
use crate::rollout::Model;

pub const FORMAT: &str = "eqrgan-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpRecord {
    pub widths: Vec<usize>,
    pub skip: bool,
    pub params: Vec<f64>,
}

impl MlpRecord {
    pub fn from_params<T: Real>(m: &MlpParams<T>) -> Self {
        Self {
            widths: m.widths(),
            skip: m.skip.is_some(),
            params: m.tensors().iter().flat_map(|t| t.data().iter().map(|v| v.as_f64())).collect(),
        }
    }

    pub fn to_params<T: Real>(&self) -> Result<MlpParams<T>> {
        if self.widths.len() < 2 || self.widths.contains(&0) {
            return Err(Error::Format { what: "checkpoint".into(), detail: format!("bad layer widths {:?}", self.widths) });
        }
        let mut m = MlpParams::<T>::zeros(&self.widths, self.skip);
        let expected = m.num_params();
        if expected != self.params.len() {
            return Err(Error::Format {
                what: "checkpoint".into(),
                detail: format!("network with widths {:?} needs {expected} values, found {}", self.widths, self.params.len()),
            });
        }
        let mut it = self.params.iter();
        for t in m.tensors_mut() {
            for v in t.data_mut() {
                *v = T::of(*it.next().expect("length checked"));
            }
        }
        Ok(m)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorRecord {
    pub spec: GeneratorSpec,
    pub nets: Vec<Vec<MlpRecord>>,
    pub norms: Vec<InputNorm>,
    pub rate_scale: Vec<f64>,
    pub adjoint_scale: Vec<f64>,
    pub y0: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscriminatorRecord {
    pub spec: DiscriminatorSpec,
    pub s0: f64,
    pub nets: Vec<MlpRecord>,
    pub norms: Vec<InputNorm>,
    pub mu_offset: Vec<f64>,
    pub mu_scale: Vec<f64>,
    pub sigma_offset: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub precision: Precision,
    /// Rounds completed when saved.
    pub round: usize,
    pub agents: usize,
    pub steps: usize,
    pub generator: GeneratorRecord,
    pub discriminator: DiscriminatorRecord,
}

impl Checkpoint {
    pub fn new<T: Real>(precision: Precision, round: usize, gen: &GeneratorParams<T>, dis: &DiscriminatorParams<T>) -> Self {
        Self {
            format: FORMAT.into(),
            version: VERSION,
            precision,
            round,
            agents: gen.agents(),
            steps: dis.nets.len().saturating_sub(1),
            generator: GeneratorRecord {
                spec: gen.spec.clone(),
                nets: gen.nets.iter().map(|v| v.iter().map(MlpRecord::from_params).collect()).collect(),
                norms: gen.norms.clone(),
                rate_scale: gen.rate_scale.clone(),
                adjoint_scale: gen.adjoint_scale.clone(),
                y0: gen.y0.data().iter().map(|v| v.as_f64()).collect(),
            },
            discriminator: DiscriminatorRecord {
                spec: dis.spec.clone(),
                s0: dis.initial_price(),
                nets: dis.nets.iter().map(MlpRecord::from_params).collect(),
                norms: dis.norms.clone(),
                mu_offset: dis.mu_offset.clone(),
                mu_scale: dis.mu_scale.clone(),
                sigma_offset: dis.sigma_offset,
            },
        }
    }

    /// Rebuilds parameters and checks them against `model`.
    pub fn params<T: Real>(&self, model: &Model) -> Result<(GeneratorParams<T>, DiscriminatorParams<T>)> {
        if self.agents != model.agents() || self.steps != model.steps() {
            return Err(Error::Config(format!(
                "checkpoint was trained for {} agents and {} steps, the experiment has {} agents and {} steps",
                self.agents,
                self.steps,
                model.agents(),
                model.steps()
            )));
        }
        let g = &self.generator;
        let gen = GeneratorParams {
            spec: g.spec.clone(),
            nets: g.nets.iter().map(|v| v.iter().map(|r| r.to_params()).collect::<Result<Vec<_>>>()).collect::<Result<_>>()?,
            norms: g.norms.clone(),
            rate_scale: g.rate_scale.clone(),
            adjoint_scale: g.adjoint_scale.clone(),
            y0: Tensor::from_vec(1, g.y0.len(), g.y0.iter().map(|&v| T::of(v)).collect()),
        };
        let d = &self.discriminator;
        let dis = DiscriminatorParams {
            spec: d.spec.clone(),
            s0: Tensor::scalar(T::of(d.s0)),
            nets: d.nets.iter().map(|r| r.to_params()).collect::<Result<_>>()?,
            norms: d.norms.clone(),
            mu_offset: d.mu_offset.clone(),
            mu_scale: d.mu_scale.clone(),
            sigma_offset: d.sigma_offset,
        };
        gen.check(model)?;
        dis.check(model)?;
        Ok((gen, dis))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Format { what: "checkpoint".into(), detail: e.to_string() })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Checkpoint =
            serde_json::from_str(text).map_err(|e| Error::Format { what: "checkpoint".into(), detail: e.to_string() })?;
        if c.format != FORMAT {
            return Err(Error::Format { what: "checkpoint".into(), detail: format!("unknown format tag {:?}", c.format) });
        }
        if c.version != VERSION {
            return Err(Error::Format { what: "checkpoint".into(), detail: format!("unsupported version {}", c.version) });
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = self.to_json()?;
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paths::PathBatch;
    use crate::rollout::fixtures::*;
    use crate::rollout::{simulate_states, ZeroPolicy};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params<T: Real>(m: &Model) -> (GeneratorParams<T>, DiscriminatorParams<T>) {
        let pp = PathBatch::sample(1, 16, &m.grid, 1).unwrap();
        let pilot = simulate_states(m, &ZeroPolicy, &pp).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = GeneratorParams::init(m, &GeneratorSpec::default(), &pilot, &mut rng).unwrap();
        let d = DiscriminatorParams::init(m, &DiscriminatorSpec::default(), &pilot, &mut rng).unwrap();
        (g, d)
    }

    #[test]
    fn round_trip_is_exact_in_both_precisions() {
        let m = two_agent(1.5, 4);
        let (g, d) = params::<f32>(&m);
        let c = Checkpoint::new(Precision::F32, 3, &g, &d);
        let back = Checkpoint::from_json(&c.to_json().unwrap()).unwrap();
        let (g2, d2) = back.params::<f32>(&m).unwrap();
        assert_eq!(g, g2);
        assert_eq!(d, d2);
        let (g, d) = params::<f64>(&m);
        let c = Checkpoint::new(Precision::F64, 0, &g, &d);
        let (g2, d2) = Checkpoint::from_json(&c.to_json().unwrap()).unwrap().params::<f64>(&m).unwrap();
        assert_eq!(g, g2);
        assert_eq!(d, d2);
    }

    #[test]
    fn shape_mismatch_is_descriptive() {
        let m = two_agent(1.5, 4);
        let (g, d) = params::<f64>(&m);
        let c = Checkpoint::new(Precision::F64, 0, &g, &d);
        let err = c.params::<f64>(&two_agent(1.5, 6)).unwrap_err().to_string();
        assert!(err.contains("4 steps") && err.contains("6 steps"), "{err}");
        let mut bad = c.clone();
        bad.generator.nets[0][0].params.pop();
        assert!(bad.params::<f64>(&m).is_err());
        let mut tag = c;
        tag.version = 99;
        assert!(Checkpoint::from_json(&tag.to_json().unwrap()).is_err());
    }
}
