//! The single JSON configuration shared by every command.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::descriptor::DescriptorConfig;
use crate::error::{Error, Result};
use crate::features::FeatureConfig;
use crate::metrics::MetricsConfig;
use crate::pose_graph::PoseGraphConfig;
use crate::registration::IcpConfig;
use crate::retrieval::RetrievalConfig;
use crate::synth::SynthConfig;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    /// Meters per range bin of the scans in a session.
    pub range_resolution: f64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            range_resolution: 0.5,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub feature: FeatureConfig,
    pub descriptor: DescriptorConfig,
    pub retrieval: RetrievalConfig,
    pub icp: IcpConfig,
    pub pose_graph: PoseGraphConfig,
    pub metrics: MetricsConfig,
    pub session: SessionConfig,
    pub synth: SynthConfig,
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let mut cfg: PipelineConfig = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        cfg.synth.range_resolution = cfg.session.range_resolution;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks every section that does not depend on image size.
    pub fn validate(&self) -> Result<()> {
        self.feature.validate()?;
        self.retrieval.validate()?;
        self.icp.validate()?;
        self.pose_graph.validate()?;
        self.metrics.validate()?;
        if !(self.session.range_resolution > 0.0 && self.session.range_resolution.is_finite()) {
            return Err(Error::Config(
                "session.range_resolution must be positive".into(),
            ));
        }
        let mut synth = self.synth.clone();
        synth.range_resolution = self.session.range_resolution;
        synth.validate()?;
        self.validate_for_shape(synth.azimuths, synth.range_bins)
    }

    /// Checks divisibility and window sizes against an `h x w` image.
    pub fn validate_for_shape(&self, azimuths: usize, range_bins: usize) -> Result<()> {
        self.feature.validate_for_width(range_bins)?;
        self.descriptor.layout(azimuths, range_bins)?;
        Ok(())
    }

    /// Synth parameters with the session's range resolution filled in.
    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            range_resolution: self.session.range_resolution,
            ..self.synth.clone()
        }
    }

    /// Fingerprint of every parameter that changes descriptor values.
    pub fn config_hash(&self) -> u64 {
        #[derive(Serialize)]
        struct Canonical<'a> {
            feature: &'a FeatureConfig,
            descriptor: &'a DescriptorConfig,
        }
        let text = serde_json::to_string(&Canonical {
            feature: &self.feature,
            descriptor: &self.descriptor,
        })
        .expect("config serializes");
        fnv1a(text.as_bytes())
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        let cfg = PipelineConfig::from_json("{}").unwrap();
        assert_eq!(cfg, PipelineConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(
            PipelineConfig::from_json(r#"{"feature": {"zscore": 2}}"#),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn round_trips_through_json() {
        let cfg = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn non_dividing_beta_fails_validation() {
        let err = PipelineConfig::from_json(r#"{"descriptor": {"beta": 5}}"#).unwrap_err();
        assert!(matches!(err, Error::Divisibility { .. }), "{err}");
    }

    #[test]
    fn hash_tracks_descriptor_parameters_only() {
        let base = PipelineConfig::default();
        let mut other = base.clone();
        other.retrieval.tau = 1.0;
        other.icp.max_corr_dist = 9.0;
        assert_eq!(base.config_hash(), other.config_hash());
        other.feature.z_score = 2.5;
        assert_ne!(base.config_hash(), other.config_hash());
        let mut alpha = base.clone();
        alpha.descriptor.alpha = 2;
        assert_ne!(base.config_hash(), alpha.config_hash());
    }

    #[test]
    fn fnv_matches_reference_vectors() {
        assert_eq!(fnv1a(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a(b"a"), 0xaf63_dc4c_8601_ec8c);
    }
}
