//! Splitting a bundle into three artifacts for separate transmission.
//!
//! * locations: where each carrier lives
//! * differences: the secret differences, secret numbers, split plan and
//!   verification info
//! * models: the hiding models
//!
//! No artifact alone, nor any pair, contains a complete authorization set.
//! All three carry the bundle nonce so mixed-up artifacts are rejected.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::{AuthorizationSet, Bundle, ModelRef, Nonce, ProtocolError, VerificationInfo};
use crate::carrier::SecretLocation;
use crate::codec::SecretDifference;
use crate::parallel::{SecretNumber, SplitPlan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Locations,
    Differences,
    Models,
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Channel::Locations => "locations",
            Channel::Differences => "differences",
            Channel::Models => "models",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocationEntry {
    pub set_index: u32,
    pub secret_location: SecretLocation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DifferenceEntry {
    pub set_index: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub secret_number: Option<SecretNumber>,
    pub codec_scheme: String,
    pub secret_difference: SecretDifference,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub set_index: u32,
    pub model: ModelRef,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocationsArtifact {
    pub channel: Channel,
    pub format_version: u32,
    pub nonce: Nonce,
    pub entries: Vec<LocationEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DifferencesArtifact {
    pub channel: Channel,
    pub format_version: u32,
    pub nonce: Nonce,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<SplitPlan>,
    pub verification: VerificationInfo,
    pub entries: Vec<DifferenceEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelsArtifact {
    pub channel: Channel,
    pub format_version: u32,
    pub nonce: Nonce,
    pub entries: Vec<ModelEntry>,
}

macro_rules! artifact_json {
    ($ty:ty, $channel:expr) => {
        impl $ty {
            pub fn to_json(&self) -> String {
                serde_json::to_string_pretty(self).expect("artifact serializes")
            }

            pub fn from_json(text: &str) -> Result<Self, ProtocolError> {
                let a: Self = serde_json::from_str(text).map_err(|e| {
                    ProtocolError::InvalidBundle(format!("{} artifact: {e}", $channel))
                })?;
                if a.channel != $channel {
                    return Err(ProtocolError::ChannelArtifactMismatch(format!(
                        "expected a {} artifact, got {}",
                        $channel, a.channel
                    )));
                }
                Ok(a)
            }
        }
    };
}

artifact_json!(LocationsArtifact, Channel::Locations);
artifact_json!(DifferencesArtifact, Channel::Differences);
artifact_json!(ModelsArtifact, Channel::Models);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelArtifacts {
    pub locations: LocationsArtifact,
    pub differences: DifferencesArtifact,
    pub models: ModelsArtifact,
}

pub fn package_channels(bundle: &Bundle) -> Result<ChannelArtifacts, ProtocolError> {
    bundle.validate()?;
    let sets = &bundle.authorization_sets;
    Ok(ChannelArtifacts {
        locations: LocationsArtifact {
            channel: Channel::Locations,
            format_version: bundle.format_version,
            nonce: bundle.nonce.clone(),
            entries: sets
                .iter()
                .map(|s| LocationEntry {
                    set_index: s.set_index,
                    secret_location: s.secret_location.clone(),
                })
                .collect(),
        },
        differences: DifferencesArtifact {
            channel: Channel::Differences,
            format_version: bundle.format_version,
            nonce: bundle.nonce.clone(),
            plan: bundle.plan.clone(),
            verification: bundle.verification.clone(),
            entries: sets
                .iter()
                .map(|s| DifferenceEntry {
                    set_index: s.set_index,
                    secret_number: s.secret_number,
                    codec_scheme: s.codec_scheme.clone(),
                    secret_difference: s.secret_difference.clone(),
                })
                .collect(),
        },
        models: ModelsArtifact {
            channel: Channel::Models,
            format_version: bundle.format_version,
            nonce: bundle.nonce.clone(),
            entries: sets
                .iter()
                .map(|s| ModelEntry {
                    set_index: s.set_index,
                    model: s.model.clone(),
                })
                .collect(),
        },
    })
}

/// Exact inverse of [`package_channels`].
pub fn repackage(
    locations: &LocationsArtifact,
    differences: &DifferencesArtifact,
    models: &ModelsArtifact,
) -> Result<Bundle, ProtocolError> {
    let mismatch = |m: String| Err(ProtocolError::ChannelArtifactMismatch(m));
    for (channel, expected) in [
        (locations.channel, Channel::Locations),
        (differences.channel, Channel::Differences),
        (models.channel, Channel::Models),
    ] {
        if channel != expected {
            return mismatch(format!("{channel} artifact supplied as {expected}"));
        }
    }
    if locations.nonce != differences.nonce || locations.nonce != models.nonce {
        return mismatch(format!(
            "nonces differ (locations {}, differences {}, models {})",
            locations.nonce, differences.nonce, models.nonce
        ));
    }
    if locations.format_version != differences.format_version
        || locations.format_version != models.format_version
    {
        return mismatch("format versions differ".into());
    }
    let n = differences.entries.len();
    if locations.entries.len() != n || models.entries.len() != n {
        return mismatch("artifacts list different numbers of sets".into());
    }
    let sets = differences
        .entries
        .iter()
        .zip(&locations.entries)
        .zip(&models.entries)
        .map(|((d, l), m)| {
            if d.set_index != l.set_index || d.set_index != m.set_index {
                return Err(ProtocolError::ChannelArtifactMismatch(format!(
                    "set indices differ: {} / {} / {}",
                    l.set_index, d.set_index, m.set_index
                )));
            }
            Ok(AuthorizationSet {
                set_index: d.set_index,
                secret_number: d.secret_number,
                codec_scheme: d.codec_scheme.clone(),
                secret_difference: d.secret_difference.clone(),
                secret_location: l.secret_location.clone(),
                model: m.model.clone(),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let bundle = Bundle {
        format_version: differences.format_version,
        nonce: differences.nonce.clone(),
        plan: differences.plan.clone(),
        verification: differences.verification.clone(),
        authorization_sets: sets,
    };
    bundle.validate()?;
    Ok(bundle)
}

/// Whatever artifacts a receiver has collected so far.
#[derive(Debug, Clone, Default)]
pub struct PartialChannels {
    pub locations: Option<LocationsArtifact>,
    pub differences: Option<DifferencesArtifact>,
    pub models: Option<ModelsArtifact>,
}

impl PartialChannels {
    pub fn missing(&self) -> Vec<Channel> {
        let mut missing = Vec::new();
        if self.locations.is_none() {
            missing.push(Channel::Locations);
        }
        if self.differences.is_none() {
            missing.push(Channel::Differences);
        }
        if self.models.is_none() {
            missing.push(Channel::Models);
        }
        missing
    }

    /// Rebuilds the bundle; fails unless all three artifacts are present.
    pub fn assemble(&self) -> Result<Bundle, ProtocolError> {
        match (&self.locations, &self.differences, &self.models) {
            (Some(l), Some(d), Some(m)) => repackage(l, d, m),
            _ => Err(ProtocolError::IncompleteAuthorization {
                missing: self.missing(),
            }),
        }
    }
}

impl From<ChannelArtifacts> for PartialChannels {
    fn from(a: ChannelArtifacts) -> Self {
        Self {
            locations: Some(a.locations),
            differences: Some(a.differences),
            models: Some(a.models),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::carrier::{CarrierRecord, SecretLocation};
    use crate::fixtures;
    use crate::protocol::hide_redundant;

    fn knife_bundle() -> Bundle {
        let carrier = CarrierRecord::new(
            SecretLocation::file("/srv/tree.ppm"),
            fixtures::tree_image(),
        );
        hide_redundant(b"knife", &[carrier], &[fixtures::experiment_one_model()], 8).unwrap()
    }

    #[test]
    fn package_repackage_identity() {
        let bundle = knife_bundle();
        let a = package_channels(&bundle).unwrap();
        let back = repackage(&a.locations, &a.differences, &a.models).unwrap();
        assert_eq!(back, bundle);
        assert_eq!(back.to_json(), bundle.to_json());

        let parsed = repackage(
            &LocationsArtifact::from_json(&a.locations.to_json()).unwrap(),
            &DifferencesArtifact::from_json(&a.differences.to_json()).unwrap(),
            &ModelsArtifact::from_json(&a.models.to_json()).unwrap(),
        )
        .unwrap();
        assert_eq!(parsed, bundle);
    }

    #[test]
    fn differences_artifact_holds_only_differences() {
        let a = package_channels(&knife_bundle()).unwrap();
        let json = a.differences.to_json();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(
            v["entries"][0]["secret_difference"],
            serde_json::json!([-5, -1, -11, 58, 69])
        );
        assert!(!json.contains("tree.ppm"));
        assert!(!json.contains("\"model\""));
        assert!(!a.locations.to_json().contains("secret_difference"));
        assert!(!a.models.to_json().contains("tree.ppm"));
    }

    #[test]
    fn foreign_artifact_rejected() {
        let a = package_channels(&knife_bundle()).unwrap();
        let b = package_channels(&knife_bundle()).unwrap();
        assert!(matches!(
            repackage(&a.locations, &b.differences, &a.models),
            Err(ProtocolError::ChannelArtifactMismatch(_))
        ));
        assert!(matches!(
            LocationsArtifact::from_json(&a.models.to_json()),
            Err(ProtocolError::ChannelArtifactMismatch(_)) | Err(ProtocolError::InvalidBundle(_))
        ));
    }

    #[test]
    fn partial_sets_rejected() {
        let a = package_channels(&knife_bundle()).unwrap();
        let p = PartialChannels {
            locations: Some(a.locations.clone()),
            differences: None,
            models: Some(a.models.clone()),
        };
        match p.assemble() {
            Err(ProtocolError::IncompleteAuthorization { missing }) => {
                assert_eq!(missing, vec![Channel::Differences])
            }
            other => panic!("{other:?}"),
        }
        assert!(PartialChannels::from(a).assemble().is_ok());
    }
}
