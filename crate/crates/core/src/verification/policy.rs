use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::monitoring::Granularity;
use crate::{Micros, Tick};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerificationMode {
    Spot,
    Standard,
    Strict,
}

impl VerificationMode {
    pub fn as_str(self) -> &'static str {
        match self {
            VerificationMode::Spot => "spot",
            VerificationMode::Standard => "standard",
            VerificationMode::Strict => "strict",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactType {
    UnitTestLog,
    ProofTrace,
    AuditReport,
    ConsensusVerdict,
    /// Accepted on the wire; handled as an emulated proof trace.
    ZkSnarkTrace,
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactRequirement {
    #[serde(rename = "type")]
    pub kind: ArtifactType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validator: Option<String>,
    #[serde(default, skip_serializing_if = "is_false")]
    pub signature_required: bool,
    /// Unrecognised fields such as `circuit_hash` or `proof_protocol`, kept verbatim.
    #[serde(flatten)]
    pub params: BTreeMap<String, serde_json::Value>,
}

impl ArtifactRequirement {
    pub fn new(kind: ArtifactType, validator: &str, signature_required: bool) -> Self {
        Self { kind, validator: Some(validator.to_string()), signature_required, params: BTreeMap::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationPolicy {
    pub mode: VerificationMode,
    pub artifacts: Vec<ArtifactRequirement>,
    pub escrow_trigger: bool,
}

impl VerificationPolicy {
    /// Default artifact list for each mode.
    pub fn for_mode(mode: VerificationMode) -> Self {
        use ArtifactType::*;
        let artifacts = match mode {
            VerificationMode::Spot => vec![ArtifactRequirement::new(UnitTestLog, "test-runner", false)],
            VerificationMode::Standard => vec![
                ArtifactRequirement::new(UnitTestLog, "test-runner", false),
                ArtifactRequirement::new(AuditReport, "auditor", true),
            ],
            VerificationMode::Strict => vec![
                ArtifactRequirement::new(UnitTestLog, "test-runner", true),
                ArtifactRequirement::new(ProofTrace, "prover", true),
            ],
        };
        Self { mode, artifacts, escrow_trigger: ModeProfile::of(mode).escrow_trigger }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.mode == VerificationMode::Strict && !self.artifacts.iter().any(|a| a.signature_required) {
            return Err("strict mode requires at least one signed artifact".into());
        }
        Ok(())
    }

    pub fn requires(&self, kind: ArtifactType) -> bool {
        self.artifacts.iter().any(|a| a.kind == kind)
    }

    pub fn requires_proof(&self) -> bool {
        self.requires(ArtifactType::ProofTrace) || self.requires(ArtifactType::ZkSnarkTrace)
    }
}

/// Static properties of a verification mode, ordered from cheapest to most expensive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeProfile {
    pub mode: VerificationMode,
    pub assurance: f64,
    pub granularity: Granularity,
    pub max_cadence: Tick,
    pub escrow_trigger: bool,
    pub cost: Micros,
}

pub const MODE_TABLE: [ModeProfile; 3] = [
    ModeProfile {
        mode: VerificationMode::Spot,
        assurance: 0.3,
        granularity: Granularity::L0,
        max_cadence: 20,
        escrow_trigger: false,
        cost: 10_000,
    },
    ModeProfile {
        mode: VerificationMode::Standard,
        assurance: 0.6,
        granularity: Granularity::L1,
        max_cadence: 10,
        escrow_trigger: false,
        cost: 40_000,
    },
    ModeProfile {
        mode: VerificationMode::Strict,
        assurance: 0.9,
        granularity: Granularity::L2,
        max_cadence: 5,
        escrow_trigger: true,
        cost: 100_000,
    },
];

impl ModeProfile {
    pub fn of(mode: VerificationMode) -> ModeProfile {
        *MODE_TABLE.iter().find(|p| p.mode == mode).expect("every mode is in the table")
    }

    /// Cheapest mode meeting the required assurance; strict when none does.
    pub fn cheapest_for(required_assurance: f64) -> ModeProfile {
        MODE_TABLE
            .iter()
            .filter(|p| p.assurance >= required_assurance)
            .min_by_key(|p| p.cost)
            .copied()
            .unwrap_or(MODE_TABLE[2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const LISTING: &str = r#"{
        "mode": "strict",
        "artifacts": [
            {"type": "unit_test_log", "validator": "mcp://test-runner-agent", "signature_required": true},
            {"type": "zk_snark_trace", "circuit_hash": "0xabc123...", "proof_protocol": "groth16"}
        ],
        "escrow_trigger": true
    }"#;

    #[test]
    fn listing_round_trips() {
        let p: VerificationPolicy = serde_json::from_str(LISTING).unwrap();
        assert_eq!(p.mode, VerificationMode::Strict);
        assert!(p.escrow_trigger);
        assert_eq!(p.artifacts[1].params["proof_protocol"], "groth16");
        assert!(p.requires_proof());
        p.validate().unwrap();
        let back: serde_json::Value = serde_json::to_value(&p).unwrap();
        let orig: serde_json::Value = serde_json::from_str(LISTING).unwrap();
        assert_eq!(back, orig);
    }

    #[test]
    fn strict_without_signed_artifact_is_invalid() {
        let mut p = VerificationPolicy::for_mode(VerificationMode::Strict);
        for a in &mut p.artifacts {
            a.signature_required = false;
        }
        assert!(p.validate().is_err());
    }

    #[test]
    fn cheapest_mode_selection() {
        assert_eq!(ModeProfile::cheapest_for(0.1).mode, VerificationMode::Spot);
        assert_eq!(ModeProfile::cheapest_for(0.6).mode, VerificationMode::Standard);
        assert_eq!(ModeProfile::cheapest_for(0.9).mode, VerificationMode::Strict);
        assert_eq!(ModeProfile::cheapest_for(1.0).mode, VerificationMode::Strict);
        for m in [VerificationMode::Spot, VerificationMode::Standard, VerificationMode::Strict] {
            VerificationPolicy::for_mode(m).validate().unwrap();
        }
    }
}
