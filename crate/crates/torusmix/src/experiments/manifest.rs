//! Run manifests: the machine-readable record of what a run was.
//!
//! Every campaign writes one JSON manifest next to its CSV tables. The
//! manifest carries the fully resolved configuration (sufficient to re-run
//! the campaign bit-identically on the same build), the library version, the
//! theoretical quantities the model implies, wall-clock time, and the
//! outcome of every check the campaign evaluates. Only the wall clock varies
//! between identical runs; the data files are byte-identical.

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ExperimentId, ModelSection, PotentialSection};
use crate::meanfield::{decay_margin, stability_report};
use crate::{Error, Result};

/// Manifest schema revision.
pub const MANIFEST_SCHEMA: u32 = 1;

/// Outcome of one named check.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckOutcome {
    /// Stable identifier, `"<criterion>.<part>"`.
    pub id: String,
    /// What was checked.
    pub description: String,
    /// Whether the check passed.
    pub pass: bool,
    /// The measured quantity.
    pub measured: f64,
    /// The target it was held against, as printed.
    pub target: String,
}

impl CheckOutcome {
    /// Build an outcome row.
    pub fn new(
        id: &str,
        description: &str,
        pass: bool,
        measured: f64,
        target: impl Into<String>,
    ) -> Self {
        Self {
            id: id.into(),
            description: description.into(),
            pass,
            measured,
            target: target.into(),
        }
    }
}

/// Theoretical quantities implied by a model section.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DerivedQuantities {
    /// Dimension constant `C_d`.
    pub c_d: f64,
    /// Noise shape norm `‖θ‖²_{ℓ²}` over the full lattice band.
    pub theta_l2_sq: f64,
    /// Noise shape norm `‖θ‖²_{h⁻¹}`.
    pub theta_hminus1_sq: f64,
    /// Scalar Itô corrector `K² q` of the configured noise.
    pub ito_corrector: f64,
    /// Sufficient intensity `K_crit` from the optimized split parameter.
    pub k_crit: f64,
    /// Decay margin `γ*` at the configured intensity.
    pub gamma_star: f64,
    /// Smallest linearization eigenvalue over `0 < |k| ≤ 6`.
    pub spectrum_min: f64,
    /// Largest linearization eigenvalue over `0 < |k| ≤ 6`.
    pub spectrum_max: f64,
}

impl DerivedQuantities {
    /// Evaluate the derived quantities for a model with an interaction.
    /// Returns `None` when the model has no potential (the threshold
    /// machinery is about the interaction's unstable modes).
    pub fn for_model(model: &ModelSection) -> Result<Option<Self>> {
        if model.potential == PotentialSection::None {
            return Ok(None);
        }
        if !(model.nu > 0.0) {
            return Ok(None);
        }
        let grid = model.grid()?;
        let w = model.potential.build(grid)?;
        let noise = model.noise.build(model.dimension)?;
        let report = stability_report(&w, model.nu, &noise)?;
        let gamma_star = decay_margin(&w, model.nu, &noise)?;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for (_, ev) in &report.spectrum {
            lo = lo.min(*ev);
            hi = hi.max(*ev);
        }
        Ok(Some(Self {
            c_d: report.c_d,
            theta_l2_sq: noise.h_norm_sq(0.0),
            theta_hminus1_sq: noise.h_norm_sq(-1.0),
            ito_corrector: noise.ito_corrector()?,
            k_crit: report.k_crit,
            gamma_star,
            spectrum_min: lo,
            spectrum_max: hi,
        }))
    }
}

/// The JSON record written next to a campaign's data files.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    /// Manifest schema revision.
    pub schema: u32,
    /// Library version that produced the run.
    pub version: String,
    /// Campaign identifier.
    pub experiment: ExperimentId,
    /// Fully resolved configuration (re-runnable as-is).
    pub config: ExperimentConfig,
    /// Theoretical quantities of the configured model, when it has one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub derived: Option<DerivedQuantities>,
    /// Wall-clock duration of the run in seconds.
    pub wall_clock_seconds: f64,
    /// Every check the campaign evaluated.
    pub checks: Vec<CheckOutcome>,
    /// Data files written, relative to the output directory.
    pub outputs: Vec<String>,
}

impl RunManifest {
    /// Parse a manifest from JSON text.
    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        if m.schema != MANIFEST_SCHEMA {
            return Err(Error::Config(format!(
                "manifest schema {} is not supported (expected {MANIFEST_SCHEMA})",
                m.schema
            )));
        }
        Ok(m)
    }

    /// Serialize to pretty JSON.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// File name of the manifest for an experiment.
    pub fn file_name(id: ExperimentId) -> String {
        format!("{id}.manifest.json")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trips_and_guards_schema() {
        let cfg = ExperimentConfig::preset(ExperimentId::Steady);
        let manifest = RunManifest {
            schema: MANIFEST_SCHEMA,
            version: env!("CARGO_PKG_VERSION").into(),
            experiment: ExperimentId::Steady,
            config: cfg,
            derived: None,
            wall_clock_seconds: 0.25,
            checks: vec![CheckOutcome::new("A5.i", "order parameter", true, 0.0, "≤ 1e-6")],
            outputs: vec!["steady.csv".into()],
        };
        let text = manifest.to_json().unwrap();
        let back = RunManifest::from_json(&text).unwrap();
        assert_eq!(back.config, manifest.config);
        assert_eq!(back.checks.len(), 1);

        let bad = text.replace("\"schema\": 1", "\"schema\": 99");
        assert!(matches!(RunManifest::from_json(&bad), Err(Error::Config(_))));
    }

    #[test]
    fn derived_quantities_match_the_threshold_machinery() {
        let model = ExperimentConfig::preset(ExperimentId::Lyapunov)
            .model()
            .unwrap()
            .clone();
        let derived = DerivedQuantities::for_model(&model).unwrap().unwrap();
        assert!((derived.c_d - 1.0 / 64.0).abs() < 1e-15);
        assert!((derived.theta_hminus1_sq - 4.0).abs() < 1e-12);
        assert!((derived.theta_l2_sq - 4.0).abs() < 1e-12);
        assert!(derived.k_crit.is_finite() && derived.k_crit > 0.0);
        assert!(derived.spectrum_max > 0.0 && derived.spectrum_min < derived.spectrum_max);

        let mixing = ExperimentConfig::preset(ExperimentId::Mixing)
            .model()
            .unwrap()
            .clone();
        assert!(DerivedQuantities::for_model(&mixing).unwrap().is_none());
    }
}
