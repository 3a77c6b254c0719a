//! Position encodings: the parabolic encoding and its rotation-invariant
//! variant, the polynomial generalization, and the baselines
//! (nD sin/cos, axial and mixed rotary, nD distance bias).

pub mod alibi;
pub mod pape;
pub mod pape_ri;
pub mod poly;
pub mod rope;
pub mod sincos;
pub mod snapshot;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use alibi::{alibi_slopes, nd_alibi_bias};
pub use pape::{
    feature_map_scores, feature_width, pape_bias, pape_bias_terms, pape_coefficients,
    pape_feature_maps, pape_feature_maps_raw, PapeCoefficients, PapeParams,
};
pub use pape_ri::{constrained_pape, pape_ri_bias, AlphaSource, PapeRiParams};
pub use poly::{
    poly_bias, poly_coefficients, poly_extra_width, poly_feature_maps, PolyCoeffMap, PolyParams,
    DEFAULT_MAX_POLY_DEGREE,
};
pub use rope::{rope_apply, rope_axial_apply, rope_axial_freqs, rope_mixed_init};
pub use sincos::{nd_sincos_embed, DEFAULT_FREQ_BASE};
pub use snapshot::{read_snapshot, write_snapshot, Snapshot};

fn default_freq_base() -> f64 {
    DEFAULT_FREQ_BASE
}

/// One ablation switch for the parabolic encoding. Exactly one may be
/// active on a spec at a time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// Drop the quadratic (distance-decay) term.
    RemoveQuadratic,
    /// Drop the linear (direction) term.
    RemoveLinear,
    /// Coefficients become shared learned vectors instead of token-derived
    /// ones; the softplus constraint on the quadratic side stays.
    RemoveContext,
    /// Quadratic coefficients come straight from the linear map, without
    /// softplus or negation, so concavity is no longer guaranteed.
    RemoveSoftplus,
    /// Fix the projection to the identity, forcing m = p.
    RemoveProjection,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::RemoveQuadratic,
        Ablation::RemoveLinear,
        Ablation::RemoveContext,
        Ablation::RemoveSoftplus,
        Ablation::RemoveProjection,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Ablation::RemoveQuadratic => "remove_quadratic",
            Ablation::RemoveLinear => "remove_linear",
            Ablation::RemoveContext => "remove_context",
            Ablation::RemoveSoftplus => "remove_softplus",
            Ablation::RemoveProjection => "remove_projection",
        }
    }
}

/// Which coefficient source the rotation-invariant variant uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaKind {
    /// `alpha_i = -softplus(<w_alpha, x_i>)`; keeps the distance term
    /// context aware. The default.
    #[default]
    TokenDerived,
    /// A single learned scalar shared across tokens.
    Shared,
}

/// Declarative choice of encoding plus hyperparameters. This is the
/// config-file-facing type: plain f64 numbers, validated per kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EncodingSpec {
    /// No positional information at all.
    None,
    Pape {
        m: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ablation: Option<Ablation>,
    },
    PapeRi {
        #[serde(default)]
        alpha: AlphaKind,
    },
    NdSincos {
        #[serde(default = "default_freq_base")]
        base: f64,
    },
    RopeAxial {
        #[serde(default = "default_freq_base")]
        base: f64,
    },
    RopeMixed {
        #[serde(default = "default_freq_base")]
        base: f64,
    },
    NdAlibi,
    Poly {
        degree: usize,
    },
}

impl EncodingSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            EncodingSpec::None => "none",
            EncodingSpec::Pape { .. } => "pape",
            EncodingSpec::PapeRi { .. } => "pape_ri",
            EncodingSpec::NdSincos { .. } => "nd_sincos",
            EncodingSpec::RopeAxial { .. } => "rope_axial",
            EncodingSpec::RopeMixed { .. } => "rope_mixed",
            EncodingSpec::NdAlibi => "nd_alibi",
            EncodingSpec::Poly { .. } => "poly",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            EncodingSpec::Pape { m, .. } if *m == 0 => Err(Error::InvalidArgument(
                "pape: m must be >= 1; express the no-position regime through ablations".into(),
            )),
            EncodingSpec::Poly { degree } if *degree > DEFAULT_MAX_POLY_DEGREE => {
                Err(Error::InvalidArgument(format!(
                    "poly: degree {} exceeds the default cap {}",
                    degree, DEFAULT_MAX_POLY_DEGREE
                )))
            }
            EncodingSpec::NdSincos { base }
            | EncodingSpec::RopeAxial { base }
            | EncodingSpec::RopeMixed { base }
                if *base <= 1.0 =>
            {
                Err(Error::InvalidArgument(format!(
                    "frequency base must exceed 1, got {}",
                    base
                )))
            }
            _ => Ok(()),
        }
    }

    /// Number of parabolas actually used given the position dimensionality;
    /// the identity-projection ablation pins m = p.
    pub fn effective_m(&self, p: usize) -> Option<usize> {
        match self {
            EncodingSpec::Pape { m, ablation } => Some(match ablation {
                Some(Ablation::RemoveProjection) => p,
                _ => *m,
            }),
            _ => None,
        }
    }
}

/// Derive the single-switch ablated variant of a parabolic spec.
pub fn ablation_variant(spec: &EncodingSpec, switch: Ablation) -> Result<EncodingSpec> {
    match spec {
        EncodingSpec::Pape { m, .. } => Ok(EncodingSpec::Pape {
            m: *m,
            ablation: Some(switch),
        }),
        other => Err(Error::InvalidArgument(format!(
            "ablation switches only apply to the parabolic encoding, got {}",
            other.kind_name()
        ))),
    }
}

/// Transformer shape for parameter audits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub layers: usize,
    pub heads: usize,
    pub d: usize,
    pub h: usize,
    pub p: usize,
}

impl ModelShape {
    /// The reference 12-layer, 12-head, 768-wide shape used by the audits.
    pub fn vit_b(p: usize) -> Self {
        Self {
            layers: 12,
            heads: 12,
            d: 768,
            h: 64,
            p,
        }
    }
}

/// Exact learnable positional-parameter count under per-head-per-layer
/// sharing (every head of every layer owns its own tables).
///
/// Counting rules per kind:
/// - `pape`: W_p (m x p) + W_a, W_b (m x d each) per head.
/// - `pape_ri`: the projection scalar plus the coefficient source
///   (d-vector if token-derived, scalar if shared) per head.
/// - `rope_mixed`: one angle parameter per channel per position axis
///   (h * p per head). Pairs store duplicated frequencies, so the
///   functional table holds (h/2) * p distinct values; the per-channel
///   convention is what the published totals count.
/// - `poly`: one p x d linear map per degree 1..=N (degree 0 cancels in the
///   row softmax and carries no parameters here).
/// - everything else: no learnable positional parameters.
pub fn count_positional_params(spec: &EncodingSpec, shape: &ModelShape) -> u64 {
    let per_head: u64 = match spec {
        EncodingSpec::None
        | EncodingSpec::NdSincos { .. }
        | EncodingSpec::RopeAxial { .. }
        | EncodingSpec::NdAlibi => 0,
        EncodingSpec::Pape { ablation, .. } => {
            let m = spec.effective_m(shape.p).unwrap() as u64;
            let (p, d) = (shape.p as u64, shape.d as u64);
            match ablation {
                None | Some(Ablation::RemoveSoftplus) => m * p + 2 * m * d,
                Some(Ablation::RemoveQuadratic) | Some(Ablation::RemoveLinear) => m * p + m * d,
                Some(Ablation::RemoveContext) => m * p + 2 * m,
                Some(Ablation::RemoveProjection) => 2 * m * d,
            }
        }
        EncodingSpec::PapeRi { alpha } => match alpha {
            AlphaKind::TokenDerived => 1 + shape.d as u64,
            AlphaKind::Shared => 2,
        },
        EncodingSpec::RopeMixed { .. } => (shape.h * shape.p) as u64,
        EncodingSpec::Poly { degree } => (*degree as u64) * (shape.p * shape.d) as u64,
    };
    per_head * (shape.layers * shape.heads) as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_parameter_baselines() {
        let shape = ModelShape::vit_b(2);
        for spec in [
            EncodingSpec::NdSincos {
                base: DEFAULT_FREQ_BASE,
            },
            EncodingSpec::RopeAxial {
                base: DEFAULT_FREQ_BASE,
            },
            EncodingSpec::NdAlibi,
            EncodingSpec::None,
        ] {
            assert_eq!(count_positional_params(&spec, &shape), 0);
        }
    }

    #[test]
    fn rope_mixed_reference_count() {
        let shape = ModelShape::vit_b(2);
        let spec = EncodingSpec::RopeMixed {
            base: DEFAULT_FREQ_BASE,
        };
        assert_eq!(count_positional_params(&spec, &shape), 18_432);
    }

    #[test]
    fn pape_counts_under_per_head_per_layer_sharing() {
        let shape = ModelShape::vit_b(2);
        let expect = [
            (2, 442_944u64),
            (4, 885_888),
            (8, 1_771_776),
            (16, 3_543_552),
            (32, 7_087_104),
            (64, 14_174_208),
        ];
        for (m, count) in expect {
            let spec = EncodingSpec::Pape { m, ablation: None };
            assert_eq!(count_positional_params(&spec, &shape), count, "m = {m}");
        }
    }

    #[test]
    fn projection_ablation_forces_m_equal_p() {
        let spec = EncodingSpec::Pape {
            m: 50,
            ablation: Some(Ablation::RemoveProjection),
        };
        assert_eq!(spec.effective_m(2), Some(2));
        assert_eq!(spec.effective_m(3), Some(3));
    }

    #[test]
    fn ablation_variant_only_applies_to_pape() {
        let pape = EncodingSpec::Pape {
            m: 8,
            ablation: None,
        };
        for switch in Ablation::ALL {
            let v = ablation_variant(&pape, switch).unwrap();
            match v {
                EncodingSpec::Pape { m: 8, ablation } => assert_eq!(ablation, Some(switch)),
                other => panic!("unexpected variant {other:?}"),
            }
        }
        assert!(ablation_variant(&EncodingSpec::NdAlibi, Ablation::RemoveLinear).is_err());
    }

    #[test]
    fn spec_json_rejects_unknown_keys() {
        let ok: EncodingSpec = serde_json::from_str(r#"{"kind": "pape", "m": 8}"#).unwrap();
        assert_eq!(ok.kind_name(), "pape");
        let bad = serde_json::from_str::<EncodingSpec>(r#"{"kind": "pape", "m": 8, "x": 1}"#);
        assert!(bad.is_err());
    }

    #[test]
    fn validation_catches_bad_hyperparameters() {
        assert!(EncodingSpec::Pape {
            m: 0,
            ablation: None
        }
        .validate()
        .is_err());
        assert!(EncodingSpec::Poly { degree: 9 }.validate().is_err());
        assert!(EncodingSpec::Poly { degree: 3 }.validate().is_ok());
    }
}
