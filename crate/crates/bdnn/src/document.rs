//! Text documents for trained models.
//!
//! The document is UTF-8 JSON with keys `kind`, `dims`, `weight_domain`,
//! `lambda_mode`, `weights` (one row-major array per layer), `lambdas` and
//! `meta`. The ReLU baseline shares the container with a distinct `kind` tag
//! and additional bias arrays.

use serde::{Deserialize, Serialize};

use crate::baseline::MlpModel;
use crate::error::{Error, Result};
use crate::model::{Architecture, BdnnModel, LambdaMode, WeightDomain};

/// Training provenance stored alongside the weights.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    #[serde(default)]
    pub method: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub epsilon: f64,
}

#[derive(Serialize, Deserialize)]
struct BdnnDocument {
    kind: String,
    dims: Vec<usize>,
    weight_domain: WeightDomain,
    lambda_mode: LambdaMode,
    weights: Vec<Vec<f64>>,
    lambdas: Vec<f64>,
    #[serde(default)]
    meta: ModelMeta,
}

const BDNN_KIND: &str = "bdnn";
const MLP_KIND: &str = "relu-mlp";

/// Serializes a model with its metadata to a JSON document.
pub fn serialize_model(model: &BdnnModel, meta: &ModelMeta) -> String {
    let doc = BdnnDocument {
        kind: BDNN_KIND.to_string(),
        dims: model.arch().dims().to_vec(),
        weight_domain: model.arch().weight_domain,
        lambda_mode: model.arch().lambda_mode,
        weights: model.weights().to_vec(),
        lambdas: model.lambdas().to_vec(),
        meta: meta.clone(),
    };
    serde_json::to_string_pretty(&doc).expect("model document always serializes")
}

/// Parses a JSON document back into a model, validating shapes and bounds.
pub fn deserialize_model(text: &str) -> Result<(BdnnModel, ModelMeta)> {
    let doc: BdnnDocument =
        serde_json::from_str(text).map_err(|e| Error::Document(e.to_string()))?;
    if doc.kind != BDNN_KIND {
        return Err(Error::Document(format!(
            "expected kind `{BDNN_KIND}`, got `{}`",
            doc.kind
        )));
    }
    let arch = Architecture::new(doc.dims, doc.weight_domain, doc.lambda_mode)?;
    let model = BdnnModel::new(arch, doc.weights, doc.lambdas)?;
    Ok((model, doc.meta))
}

#[derive(Serialize, Deserialize)]
struct MlpDocument {
    kind: String,
    dims: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    #[serde(default)]
    meta: ModelMeta,
}

/// Serializes the ReLU baseline model.
pub fn serialize_mlp(model: &MlpModel, meta: &ModelMeta) -> String {
    let doc = MlpDocument {
        kind: MLP_KIND.to_string(),
        dims: vec![model.input_dim(), model.hidden_dim(), 2],
        weights: vec![model.w1.clone(), model.w2.clone()],
        biases: vec![model.b1.clone(), model.b2.clone()],
        meta: meta.clone(),
    };
    serde_json::to_string_pretty(&doc).expect("mlp document always serializes")
}

/// Parses the ReLU baseline document.
pub fn deserialize_mlp(text: &str) -> Result<(MlpModel, ModelMeta)> {
    let doc: MlpDocument =
        serde_json::from_str(text).map_err(|e| Error::Document(e.to_string()))?;
    if doc.kind != MLP_KIND {
        return Err(Error::Document(format!(
            "expected kind `{MLP_KIND}`, got `{}`",
            doc.kind
        )));
    }
    if doc.dims.len() != 3 || doc.weights.len() != 2 || doc.biases.len() != 2 {
        return Err(Error::Document("mlp document needs two layers".into()));
    }
    let model = MlpModel::from_parts(
        doc.dims[0],
        doc.dims[1],
        doc.weights[0].clone(),
        doc.biases[0].clone(),
        doc.weights[1].clone(),
        doc.biases[1].clone(),
    )?;
    Ok((model, doc.meta))
}

/// Reads the `kind` tag without validating the rest.
pub fn document_kind(text: &str) -> Result<String> {
    #[derive(Deserialize)]
    struct KindOnly {
        kind: String,
    }
    let k: KindOnly = serde_json::from_str(text).map_err(|e| Error::Document(e.to_string()))?;
    Ok(k.kind)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_model() -> BdnnModel {
        let arch = Architecture::new(
            vec![2, 2, 1],
            WeightDomain::ContinuousBox,
            LambdaMode::Trainable,
        )
        .unwrap();
        BdnnModel::new(
            arch,
            vec![vec![0.5, -0.25, 1.0, 0.0], vec![-1.0, 0.75]],
            vec![0.1, -0.3],
        )
        .unwrap()
    }

    #[test]
    fn round_trip_preserves_fields() {
        let model = sample_model();
        let meta = ModelMeta { method: "exact".into(), seed: 7, epsilon: 1e-4 };
        let text = serialize_model(&model, &meta);
        let (back, meta_back) = deserialize_model(&text).unwrap();
        assert_eq!(back, model);
        assert_eq!(meta_back, meta);
    }

    #[test]
    fn rejects_out_of_bound_weight() {
        let text = serialize_model(&sample_model(), &ModelMeta::default());
        let bad = text.replace("-0.25", "1.5");
        let err = deserialize_model(&bad).unwrap_err();
        assert!(matches!(err, Error::BoundViolation { .. }), "{err}");
    }

    #[test]
    fn rejects_shape_mismatch() {
        let text = serialize_model(&sample_model(), &ModelMeta::default());
        // Drop one entry from the first weight matrix.
        let bad = text.replace("0.5,", "");
        assert!(deserialize_model(&bad).is_err());
    }

    #[test]
    fn rejects_malformed_json() {
        assert!(deserialize_model("{not json").is_err());
    }
}
