use std::time::Duration;

use serde_json::{json, Value};
use ureq::Agent;

use super::{Oracle, OracleError};
use crate::schema::{FeatureRecord, Schema, TextRecord};

/// Client for an external extraction service.
///
/// Requests are `POST {"schema": <schema>, "text": <text>}`; the response
/// must be `{"features": {attribute: option, ...}}`. Option strings outside
/// the schema map to the attribute's `Other` option when it exists.
#[derive(Debug, Clone)]
pub struct HttpOracle {
    endpoint: String,
    agent: Agent,
}

impl HttpOracle {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        let agent = Agent::config_builder().timeout_global(Some(timeout)).build().into();
        Self { endpoint: endpoint.into(), agent }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }
}

/// Interprets a `{"features": {...}}` response body.
pub(crate) fn parse_response(body: &Value, schema: &Schema) -> Result<FeatureRecord, OracleError> {
    let features = body
        .get("features")
        .and_then(Value::as_object)
        .ok_or_else(|| OracleError::NonConforming("missing 'features' object".into()))?;
    if let Some(extra) = features.keys().find(|k| schema.attribute_index(k).is_none()) {
        return Err(OracleError::NonConforming(format!("unknown attribute '{extra}'")));
    }
    let mut values = Vec::with_capacity(schema.len());
    for spec in schema.attributes() {
        let raw = features
            .get(&spec.name)
            .and_then(Value::as_str)
            .ok_or_else(|| OracleError::NonConforming(format!("missing attribute '{}'", spec.name)))?;
        let idx = spec
            .option_index(raw)
            .or_else(|| spec.other_index())
            .ok_or_else(|| OracleError::NonConforming(format!("'{}': option '{raw}' not in schema", spec.name)))?;
        values.push(idx);
    }
    Ok(FeatureRecord::new(values))
}

impl Oracle for HttpOracle {
    fn extract(&self, text: &TextRecord, schema: &Schema) -> Result<FeatureRecord, OracleError> {
        let schema_json: Value = serde_json::from_str(&schema.to_json()).expect("schema json");
        let body = json!({"schema": schema_json, "text": text.text});
        let mut response = self
            .agent
            .post(&self.endpoint)
            .send_json(&body)
            .map_err(|e| OracleError::Transport(e.to_string()))?;
        let value: Value = response
            .body_mut()
            .read_json()
            .map_err(|e| OracleError::NonConforming(format!("invalid JSON: {e}")))?;
        parse_response(&value, schema)
    }
}
