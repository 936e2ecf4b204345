use std::io::Cursor;
use std::time::{Duration, Instant};

use base64::Engine;
use image::RgbImage;
use serde_json::{json, Value};

use super::render::render_axes;
use super::wire::{constraint_json_schema, parse_payload, triplet_json_schema, ConstraintResponse, TripletResponse};
use super::{AdapterError, AdapterResponse, ConstraintRequest, FixtureStore, TripletRequest, VlmAdapter};
use crate::geometry::AlignmentConstraint;

pub const ENV_ENDPOINT: &str = "TASC_VLM_ENDPOINT";
pub const ENV_API_KEY: &str = "TASC_VLM_API_KEY";
pub const ENV_MODEL: &str = "TASC_VLM_MODEL";

const TRIPLET_PROMPT: &str = "You see a tabletop scene. Identify only the objects that take part in a \
functional interaction, and list each interaction as a triplet (a, verb, b) meaning object a acts on \
object b. Reply with JSON matching the schema.";

const CONSTRAINT_PROMPT: &str = "Two images show a held object and a target object, each with its box \
axes drawn from the center: X red, Y green, Z blue, viewed from above. Say which axes of the held object \
must be aligned (sign 1) or anti-aligned (sign -1) with which axes of the target for the interaction to \
succeed. Give one to three constraints, or none if orientation does not matter. Reply with JSON matching \
the schema.";

#[derive(Debug, Clone, PartialEq)]
pub struct LiveConfig {
    /// Base URL; `/chat/completions` is appended.
    pub endpoint: String,
    pub api_key: Option<String>,
    pub model: String,
    pub timeout: Duration,
    /// Extra attempts after a schema violation.
    pub retries: u32,
}

impl LiveConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self { endpoint: endpoint.into(), api_key: None, model: model.into(), timeout: Duration::from_secs(30), retries: 2 }
    }

    pub fn from_env() -> Result<Self, AdapterError> {
        let endpoint = std::env::var(ENV_ENDPOINT).map_err(|_| AdapterError::Config(format!("{ENV_ENDPOINT} is not set")))?;
        let model = std::env::var(ENV_MODEL).map_err(|_| AdapterError::Config(format!("{ENV_MODEL} is not set")))?;
        Ok(Self { api_key: std::env::var(ENV_API_KEY).ok(), ..Self::new(endpoint, model) })
    }
}

/// OpenAI-compatible chat-completions client with schema-constrained replies.
pub struct LiveVlm {
    config: LiveConfig,
    client: reqwest::blocking::Client,
    recorder: Option<FixtureStore>,
}

fn png_data_url(img: &RgbImage) -> Result<String, AdapterError> {
    let mut bytes = Vec::new();
    img.write_to(&mut Cursor::new(&mut bytes), image::ImageFormat::Png)
        .map_err(|e| AdapterError::Config(format!("png encoding: {e}")))?;
    Ok(format!("data:image/png;base64,{}", base64::engine::general_purpose::STANDARD.encode(bytes)))
}

impl LiveVlm {
    pub fn new(config: LiveConfig) -> Result<Self, AdapterError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| AdapterError::Http(e.to_string()))?;
        Ok(Self { config, client, recorder: None })
    }

    /// Writes every accepted transcript into `store` for later fixture replay.
    pub fn recording_to(mut self, store: FixtureStore) -> Self {
        self.recorder = Some(store);
        self
    }

    fn post(&self, messages: &[Value], schema_name: &str, schema: &Value) -> Result<String, AdapterError> {
        let body = json!({
            "model": self.config.model,
            "temperature": 0,
            "messages": messages,
            "response_format": {
                "type": "json_schema",
                "json_schema": {"name": schema_name, "strict": true, "schema": schema}
            }
        });
        let url = format!("{}/chat/completions", self.config.endpoint.trim_end_matches('/'));
        let mut req = self.client.post(url).json(&body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| AdapterError::Http(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| AdapterError::Http(e.to_string()))?;
        if !status.is_success() {
            return Err(AdapterError::Http(format!("status {status}: {text}")));
        }
        let v: Value = serde_json::from_str(&text).map_err(|e| AdapterError::Http(format!("bad response body: {e}")))?;
        v["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_owned)
            .ok_or_else(|| AdapterError::Http("response has no message content".into()))
    }

    /// Sends the prompt, retrying with the violation appended until `accept` passes.
    fn query<T>(
        &self,
        prompt: &str,
        images: &[&RgbImage],
        schema_name: &str,
        schema: &Value,
        hash: String,
        accept: impl Fn(&str) -> Result<T, String>,
    ) -> Result<AdapterResponse<T>, AdapterError> {
        let mut content = vec![json!({"type": "text", "text": prompt})];
        for img in images {
            content.push(json!({"type": "image_url", "image_url": {"url": png_data_url(img)?}}));
        }
        let mut messages = vec![json!({"role": "user", "content": content})];
        let start = Instant::now();
        let mut transcript = String::new();
        for attempt in 0..=self.config.retries {
            let reply = self.post(&messages, schema_name, schema)?;
            transcript.push_str(&reply);
            transcript.push('\n');
            match accept(&reply) {
                Ok(payload) => {
                    if let Some(store) = &self.recorder {
                        store.record_transcript(&hash, &reply)?;
                    }
                    return Ok(AdapterResponse {
                        payload,
                        provenance: format!("{}#{}", self.config.endpoint, self.config.model),
                        request_hash: hash,
                        latency_ms: start.elapsed().as_secs_f64() * 1e3,
                        transcript,
                    });
                }
                Err(violation) => {
                    log::warn!("attempt {attempt}: schema violation: {violation}");
                    if attempt == self.config.retries {
                        return Err(AdapterError::Schema { message: violation, transcript });
                    }
                    messages.push(json!({"role": "assistant", "content": reply}));
                    messages.push(json!({
                        "role": "user",
                        "content": format!("That reply violated the schema: {violation}. Reply again with valid JSON only.")
                    }));
                }
            }
        }
        unreachable!("loop returns on the last attempt")
    }
}

impl VlmAdapter for LiveVlm {
    fn extract_triplets(&self, request: &TripletRequest) -> Result<AdapterResponse<TripletResponse>, AdapterError> {
        let images: Vec<&RgbImage> = request.image.iter().collect();
        self.query(TRIPLET_PROMPT, &images, "triplets", &triplet_json_schema(), request.hash(), |text| {
            let r: TripletResponse = parse_payload(text)?;
            r.validate()?;
            Ok(r)
        })
    }

    fn extract_constraints(
        &self,
        request: &ConstraintRequest<'_>,
    ) -> Result<AdapterResponse<Vec<AlignmentConstraint>>, AdapterError> {
        let held = render_axes(request.grasped);
        let target = render_axes(request.target);
        let prompt = format!(
            "{CONSTRAINT_PROMPT}\nHeld object: {}. Target object: {}.",
            request.grasped.name, request.target.name
        );
        self.query(&prompt, &[&held, &target], "constraints", &constraint_json_schema(), request.hash(), |text| {
            let r: ConstraintResponse = parse_payload(text)?;
            r.validate()?;
            Ok(r.constraints)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::{Arc, Mutex};

    /// Minimal HTTP server answering each request with the next scripted content.
    fn serve(replies: Vec<String>) -> (String, Arc<Mutex<Vec<Value>>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let seen = Arc::new(Mutex::new(Vec::new()));
        let log = seen.clone();
        std::thread::spawn(move || {
            for reply in replies {
                let (mut stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut body = vec![0; len];
                reader.read_exact(&mut body).unwrap();
                log.lock().unwrap().push(serde_json::from_slice(&body).unwrap());
                let payload = json!({"choices": [{"message": {"role": "assistant", "content": reply}}]}).to_string();
                write!(
                    stream,
                    "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{}",
                    payload.len(),
                    payload
                )
                .unwrap();
            }
        });
        (format!("http://{addr}/v1"), seen)
    }

    #[test]
    fn retries_after_schema_violation() {
        let (url, seen) = serve(vec![
            r#"{"objects":["a"]}"#.into(),
            r#"{"objects":["a","b"],"triplets":[{"a":"a","verb":"on","b":"b"}]}"#.into(),
        ]);
        let vlm = LiveVlm::new(LiveConfig::new(url, "test-model")).unwrap();
        let r = vlm.extract_triplets(&TripletRequest::new("x")).unwrap();
        assert_eq!(r.payload.triplets.len(), 1);
        let seen = seen.lock().unwrap();
        assert_eq!(seen.len(), 2);
        assert_eq!(seen[0]["model"], "test-model");
        assert_eq!(seen[0]["response_format"]["type"], "json_schema");
        let follow_up = seen[1]["messages"].as_array().unwrap();
        assert_eq!(follow_up.len(), 3);
        assert!(follow_up[2]["content"].as_str().unwrap().contains("violated the schema"));
    }

    #[test]
    fn gives_up_after_retry_budget() {
        let bad = r#"{"constraints":[{"axis_a":"W","axis_b":"X","sign":1}]}"#.to_string();
        let (url, seen) = serve(vec![bad.clone(), bad.clone(), bad]);
        let vlm = LiveVlm::new(LiveConfig::new(url, "m")).unwrap();
        let cloud: Vec<_> = (0..8)
            .map(|i| crate::geometry::Vector3::new((i & 1) as f64, ((i >> 1) & 1) as f64 * 0.5, ((i >> 2) & 1) as f64 * 0.2))
            .collect();
        let node = crate::graph::ObjectNode::new(
            crate::graph::NodeId(0),
            crate::graph::GroundedObject::new("box", crate::geometry::Vector3::new(0.5, 0.25, 0.1), cloud),
        )
        .unwrap();
        let err = vlm.extract_constraints(&ConstraintRequest { grasped: &node, target: &node }).unwrap_err();
        match err {
            AdapterError::Schema { transcript, .. } => assert_eq!(transcript.lines().count(), 3),
            e => panic!("{e}"),
        }
        let seen = seen.lock().unwrap();
        // Two images travel with the prompt.
        assert_eq!(seen[0]["messages"][0]["content"].as_array().unwrap().len(), 3);
    }
}
