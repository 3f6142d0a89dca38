use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub const TOKENIZER_TAG: &str = "byte-v1";

/// One prompt/response example.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplePair {
    pub id: String,
    pub prompt: String,
    pub response: String,
    /// Response byte positions known to be corrupted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_mask: Option<Vec<usize>>,
}

impl SamplePair {
    pub fn new(id: impl Into<String>, prompt: impl Into<String>, response: impl Into<String>) -> Self {
        SamplePair {
            id: id.into(),
            prompt: prompt.into(),
            response: response.into(),
            noise_mask: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.response.is_empty() {
            return Err(Error::contract(format!("sample {} has an empty response", self.id)));
        }
        if let Some(&bad) = self
            .noise_mask
            .iter()
            .flatten()
            .find(|&&j| j >= self.response.len())
        {
            return Err(Error::contract(format!(
                "sample {}: noise position {bad} beyond response length {}",
                self.id,
                self.response.len()
            )));
        }
        Ok(())
    }
}

/// Ordered, id-unique collection of samples.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus {
    samples: Vec<SamplePair>,
}

impl Corpus {
    pub fn new(samples: Vec<SamplePair>) -> Result<Self> {
        let mut seen = HashSet::new();
        for s in &samples {
            s.validate()?;
            if !seen.insert(s.id.as_str()) {
                return Err(Error::contract(format!("duplicate sample id {}", s.id)));
            }
        }
        Ok(Corpus { samples })
    }

    pub fn samples(&self) -> &[SamplePair] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<SamplePair> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn tokenizer(&self) -> &'static str {
        TOKENIZER_TAG
    }

    pub fn has_noise_masks(&self) -> bool {
        !self.samples.is_empty() && self.samples.iter().all(|s| s.noise_mask.is_some())
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for s in &self.samples {
            out.push_str(&serde_json::to_string(s)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl()?.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

fn field_str(obj: &serde_json::Map<String, Value>, key: &str, line: usize) -> Result<String> {
    match obj.get(key) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(Error::Ingest {
            line,
            msg: format!("\"{key}\" must be a string"),
        }),
        None => Err(Error::Ingest {
            line,
            msg: format!("missing \"{key}\""),
        }),
    }
}

/// Parses newline-delimited JSON records. Blank lines are ignored; a record
/// without an id takes its 1-based line number; exact prompt+response
/// duplicates are dropped, keeping the first.
pub fn parse_jsonl(text: &str) -> Result<Corpus> {
    let mut samples = Vec::new();
    let mut ids = HashSet::new();
    let mut pairs = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(raw).map_err(|e| Error::Ingest {
            line,
            msg: e.to_string(),
        })?;
        let Value::Object(obj) = value else {
            return Err(Error::Ingest {
                line,
                msg: "record is not a JSON object".into(),
            });
        };
        let prompt = field_str(&obj, "prompt", line)?;
        let response = field_str(&obj, "response", line)?;
        let id = match obj.get("id") {
            None | Some(Value::Null) => line.to_string(),
            Some(Value::String(s)) => s.clone(),
            Some(Value::Number(n)) => n.to_string(),
            Some(_) => {
                return Err(Error::Ingest {
                    line,
                    msg: "\"id\" must be a string or number".into(),
                })
            }
        };
        let noise_mask = match obj.get("noise_mask") {
            None | Some(Value::Null) => None,
            Some(v) => Some(serde_json::from_value::<Vec<usize>>(v.clone()).map_err(|e| Error::Ingest {
                line,
                msg: format!("bad noise_mask: {e}"),
            })?),
        };
        if !pairs.insert((prompt.clone(), response.clone())) {
            continue;
        }
        if !ids.insert(id.clone()) {
            return Err(Error::Ingest {
                line,
                msg: format!("duplicate id {id}"),
            });
        }
        let sample = SamplePair {
            id,
            prompt,
            response,
            noise_mask,
        };
        sample.validate().map_err(|e| Error::Ingest {
            line,
            msg: e.to_string(),
        })?;
        samples.push(sample);
    }
    Corpus::new(samples)
}

pub fn ingest_jsonl(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(&text)
}
