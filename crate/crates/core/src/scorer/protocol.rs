//! Wire format of the scorer bridge: one JSON object per line, strictly
//! request/response in order, one request in flight per connection.
//!
//! ```text
//! -> {"id":1,"op":"score","ctx":[1,2],"cont":[3]}
//! <- {"id":1,"logprobs":[-0.105]}
//! -> {"id":2,"op":"generate","ctx":[1,2],"max_len":8}
//! <- {"id":2,"tokens":[7,9],"logprobs":[-0.2,-0.5]}
//! <- {"id":3,"error":"unknown op"}
//! ```
//!
//! Floats use shortest round-trip formatting.

use serde::{Deserialize, Serialize};

use crate::stream_model::TokenId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum RequestBody {
    Score {
        ctx: Vec<TokenId>,
        cont: Vec<TokenId>,
    },
    Generate {
        ctx: Vec<TokenId>,
        max_len: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: i64,
    #[serde(flatten)]
    pub body: RequestBody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub id: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<Vec<TokenId>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logprobs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Response {
    pub fn scored(id: i64, logprobs: Vec<f64>) -> Self {
        Self {
            id,
            tokens: None,
            logprobs: Some(logprobs),
            error: None,
        }
    }

    pub fn generated(id: i64, tokens: Vec<TokenId>, logprobs: Vec<f64>) -> Self {
        Self {
            id,
            tokens: Some(tokens),
            logprobs: Some(logprobs),
            error: None,
        }
    }

    pub fn failed(id: i64, message: impl Into<String>) -> Self {
        Self {
            id,
            tokens: None,
            logprobs: None,
            error: Some(message.into()),
        }
    }
}

pub fn encode_request(req: &Request) -> String {
    serde_json::to_string(req).expect("requests always serialize")
}

pub fn encode_response(resp: &Response) -> String {
    serde_json::to_string(resp).expect("responses always serialize")
}
