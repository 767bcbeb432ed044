//! JSON bodies of the remote scoring protocol.
//!
//! * `POST /score`: [`ScoreRequest`] -> [`ScoreResponse`] (natural-log probabilities)
//! * `GET /info`: [`InfoResponse`]
//! * `GET /tokenizer`: [`TokenizerPayload`]

use std::collections::BTreeMap;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::tokenizer::TokenId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub prefix: Vec<TokenId>,
    pub candidates: Vec<Vec<TokenId>>,
}

/// JSON has no infinities, so `-inf` travels as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    #[serde(serialize_with = "ser_logprobs", deserialize_with = "de_logprobs")]
    pub logprobs: Vec<f64>,
}

fn ser_logprobs<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
    let opt: Vec<Option<f64>> = v.iter().map(|&x| x.is_finite().then_some(x)).collect();
    opt.serialize(s)
}

fn de_logprobs<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
    let opt: Vec<Option<f64>> = Vec::deserialize(d)?;
    Ok(opt.into_iter().map(|x| x.unwrap_or(f64::NEG_INFINITY)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfoResponse {
    pub vocab_size: usize,
    pub context_limit: usize,
    pub model_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bos_token_id: Option<TokenId>,
}

/// Vocab as in `vocab.json`; merges either as the raw `merges.txt` text or as
/// a list of lines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizerPayload {
    pub vocab: BTreeMap<String, TokenId>,
    pub merges: Merges,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Merges {
    Lines(Vec<String>),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub error: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn negative_infinity_round_trips_as_null() {
        let r = ScoreResponse { logprobs: vec![-1.5, f64::NEG_INFINITY] };
        let s = serde_json::to_string(&r).unwrap();
        assert_eq!(s, r#"{"logprobs":[-1.5,null]}"#);
        assert_eq!(serde_json::from_str::<ScoreResponse>(&s).unwrap(), r);
    }

    #[test]
    fn info_without_bos() {
        let i: InfoResponse =
            serde_json::from_str(r#"{"vocab_size": 50257, "context_limit": 1024, "model_name": "gpt2"}"#).unwrap();
        assert_eq!(i.bos_token_id, None);
        assert_eq!(i.vocab_size, 50257);
    }

    #[test]
    fn merges_accept_text_or_lines() {
        let a: TokenizerPayload = serde_json::from_str(r#"{"vocab": {"a": 0}, "merges": "a b\n"}"#).unwrap();
        assert_eq!(a.merges, Merges::Text("a b\n".into()));
        let b: TokenizerPayload = serde_json::from_str(r#"{"vocab": {"a": 0}, "merges": ["a b"]}"#).unwrap();
        assert_eq!(b.merges, Merges::Lines(vec!["a b".into()]));
    }
}
