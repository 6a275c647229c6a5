//! MessagePack envelopes exchanged over WebSocket binary frames.
//!
//! Requests: `{"kind", "request_id", "payload"}`; a predict payload is
//! `{"image": {view: {"h", "w", "rgb"}}, "lang", "state"?, "seed"?}`.
//! Responses: `{"request_id", "status": "ok"|"error", "body"}`. Keys are
//! written in a fixed order so identical requests encode to identical bytes.

use std::collections::BTreeMap;

use rmpv::Value;
use vlaforge_core::{ActionChunk, ImageBuffer, Observation, UNIFIED_ACTION_DIM};

pub const BAD_REQUEST: &str = "bad_request";
pub const MISSING_IMAGE: &str = "missing_field:image";
pub const BAD_IMAGE: &str = "bad_image";
pub const INFERENCE_ERROR: &str = "inference_error";
pub const OVERLOADED: &str = "overloaded";

/// An error envelope before it is encoded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireError {
    pub code: String,
    pub message: String,
}

impl WireError {
    pub fn new(code: impl Into<String>, message: impl Into<String>) -> Self {
        WireError {
            code: code.into(),
            message: message.into(),
        }
    }

    fn bad(message: impl Into<String>) -> Self {
        Self::new(BAD_REQUEST, message)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RequestKind {
    Predict { obs: Observation, seed: u64 },
    Health,
    Info,
    /// Start of a new episode: drops the connection's cached head state.
    Reset,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Request {
    pub request_id: String,
    pub kind: RequestKind,
}

/// What `info` reports about the hosted policy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServerInfo {
    pub backbone_id: String,
    pub head_id: String,
    pub k: usize,
    pub dims: usize,
    pub params: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Reply {
    Actions { chunk: ActionChunk, server_ms: f64 },
    Info { info: ServerInfo, server_ms: f64 },
    Ack { server_ms: f64 },
    Error(WireError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Response {
    pub request_id: String,
    pub reply: Reply,
}

fn s(v: &str) -> Value {
    Value::from(v)
}

fn map(pairs: Vec<(&str, Value)>) -> Value {
    Value::Map(pairs.into_iter().map(|(k, v)| (s(k), v)).collect())
}

fn to_bytes(v: &Value) -> Vec<u8> {
    let mut out = Vec::new();
    rmpv::encode::write_value(&mut out, v).expect("writing to a Vec cannot fail");
    out
}

fn image_value(img: &ImageBuffer) -> Value {
    map(vec![
        ("h", Value::from(img.height as u64)),
        ("w", Value::from(img.width as u64)),
        ("rgb", Value::Binary(img.pixels.clone())),
    ])
}

fn envelope(kind: &str, request_id: &str, payload: Value) -> Vec<u8> {
    to_bytes(&map(vec![
        ("kind", s(kind)),
        ("request_id", s(request_id)),
        ("payload", payload),
    ]))
}

pub fn encode_predict(request_id: &str, obs: &Observation, seed: u64) -> Vec<u8> {
    let views = obs
        .views
        .iter()
        .map(|(name, img)| (s(name), image_value(img)))
        .collect();
    let mut payload = vec![("image", Value::Map(views)), ("lang", s(&obs.instruction))];
    if let Some(st) = &obs.state {
        payload.push(("state", Value::Array(st.iter().map(|&x| Value::F64(x)).collect())));
    }
    payload.push(("seed", Value::from(seed)));
    envelope("predict", request_id, map(payload))
}

/// Health, info and reset requests carry an empty payload.
pub fn encode_simple(kind: &str, request_id: &str) -> Vec<u8> {
    envelope(kind, request_id, Value::Map(Vec::new()))
}

fn get<'a>(m: &'a [(Value, Value)], key: &str) -> Option<&'a Value> {
    m.iter().find(|(k, _)| k.as_str() == Some(key)).map(|(_, v)| v)
}

fn as_map<'a>(v: &'a Value, what: &str) -> Result<&'a [(Value, Value)], WireError> {
    v.as_map()
        .map(Vec::as_slice)
        .ok_or_else(|| WireError::bad(format!("{what} must be a map")))
}

fn decode_image(name: &str, v: &Value) -> Result<ImageBuffer, WireError> {
    let bad = |m: &str| WireError::new(BAD_IMAGE, format!("view `{name}`: {m}"));
    let m = v.as_map().ok_or_else(|| bad("expected {h, w, rgb}"))?;
    let dim = |key: &str| {
        get(m, key)
            .and_then(Value::as_u64)
            .filter(|&x| x > 0 && x <= 1 << 14)
            .ok_or_else(|| bad(&format!("`{key}` must be a positive integer")))
    };
    let (h, w) = (dim("h")? as usize, dim("w")? as usize);
    let rgb = match get(m, "rgb") {
        Some(Value::Binary(b)) => b.clone(),
        _ => return Err(bad("`rgb` must be binary")),
    };
    ImageBuffer::new(h, w, rgb).map_err(|e| bad(&e.to_string()))
}

fn decode_predict(payload: &Value) -> Result<RequestKind, WireError> {
    let p = as_map(payload, "payload")?;
    let image = get(p, "image").ok_or_else(|| WireError::new(MISSING_IMAGE, "payload has no `image`"))?;
    let views_in = image
        .as_map()
        .ok_or_else(|| WireError::new(BAD_IMAGE, "`image` must map view names to images"))?;
    if views_in.is_empty() {
        return Err(WireError::new(BAD_IMAGE, "`image` has no views"));
    }
    let mut views = BTreeMap::new();
    for (k, v) in views_in {
        let name = k
            .as_str()
            .ok_or_else(|| WireError::new(BAD_IMAGE, "view names must be strings"))?;
        views.insert(name.to_string(), decode_image(name, v)?);
    }
    let lang = get(p, "lang")
        .ok_or_else(|| WireError::new("missing_field:lang", "payload has no `lang`"))?
        .as_str()
        .ok_or_else(|| WireError::bad("`lang` must be a string"))?
        .to_string();
    let state = match get(p, "state") {
        None | Some(Value::Nil) => None,
        Some(Value::Array(xs)) => Some(
            xs.iter()
                .map(|x| x.as_f64().ok_or_else(|| WireError::bad("`state` entries must be numbers")))
                .collect::<Result<Vec<f64>, _>>()?,
        ),
        Some(_) => return Err(WireError::bad("`state` must be an array")),
    };
    let seed = match get(p, "seed") {
        None | Some(Value::Nil) => 0,
        Some(v) => v
            .as_u64()
            .ok_or_else(|| WireError::bad("`seed` must be an unsigned integer"))?,
    };
    let obs = Observation {
        views,
        instruction: lang,
        state,
        time_index: 0,
        episode_meta: None,
    };
    Ok(RequestKind::Predict { obs, seed })
}

/// Decodes a request frame. On failure the request id is returned when
/// it could be read, so the error envelope can still echo it.
pub fn decode_request(bytes: &[u8]) -> Result<Request, (String, WireError)> {
    let v = rmpv::decode::read_value(&mut &bytes[..])
        .map_err(|e| (String::new(), WireError::bad(format!("not MessagePack: {e}"))))?;
    let m = as_map(&v, "request").map_err(|e| (String::new(), e))?;
    let id = get(m, "request_id").and_then(Value::as_str).map(str::to_string);
    let fail = |e: WireError| (id.clone().unwrap_or_default(), e);
    let request_id = id
        .clone()
        .ok_or_else(|| fail(WireError::bad("`request_id` must be a string")))?;
    let kind = get(m, "kind")
        .and_then(Value::as_str)
        .ok_or_else(|| fail(WireError::bad("`kind` must be a string")))?;
    let kind = match kind {
        "predict" => {
            let payload = get(m, "payload").ok_or_else(|| fail(WireError::bad("missing `payload`")))?;
            decode_predict(payload).map_err(fail)?
        }
        "health" => RequestKind::Health,
        "info" => RequestKind::Info,
        "reset" => RequestKind::Reset,
        other => return Err(fail(WireError::bad(format!("unknown kind `{other}`")))),
    };
    Ok(Request { request_id, kind })
}

fn response(request_id: &str, status: &str, body: Value) -> Vec<u8> {
    to_bytes(&map(vec![
        ("request_id", s(request_id)),
        ("status", s(status)),
        ("body", body),
    ]))
}

pub fn encode_reply(request_id: &str, reply: &Reply) -> Vec<u8> {
    match reply {
        Reply::Actions { chunk, server_ms } => {
            let rows = chunk
                .rows()
                .map(|r| Value::Array(r.iter().map(|&x| Value::F64(x)).collect()))
                .collect();
            response(
                request_id,
                "ok",
                map(vec![
                    ("normalized_actions", Value::Array(rows)),
                    ("server_ms", Value::F64(*server_ms)),
                ]),
            )
        }
        Reply::Info { info, server_ms } => response(
            request_id,
            "ok",
            map(vec![
                ("backbone_id", s(&info.backbone_id)),
                ("head_id", s(&info.head_id)),
                ("k", Value::from(info.k as u64)),
                ("dims", Value::from(info.dims as u64)),
                ("params", Value::from(info.params as u64)),
                ("server_ms", Value::F64(*server_ms)),
            ]),
        ),
        Reply::Ack { server_ms } => response(
            request_id,
            "ok",
            map(vec![("status", s("ok")), ("server_ms", Value::F64(*server_ms))]),
        ),
        Reply::Error(e) => response(
            request_id,
            "error",
            map(vec![("code", s(&e.code)), ("message", s(&e.message))]),
        ),
    }
}

fn decode_actions(v: &Value) -> Result<ActionChunk, String> {
    let rows = v.as_array().ok_or("`normalized_actions` must be an array")?;
    let rows: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| {
            r.as_array()
                .ok_or("rows must be arrays")?
                .iter()
                .map(|x| match x {
                    Value::F64(f) => Ok(*f),
                    _ => Err("actions must be float64"),
                })
                .collect::<Result<Vec<f64>, _>>()
        })
        .collect::<Result<_, _>>()?;
    if rows.is_empty() || rows.iter().any(|r| r.len() != UNIFIED_ACTION_DIM) {
        return Err(format!("`normalized_actions` must be k x {UNIFIED_ACTION_DIM}"));
    }
    let mut chunk = ActionChunk::from_rows(&rows).map_err(|e| e.to_string())?;
    chunk.normalized = true;
    Ok(chunk)
}

/// Decodes a response frame; the error string describes a schema breach.
pub fn decode_response(bytes: &[u8]) -> Result<Response, String> {
    let v = rmpv::decode::read_value(&mut &bytes[..]).map_err(|e| format!("not MessagePack: {e}"))?;
    let m = v.as_map().ok_or("response must be a map")?;
    let request_id = get(m, "request_id")
        .and_then(Value::as_str)
        .ok_or("`request_id` must be a string")?
        .to_string();
    let body = get(m, "body").and_then(Value::as_map).ok_or("`body` must be a map")?;
    let text = |k: &str| get(body, k).and_then(Value::as_str).map(str::to_string);
    let num = |k: &str| get(body, k).and_then(Value::as_u64).map(|x| x as usize);
    let server_ms = get(body, "server_ms").and_then(Value::as_f64).unwrap_or(0.0);
    let reply = match get(m, "status").and_then(Value::as_str) {
        Some("error") => Reply::Error(WireError::new(
            text("code").ok_or("error body needs `code`")?,
            text("message").unwrap_or_default(),
        )),
        Some("ok") => {
            if let Some(a) = get(body, "normalized_actions") {
                Reply::Actions {
                    chunk: decode_actions(a)?,
                    server_ms,
                }
            } else if let Some(head_id) = text("head_id") {
                Reply::Info {
                    info: ServerInfo {
                        backbone_id: text("backbone_id").ok_or("info needs `backbone_id`")?,
                        head_id,
                        k: num("k").ok_or("info needs `k`")?,
                        dims: num("dims").ok_or("info needs `dims`")?,
                        params: num("params").unwrap_or(0),
                    },
                    server_ms,
                }
            } else {
                Reply::Ack { server_ms }
            }
        }
        _ => return Err("`status` must be \"ok\" or \"error\"".into()),
    };
    Ok(Response { request_id, reply })
}

#[cfg(test)]
mod tests {
    use super::*;
    use vlaforge_core::eval::canonical_observation;

    fn raw(v: Value) -> Vec<u8> {
        to_bytes(&v)
    }

    #[test]
    fn predict_round_trip_keeps_every_bit() {
        let obs = canonical_observation().with_state(vec![0.1, -2.5e-300, f64::MIN_POSITIVE]);
        let req = decode_request(&encode_predict("r1", &obs, 42)).unwrap();
        assert_eq!(req.request_id, "r1");
        match req.kind {
            RequestKind::Predict { obs: got, seed } => {
                assert_eq!(seed, 42);
                assert_eq!(got.views, obs.views);
                assert_eq!(got.instruction, obs.instruction);
                let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
                assert_eq!(bits(got.state.as_ref().unwrap()), bits(obs.state.as_ref().unwrap()));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn error_codes() {
        let code = |b: &[u8]| decode_request(b).unwrap_err().1.code;
        assert_eq!(code(b"\xc1garbage"), BAD_REQUEST);
        assert_eq!(code(&raw(Value::from(3))), BAD_REQUEST);
        let no_image = raw(map(vec![
            ("kind", s("predict")),
            ("request_id", s("x")),
            ("payload", map(vec![("lang", s("hi"))])),
        ]));
        let (id, e) = decode_request(&no_image).unwrap_err();
        assert_eq!((id.as_str(), e.code.as_str()), ("x", MISSING_IMAGE));
        let short = raw(map(vec![
            ("kind", s("predict")),
            ("request_id", s("y")),
            (
                "payload",
                map(vec![
                    (
                        "image",
                        map(vec![(
                            "cam",
                            map(vec![
                                ("h", Value::from(2)),
                                ("w", Value::from(2)),
                                ("rgb", Value::Binary(vec![0; 5])),
                            ]),
                        )]),
                    ),
                    ("lang", s("hi")),
                ]),
            ),
        ]));
        assert_eq!(code(&short), BAD_IMAGE);
        assert_eq!(code(&encode_simple("dance", "z")), BAD_REQUEST);
    }

    #[test]
    fn unknown_payload_keys_are_ignored_and_seed_defaults_to_zero() {
        let obs = canonical_observation();
        let img = obs.views.values().next().unwrap();
        let frame = raw(map(vec![
            ("kind", s("predict")),
            ("request_id", s("q")),
            (
                "payload",
                map(vec![
                    ("image", map(vec![("main", image_value(img))])),
                    ("lang", s("go")),
                    ("timestamps", Value::Array(vec![Value::from(1)])),
                ]),
            ),
        ]));
        match decode_request(&frame).unwrap().kind {
            RequestKind::Predict { seed, .. } => assert_eq!(seed, 0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn replies_round_trip() {
        let mut chunk = ActionChunk::zeros(2, UNIFIED_ACTION_DIM, true);
        chunk.set(1, 3, -0.123456789);
        let info = ServerInfo {
            backbone_id: "vlm".into(),
            head_id: "pi".into(),
            k: 8,
            dims: 32,
            params: 1234,
        };
        for r in [
            Reply::Actions { chunk, server_ms: 1.5 },
            Reply::Info { info, server_ms: 0.25 },
            Reply::Ack { server_ms: 0.0 },
            Reply::Error(WireError::new(OVERLOADED, "queue full")),
        ] {
            let got = decode_response(&encode_reply("id7", &r)).unwrap();
            assert_eq!(got, Response { request_id: "id7".into(), reply: r });
        }
    }
}
