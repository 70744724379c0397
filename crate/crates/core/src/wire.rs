//! Length-prefixed JSON framing and the request/response codecs.
//!
//! Every message is a 4-byte big-endian payload length followed by that
//! many bytes of UTF-8 JSON. A connection carries exactly one request frame
//! and one response frame.

use std::io::{self, Read, Write};

use serde::ser::{SerializeMap, SerializeSeq};
use serde::{Serialize, Serializer};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::components::{AcquisitionResult, ExperimentRequest, OperationCode, PulseShape};

pub const HEADER_LEN: usize = 4;

/// Keys of the top-level request object, in wire order.
pub const REQUEST_KEYS: [&str; 5] = ["operation_code", "cfg", "sequence", "qubits", "sweepers"];

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("empty frame")]
    Empty,
    #[error("payload of {0} bytes does not fit a 32-bit length")]
    Oversized(usize),
    #[error("truncated frame")]
    Truncated,
    #[error("frame of {length} bytes exceeds the {limit} byte limit")]
    TooLarge { length: u64, limit: u64 },
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

/// Header for a payload of `len` bytes.
pub fn header_for(len: usize) -> Result<[u8; HEADER_LEN], FrameError> {
    if len == 0 {
        return Err(FrameError::Empty);
    }
    let len = u32::try_from(len).map_err(|_| FrameError::Oversized(len))?;
    Ok(len.to_be_bytes())
}

/// Header followed by payload.
pub fn frame_write(payload: &[u8]) -> Result<Vec<u8>, FrameError> {
    let header = header_for(payload.len())?;
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(&header);
    out.extend_from_slice(payload);
    Ok(out)
}

/// Writes one frame to `stream` and flushes it.
pub fn write_frame<W: Write>(stream: &mut W, payload: &[u8]) -> Result<(), FrameError> {
    let header = header_for(payload.len())?;
    stream.write_all(&header)?;
    stream.write_all(payload)?;
    stream.flush()?;
    Ok(())
}

/// Reads one complete frame regardless of how the bytes are chunked.
pub fn frame_read<R: Read>(stream: &mut R) -> Result<Vec<u8>, FrameError> {
    frame_read_limited(stream, u64::from(u32::MAX))
}

/// Like [`frame_read`], rejecting declared lengths above `limit` before
/// reading the payload.
pub fn frame_read_limited<R: Read>(stream: &mut R, limit: u64) -> Result<Vec<u8>, FrameError> {
    let mut header = [0u8; HEADER_LEN];
    stream.read_exact(&mut header).map_err(eof_as_truncated)?;
    let length = u64::from(u32::from_be_bytes(header));
    if length == 0 {
        return Err(FrameError::Empty);
    }
    if length > limit {
        return Err(FrameError::TooLarge { length, limit });
    }
    // Grow with the data actually received rather than trusting the header.
    let mut payload = Vec::with_capacity(length.min(1 << 20) as usize);
    stream.take(length).read_to_end(&mut payload)?;
    if (payload.len() as u64) < length {
        return Err(FrameError::Truncated);
    }
    Ok(payload)
}

fn eof_as_truncated(e: io::Error) -> FrameError {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        FrameError::Truncated
    } else {
        FrameError::Io(e)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum EncodeError {
    #[error("non-finite number in {0}")]
    NonFinite(String),
    #[error("cannot serialize: {0}")]
    Json(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecodeError {
    #[error("payload is not valid UTF-8")]
    NotUtf8,
    #[error("malformed JSON: {0}")]
    Json(String),
    #[error("expected a JSON object at the top level")]
    NotAnObject,
    #[error("missing key \"{0}\"")]
    MissingKey(String),
    #[error("unknown key \"{0}\"")]
    UnknownKey(String),
    #[error("unknown operation_code {0}")]
    UnknownOperation(String),
    #[error("type mismatch in \"{key}\": {message}")]
    TypeMismatch { key: String, message: String },
    #[error("unknown status {0}")]
    UnknownStatus(String),
    #[error("\"i\" and \"q\" are not congruent rectangular arrays")]
    Shape,
}

/// Compact JSON of the request, keys in wire order.
pub fn encode_request(request: &ExperimentRequest) -> Result<Vec<u8>, EncodeError> {
    check_finite(request)?;
    serde_json::to_vec(request).map_err(|e| EncodeError::Json(e.to_string()))
}

fn check_finite(request: &ExperimentRequest) -> Result<(), EncodeError> {
    let bad = |what: String| Err(EncodeError::NonFinite(what));
    if !request.cfg.repetition_duration.is_finite() {
        return bad("cfg.repetition_duration".into());
    }
    for (k, p) in request.sequence.iter().enumerate() {
        let shape_finite = match &p.shape {
            PulseShape::Rectangular => true,
            PulseShape::Gaussian { rel_sigma } => rel_sigma.is_finite(),
            PulseShape::Drag { rel_sigma, beta } => rel_sigma.is_finite() && beta.is_finite(),
            PulseShape::Arbitrary {
                i_samples,
                q_samples,
            } => i_samples.iter().chain(q_samples).all(|v| v.is_finite()),
        };
        let fields = [
            p.frequency,
            p.amplitude,
            p.relative_phase,
            p.start,
            p.duration,
        ];
        if !shape_finite || !fields.iter().all(|v| v.is_finite()) {
            return bad(format!("sequence[{k}]"));
        }
    }
    for (k, q) in request.qubits.iter().enumerate() {
        if q.bias.is_some_and(|b| !b.is_finite()) {
            return bad(format!("qubits[{k}].bias"));
        }
    }
    for (k, s) in request.sweepers.iter().enumerate() {
        if !s.starts.iter().chain(&s.stops).all(|v| v.is_finite()) {
            return bad(format!("sweepers[{k}]"));
        }
    }
    Ok(())
}

fn parse_object(bytes: &[u8]) -> Result<Map<String, Value>, DecodeError> {
    let text = std::str::from_utf8(bytes).map_err(|_| DecodeError::NotUtf8)?;
    match serde_json::from_str::<Value>(text) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(DecodeError::NotAnObject),
        Err(e) => Err(DecodeError::Json(e.to_string())),
    }
}

/// Serde reports nested schema errors as text; split them back into the
/// diagnostic kinds the top level uses.
fn nested_error(key: &str, e: serde_json::Error) -> DecodeError {
    let message = e.to_string();
    let field = |prefix: &str| {
        message
            .strip_prefix(prefix)
            .and_then(|rest| rest.split('`').next())
            .map(|name| format!("{key}.{name}"))
    };
    if let Some(path) = field("missing field `") {
        DecodeError::MissingKey(path)
    } else if let Some(path) = field("unknown field `") {
        DecodeError::UnknownKey(path)
    } else {
        DecodeError::TypeMismatch {
            key: key.to_string(),
            message,
        }
    }
}

pub fn decode_request(bytes: &[u8]) -> Result<ExperimentRequest, DecodeError> {
    let mut map = parse_object(bytes)?;
    if let Some(extra) = map.keys().find(|k| !REQUEST_KEYS.contains(&k.as_str())) {
        return Err(DecodeError::UnknownKey(extra.clone()));
    }
    for key in REQUEST_KEYS {
        if !map.contains_key(key) {
            return Err(DecodeError::MissingKey(key.to_string()));
        }
    }
    let operation_code = match &map["operation_code"] {
        Value::String(s) => OperationCode::from_wire_name(s)
            .ok_or_else(|| DecodeError::UnknownOperation(format!("\"{s}\"")))?,
        other => return Err(DecodeError::UnknownOperation(other.to_string())),
    };
    let mut take = |key: &str| map.remove(key).unwrap_or(Value::Null);
    Ok(ExperimentRequest {
        operation_code,
        cfg: serde_json::from_value(take("cfg")).map_err(|e| nested_error("cfg", e))?,
        sequence: serde_json::from_value(take("sequence"))
            .map_err(|e| nested_error("sequence", e))?,
        qubits: serde_json::from_value(take("qubits")).map_err(|e| nested_error("qubits", e))?,
        sweepers: serde_json::from_value(take("sweepers"))
            .map_err(|e| nested_error("sweepers", e))?,
    })
}

/// What the server sends back.
#[derive(Debug, Clone, PartialEq)]
pub enum ResponseEnvelope {
    Ok(AcquisitionResult),
    Error(String),
}

/// Row-major data written as nested arrays following `shape`.
struct Nested<'a> {
    shape: &'a [usize],
    data: &'a [f64],
}

impl Serialize for Nested<'_> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let Some((&outer, inner)) = self.shape.split_first() else {
            return serializer.serialize_f64(self.data[0]);
        };
        let stride: usize = inner.iter().product();
        let mut seq = serializer.serialize_seq(Some(outer))?;
        for k in 0..outer {
            seq.serialize_element(&Nested {
                shape: inner,
                data: &self.data[k * stride..(k + 1) * stride],
            })?;
        }
        seq.end()
    }
}

impl Serialize for ResponseEnvelope {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(3))?;
        match self {
            ResponseEnvelope::Ok(result) => {
                map.serialize_entry("status", "ok")?;
                map.serialize_entry(
                    "i",
                    &Nested {
                        shape: result.shape(),
                        data: result.i(),
                    },
                )?;
                map.serialize_entry(
                    "q",
                    &Nested {
                        shape: result.shape(),
                        data: result.q(),
                    },
                )?;
            }
            ResponseEnvelope::Error(message) => {
                map.serialize_entry("status", "error")?;
                map.serialize_entry("message", message)?;
            }
        }
        map.end()
    }
}

pub fn encode_results(envelope: &ResponseEnvelope) -> Result<Vec<u8>, EncodeError> {
    if let ResponseEnvelope::Ok(result) = envelope {
        if !result.is_finite() {
            return Err(EncodeError::NonFinite("results".into()));
        }
    }
    serde_json::to_vec(envelope).map_err(|e| EncodeError::Json(e.to_string()))
}

/// Shape of a rectangular nested array and its flattened leaves.
fn flatten(value: &Value) -> Option<(Vec<usize>, Vec<f64>)> {
    match value {
        Value::Number(n) => Some((vec![], vec![n.as_f64()?])),
        Value::Array(items) => {
            let mut shape = None;
            let mut data = Vec::new();
            for item in items {
                let (s, d) = flatten(item)?;
                if shape.get_or_insert_with(|| s.clone()) != &s {
                    return None;
                }
                data.extend(d);
            }
            // an empty array has no inner axes
            let mut full = vec![items.len()];
            full.extend(shape.unwrap_or_default());
            Some((full, data))
        }
        _ => None,
    }
}

pub fn decode_results(bytes: &[u8]) -> Result<ResponseEnvelope, DecodeError> {
    let map = parse_object(bytes)?;
    let status = map
        .get("status")
        .ok_or_else(|| DecodeError::MissingKey("status".into()))?;
    let expected: &[&str] = match status.as_str() {
        Some("ok") => &["status", "i", "q"],
        Some("error") => &["status", "message"],
        _ => return Err(DecodeError::UnknownStatus(status.to_string())),
    };
    if let Some(extra) = map.keys().find(|k| !expected.contains(&k.as_str())) {
        return Err(DecodeError::UnknownKey(extra.clone()));
    }
    for key in expected {
        if !map.contains_key(*key) {
            return Err(DecodeError::MissingKey(key.to_string()));
        }
    }
    if expected.len() == 2 {
        return match &map["message"] {
            Value::String(m) => Ok(ResponseEnvelope::Error(m.clone())),
            other => Err(DecodeError::TypeMismatch {
                key: "message".into(),
                message: format!("expected a string, found {other}"),
            }),
        };
    }
    let (shape, i) = flatten(&map["i"]).ok_or(DecodeError::Shape)?;
    let (q_shape, q) = flatten(&map["q"]).ok_or(DecodeError::Shape)?;
    if shape != q_shape || shape.is_empty() {
        return Err(DecodeError::Shape);
    }
    Ok(ResponseEnvelope::Ok(AcquisitionResult::new(shape, i, q)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::components::{Config, Pulse, PulseKind, Qubit};
    use proptest::prelude::*;

    /// Delivers the wrapped bytes in chunks of at most `chunk`.
    struct Chunked<'a> {
        data: &'a [u8],
        chunk: usize,
    }

    impl Read for Chunked<'_> {
        fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
            let n = self.chunk.min(buf.len()).min(self.data.len());
            buf[..n].copy_from_slice(&self.data[..n]);
            self.data = &self.data[n..];
            Ok(n)
        }
    }

    fn minimal() -> ExperimentRequest {
        ExperimentRequest {
            operation_code: OperationCode::ExecutePulseSequence,
            cfg: Config::default(),
            sequence: vec![Pulse {
                kind: PulseKind::Readout,
                shape: PulseShape::Rectangular,
                frequency: 5.8e9,
                amplitude: 0.1,
                relative_phase: 0.0,
                start: 0.0,
                duration: 1e-6,
                dac: 1,
                adc: Some(0),
                name: "ro".into(),
            }],
            qubits: vec![Qubit::default()],
            sweepers: vec![],
        }
    }

    #[test]
    fn golden_headers() {
        assert_eq!(frame_write(b"{}").unwrap(), [0, 0, 0, 2, 0x7B, 0x7D]);
        assert_eq!(header_for(1000).unwrap(), [0x00, 0x00, 0x03, 0xE8]);
        assert!(matches!(header_for(1 << 32), Err(FrameError::Oversized(_))));
        assert!(matches!(header_for(0), Err(FrameError::Empty)));
    }

    #[test]
    fn byte_at_a_time() {
        let bytes = [0, 0, 0, 2, 0x7B, 0x7D];
        let mut r = Chunked {
            data: &bytes,
            chunk: 1,
        };
        assert_eq!(frame_read(&mut r).unwrap(), b"{}");
    }

    #[test]
    fn truncation_and_empty() {
        let err = frame_read(&mut &[0u8, 0, 0][..]).unwrap_err();
        assert_eq!(err.to_string(), "truncated frame");
        let err = frame_read(&mut &[0u8, 0, 0, 5, 1, 2][..]).unwrap_err();
        assert_eq!(err.to_string(), "truncated frame");
        let err = frame_read(&mut &[0u8, 0, 0, 0][..]).unwrap_err();
        assert_eq!(err.to_string(), "empty frame");
        let err = frame_read_limited(&mut &[0xFFu8, 0xFF, 0xFF, 0xFF][..], 1024).unwrap_err();
        assert!(matches!(err, FrameError::TooLarge { .. }));
    }

    #[test]
    fn minimal_request_json() {
        let bytes = encode_request(&minimal()).unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.starts_with("{\"operation_code\":\"EXECUTE_PULSE_SEQUENCE\",\"cfg\":{"));
        assert!(text.contains("\"adc\":0"));
        assert!(text.contains("\"bias\":null"));
        assert_eq!(decode_request(&bytes).unwrap(), minimal());
    }

    #[test]
    fn decode_diagnostics_are_distinct() {
        let good: Value = serde_json::from_slice(&encode_request(&minimal()).unwrap()).unwrap();
        let variant = |f: &dyn Fn(&mut Map<String, Value>)| {
            let mut v = good.clone();
            f(v.as_object_mut().unwrap());
            decode_request(&serde_json::to_vec(&v).unwrap()).unwrap_err()
        };
        assert_eq!(
            variant(&|m| {
                m.remove("cfg");
            }),
            DecodeError::MissingKey("cfg".into())
        );
        assert_eq!(
            variant(&|m| {
                m.insert("extra".into(), Value::Null);
            }),
            DecodeError::UnknownKey("extra".into())
        );
        assert!(matches!(
            variant(&|m| {
                m.insert("operation_code".into(), "EXECUTE".into());
            }),
            DecodeError::UnknownOperation(_)
        ));
        assert!(matches!(
            variant(&|m| {
                m["cfg"]["reps"] = "many".into();
            }),
            DecodeError::TypeMismatch { .. }
        ));
        assert_eq!(
            variant(&|m| {
                m["sequence"][0].as_object_mut().unwrap().remove("adc");
            }),
            DecodeError::MissingKey("sequence.adc".into())
        );
        assert_eq!(
            variant(&|m| {
                m["qubits"][0]["flux"] = 1.into();
            }),
            DecodeError::UnknownKey("qubits.flux".into())
        );
        assert!(matches!(
            decode_request(b"{\"a\":"),
            Err(DecodeError::Json(_))
        ));
        assert_eq!(decode_request(b"[]"), Err(DecodeError::NotAnObject));
        assert_eq!(decode_request(&[0xFF, 0xFE]), Err(DecodeError::NotUtf8));
    }

    #[test]
    fn non_finite_values_are_not_encoded() {
        let mut r = minimal();
        r.sequence[0].amplitude = f64::NAN;
        assert!(matches!(encode_request(&r), Err(EncodeError::NonFinite(_))));
    }

    #[test]
    fn zero_signal_envelope() {
        let env = ResponseEnvelope::Ok(AcquisitionResult::new(vec![1], vec![0.0], vec![0.0]));
        let bytes = encode_results(&env).unwrap();
        assert_eq!(bytes, br#"{"status":"ok","i":[0.0],"q":[0.0]}"#);
        assert_eq!(decode_results(&bytes).unwrap(), env);

        let err = ResponseEnvelope::Error("unsupported sweeper parameter: Duration".into());
        let bytes = encode_results(&err).unwrap();
        assert_eq!(
            bytes,
            br#"{"status":"error","message":"unsupported sweeper parameter: Duration"}"#
        );
        assert_eq!(decode_results(&bytes).unwrap(), err);
    }

    #[test]
    fn ragged_results_are_rejected() {
        assert_eq!(
            decode_results(br#"{"status":"ok","i":[[1.0],[2.0,3.0]],"q":[[1.0],[2.0,3.0]]}"#),
            Err(DecodeError::Shape)
        );
        assert_eq!(
            decode_results(br#"{"status":"ok","i":[1.0],"q":[1.0,2.0]}"#),
            Err(DecodeError::Shape)
        );
        assert!(matches!(
            decode_results(br#"{"status":"ok","i":[1.0],"q":[1.0],"message":"x"}"#),
            Err(DecodeError::UnknownKey(_))
        ));
    }

    fn shapes() -> impl Strategy<Value = Vec<usize>> {
        prop::collection::vec(1usize..5, 1..4)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn framing_round_trip(payload in prop::collection::vec(any::<u8>(), 1..4096), chunk in 1usize..64) {
            let framed = frame_write(&payload).unwrap();
            let mut r = Chunked { data: &framed, chunk };
            prop_assert_eq!(frame_read(&mut r).unwrap(), payload);
        }

        #[test]
        fn results_round_trip_bit_exact(shape in shapes(), seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n: usize = shape.iter().product();
            let mut draw = || -> Vec<f64> {
                (0..n).map(|_| {
                    let mantissa: f64 = rng.random_range(-1.0..1.0);
                    mantissa * 10f64.powi(rng.random_range(-300..300))
                }).collect()
            };
            let i = draw();
            let q = draw();
            let env = ResponseEnvelope::Ok(AcquisitionResult::new(shape, i, q));
            let back = decode_results(&encode_results(&env).unwrap()).unwrap();
            prop_assert_eq!(back, env);
        }
    }

    #[test]
    fn large_payload_round_trip() {
        let payload: Vec<u8> = (0..(1 << 20)).map(|k| (k % 251) as u8).collect();
        let framed = frame_write(&payload).unwrap();
        let mut r = Chunked {
            data: &framed,
            chunk: 7919,
        };
        assert_eq!(frame_read(&mut r).unwrap(), payload);
    }
}
