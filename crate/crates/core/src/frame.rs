//! The wire unit: one timestamped sample on one channel from one device.
//!
//! A frame travels as a single line of compact JSON terminated by `\n`:
//!
//! ```text
//! {"v":1,"device":"carrier-01","ch":"pressure_raw","ts":1700000000123,"val":12600,"seq":42}
//! ```
//!
//! The encoder always emits the keys in that order with no whitespace. The
//! decoder accepts any key order and whitespace and ignores unknown keys.

use std::fmt::Write as _;

use serde_json::{Map, Value};

use crate::channel::Channel;

pub const PROTOCOL_VERSION: u32 = 1;
pub const MAX_DEVICE_ID_CHARS: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct SensorFrame {
    pub protocol_version: u32,
    pub device_id: String,
    pub channel: Channel,
    pub timestamp_ms: i64,
    pub value: f64,
    pub seq: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FrameError {
    #[error("malformed line: {0}")]
    MalformedLine(String),
    #[error("unsupported protocol version {0}")]
    UnsupportedVersion(i64),
    #[error("unknown channel `{0}`")]
    UnknownChannel(String),
    #[error("{field} out of range: {detail}")]
    RangeViolation { field: &'static str, detail: String },
    #[error("refusing to encode invalid frame: {0}")]
    InvalidFrame(Box<FrameError>),
}

impl FrameError {
    fn range(field: &'static str, detail: impl Into<String>) -> Self {
        FrameError::RangeViolation { field, detail: detail.into() }
    }
}

impl SensorFrame {
    pub fn new(device_id: impl Into<String>, channel: Channel, timestamp_ms: i64, value: f64) -> Self {
        SensorFrame {
            protocol_version: PROTOCOL_VERSION,
            device_id: device_id.into(),
            channel,
            timestamp_ms,
            value,
            seq: None,
        }
    }

    pub fn with_seq(mut self, seq: u64) -> Self {
        self.seq = Some(seq);
        self
    }

    pub fn validate(&self) -> Result<(), FrameError> {
        if self.protocol_version != PROTOCOL_VERSION {
            return Err(FrameError::UnsupportedVersion(i64::from(self.protocol_version)));
        }
        if self.device_id.is_empty() {
            return Err(FrameError::range("device", "empty device id"));
        }
        let chars = self.device_id.chars().count();
        if chars > MAX_DEVICE_ID_CHARS {
            return Err(FrameError::range("device", format!("{chars} chars exceeds {MAX_DEVICE_ID_CHARS}")));
        }
        if self.timestamp_ms < 0 {
            return Err(FrameError::range("ts", format!("negative timestamp {}", self.timestamp_ms)));
        }
        if !self.value.is_finite() {
            return Err(FrameError::range("val", "value is not finite"));
        }
        if !self.channel.accepts(self.value) {
            return Err(FrameError::range("val", format!("{} outside {} range", self.value, self.channel)));
        }
        Ok(())
    }
}

/// Encode a frame as one wire line, including the trailing newline.
pub fn encode_frame(frame: &SensorFrame) -> Result<String, FrameError> {
    frame.validate().map_err(|e| FrameError::InvalidFrame(Box::new(e)))?;
    let mut line = String::with_capacity(96);
    line.push_str("{\"v\":1,\"device\":");
    // serde_json's string escaping never fails for a &str
    line.push_str(&serde_json::to_string(&frame.device_id).expect("string escape"));
    let _ = write!(line, ",\"ch\":\"{}\",\"ts\":{},\"val\":", frame.channel.as_str(), frame.timestamp_ms);
    write_number(&mut line, frame.value);
    if let Some(seq) = frame.seq {
        let _ = write!(line, ",\"seq\":{seq}");
    }
    line.push_str("}\n");
    Ok(line)
}

/// Integral values print without a fractional part; everything else uses the
/// shortest decimal that parses back to the same bits.
fn write_number(out: &mut String, v: f64) {
    if v == 0.0 && v.is_sign_negative() {
        out.push_str("-0.0");
    } else if v.fract() == 0.0 && v.abs() < 1e15 {
        let _ = write!(out, "{}", v as i64);
    } else {
        let _ = write!(out, "{v}");
    }
}

/// Decode one wire line. A trailing `\n` or `\r\n` is tolerated.
pub fn decode_frame(line: &[u8]) -> Result<SensorFrame, FrameError> {
    let obj = parse_object(line)?;
    decode_object(&obj)
}

pub(crate) fn parse_object(line: &[u8]) -> Result<Map<String, Value>, FrameError> {
    let text = std::str::from_utf8(line).map_err(|_| FrameError::MalformedLine("not UTF-8".into()))?;
    let text = text.trim_end_matches(['\n', '\r']);
    match serde_json::from_str::<Value>(text) {
        Ok(Value::Object(obj)) => Ok(obj),
        Ok(_) => Err(FrameError::MalformedLine("not a JSON object".into())),
        Err(e) => Err(FrameError::MalformedLine(e.to_string())),
    }
}

pub(crate) fn decode_object(obj: &Map<String, Value>) -> Result<SensorFrame, FrameError> {
    let version = match obj.get("v") {
        Some(v) => v
            .as_i64()
            .ok_or_else(|| FrameError::MalformedLine("`v` is not an integer".into()))?,
        None => return Err(FrameError::MalformedLine("missing `v`".into())),
    };
    if version != i64::from(PROTOCOL_VERSION) {
        return Err(FrameError::UnsupportedVersion(version));
    }

    let channel_name = required(obj, "ch")?
        .as_str()
        .ok_or_else(|| FrameError::MalformedLine("`ch` is not a string".into()))?;
    let channel: Channel = channel_name
        .parse()
        .map_err(|_| FrameError::UnknownChannel(channel_name.to_string()))?;

    let device_id = required(obj, "device")?
        .as_str()
        .ok_or_else(|| FrameError::MalformedLine("`device` is not a string".into()))?
        .to_string();

    let ts = required(obj, "ts")?;
    let timestamp_ms = match ts.as_i64() {
        Some(t) => t,
        None if ts.is_u64() => return Err(FrameError::range("ts", "timestamp exceeds i64")),
        None => return Err(FrameError::MalformedLine("`ts` is not an integer".into())),
    };

    let value = required(obj, "val")?
        .as_f64()
        .ok_or_else(|| FrameError::MalformedLine("`val` is not a number".into()))?;

    let seq = match obj.get("seq") {
        None | Some(Value::Null) => None,
        Some(s) => match s.as_u64() {
            Some(s) => Some(s),
            None if s.is_i64() => return Err(FrameError::range("seq", "negative sequence number")),
            None => return Err(FrameError::MalformedLine("`seq` is not an unsigned integer".into())),
        },
    };

    let frame = SensorFrame { protocol_version: PROTOCOL_VERSION, device_id, channel, timestamp_ms, value, seq };
    frame.validate()?;
    Ok(frame)
}

fn required<'a>(obj: &'a Map<String, Value>, key: &str) -> Result<&'a Value, FrameError> {
    obj.get(key)
        .ok_or_else(|| FrameError::MalformedLine(format!("missing `{key}`")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const EXAMPLE: &str =
        "{\"v\":1,\"device\":\"carrier-01\",\"ch\":\"pressure_raw\",\"ts\":1700000000123,\"val\":12600,\"seq\":42}\n";

    fn example() -> SensorFrame {
        SensorFrame::new("carrier-01", Channel::PressureRaw, 1_700_000_000_123, 12600.0).with_seq(42)
    }

    #[test]
    fn encodes_reference_line() {
        assert_eq!(encode_frame(&example()).unwrap(), EXAMPLE);
    }

    #[test]
    fn decodes_reference_line() {
        assert_eq!(decode_frame(EXAMPLE.as_bytes()).unwrap(), example());
    }

    #[test]
    fn decode_accepts_reordered_keys_whitespace_and_extras() {
        let line = br#"{ "val" : 12600.0, "ts":1700000000123, "extra": [1,2], "ch":"pressure_raw", "seq":42, "device":"carrier-01", "v":1 }"#;
        assert_eq!(decode_frame(line).unwrap(), example());
    }

    #[test]
    fn encode_rejects_out_of_range_audio() {
        let f = SensorFrame::new("d", Channel::AudioRms, 0, 1.5);
        assert!(matches!(encode_frame(&f), Err(FrameError::InvalidFrame(_))));
    }

    #[test]
    fn encode_rejects_bad_version() {
        let mut f = example();
        f.protocol_version = 2;
        assert!(matches!(encode_frame(&f), Err(FrameError::InvalidFrame(_))));
    }

    #[test]
    fn typed_decode_errors() {
        type Check = fn(&FrameError) -> bool;
        let cases: &[(&str, Check)] = &[
            (r#"{"v":2,"device":"d","ch":"audio_rms","ts":0,"val":0.1}"#, |e| matches!(e, FrameError::UnsupportedVersion(2))),
            (r#"{"v":1,"device":"carrier-01","ch":"pulse","ts":0,"val":1}"#, |e| matches!(e, FrameError::UnknownChannel(c) if c == "pulse")),
            (r#"{"v":1,"device":"d","ch":"audio_rms","ts":-1,"val":0.1}"#, |e| matches!(e, FrameError::RangeViolation { field: "ts", .. })),
            (r#"{"v":1,"device":"","ch":"audio_rms","ts":0,"val":0.1}"#, |e| matches!(e, FrameError::RangeViolation { field: "device", .. })),
            (r#"{"v":1,"device":"d","ch":"audio_rms","ts":0,"val":NaN}"#, |e| matches!(e, FrameError::MalformedLine(_))),
            (r#"{"v":1,"device":"d","ch":"audio_rms","ts":0"#, |e| matches!(e, FrameError::MalformedLine(_))),
            (r#"{"v":1,"device":"d","ch":"heart_rate","ts":0,"val":300}"#, |e| matches!(e, FrameError::RangeViolation { field: "val", .. })),
            (r#"{"v":1,"device":"d","ch":"audio_rms","ts":0.5,"val":0.1}"#, |e| matches!(e, FrameError::MalformedLine(_))),
            (r#"[1,2,3]"#, |e| matches!(e, FrameError::MalformedLine(_))),
            (r#"{"v":1,"device":"d","ch":"audio_rms","ts":0,"val":0.1,"seq":-3}"#, |e| matches!(e, FrameError::RangeViolation { field: "seq", .. })),
        ];
        for (line, check) in cases {
            let err = decode_frame(line.as_bytes()).unwrap_err();
            assert!(check(&err), "{line} -> {err:?}");
        }
    }

    #[test]
    fn device_length_limit_counts_chars() {
        let ok = SensorFrame::new("é".repeat(64), Channel::AudioRms, 0, 0.5);
        assert!(encode_frame(&ok).is_ok());
        let too_long = SensorFrame::new("x".repeat(65), Channel::AudioRms, 0, 0.5);
        assert!(encode_frame(&too_long).is_err());
    }

    #[test]
    fn device_with_quotes_and_newline_stays_one_line() {
        let f = SensorFrame::new("a\"b\nc", Channel::AudioRms, 5, 0.25);
        let line = encode_frame(&f).unwrap();
        assert_eq!(line.matches('\n').count(), 1);
        assert_eq!(decode_frame(line.as_bytes()).unwrap(), f);
    }

    #[test]
    fn negative_zero_keeps_its_sign() {
        let f = SensorFrame::new("d", Channel::PressureRaw, 0, -0.0);
        let back = decode_frame(encode_frame(&f).unwrap().as_bytes()).unwrap();
        assert!(back.value.is_sign_negative());
    }

    fn arb_frame() -> impl Strategy<Value = SensorFrame> {
        let channel = prop_oneof![
            Just(Channel::PressureRaw),
            Just(Channel::AudioRms),
            Just(Channel::HeartRate),
            Just(Channel::RespiratoryRate)
        ];
        (channel, "[a-z0-9-]{1,64}", 0i64..=i64::MAX, any::<f64>(), proptest::option::of(any::<u64>()))
            .prop_map(|(channel, device, ts, raw, seq)| {
                let value = if raw.is_finite() && channel == Channel::PressureRaw && raw.abs() < 1e4 {
                    raw.round()
                } else {
                    channel.clamp(raw % 1e7)
                };
                SensorFrame { protocol_version: 1, device_id: device, channel, timestamp_ms: ts, value, seq }
            })
    }

    proptest! {
        #[test]
        fn round_trip_is_field_exact(f in arb_frame()) {
            let line = encode_frame(&f).unwrap();
            prop_assert!(line.ends_with('\n'));
            prop_assert_eq!(line.matches('\n').count(), 1);
            let back = decode_frame(line.as_bytes()).unwrap();
            prop_assert_eq!(back.value.to_bits(), f.value.to_bits());
            prop_assert_eq!(&back, &f);
            prop_assert_eq!(encode_frame(&back).unwrap(), line);
        }
    }
}
