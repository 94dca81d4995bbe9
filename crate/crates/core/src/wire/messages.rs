//! Payload layouts of the setup and control messages.
//!
//! | message            | request payload                         | reply payload                          |
//! |--------------------|-----------------------------------------|----------------------------------------|
//! | `PROTOCOL_VERSION` | `u16` version                           | `u8` accept                            |
//! | `SETUP_OUTPUTS`    | `f64` frequency ‖ comma-separated names | recipe id ‖ comma-separated kinds      |
//! | `SETUP_INPUTS`     | comma-separated names                   | recipe id ‖ comma-separated kinds      |
//! | `START` / `PAUSE`  | empty                                   | `u8` accept (START: ‖ `f64` tick rate) |
//! | `CONTROL_SCRIPT`   | UTF-8 script text                       | `u8` accept ‖ UTF-8 text               |
//!
//! A setup reply with recipe id 0 is a rejection; its text is the reason.

use super::{FieldKind, WireError};

fn utf8(bytes: &[u8]) -> Result<&str, WireError> {
    std::str::from_utf8(bytes).map_err(|e| WireError::Malformed(e.to_string()))
}

fn split_names(s: &str) -> Vec<String> {
    if s.is_empty() {
        Vec::new()
    } else {
        s.split(',').map(|n| n.trim().to_string()).collect()
    }
}

pub fn version_request(version: u16) -> Vec<u8> {
    version.to_be_bytes().to_vec()
}

pub fn parse_version_request(payload: &[u8]) -> Result<u16, WireError> {
    match payload {
        [a, b] => Ok(u16::from_be_bytes([*a, *b])),
        _ => Err(WireError::Malformed("version request must be 2 bytes".into())),
    }
}

pub fn accept_reply(accepted: bool) -> Vec<u8> {
    vec![accepted as u8]
}

pub fn parse_accept(payload: &[u8]) -> Result<bool, WireError> {
    match payload.first() {
        Some(0) => Ok(false),
        Some(1) => Ok(true),
        _ => Err(WireError::Malformed("missing accept flag".into())),
    }
}

pub fn start_reply(accepted: bool, tick_rate: f64) -> Vec<u8> {
    let mut out = accept_reply(accepted);
    out.extend_from_slice(&tick_rate.to_be_bytes());
    out
}

/// Accept flag and, when present, the controller tick rate.
pub fn parse_start_reply(payload: &[u8]) -> Result<(bool, Option<f64>), WireError> {
    let accepted = parse_accept(payload)?;
    let rate = payload
        .get(1..9)
        .map(|b| f64::from_be_bytes(b.try_into().unwrap()));
    Ok((accepted, rate))
}

pub fn setup_outputs_request<S: AsRef<str>>(frequency: f64, names: &[S]) -> Vec<u8> {
    let mut out = frequency.to_be_bytes().to_vec();
    out.extend_from_slice(join(names).as_bytes());
    out
}

pub fn parse_setup_outputs_request(payload: &[u8]) -> Result<(f64, Vec<String>), WireError> {
    if payload.len() < 8 {
        return Err(WireError::ShortBuffer {
            expected: 8,
            got: payload.len(),
        });
    }
    let freq = f64::from_be_bytes(payload[..8].try_into().unwrap());
    Ok((freq, split_names(utf8(&payload[8..])?)))
}

pub fn setup_inputs_request<S: AsRef<str>>(names: &[S]) -> Vec<u8> {
    join(names).into_bytes()
}

pub fn parse_setup_inputs_request(payload: &[u8]) -> Result<Vec<String>, WireError> {
    Ok(split_names(utf8(payload)?))
}

fn join<S: AsRef<str>>(names: &[S]) -> String {
    names.iter().map(|s| s.as_ref()).collect::<Vec<_>>().join(",")
}

#[derive(Debug, Clone, PartialEq)]
pub enum SetupReply {
    Accepted { recipe_id: u8, kinds: Vec<FieldKind> },
    Rejected { reason: String },
}

impl SetupReply {
    pub fn encode(&self) -> Vec<u8> {
        match self {
            SetupReply::Accepted { recipe_id, kinds } => {
                let mut out = vec![*recipe_id];
                let names: Vec<&str> = kinds.iter().map(|k| k.name()).collect();
                out.extend_from_slice(names.join(",").as_bytes());
                out
            }
            SetupReply::Rejected { reason } => {
                let mut out = vec![0];
                out.extend_from_slice(reason.as_bytes());
                out
            }
        }
    }

    pub fn decode(payload: &[u8]) -> Result<SetupReply, WireError> {
        let (&id, rest) = payload
            .split_first()
            .ok_or_else(|| WireError::Malformed("empty setup reply".into()))?;
        let text = utf8(rest)?;
        if id == 0 {
            return Ok(SetupReply::Rejected {
                reason: text.to_string(),
            });
        }
        let kinds = split_names(text)
            .iter()
            .map(|k| k.parse())
            .collect::<Result<_, _>>()?;
        Ok(SetupReply::Accepted {
            recipe_id: id,
            kinds,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScriptReply {
    pub accepted: bool,
    /// Installed extension ids (comma-separated) or the rejection reason.
    pub text: String,
}

impl ScriptReply {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = accept_reply(self.accepted);
        out.extend_from_slice(self.text.as_bytes());
        out
    }

    pub fn decode(payload: &[u8]) -> Result<ScriptReply, WireError> {
        Ok(ScriptReply {
            accepted: parse_accept(payload)?,
            text: utf8(&payload[1..])?.to_string(),
        })
    }

    pub fn installed_ids(&self) -> Vec<u32> {
        self.text
            .split(',')
            .filter_map(|s| s.trim().parse().ok())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn setup_outputs_round_trip() {
        let p = setup_outputs_request(125.0, &["timestamp", "actual_q"]);
        let (f, names) = parse_setup_outputs_request(&p).unwrap();
        assert_eq!(f, 125.0);
        assert_eq!(names, vec!["timestamp", "actual_q"]);
    }

    #[test]
    fn setup_reply_round_trip() {
        let r = SetupReply::Accepted {
            recipe_id: 3,
            kinds: vec![FieldKind::Double, FieldKind::Vector6D],
        };
        assert_eq!(r.encode(), b"\x03DOUBLE,VECTOR6D");
        assert_eq!(SetupReply::decode(&r.encode()).unwrap(), r);
        let rej = SetupReply::Rejected {
            reason: "unknown field: bogus".into(),
        };
        assert_eq!(SetupReply::decode(&rej.encode()).unwrap(), rej);
    }

    #[test]
    fn start_reply_carries_rate() {
        assert_eq!(parse_start_reply(&start_reply(true, 500.0)).unwrap(), (true, Some(500.0)));
        assert_eq!(parse_start_reply(&[0]).unwrap(), (false, None));
    }

    #[test]
    fn empty_input_list() {
        assert!(parse_setup_inputs_request(b"").unwrap().is_empty());
    }
}
