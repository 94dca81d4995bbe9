use super::WireError;

/// Size of the frame header: big-endian u16 total size followed by the type code.
pub const HEADER_SIZE: usize = 3;

/// Largest payload that still fits the u16 size field.
pub const MAX_PAYLOAD: usize = u16::MAX as usize - HEADER_SIZE;

/// Packet type tags of the RTDE-style link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum PacketType {
    ProtocolVersion = 0x56,
    SetupOutputs = 0x4F,
    SetupInputs = 0x49,
    Start = 0x53,
    Pause = 0x50,
    DataPackage = 0x55,
    /// Control-script upload from the exclusive control connection.
    ControlScript = 0x58,
}

impl PacketType {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Result<Self, WireError> {
        Ok(match code {
            0x56 => PacketType::ProtocolVersion,
            0x4F => PacketType::SetupOutputs,
            0x49 => PacketType::SetupInputs,
            0x53 => PacketType::Start,
            0x50 => PacketType::Pause,
            0x55 => PacketType::DataPackage,
            0x58 => PacketType::ControlScript,
            other => return Err(WireError::UnknownPacketType(other)),
        })
    }
}

/// A decoded frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub kind: PacketType,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(kind: PacketType, payload: impl Into<Vec<u8>>) -> Self {
        Frame {
            kind,
            payload: payload.into(),
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>, WireError> {
        encode_frame(self.kind, &self.payload)
    }
}

/// Frames `payload` as `size(u16 BE) ‖ type ‖ payload`, where size counts the header too.
pub fn encode_frame(kind: PacketType, payload: &[u8]) -> Result<Vec<u8>, WireError> {
    if payload.len() > MAX_PAYLOAD {
        return Err(WireError::PayloadTooLarge(payload.len()));
    }
    let size = (payload.len() + HEADER_SIZE) as u16;
    let mut out = Vec::with_capacity(payload.len() + HEADER_SIZE);
    out.extend_from_slice(&size.to_be_bytes());
    out.push(kind.code());
    out.extend_from_slice(payload);
    Ok(out)
}

/// Greedily extracts every complete frame from `buffer`.
///
/// Returns the frames and the trailing bytes of an incomplete frame, if any.
pub fn decode_frames(buffer: &[u8]) -> Result<(Vec<Frame>, Vec<u8>), WireError> {
    let mut frames = Vec::new();
    let mut rest = buffer;
    while rest.len() >= HEADER_SIZE {
        let size = u16::from_be_bytes([rest[0], rest[1]]) as usize;
        if size < HEADER_SIZE {
            return Err(WireError::BadFrameSize(size));
        }
        let kind = PacketType::from_code(rest[2])?;
        if rest.len() < size {
            break;
        }
        frames.push(Frame::new(kind, &rest[HEADER_SIZE..size]));
        rest = &rest[size..];
    }
    Ok((frames, rest.to_vec()))
}

/// Incremental decoder for a byte stream.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    pending: Vec<u8>,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Feeds newly received bytes and returns all frames completed by them.
    pub fn push(&mut self, bytes: &[u8]) -> Result<Vec<Frame>, WireError> {
        self.pending.extend_from_slice(bytes);
        let (frames, rest) = decode_frames(&self.pending)?;
        self.pending = rest;
        Ok(frames)
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }
}
