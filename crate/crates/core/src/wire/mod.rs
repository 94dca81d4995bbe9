//! Framing, recipes, value packing and the register model of the RTDE-style link.
//!
//! Every frame is `size: u16 BE ‖ type: u8 ‖ payload`; all multi-byte values
//! are big-endian.

mod frame;
pub mod messages;
mod recipe;
mod registers;

use thiserror::Error;

pub use frame::{decode_frames, encode_frame, Frame, FrameDecoder, PacketType, HEADER_SIZE, MAX_PAYLOAD};
pub use recipe::{
    build_input_recipe, build_output_recipe, input_field_kind, output_field_kind, pack_values,
    unpack_values, Direction, FieldKind, FieldSpec, FieldValue, Recipe, RecipeRegistry,
    MAX_FREQUENCY,
};
pub use registers::{
    Bank, Register, RegisterFile, RegisterSnapshot, RegisterValue, EXTENSION_PARAM_REGISTER,
    EXTENSION_TRIGGER_REGISTER, REGISTER_COUNT,
};

/// Protocol version spoken by this implementation.
pub const PROTOCOL_VERSION: u16 = 2;

/// Default port of the data-exchange link.
pub const DEFAULT_RTDE_PORT: u16 = 30004;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WireError {
    #[error("payload too large: {0} bytes")]
    PayloadTooLarge(usize),
    #[error("unknown packet type 0x{0:02x}")]
    UnknownPacketType(u8),
    #[error("declared frame size {0} is smaller than the header")]
    BadFrameSize(usize),
    #[error("unknown field: {0}")]
    UnknownField(String),
    #[error("duplicate field: {0}")]
    DuplicateField(String),
    #[error("empty recipe")]
    EmptyRecipe,
    #[error("frequency {0} Hz out of range [1, 500]")]
    FrequencyOutOfRange(f64),
    #[error("expected {expected} values, got {got}")]
    ArityMismatch { expected: usize, got: usize },
    #[error("field {field}: expected {expected}, got {got}")]
    KindMismatch {
        field: String,
        expected: FieldKind,
        got: FieldKind,
    },
    #[error("short buffer: need {expected} bytes, got {got}")]
    ShortBuffer { expected: usize, got: usize },
    #[error("recipe id mismatch: expected {expected}, got {got}")]
    RecipeMismatch { expected: u8, got: u8 },
    #[error("register index out of range: {0}")]
    RegisterOutOfRange(usize),
    #[error("value type does not match register bank {0}")]
    RegisterType(Bank),
    #[error("malformed message: {0}")]
    Malformed(String),
}
