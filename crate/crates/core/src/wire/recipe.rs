use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use super::registers::REGISTER_COUNT;
use super::WireError;

/// Fastest output frequency a recipe may request, in Hz.
pub const MAX_FREQUENCY: f64 = 500.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FieldKind {
    Double,
    Int32,
    UInt32,
    UInt64,
    Bool,
    Vector6D,
}

impl FieldKind {
    /// Packed width in bytes.
    pub fn width(self) -> usize {
        match self {
            FieldKind::Double => 8,
            FieldKind::Int32 => 4,
            FieldKind::UInt32 => 4,
            FieldKind::UInt64 => 8,
            FieldKind::Bool => 1,
            FieldKind::Vector6D => 48,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FieldKind::Double => "DOUBLE",
            FieldKind::Int32 => "INT32",
            FieldKind::UInt32 => "UINT32",
            FieldKind::UInt64 => "UINT64",
            FieldKind::Bool => "BOOL",
            FieldKind::Vector6D => "VECTOR6D",
        }
    }
}

impl fmt::Display for FieldKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FieldKind {
    type Err = WireError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "DOUBLE" => FieldKind::Double,
            "INT32" => FieldKind::Int32,
            "UINT32" => FieldKind::UInt32,
            "UINT64" => FieldKind::UInt64,
            "BOOL" => FieldKind::Bool,
            "VECTOR6D" => FieldKind::Vector6D,
            other => return Err(WireError::Malformed(format!("unknown field kind {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldSpec {
    pub name: String,
    pub kind: FieldKind,
}

/// A value carried in a data package.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FieldValue {
    Double(f64),
    Int32(i32),
    UInt32(u32),
    UInt64(u64),
    Bool(bool),
    Vector6D([f64; 6]),
}

impl FieldValue {
    pub fn kind(&self) -> FieldKind {
        match self {
            FieldValue::Double(_) => FieldKind::Double,
            FieldValue::Int32(_) => FieldKind::Int32,
            FieldValue::UInt32(_) => FieldKind::UInt32,
            FieldValue::UInt64(_) => FieldKind::UInt64,
            FieldValue::Bool(_) => FieldKind::Bool,
            FieldValue::Vector6D(_) => FieldKind::Vector6D,
        }
    }

    /// Bitwise equality: doubles compare by bit pattern, so NaN payloads round-trip too.
    pub fn bit_eq(&self, other: &FieldValue) -> bool {
        match (self, other) {
            (FieldValue::Double(a), FieldValue::Double(b)) => a.to_bits() == b.to_bits(),
            (FieldValue::Vector6D(a), FieldValue::Vector6D(b)) => {
                a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            (a, b) => a == b,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            FieldValue::Double(v) => Some(v),
            FieldValue::Int32(v) => Some(v as f64),
            FieldValue::UInt32(v) => Some(v as f64),
            FieldValue::UInt64(v) => Some(v as f64),
            FieldValue::Bool(v) => Some(if v { 1.0 } else { 0.0 }),
            FieldValue::Vector6D(_) => None,
        }
    }

    fn write(&self, out: &mut Vec<u8>) {
        match *self {
            FieldValue::Double(v) => out.extend_from_slice(&v.to_be_bytes()),
            FieldValue::Int32(v) => out.extend_from_slice(&v.to_be_bytes()),
            FieldValue::UInt32(v) => out.extend_from_slice(&v.to_be_bytes()),
            FieldValue::UInt64(v) => out.extend_from_slice(&v.to_be_bytes()),
            FieldValue::Bool(v) => out.push(v as u8),
            FieldValue::Vector6D(v) => {
                for x in v {
                    out.extend_from_slice(&x.to_be_bytes());
                }
            }
        }
    }

    fn read(kind: FieldKind, bytes: &[u8]) -> Result<FieldValue, WireError> {
        let be8 = |b: &[u8]| -> [u8; 8] { b[..8].try_into().unwrap() };
        let be4 = |b: &[u8]| -> [u8; 4] { b[..4].try_into().unwrap() };
        Ok(match kind {
            FieldKind::Double => FieldValue::Double(f64::from_be_bytes(be8(bytes))),
            FieldKind::Int32 => FieldValue::Int32(i32::from_be_bytes(be4(bytes))),
            FieldKind::UInt32 => FieldValue::UInt32(u32::from_be_bytes(be4(bytes))),
            FieldKind::UInt64 => FieldValue::UInt64(u64::from_be_bytes(be8(bytes))),
            FieldKind::Bool => match bytes[0] {
                0 => FieldValue::Bool(false),
                1 => FieldValue::Bool(true),
                b => return Err(WireError::Malformed(format!("invalid bool byte {b}"))),
            },
            FieldKind::Vector6D => {
                let mut v = [0.0; 6];
                for (i, x) in v.iter_mut().enumerate() {
                    *x = f64::from_be_bytes(be8(&bytes[i * 8..]));
                }
                FieldValue::Vector6D(v)
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Output,
    Input,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recipe {
    pub id: u8,
    pub direction: Direction,
    pub fields: Vec<FieldSpec>,
    /// Output recipes only.
    pub frequency: Option<f64>,
}

impl Recipe {
    /// Payload width including the leading recipe id byte.
    pub fn payload_width(&self) -> usize {
        1 + self.fields.iter().map(|f| f.kind.width()).sum::<usize>()
    }

    pub fn field_index(&self, name: &str) -> Option<usize> {
        self.fields.iter().position(|f| f.name == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.fields.iter().map(|f| f.name.as_str())
    }

    /// Comma-separated kind names, as sent in setup replies.
    pub fn kind_list(&self) -> String {
        self.fields
            .iter()
            .map(|f| f.kind.name())
            .collect::<Vec<_>>()
            .join(",")
    }

    /// Number of controller ticks between two data packages of this recipe.
    pub fn decimation(&self, controller_frequency: f64) -> u64 {
        let f = self.frequency.unwrap_or(controller_frequency);
        ((controller_frequency / f).round() as u64).max(1)
    }

    pub fn pack(&self, values: &[FieldValue]) -> Result<Vec<u8>, WireError> {
        pack_values(self, values)
    }

    pub fn unpack(&self, payload: &[u8]) -> Result<Vec<FieldValue>, WireError> {
        unpack_values(self, payload)
    }
}

fn indexed(name: &str, prefix: &str) -> bool {
    name.strip_prefix(prefix)
        .and_then(|k| k.parse::<usize>().ok().filter(|i| i.to_string() == k))
        .is_some_and(|i| i < REGISTER_COUNT)
}

/// Kind of a standard output name, if it is one.
pub fn output_field_kind(name: &str) -> Option<FieldKind> {
    match name {
        "timestamp" => Some(FieldKind::Double),
        "actual_q" | "actual_qd" | "actual_TCP_pose" | "actual_TCP_force" => {
            Some(FieldKind::Vector6D)
        }
        "actual_digital_input_bits" | "actual_digital_output_bits" => Some(FieldKind::UInt64),
        n if indexed(n, "output_int_register_") => Some(FieldKind::Int32),
        n if indexed(n, "output_double_register_") => Some(FieldKind::Double),
        _ => None,
    }
}

/// Kind of a standard input name, if it is one.
pub fn input_field_kind(name: &str) -> Option<FieldKind> {
    match name {
        "standard_digital_output_mask" | "standard_digital_output" => Some(FieldKind::UInt64),
        n if indexed(n, "input_int_register_") => Some(FieldKind::Int32),
        n if indexed(n, "input_double_register_") => Some(FieldKind::Double),
        _ => None,
    }
}

fn build_fields<S: AsRef<str>>(
    names: &[S],
    lookup: fn(&str) -> Option<FieldKind>,
) -> Result<Vec<FieldSpec>, WireError> {
    if names.is_empty() {
        return Err(WireError::EmptyRecipe);
    }
    let mut seen = HashSet::new();
    names
        .iter()
        .map(|n| {
            let n = n.as_ref();
            let kind = lookup(n).ok_or_else(|| WireError::UnknownField(n.to_string()))?;
            if !seen.insert(n) {
                return Err(WireError::DuplicateField(n.to_string()));
            }
            Ok(FieldSpec {
                name: n.to_string(),
                kind,
            })
        })
        .collect()
}

/// Builds an output recipe with an explicit id.
pub fn build_output_recipe<S: AsRef<str>>(
    id: u8,
    names: &[S],
    frequency: f64,
) -> Result<Recipe, WireError> {
    if id == 0 {
        return Err(WireError::Malformed("recipe id 0 is reserved".into()));
    }
    if !(1.0..=MAX_FREQUENCY).contains(&frequency) {
        return Err(WireError::FrequencyOutOfRange(frequency));
    }
    Ok(Recipe {
        id,
        direction: Direction::Output,
        fields: build_fields(names, output_field_kind)?,
        frequency: Some(frequency),
    })
}

/// Builds an input recipe with an explicit id.
pub fn build_input_recipe<S: AsRef<str>>(id: u8, names: &[S]) -> Result<Recipe, WireError> {
    if id == 0 {
        return Err(WireError::Malformed("recipe id 0 is reserved".into()));
    }
    Ok(Recipe {
        id,
        direction: Direction::Input,
        fields: build_fields(names, input_field_kind)?,
        frequency: None,
    })
}

/// Hands out recipe ids sequentially from 1, one allocator per connection.
#[derive(Debug)]
pub struct RecipeRegistry {
    next_id: u8,
}

impl Default for RecipeRegistry {
    fn default() -> Self {
        RecipeRegistry { next_id: 1 }
    }
}

impl RecipeRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    fn take_id(&mut self) -> Result<u8, WireError> {
        if self.next_id == 0 {
            return Err(WireError::Malformed("recipe ids exhausted".into()));
        }
        Ok(self.next_id)
    }

    pub fn output<S: AsRef<str>>(&mut self, names: &[S], frequency: f64) -> Result<Recipe, WireError> {
        let r = build_output_recipe(self.take_id()?, names, frequency)?;
        self.next_id = self.next_id.wrapping_add(1);
        Ok(r)
    }

    pub fn input<S: AsRef<str>>(&mut self, names: &[S]) -> Result<Recipe, WireError> {
        let r = build_input_recipe(self.take_id()?, names)?;
        self.next_id = self.next_id.wrapping_add(1);
        Ok(r)
    }
}

/// Packs `values` as `recipe id ‖ fields`, big-endian.
pub fn pack_values(recipe: &Recipe, values: &[FieldValue]) -> Result<Vec<u8>, WireError> {
    if values.len() != recipe.fields.len() {
        return Err(WireError::ArityMismatch {
            expected: recipe.fields.len(),
            got: values.len(),
        });
    }
    let mut out = Vec::with_capacity(recipe.payload_width());
    out.push(recipe.id);
    for (spec, value) in recipe.fields.iter().zip(values) {
        if value.kind() != spec.kind {
            return Err(WireError::KindMismatch {
                field: spec.name.clone(),
                expected: spec.kind,
                got: value.kind(),
            });
        }
        value.write(&mut out);
    }
    Ok(out)
}

pub fn unpack_values(recipe: &Recipe, payload: &[u8]) -> Result<Vec<FieldValue>, WireError> {
    let want = recipe.payload_width();
    if payload.len() < want {
        return Err(WireError::ShortBuffer {
            expected: want,
            got: payload.len(),
        });
    }
    if payload.len() > want {
        return Err(WireError::Malformed(format!(
            "data package carries {} bytes, recipe {} expects {want}",
            payload.len(),
            recipe.id
        )));
    }
    if payload[0] != recipe.id {
        return Err(WireError::RecipeMismatch {
            expected: recipe.id,
            got: payload[0],
        });
    }
    let mut at = 1;
    recipe
        .fields
        .iter()
        .map(|spec| {
            let v = FieldValue::read(spec.kind, &payload[at..])?;
            at += spec.kind.width();
            Ok(v)
        })
        .collect()
}
