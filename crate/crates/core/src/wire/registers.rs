use std::fmt;
use std::sync::atomic::{AtomicI32, AtomicU64, Ordering};

use super::WireError;

/// Registers per bank.
pub const REGISTER_COUNT: usize = 24;

/// Float register used to trigger extension snippets and signal their completion.
pub const EXTENSION_TRIGGER_REGISTER: usize = 18;

/// Register conventionally used for extension parameters and results.
pub const EXTENSION_PARAM_REGISTER: usize = 19;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Bank {
    InputInt,
    InputFloat,
    OutputInt,
    OutputFloat,
}

impl Bank {
    pub fn is_int(self) -> bool {
        matches!(self, Bank::InputInt | Bank::OutputInt)
    }

    pub fn is_input(self) -> bool {
        matches!(self, Bank::InputInt | Bank::InputFloat)
    }

    /// Name of the standard wire field for register `index` of this bank.
    pub fn field_name(self, index: usize) -> String {
        match self {
            Bank::InputInt => format!("input_int_register_{index}"),
            Bank::InputFloat => format!("input_double_register_{index}"),
            Bank::OutputInt => format!("output_int_register_{index}"),
            Bank::OutputFloat => format!("output_double_register_{index}"),
        }
    }

    /// Inverse of [`Bank::field_name`].
    pub fn parse_field(name: &str) -> Option<(Bank, usize)> {
        const PREFIXES: [(&str, Bank); 4] = [
            ("input_int_register_", Bank::InputInt),
            ("input_double_register_", Bank::InputFloat),
            ("output_int_register_", Bank::OutputInt),
            ("output_double_register_", Bank::OutputFloat),
        ];
        PREFIXES.iter().find_map(|(p, bank)| {
            let k: usize = name.strip_prefix(p)?.parse().ok()?;
            (k < REGISTER_COUNT).then_some((*bank, k))
        })
    }
}

impl fmt::Display for Bank {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Bank::InputInt => "input_int",
            Bank::InputFloat => "input_float",
            Bank::OutputInt => "output_int",
            Bank::OutputFloat => "output_float",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RegisterValue {
    Int(i32),
    Float(f64),
}

impl RegisterValue {
    pub fn as_f64(self) -> f64 {
        match self {
            RegisterValue::Int(v) => v as f64,
            RegisterValue::Float(v) => v,
        }
    }
}

/// Address of a single register.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Register {
    pub bank: Bank,
    pub index: usize,
}

impl Register {
    pub fn new(bank: Bank, index: usize) -> Self {
        Register { bank, index }
    }
}

/// Register banks shared between the control loop, snippets and connections.
///
/// Every get/set is atomic on its own; there are no multi-register transactions.
pub struct RegisterFile {
    input_int: [AtomicI32; REGISTER_COUNT],
    input_float: [AtomicU64; REGISTER_COUNT],
    output_int: [AtomicI32; REGISTER_COUNT],
    output_float: [AtomicU64; REGISTER_COUNT],
    digital_out_bits: AtomicU64,
    digital_in_bits: AtomicU64,
}

impl Default for RegisterFile {
    fn default() -> Self {
        RegisterFile {
            input_int: std::array::from_fn(|_| AtomicI32::new(0)),
            input_float: std::array::from_fn(|_| AtomicU64::new(0f64.to_bits())),
            output_int: std::array::from_fn(|_| AtomicI32::new(0)),
            output_float: std::array::from_fn(|_| AtomicU64::new(0f64.to_bits())),
            digital_out_bits: AtomicU64::new(0),
            digital_in_bits: AtomicU64::new(0),
        }
    }
}

fn check(index: usize) -> Result<(), WireError> {
    if index < REGISTER_COUNT {
        Ok(())
    } else {
        Err(WireError::RegisterOutOfRange(index))
    }
}

impl RegisterFile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, bank: Bank, index: usize) -> Result<RegisterValue, WireError> {
        check(index)?;
        Ok(match bank {
            Bank::InputInt => RegisterValue::Int(self.input_int[index].load(Ordering::SeqCst)),
            Bank::OutputInt => RegisterValue::Int(self.output_int[index].load(Ordering::SeqCst)),
            Bank::InputFloat => RegisterValue::Float(f64::from_bits(
                self.input_float[index].load(Ordering::SeqCst),
            )),
            Bank::OutputFloat => RegisterValue::Float(f64::from_bits(
                self.output_float[index].load(Ordering::SeqCst),
            )),
        })
    }

    /// Stores `value`; integer banks only accept integer values and vice versa.
    pub fn set(&self, bank: Bank, index: usize, value: RegisterValue) -> Result<(), WireError> {
        check(index)?;
        match (bank, value) {
            (Bank::InputInt, RegisterValue::Int(v)) => self.input_int[index].store(v, Ordering::SeqCst),
            (Bank::OutputInt, RegisterValue::Int(v)) => {
                self.output_int[index].store(v, Ordering::SeqCst)
            }
            (Bank::InputFloat, RegisterValue::Float(v)) => {
                self.input_float[index].store(v.to_bits(), Ordering::SeqCst)
            }
            (Bank::OutputFloat, RegisterValue::Float(v)) => {
                self.output_float[index].store(v.to_bits(), Ordering::SeqCst)
            }
            (bank, _) => return Err(WireError::RegisterType(bank)),
        }
        Ok(())
    }

    pub fn get_int(&self, bank: Bank, index: usize) -> Result<i32, WireError> {
        match self.get(bank, index)? {
            RegisterValue::Int(v) => Ok(v),
            RegisterValue::Float(_) => Err(WireError::RegisterType(bank)),
        }
    }

    pub fn get_float(&self, bank: Bank, index: usize) -> Result<f64, WireError> {
        match self.get(bank, index)? {
            RegisterValue::Float(v) => Ok(v),
            RegisterValue::Int(_) => Err(WireError::RegisterType(bank)),
        }
    }

    pub fn set_int(&self, bank: Bank, index: usize, v: i32) -> Result<(), WireError> {
        self.set(bank, index, RegisterValue::Int(v))
    }

    pub fn set_float(&self, bank: Bank, index: usize, v: f64) -> Result<(), WireError> {
        self.set(bank, index, RegisterValue::Float(v))
    }

    pub fn digital_out_bits(&self) -> u64 {
        self.digital_out_bits.load(Ordering::SeqCst)
    }

    pub fn digital_in_bits(&self) -> u64 {
        self.digital_in_bits.load(Ordering::SeqCst)
    }

    pub fn set_digital_in_bits(&self, bits: u64) {
        self.digital_in_bits.store(bits, Ordering::SeqCst)
    }

    /// Replaces the bits selected by `mask` with the matching bits of `values`.
    pub fn write_digital_out(&self, mask: u64, values: u64) {
        let _ = self
            .digital_out_bits
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |bits| {
                Some((bits & !mask) | (values & mask))
            });
    }

    /// Plain copy of every bank.
    pub fn snapshot(&self) -> RegisterSnapshot {
        let ints = |bank: &[AtomicI32; REGISTER_COUNT]| {
            std::array::from_fn(|i| bank[i].load(Ordering::SeqCst))
        };
        let floats = |bank: &[AtomicU64; REGISTER_COUNT]| {
            std::array::from_fn(|i| f64::from_bits(bank[i].load(Ordering::SeqCst)))
        };
        RegisterSnapshot {
            input_int: ints(&self.input_int),
            input_float: floats(&self.input_float),
            output_int: ints(&self.output_int),
            output_float: floats(&self.output_float),
            digital_out_bits: self.digital_out_bits(),
            digital_in_bits: self.digital_in_bits(),
        }
    }
}

impl fmt::Debug for RegisterFile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.snapshot().fmt(f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegisterSnapshot {
    pub input_int: [i32; REGISTER_COUNT],
    pub input_float: [f64; REGISTER_COUNT],
    pub output_int: [i32; REGISTER_COUNT],
    pub output_float: [f64; REGISTER_COUNT],
    pub digital_out_bits: u64,
    pub digital_in_bits: u64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn last_writer_wins() {
        let regs = RegisterFile::new();
        regs.set_float(Bank::InputFloat, 18, 256.0).unwrap();
        assert_eq!(regs.get_float(Bank::InputFloat, 18).unwrap(), 256.0);
        regs.set_float(Bank::InputFloat, 18, 0.0).unwrap();
        assert_eq!(regs.get(Bank::InputFloat, 18).unwrap(), RegisterValue::Float(0.0));
    }

    #[test]
    fn zero_default() {
        let regs = RegisterFile::new();
        assert_eq!(regs.get(Bank::OutputInt, 5).unwrap(), RegisterValue::Int(0));
        let snap = regs.snapshot();
        assert!(snap.output_float.iter().all(|v| *v == 0.0));
        assert_eq!(snap.digital_out_bits, 0);
    }

    #[test]
    fn index_out_of_range() {
        let regs = RegisterFile::new();
        let err = regs.set_int(Bank::InputInt, 24, 1).unwrap_err();
        assert!(matches!(err, WireError::RegisterOutOfRange(24)));
        assert!(regs.get(Bank::OutputFloat, 24).is_err());
    }

    #[test]
    fn bank_type_checked() {
        let regs = RegisterFile::new();
        assert!(regs.set(Bank::InputInt, 0, RegisterValue::Float(1.0)).is_err());
    }

    #[test]
    fn digital_mask_write() {
        let regs = RegisterFile::new();
        regs.write_digital_out(1 << 3, 1 << 3);
        regs.write_digital_out(1 << 5, u64::MAX);
        assert_eq!(regs.digital_out_bits(), (1 << 3) | (1 << 5));
        regs.write_digital_out(1 << 3, 0);
        assert_eq!(regs.digital_out_bits(), 1 << 5);
    }

    #[test]
    fn field_names() {
        assert_eq!(Bank::parse_field("input_double_register_18"), Some((Bank::InputFloat, 18)));
        assert_eq!(Bank::parse_field(&Bank::OutputInt.field_name(19)), Some((Bank::OutputInt, 19)));
        assert_eq!(Bank::parse_field("output_int_register_24"), None);
    }
}
