use std::net::ToSocketAddrs;

use super::link::Link;
use super::ClientError;
use crate::wire::{FieldValue, PacketType, Recipe};

/// Writes standard digital outputs without taking the control role.
pub struct IoSession {
    link: Link,
    recipe: Recipe,
}

impl IoSession {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<IoSession, ClientError> {
        let mut link = Link::connect(addr)?;
        let names = ["standard_digital_output_mask".to_string(), "standard_digital_output".to_string()];
        let recipe = link.setup_inputs(&names)?.map_err(ClientError::RecipeRejected)?;
        Ok(IoSession { link, recipe })
    }

    /// Sets or clears one output pin; applied by the controller at its next tick.
    ///
    /// Returns once the controller has queued the write.
    pub fn set_standard_digital_out(&mut self, pin: u8, value: bool) -> Result<(), ClientError> {
        if pin > 7 {
            return Err(ClientError::PinOutOfRange(pin));
        }
        let mask = 1u64 << pin;
        let payload = self.recipe.pack(&[
            FieldValue::UInt64(mask),
            FieldValue::UInt64(if value { mask } else { 0 }),
        ])?;
        self.link.send(PacketType::DataPackage, &payload)?;
        self.link.barrier()
    }
}

impl Drop for IoSession {
    fn drop(&mut self) {
        self.link.close();
    }
}
