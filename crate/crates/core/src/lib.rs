pub mod client;
pub mod controller;
pub mod kinematics;
pub mod motion;
pub mod script;
pub mod services;
pub mod wire;
