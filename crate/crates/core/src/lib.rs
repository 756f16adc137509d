pub mod codec;
pub mod cos;
pub mod faas;
pub mod metering;
pub mod time;
pub mod durability;
pub mod sms;
pub mod client;
pub mod config;
pub mod tools;
