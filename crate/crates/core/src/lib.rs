pub mod codec;
pub mod rfid;
pub mod server;
pub mod simharness;
pub mod station;
pub mod trapctl;
pub mod uplinkqueue;
pub mod weighing;
