pub mod classify;
pub mod features;
pub mod jsonl;
pub mod net;
pub mod packet;
pub mod paths;
pub mod probe;
pub mod proto;
pub mod signatures;
pub mod sim;
pub mod snmp;
