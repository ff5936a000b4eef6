//! Permissioned ledger for IoT forensic-evidence metadata and chain of custody.
//!
//! Raw evidence stays off-chain in per-ISP evidence stores; the ledger holds
//! signed metadata transactions, custody intervals and device-state
//! histories. The network module simulates a multi-node deployment with a
//! single ordering node, and `collection` generates synthetic smart-home
//! attack evidence.

pub mod chaincode;
pub mod codec;
pub mod collection;
pub mod evidence;
pub mod hash;
pub mod identity;
pub mod ledger;
pub mod network;
pub mod node;
