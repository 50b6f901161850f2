pub mod adversary;
pub mod channel;
pub mod detector;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod keyconf;
pub mod numerics;
pub mod secrecy;
