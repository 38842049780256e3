pub mod bench;
pub mod oracle;
pub mod spmd;
pub mod validate;
pub mod workload;
