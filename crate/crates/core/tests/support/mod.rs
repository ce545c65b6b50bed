pub mod exact;
pub mod pool;
