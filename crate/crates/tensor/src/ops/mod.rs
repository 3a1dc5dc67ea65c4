mod conv;
mod elementwise;
mod norm;
mod pool;

pub use conv::Padding;
pub use norm::{BnState, Mode, BN_EPS, BN_MOMENTUM};
