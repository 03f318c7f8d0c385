mod conv;
mod elementwise;
mod linalg;
mod reduce;
mod shape;

pub use conv::{conv2d, conv2d_grouped, conv3d};
pub use elementwise::{activation, binary, broadcast_shape, Activation, BinaryKind};
pub use shape::{concat, stack};
