// `!(x > 0.0)` is used on purpose so NaN is rejected along with the range.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod binio;
pub mod dataset;
pub mod export;
pub mod gradcheck;
pub mod mesh_io;
pub mod model;
pub mod preprocess;
pub mod shapes;
pub mod tensor;
pub mod train;
