pub use crate::error::Result as _Rsvg;
