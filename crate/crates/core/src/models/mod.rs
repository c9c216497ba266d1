//! Model zoo: declarative specs and the wired networks built from them.

mod model;
mod spec;

pub use model::{argmax, Block, Model, ParamGroup, ParamInfo, UnitOutput};
pub use spec::{JkAgg, ModelKind, ModelSpec, TapPoint};
