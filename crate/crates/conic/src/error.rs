use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProgramError {
    #[error("variable index {index} referenced by `{context}` is out of range")]
    UnknownVariable { index: usize, context: String },
    #[error("variable `{name}` has empty bounds [{lower}, {upper}]")]
    EmptyBounds { name: String, lower: f64, upper: f64 },
    #[error("binary `{0}` must have finite bounds")]
    UnboundedBinary(String),
    #[error("one-hot group `{group}` contains non-binary `{name}`")]
    NonBinaryInGroup { group: String, name: String },
    #[error("variable `{0}` belongs to more than one one-hot group")]
    OverlappingGroups(String),
    #[error("program has quadratic rows or a quadratic objective and cannot be solved as a cone program")]
    Nonconvex,
}
