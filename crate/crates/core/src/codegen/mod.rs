//! Kernel specialization, variant enumeration, and C source emission.

pub mod block;
pub mod kernel;
pub mod variant;

pub use block::{parse_code_block, BlockContext, CodeBlock, Node};
pub use kernel::{
    emit_analyzer_file, emit_analyzer_kernel, specialize_kernel, specialize_kernels, GeneratedKernel, KLoop, KNode,
    KernelSet,
};
pub use variant::{
    count_barriers, enumerate_variants, generate_variant_code, instantiate, template_executions, ImplVariant,
    VNode, VariantInstance,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CodegenError {
    #[error("kernel {kernel}: cannot unroll loop `{var}` with symbolic trip count `{trips}`")]
    UnrollSymbolic { kernel: String, var: String, trips: String },
    #[error("kernel {kernel}: {message}")]
    Rhs { kernel: String, message: String },
    #[error("kernel {kernel}: {message}")]
    Specialize { kernel: String, message: String },
    #[error("kernel {kernel}: n is symbolic; analyzer code needs a fixed n")]
    SymbolicN { kernel: String },
    #[error("unknown variant `{id}`{}", suggestion.as_ref().map(|s| format!("; did you mean `{s}`?")).unwrap_or_default())]
    UnknownVariant { id: String, suggestion: Option<String> },
    #[error("variant {variant}: {message}")]
    Variant { variant: String, message: String },
}
