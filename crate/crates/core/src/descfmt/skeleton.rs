//! Implementation skeleton documents.

use serde::{Deserialize, Serialize};

use super::{from_yaml, to_yaml, DescError, DescErrorKind};
use crate::codegen::block::{parse_code_block, BlockContext, CodeBlock};

#[derive(Debug, Clone, PartialEq)]
pub struct ImplSkeleton {
    pub name: String,
    pub code: CodeBlock,
    /// Templates referenced by `%KERNEL`, in first-occurrence order.
    pub required_templates: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SkeletonDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    code: String,
}

pub fn parse_skeleton(text: &str) -> Result<ImplSkeleton, DescError> {
    parse_skeleton_named(text, "skeleton")
}

pub(crate) fn parse_skeleton_named(text: &str, default_name: &str) -> Result<ImplSkeleton, DescError> {
    let doc: SkeletonDoc = from_yaml(text, default_name)?;
    let name = doc.name.unwrap_or_else(|| default_name.to_string());
    let code = parse_code_block(&doc.code, BlockContext::Skeleton)
        .map_err(|e| DescError::new(DescErrorKind::Schema, &name, e.to_string()))?;
    let required_templates = code.kernel_refs();
    Ok(ImplSkeleton {
        name,
        code,
        required_templates,
    })
}

impl ImplSkeleton {
    pub fn to_yaml(&self) -> String {
        to_yaml(&SkeletonDoc {
            name: Some(self.name.clone()),
            code: self.code.to_string(),
        })
    }
}
