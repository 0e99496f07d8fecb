//! The `%LOOP_START` / `%COMP` / `%KERNEL` code-block DSL.

use std::fmt;

use crate::refexec::{parse_expr, Expr};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockContext {
    /// Kernel-template code: loops, `%COMP`, `%PRAGMA`.
    Kernel,
    /// Skeleton code: loops, `%COM`, `%KERNEL`.
    Skeleton,
}

impl BlockContext {
    fn params(self) -> &'static [&'static str] {
        match self {
            BlockContext::Kernel => &["s", "n"],
            BlockContext::Skeleton => &["s", "m"],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Loop {
    pub var: String,
    pub trips: Expr,
    pub unroll: bool,
    pub body: Vec<Node>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Loop(Loop),
    Comp(String),
    Pragma(String),
    Comm(String),
    KernelRef(String),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CodeBlock {
    pub nodes: Vec<Node>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct BlockError {
    pub line: usize,
    pub message: String,
}

fn err(line: usize, message: impl Into<String>) -> BlockError {
    BlockError {
        line,
        message: message.into(),
    }
}

/// Parses code-block text. Blank lines are ignored; every other line must
/// start with a keyword that is legal in `ctx`.
pub fn parse_code_block(text: &str, ctx: BlockContext) -> Result<CodeBlock, BlockError> {
    // Stack of open loops; the bottom entry collects top-level nodes.
    let mut stack: Vec<(Option<(String, Expr, bool, usize)>, Vec<Node>)> = vec![(None, Vec::new())];
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        let (kw, rest) = match trimmed.split_once(char::is_whitespace) {
            Some((kw, rest)) => (kw, rest.trim()),
            None => (trimmed, ""),
        };
        let args: Vec<&str> = rest.split_whitespace().collect();
        match kw {
            "%LOOP_START" => {
                let (var, trips, unroll) = match args.as_slice() {
                    [var, trips] => (*var, *trips, false),
                    [var, trips, "unroll"] => (*var, *trips, true),
                    [_, _, other] => return Err(err(line, format!("unknown loop option `{other}`"))),
                    _ => return Err(err(line, "%LOOP_START expects a variable, a trip count and optionally `unroll`")),
                };
                if !is_ident(var) {
                    return Err(err(line, format!("invalid loop variable `{var}`")));
                }
                if ctx.params().contains(&var) {
                    return Err(err(line, format!("loop variable `{var}` shadows a parameter")));
                }
                if stack.iter().any(|(open, _)| open.as_ref().is_some_and(|o| o.0 == var)) {
                    return Err(err(line, format!("loop variable `{var}` is already in use by an enclosing loop")));
                }
                let trips = parse_expr(trips).map_err(|e| err(line, e.to_string()))?;
                if let Some(bad) = trips.identifiers().into_iter().find(|i| !ctx.params().contains(&i.as_str())) {
                    return Err(err(line, format!("unknown parameter `{bad}` in trip count")));
                }
                if !trips.arrays().is_empty() || trips.contains_input() || trips.contains_rhs() {
                    return Err(err(line, "trip count must be an expression over parameters"));
                }
                stack.push((Some((var.to_string(), trips, unroll, line)), Vec::new()));
            }
            "%LOOP_END" => {
                if stack.len() == 1 {
                    return Err(err(line, "%LOOP_END without matching %LOOP_START"));
                }
                let (open, body) = stack.pop().expect("non-empty stack");
                let (var, trips, unroll, _) = open.expect("loop frame");
                match args.as_slice() {
                    [] => {}
                    [name] if *name == var => {}
                    [name] => return Err(err(line, format!("%LOOP_END {name} closes loop `{var}`"))),
                    _ => return Err(err(line, "%LOOP_END takes at most one argument")),
                }
                stack
                    .last_mut()
                    .expect("outer frame")
                    .1
                    .push(Node::Loop(Loop { var, trips, unroll, body }));
            }
            "%COMP" | "%KERNEL" | "%COM" => {
                let allowed = match kw {
                    "%COMP" => ctx == BlockContext::Kernel,
                    _ => ctx == BlockContext::Skeleton,
                };
                if !allowed {
                    return Err(err(line, format!("keyword {kw} is not allowed here")));
                }
                let [name] = args.as_slice() else {
                    return Err(err(line, format!("{kw} takes exactly one argument")));
                };
                let node = match kw {
                    "%COMP" => Node::Comp(name.to_string()),
                    "%KERNEL" => Node::KernelRef(name.to_string()),
                    _ => {
                        if *name != "barrier" {
                            return Err(err(line, format!("unknown communication operation `{name}`")));
                        }
                        Node::Comm(name.to_string())
                    }
                };
                stack.last_mut().expect("frame").1.push(node);
            }
            "%PRAGMA" => {
                if ctx != BlockContext::Kernel {
                    return Err(err(line, "keyword %PRAGMA is not allowed here"));
                }
                if rest.is_empty() {
                    return Err(err(line, "%PRAGMA requires text"));
                }
                stack.last_mut().expect("frame").1.push(Node::Pragma(rest.to_string()));
            }
            other => return Err(err(line, format!("unknown keyword `{other}`"))),
        }
    }
    if stack.len() > 1 {
        let (open, _) = stack.pop().expect("frame");
        let (var, _, _, line) = open.expect("loop frame");
        return Err(err(line, format!("loop `{var}` is never closed")));
    }
    Ok(CodeBlock {
        nodes: stack.pop().expect("root").1,
    })
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    chars.next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

impl CodeBlock {
    /// Every node in pre-order.
    pub fn walk(&self, f: &mut dyn FnMut(&Node)) {
        fn go(nodes: &[Node], f: &mut dyn FnMut(&Node)) {
            for n in nodes {
                f(n);
                if let Node::Loop(l) = n {
                    go(&l.body, f);
                }
            }
        }
        go(&self.nodes, f);
    }

    pub fn comp_ids(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.walk(&mut |n| {
            if let Node::Comp(id) = n {
                out.push(id.clone());
            }
        });
        out
    }

    /// Template names referenced by `%KERNEL`, in first-occurrence order.
    pub fn kernel_refs(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        self.walk(&mut |n| {
            if let Node::KernelRef(name) = n {
                if !out.contains(name) {
                    out.push(name.clone());
                }
            }
        });
        out
    }
}

impl fmt::Display for CodeBlock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn go(nodes: &[Node], depth: usize, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            let pad = "  ".repeat(depth);
            for n in nodes {
                match n {
                    Node::Loop(l) => {
                        let unroll = if l.unroll { " unroll" } else { "" };
                        let trips = l.trips.to_string().replace(' ', "");
                        writeln!(f, "{pad}%LOOP_START {} {trips}{unroll}", l.var)?;
                        go(&l.body, depth + 1, f)?;
                        writeln!(f, "{pad}%LOOP_END {}", l.var)?;
                    }
                    Node::Comp(id) => writeln!(f, "{pad}%COMP {id}")?,
                    Node::Pragma(text) => writeln!(f, "{pad}%PRAGMA {text}")?,
                    Node::Comm(op) => writeln!(f, "{pad}%COM {op}")?,
                    Node::KernelRef(name) => writeln!(f, "{pad}%KERNEL {name}")?,
                }
            }
            Ok(())
        }
        go(&self.nodes, 0, f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const APRX_JI: &str = "%LOOP_START j n\n  %LOOP_START i s unroll\n    %COMP C1\n  %LOOP_END i\n%LOOP_END j\n";

    fn lp(var: &str, trips: &str, unroll: bool, body: Vec<Node>) -> Node {
        Node::Loop(Loop {
            var: var.into(),
            trips: parse_expr(trips).unwrap(),
            unroll,
            body,
        })
    }

    #[test]
    fn aprx_ji_structure() {
        let b = parse_code_block(APRX_JI, BlockContext::Kernel).unwrap();
        let want = vec![lp("j", "n", false, vec![lp("i", "s", true, vec![Node::Comp("C1".into())])])];
        assert_eq!(b.nodes, want);
        assert_eq!(b.to_string(), APRX_JI);
    }

    #[test]
    fn skeleton_a_structure() {
        let text = "%COM barrier\n%LOOP_START k m\n%KERNEL RHS\n%COM barrier\n%KERNEL LC\n%COM barrier\n%LOOP_END k\n\
                    %COM barrier\n%KERNEL RHS\n%KERNEL APRX\n%KERNEL UPD\n";
        let b = parse_code_block(text, BlockContext::Skeleton).unwrap();
        let bar = || Node::Comm("barrier".into());
        let k = |n: &str| Node::KernelRef(n.into());
        let want = vec![
            bar(),
            lp("k", "m", false, vec![k("RHS"), bar(), k("LC"), bar()]),
            bar(),
            k("RHS"),
            k("APRX"),
            k("UPD"),
        ];
        assert_eq!(b.nodes, want);
        assert_eq!(b.kernel_refs(), ["RHS", "LC", "APRX", "UPD"]);
    }

    #[test]
    fn empty_text_is_empty_block() {
        assert_eq!(parse_code_block("", BlockContext::Kernel).unwrap().nodes, vec![]);
        assert_eq!(parse_code_block("\n  \n", BlockContext::Skeleton).unwrap().nodes, vec![]);
    }

    #[test]
    fn context_and_pairing_errors() {
        assert!(parse_code_block("%PRAGMA omp simd", BlockContext::Skeleton).is_err());
        assert!(parse_code_block("%KERNEL A", BlockContext::Kernel).is_err());
        assert!(parse_code_block("%COMP C1", BlockContext::Skeleton).is_err());
        assert!(parse_code_block("%LOOP_END", BlockContext::Kernel).is_err());
        assert!(parse_code_block("%LOOP_START j n\n%COMP C1", BlockContext::Kernel).is_err());
        assert!(parse_code_block("%LOOP_START j q\n%LOOP_END", BlockContext::Kernel).is_err());
        assert!(parse_code_block("%LOOP_START j m\n%LOOP_END", BlockContext::Kernel).is_err());
        assert!(parse_code_block("%LOOP_START j n\n%LOOP_START j s\n%LOOP_END\n%LOOP_END", BlockContext::Kernel).is_err());
        assert!(parse_code_block("%COM allreduce", BlockContext::Skeleton).is_err());
        assert!(parse_code_block("%LOOP_START j n\n%LOOP_END i", BlockContext::Kernel).is_err());
    }

    #[test]
    fn sibling_loops_may_reuse_a_variable() {
        let text = "%LOOP_START j n\n%COMP C1\n%LOOP_END\n%LOOP_START j n\n%COMP C2\n%LOOP_END";
        assert!(parse_code_block(text, BlockContext::Kernel).is_ok());
    }
}
