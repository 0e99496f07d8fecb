//! Recursive-descent parser for the kernel expression grammar.
//!
//! ```text
//! stmt    := lvalue ('=' | '+=' | '-=') expr [';']
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := ('-' | '+') unary | primary
//! primary := number | ident ['(' args ')' | ('[' expr ']')*]
//!          | '%in' ('[' expr ']')+ | '%RHS' '(' expr [',' expr] ')' | '(' expr ')'
//! ```

use super::expr::{BinOp, Expr, Func, Stmt};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{message} at offset {offset} in `{source_text}`")]
pub struct ParseError {
    pub message: String,
    pub offset: usize,
    pub source_text: String,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Int(i64),
    Num(f64),
    Ident(String),
    Keyword(String),
    Sym(&'static str),
}

struct Lexer<'a> {
    src: &'a str,
    toks: Vec<(Tok, usize)>,
}

impl<'a> Lexer<'a> {
    fn run(src: &'a str) -> Result<Vec<(Tok, usize)>, ParseError> {
        let mut lx = Lexer { src, toks: Vec::new() };
        let bytes = src.as_bytes();
        let mut i = 0;
        while i < bytes.len() {
            let c = bytes[i] as char;
            if c.is_ascii_whitespace() {
                i += 1;
                continue;
            }
            let start = i;
            if c.is_ascii_digit() || (c == '.' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit)) {
                let mut is_float = false;
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    is_float |= bytes[i] == b'.';
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        is_float = true;
                        i = j;
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text = &src[start..i];
                let tok = if is_float {
                    Tok::Num(text.parse().map_err(|_| lx.err("malformed number", start))?)
                } else {
                    Tok::Int(text.parse().map_err(|_| lx.err("integer literal out of range", start))?)
                };
                lx.toks.push((tok, start));
                continue;
            }
            if c.is_ascii_alphabetic() || c == '_' || c == '%' {
                i += 1;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                let word = &src[start..i];
                let tok = if let Some(kw) = word.strip_prefix('%') {
                    match kw {
                        "in" | "RHS" => Tok::Keyword(kw.to_string()),
                        _ => return Err(lx.err(&format!("unknown placeholder `{word}`"), start)),
                    }
                } else {
                    Tok::Ident(word.to_string())
                };
                lx.toks.push((tok, start));
                continue;
            }
            let two = src.get(i..i + 2);
            let sym: &'static str = match (two, c) {
                (Some("+="), _) => "+=",
                (Some("-="), _) => "-=",
                (_, '+') => "+",
                (_, '-') => "-",
                (_, '*') => "*",
                (_, '/') => "/",
                (_, '(') => "(",
                (_, ')') => ")",
                (_, '[') => "[",
                (_, ']') => "]",
                (_, ',') => ",",
                (_, '=') => "=",
                (_, ';') => ";",
                _ => return Err(lx.err(&format!("unexpected character `{c}`"), start)),
            };
            i += sym.len();
            lx.toks.push((Tok::Sym(sym), start));
        }
        Ok(lx.toks)
    }

    fn err(&self, msg: &str, offset: usize) -> ParseError {
        ParseError {
            message: msg.to_string(),
            offset,
            source_text: self.src.to_string(),
        }
    }
}

struct Parser<'a> {
    src: &'a str,
    toks: Vec<(Tok, usize)>,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Result<Self, ParseError> {
        Ok(Parser {
            src,
            toks: Lexer::run(src)?,
            pos: 0,
        })
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map(|t| t.1).unwrap_or(self.src.len())
    }

    fn err(&self, msg: impl Into<String>) -> ParseError {
        ParseError {
            message: msg.into(),
            offset: self.offset(),
            source_text: self.src.to_string(),
        }
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.0)
    }

    fn eat(&mut self, sym: &str) -> bool {
        if matches!(self.peek(), Some(Tok::Sym(s)) if *s == sym) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, sym: &str) -> Result<(), ParseError> {
        if self.eat(sym) {
            Ok(())
        } else {
            Err(self.err(format!("expected `{sym}`")))
        }
    }

    fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = if self.eat("+") {
                BinOp::Add
            } else if self.eat("-") {
                BinOp::Sub
            } else {
                return Ok(lhs);
            };
            lhs = Expr::bin(op, lhs, self.term()?);
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = if self.eat("*") {
                BinOp::Mul
            } else if self.eat("/") {
                BinOp::Div
            } else {
                return Ok(lhs);
            };
            lhs = Expr::bin(op, lhs, self.unary()?);
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat("-") {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        if self.eat("+") {
            return self.unary();
        }
        self.primary()
    }

    fn subscripts(&mut self) -> Result<Vec<Expr>, ParseError> {
        let mut out = Vec::new();
        while self.eat("[") {
            out.push(self.expr()?);
            self.expect("]")?;
        }
        Ok(out)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let Some(tok) = self.peek().cloned() else {
            return Err(self.err("unexpected end of expression"));
        };
        self.pos += 1;
        match tok {
            Tok::Int(v) => Ok(Expr::Int(v)),
            Tok::Num(v) => Ok(Expr::Num(v)),
            Tok::Ident(name) => {
                if self.eat("(") {
                    let func = Func::from_name(&name)
                        .ok_or_else(|| self.err(format!("function `{name}` is not allowed")))?;
                    let mut args = vec![self.expr()?];
                    while self.eat(",") {
                        args.push(self.expr()?);
                    }
                    self.expect(")")?;
                    if args.len() != func.arity() {
                        return Err(self.err(format!(
                            "`{name}` takes {} argument(s), got {}",
                            func.arity(),
                            args.len()
                        )));
                    }
                    return Ok(Expr::Call(func, args));
                }
                let indices = self.subscripts()?;
                if indices.is_empty() {
                    Ok(Expr::Var(name))
                } else {
                    Ok(Expr::Index { array: name, indices })
                }
            }
            Tok::Keyword(kw) if kw == "in" => {
                let indices = self.subscripts()?;
                if indices.is_empty() {
                    return Err(self.err("`%in` must be subscripted"));
                }
                Ok(Expr::Input(indices))
            }
            Tok::Keyword(_) => {
                self.expect("(")?;
                let input = self.expr()?;
                if !matches!(input, Expr::Var(_) | Expr::Index { .. }) {
                    return Err(self.err("`%RHS` input must be an array or array row"));
                }
                let time = if self.eat(",") { Some(Box::new(self.expr()?)) } else { None };
                self.expect(")")?;
                Ok(Expr::Rhs {
                    input: Box::new(input),
                    time,
                })
            }
            Tok::Sym("(") => {
                let e = self.expr()?;
                self.expect(")")?;
                Ok(e)
            }
            Tok::Sym(s) => {
                self.pos -= 1;
                Err(self.err(format!("unexpected `{s}`")))
            }
        }
    }
}

/// Parses a complete expression.
pub fn parse_expr(src: &str) -> Result<Expr, ParseError> {
    let mut p = Parser::new(src)?;
    let e = p.expr()?;
    if !p.at_end() {
        return Err(p.err("trailing input"));
    }
    Ok(e)
}

/// Parses one assignment statement; a trailing `;` is optional.
pub fn parse_stmt(src: &str) -> Result<Stmt, ParseError> {
    let mut p = Parser::new(src)?;
    let target = p.primary()?;
    if !matches!(target, Expr::Var(_) | Expr::Index { .. }) {
        return Err(ParseError {
            message: "assignment target must be a variable or array element".into(),
            offset: 0,
            source_text: src.to_string(),
        });
    }
    let op = if p.eat("=") {
        None
    } else if p.eat("+=") {
        Some(BinOp::Add)
    } else if p.eat("-=") {
        Some(BinOp::Sub)
    } else {
        return Err(p.err("expected `=`, `+=` or `-=`"));
    };
    let rhs = p.expr()?;
    p.eat(";");
    if !p.at_end() {
        return Err(p.err("trailing input"));
    }
    let value = match op {
        None => rhs,
        Some(op) => Expr::bin(op, target.clone(), rhs),
    };
    Ok(Stmt { target, value })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_template_computation() {
        let s = parse_stmt("dy[j] = dy[j] + b[i] * F[i][j]").unwrap();
        assert_eq!(s.to_string(), "dy[j] += b[i] * F[i][j];");
        assert_eq!(s.arrays().into_iter().collect::<Vec<_>>(), ["F", "b", "dy"]);
    }

    #[test]
    fn parses_rhs_and_placeholder() {
        let s = parse_stmt("F[i][j] = %RHS(Y[i], t + c[i] * h)").unwrap();
        assert!(s.value.contains_rhs());
        let e = parse_expr("(U_op - %in[j]) * R - exp(-%in[j-1])").unwrap();
        assert!(e.contains_input());
    }

    #[test]
    fn precedence_and_associativity() {
        let e = parse_expr("1 - 2 - 3").unwrap();
        assert_eq!(e.eval_scalar(&|_| None).unwrap(), -4.0);
        let e = parse_expr("2 * 3 + 4 / 2").unwrap();
        assert_eq!(e.eval_scalar(&|_| None).unwrap(), 8.0);
        let e = parse_expr("-2 * -3").unwrap();
        assert_eq!(e.eval_scalar(&|_| None).unwrap(), 6.0);
    }

    #[test]
    fn lst2_coefficient_expression() {
        let e = parse_expr("0.1130 - 0.0403 + 0.0258 - 0.0099").unwrap();
        let v = e.eval_scalar(&|_| None).unwrap();
        assert!((v - 0.0886).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(parse_expr("a +").is_err());
        assert!(parse_expr("malloc(3)").is_err());
        assert!(parse_expr("pow(2)").is_err());
        assert!(parse_expr("a b").is_err());
        assert!(parse_expr("%foo[1]").is_err());
        assert!(parse_stmt("a + b = c").is_err());
        assert!(parse_expr("1e5").unwrap() == Expr::Num(1e5));
    }
}
