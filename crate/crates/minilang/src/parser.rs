//! Recursive-descent parser.

use crate::ast::*;
use crate::error::{Diagnostic, Pos};
use crate::lexer::{tokenize, Keyword, Punct, Token, TokenKind};

/// Maximum nesting of expressions and blocks accepted by the parser.
pub const MAX_NESTING: usize = 128;

struct Parser {
    tokens: Vec<Token>,
    cursor: usize,
    depth: usize,
}

type PResult<T> = Result<T, Diagnostic>;

impl Parser {
    fn new(tokens: Vec<Token>) -> Self {
        Parser { tokens, cursor: 0, depth: 0 }
    }

    fn peek(&self) -> &Token {
        &self.tokens[self.cursor.min(self.tokens.len() - 1)]
    }

    fn peek_kind(&self) -> &TokenKind {
        &self.peek().kind
    }

    fn advance(&mut self) -> Token {
        let tok = self.peek().clone();
        if self.cursor < self.tokens.len() - 1 {
            self.cursor += 1;
        }
        tok
    }

    fn at_punct(&self, p: Punct) -> bool {
        *self.peek_kind() == TokenKind::Punct(p)
    }

    fn at_keyword(&self, k: Keyword) -> bool {
        *self.peek_kind() == TokenKind::Keyword(k)
    }

    fn eat_punct(&mut self, p: Punct) -> bool {
        if self.at_punct(p) {
            self.advance();
            true
        } else {
            false
        }
    }

    fn unexpected(&self, expected: &str) -> Diagnostic {
        let tok = self.peek();
        Diagnostic::new(tok.pos, format!("expected {expected}, found {}", tok.kind))
    }

    fn expect_punct(&mut self, p: Punct) -> PResult<Pos> {
        if self.at_punct(p) {
            Ok(self.advance().pos)
        } else {
            Err(self.unexpected(&format!("`{}`", p.as_str())))
        }
    }

    fn expect_keyword(&mut self, k: Keyword) -> PResult<Pos> {
        if self.at_keyword(k) {
            Ok(self.advance().pos)
        } else {
            Err(self.unexpected(&format!("`{}`", k.as_str())))
        }
    }

    fn expect_ident(&mut self) -> PResult<(String, Pos)> {
        match self.peek_kind().clone() {
            TokenKind::Ident(name) => {
                let pos = self.advance().pos;
                Ok((name, pos))
            }
            _ => Err(self.unexpected("identifier")),
        }
    }

    fn enter(&mut self) -> PResult<()> {
        self.depth += 1;
        if self.depth > MAX_NESTING {
            return Err(Diagnostic::new(self.peek().pos, "nesting too deep"));
        }
        Ok(())
    }

    fn leave(&mut self) {
        self.depth -= 1;
    }

    fn program(&mut self) -> PResult<Program> {
        let mut functions = Vec::new();
        while *self.peek_kind() != TokenKind::Eof {
            if self.at_punct(Punct::RBrace) {
                return Err(Diagnostic::new(self.peek().pos, "unmatched `}`"));
            }
            functions.push(self.function()?);
        }
        if functions.is_empty() {
            return Err(Diagnostic::bare("program defines no functions"));
        }
        Ok(Program { functions })
    }

    fn ty(&mut self) -> PResult<Type> {
        match self.peek_kind() {
            TokenKind::Keyword(Keyword::Int) => {
                self.advance();
                Ok(Type::Int)
            }
            TokenKind::Keyword(Keyword::Bool) => {
                self.advance();
                Ok(Type::Bool)
            }
            TokenKind::Keyword(Keyword::String) => {
                self.advance();
                Ok(Type::Str)
            }
            TokenKind::Punct(Punct::LBracket) => {
                self.advance();
                self.enter()?;
                let inner = self.ty()?;
                self.leave();
                self.expect_punct(Punct::RBracket)?;
                Ok(Type::Array(Box::new(inner)))
            }
            _ => Err(self.unexpected("a type")),
        }
    }

    fn signature(&mut self) -> PResult<(Signature, Pos)> {
        let pos = self.expect_keyword(Keyword::Fn)?;
        let (name, _) = self.expect_ident()?;
        self.expect_punct(Punct::LParen)?;
        let mut params = Vec::new();
        if !self.at_punct(Punct::RParen) {
            loop {
                let (pname, _) = self.expect_ident()?;
                self.expect_punct(Punct::Colon)?;
                let ty = self.ty()?;
                params.push(Param { name: pname, ty });
                if !self.eat_punct(Punct::Comma) {
                    break;
                }
            }
        }
        self.expect_punct(Punct::RParen)?;
        self.expect_punct(Punct::Arrow)?;
        let ret = self.ty()?;
        Ok((Signature { name, params, ret }, pos))
    }

    fn function(&mut self) -> PResult<Function> {
        let (sig, pos) = self.signature()?;
        let body = self.block()?;
        Ok(Function { sig, body, pos })
    }

    fn block(&mut self) -> PResult<Block> {
        let open = self.expect_punct(Punct::LBrace)?;
        self.enter()?;
        let mut stmts = Vec::new();
        loop {
            match self.peek_kind() {
                TokenKind::Punct(Punct::RBrace) => {
                    self.advance();
                    break;
                }
                TokenKind::Eof => {
                    return Err(Diagnostic::new(
                        open,
                        format!("unclosed `{{` opened at line {}", open.line),
                    ));
                }
                TokenKind::Keyword(Keyword::Fn) => {
                    return Err(Diagnostic::new(
                        open,
                        format!(
                            "unclosed `{{` opened at line {} (next function starts at line {})",
                            open.line,
                            self.peek().pos.line
                        ),
                    ));
                }
                _ => stmts.push(self.stmt()?),
            }
        }
        self.leave();
        Ok(stmts)
    }

    fn stmt(&mut self) -> PResult<Stmt> {
        let pos = self.peek().pos;
        let kind = match self.peek_kind().clone() {
            TokenKind::Keyword(Keyword::Let) => {
                self.advance();
                let (name, _) = self.expect_ident()?;
                let ty = if self.eat_punct(Punct::Colon) { Some(self.ty()?) } else { None };
                self.expect_punct(Punct::Assign)?;
                let init = self.expr()?;
                self.expect_punct(Punct::Semi)?;
                StmtKind::Let { name, ty, init }
            }
            TokenKind::Keyword(Keyword::If) => return self.if_stmt(),
            TokenKind::Keyword(Keyword::While) => {
                self.advance();
                self.expect_punct(Punct::LParen)?;
                let cond = self.expr()?;
                self.expect_punct(Punct::RParen)?;
                let body = self.block()?;
                StmtKind::While { cond, body }
            }
            TokenKind::Keyword(Keyword::Return) => {
                self.advance();
                let value = self.expr()?;
                self.expect_punct(Punct::Semi)?;
                StmtKind::Return(value)
            }
            TokenKind::Ident(name) => {
                // Assignment targets start with an identifier; otherwise fall
                // back to an expression statement.
                let save = self.cursor;
                self.advance();
                let target = if self.at_punct(Punct::Assign) {
                    Some(LValue::Var(name))
                } else if self.at_punct(Punct::LBracket) {
                    self.advance();
                    let index = self.expr()?;
                    self.expect_punct(Punct::RBracket)?;
                    if self.at_punct(Punct::Assign) {
                        Some(LValue::Index(name, index))
                    } else {
                        None
                    }
                } else {
                    None
                };
                match target {
                    Some(target) => {
                        self.expect_punct(Punct::Assign)?;
                        let value = self.expr()?;
                        self.expect_punct(Punct::Semi)?;
                        StmtKind::Assign { target, value }
                    }
                    None => {
                        self.cursor = save;
                        let e = self.expr()?;
                        self.expect_punct(Punct::Semi)?;
                        StmtKind::Expr(e)
                    }
                }
            }
            TokenKind::Punct(Punct::RBrace) => {
                return Err(Diagnostic::new(pos, "unmatched `}`"));
            }
            _ => {
                let e = self.expr()?;
                self.expect_punct(Punct::Semi)?;
                StmtKind::Expr(e)
            }
        };
        Ok(Stmt { kind, pos })
    }

    fn if_stmt(&mut self) -> PResult<Stmt> {
        let pos = self.expect_keyword(Keyword::If)?;
        self.enter()?;
        self.expect_punct(Punct::LParen)?;
        let cond = self.expr()?;
        self.expect_punct(Punct::RParen)?;
        let then_block = self.block()?;
        let else_block = if self.at_keyword(Keyword::Else) {
            self.advance();
            if self.at_keyword(Keyword::If) {
                Some(vec![self.if_stmt()?])
            } else {
                Some(self.block()?)
            }
        } else {
            None
        };
        self.leave();
        Ok(Stmt { kind: StmtKind::If { cond, then_block, else_block }, pos })
    }

    fn expr(&mut self) -> PResult<Expr> {
        self.enter()?;
        let e = self.binary(0);
        self.leave();
        e
    }

    fn binary(&mut self, min_prec: u8) -> PResult<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let Some((op, prec)) = self.binop() else { break };
            if prec < min_prec {
                break;
            }
            let pos = self.advance().pos;
            let rhs = self.binary(prec + 1)?;
            lhs = Expr { kind: ExprKind::Binary(op, Box::new(lhs), Box::new(rhs)), pos };
        }
        Ok(lhs)
    }

    fn binop(&self) -> Option<(BinOp, u8)> {
        let TokenKind::Punct(p) = self.peek_kind() else { return None };
        Some(match p {
            Punct::OrOr => (BinOp::Or, 1),
            Punct::AndAnd => (BinOp::And, 2),
            Punct::EqEq => (BinOp::Eq, 3),
            Punct::NotEq => (BinOp::Ne, 3),
            Punct::Lt => (BinOp::Lt, 4),
            Punct::Le => (BinOp::Le, 4),
            Punct::Gt => (BinOp::Gt, 4),
            Punct::Ge => (BinOp::Ge, 4),
            Punct::Plus => (BinOp::Add, 5),
            Punct::Minus => (BinOp::Sub, 5),
            Punct::Star => (BinOp::Mul, 6),
            Punct::Slash => (BinOp::Div, 6),
            Punct::Percent => (BinOp::Rem, 6),
            _ => return None,
        })
    }

    fn unary(&mut self) -> PResult<Expr> {
        let pos = self.peek().pos;
        let op = match self.peek_kind() {
            TokenKind::Punct(Punct::Minus) => Some(UnOp::Neg),
            TokenKind::Punct(Punct::Bang) => Some(UnOp::Not),
            _ => None,
        };
        if let Some(op) = op {
            self.advance();
            self.enter()?;
            let inner = self.unary()?;
            self.leave();
            return Ok(Expr { kind: ExprKind::Unary(op, Box::new(inner)), pos });
        }
        self.postfix()
    }

    fn postfix(&mut self) -> PResult<Expr> {
        let mut e = self.primary()?;
        while self.at_punct(Punct::LBracket) {
            let pos = self.advance().pos;
            let index = self.expr()?;
            self.expect_punct(Punct::RBracket)?;
            e = Expr { kind: ExprKind::Index(Box::new(e), Box::new(index)), pos };
        }
        Ok(e)
    }

    fn primary(&mut self) -> PResult<Expr> {
        let tok = self.peek().clone();
        let pos = tok.pos;
        let kind = match tok.kind {
            TokenKind::Int(v) => {
                self.advance();
                ExprKind::Int(v)
            }
            TokenKind::Str(s) => {
                self.advance();
                ExprKind::Str(s)
            }
            TokenKind::Keyword(Keyword::True) => {
                self.advance();
                ExprKind::Bool(true)
            }
            TokenKind::Keyword(Keyword::False) => {
                self.advance();
                ExprKind::Bool(false)
            }
            TokenKind::Ident(name) => {
                self.advance();
                if self.eat_punct(Punct::LParen) {
                    let args = self.comma_list(Punct::RParen)?;
                    ExprKind::Call(name, args)
                } else {
                    ExprKind::Var(name)
                }
            }
            TokenKind::Punct(Punct::LParen) => {
                self.advance();
                let inner = self.expr()?;
                self.expect_punct(Punct::RParen)?;
                return Ok(inner);
            }
            TokenKind::Punct(Punct::LBracket) => {
                self.advance();
                ExprKind::Array(self.comma_list(Punct::RBracket)?)
            }
            _ => return Err(self.unexpected("an expression")),
        };
        Ok(Expr { kind, pos })
    }

    fn comma_list(&mut self, close: Punct) -> PResult<Vec<Expr>> {
        let mut items = Vec::new();
        if self.eat_punct(close) {
            return Ok(items);
        }
        loop {
            items.push(self.expr()?);
            if self.eat_punct(close) {
                return Ok(items);
            }
            self.expect_punct(Punct::Comma)?;
        }
    }
}

/// Parses a whole program. Does not type check.
pub fn parse_program(src: &str) -> Result<Program, Diagnostic> {
    if src.trim().is_empty() {
        return Err(Diagnostic::bare("empty source"));
    }
    let tokens = tokenize(src)?;
    Parser::new(tokens).program()
}

/// Parses a bare signature such as `fn f(a: int, s: string) -> bool`.
pub fn parse_signature(src: &str) -> Result<Signature, Diagnostic> {
    let tokens = tokenize(src)?;
    let mut p = Parser::new(tokens);
    let (sig, _) = p.signature()?;
    if *p.peek_kind() != TokenKind::Eof {
        return Err(p.unexpected("end of signature"));
    }
    Ok(sig)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_function_with_control_flow() {
        let src = r#"
fn count(s: string) -> int {
    let n = 0;
    let i: int = 0;
    while (i < len(s)) {
        if (char_at(s, i) == "a") {
            n = n + 1;
        } else if (i > 3) {
            n = n - 1;
        }
        i = i + 1;
    }
    return n;
}"#;
        let prog = parse_program(src).unwrap();
        assert_eq!(prog.functions.len(), 1);
        assert_eq!(prog.functions[0].sig.name, "count");
        assert_eq!(prog.functions[0].body.len(), 4);
    }

    #[test]
    fn precedence_binds_mul_tighter_than_add() {
        let prog = parse_program("fn f() -> int { return 1 + 2 * 3; }").unwrap();
        let StmtKind::Return(e) = &prog.functions[0].body[0].kind else { panic!() };
        let ExprKind::Binary(BinOp::Add, _, rhs) = &e.kind else { panic!("{e:?}") };
        assert!(matches!(rhs.kind, ExprKind::Binary(BinOp::Mul, _, _)));
    }

    #[test]
    fn unbalanced_braces_name_the_line() {
        let src = "fn f(a: int) -> int {\n    if (a > 0) {\n        return 1;\n    \n    return 0;\n}\n";
        let err = parse_program(src).unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
        assert!(err.message.contains("unclosed"), "{err}");

        let extra = "fn f() -> int {\n  return 0;\n}\n}\n";
        let err = parse_program(extra).unwrap_err();
        assert_eq!(err.pos.unwrap().line, 4);
    }

    #[test]
    fn empty_source_is_rejected() {
        assert_eq!(parse_program("   \n").unwrap_err().message, "empty source");
    }

    #[test]
    fn signature_round_trips_through_display() {
        let sig = parse_signature("fn getSandwich(str: string) -> string").unwrap();
        assert_eq!(sig.to_string(), "fn getSandwich(str: string) -> string");
        let sig = parse_signature("fn f(a: [int], b: bool) -> [[string]]").unwrap();
        assert_eq!(parse_signature(&sig.to_string()).unwrap(), sig);
    }

    #[test]
    fn deep_nesting_is_an_error_not_a_crash() {
        let src = format!("fn f() -> int {{ return {}1{}; }}", "(".repeat(5000), ")".repeat(5000));
        assert!(parse_program(&src).is_err());
    }
}
