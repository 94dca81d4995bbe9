use super::ast::*;
use super::lexer::{Token, TokenKind};
use super::ScriptError;

/// Recursive-descent parser over a token stream from [`super::tokenize`].
pub fn parse(tokens: &[Token]) -> Result<Program, ScriptError> {
    if tokens.last().map(|t| t.kind) != Some(TokenKind::Eof) {
        return Err(ScriptError::syntax(1, "token stream must end with EOF"));
    }
    let mut p = Parser { tokens, pos: 0 };
    let mut body = Vec::new();
    loop {
        p.skip_newlines();
        if p.peek().kind == TokenKind::Eof {
            break;
        }
        body.push(p.statement(true)?);
    }
    Ok(Program { body })
}

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
}

fn describe(t: &Token) -> String {
    match t.kind {
        TokenKind::Eof => "end of input".into(),
        TokenKind::Newline => "end of line".into(),
        TokenKind::Str => format!("string \"{}\"", t.text),
        _ => format!("'{}'", t.text),
    }
}

impl<'a> Parser<'a> {
    fn peek(&self) -> &'a Token {
        &self.tokens[self.pos]
    }

    fn peek_at(&self, offset: usize) -> &'a Token {
        &self.tokens[(self.pos + offset).min(self.tokens.len() - 1)]
    }

    fn advance(&mut self) -> &'a Token {
        let t = &self.tokens[self.pos];
        if t.kind != TokenKind::Eof {
            self.pos += 1;
        }
        t
    }

    fn at(&self, kind: TokenKind, text: &str) -> bool {
        self.peek().is(kind, text)
    }

    fn at_op(&self, op: &str) -> bool {
        self.at(TokenKind::Op, op)
    }

    fn at_kw(&self, kw: &str) -> bool {
        self.at(TokenKind::Keyword, kw)
    }

    fn error_here(&self, expected: &str) -> ScriptError {
        let t = self.peek();
        ScriptError::syntax(t.line, format!("expected {expected}, found {}", describe(t)))
    }

    fn expect(&mut self, kind: TokenKind, text: &str) -> Result<&'a Token, ScriptError> {
        if self.at(kind, text) {
            Ok(self.advance())
        } else {
            Err(self.error_here(&format!("'{text}'")))
        }
    }

    fn ident(&mut self, what: &str) -> Result<&'a Token, ScriptError> {
        if self.peek().kind == TokenKind::Ident {
            Ok(self.advance())
        } else {
            Err(self.error_here(what))
        }
    }

    fn skip_newlines(&mut self) {
        while self.peek().kind == TokenKind::Newline {
            self.advance();
        }
    }

    fn end_of_statement(&mut self) -> Result<(), ScriptError> {
        match self.peek().kind {
            TokenKind::Newline => {
                self.advance();
                Ok(())
            }
            TokenKind::Eof => Ok(()),
            // Allows one-line blocks such as `if x: y = 1 end`.
            TokenKind::Keyword if ["end", "elif", "else"].contains(&self.peek().text.as_str()) => Ok(()),
            _ => Err(self.error_here("end of line")),
        }
    }

    /// Statements up to (not including) one of the `stops` keywords.
    fn block(&mut self, stops: &[&str]) -> Result<Vec<Stmt>, ScriptError> {
        let mut body = Vec::new();
        loop {
            self.skip_newlines();
            let t = self.peek();
            if t.kind == TokenKind::Keyword && stops.contains(&t.text.as_str()) {
                return Ok(body);
            }
            if t.kind == TokenKind::Eof {
                return Err(ScriptError::syntax(t.line, "expected 'end'"));
            }
            body.push(self.statement(false)?);
        }
    }

    fn statement(&mut self, top_level: bool) -> Result<Stmt, ScriptError> {
        let t = self.peek();
        let line = t.line;
        let kind = match (t.kind, t.text.as_str()) {
            (TokenKind::Keyword, "def") => {
                if !top_level {
                    return Err(ScriptError::syntax(line, "function definitions are only allowed at top level"));
                }
                self.funcdef()?
            }
            (TokenKind::Keyword, "if") => self.if_stmt()?,
            (TokenKind::Keyword, "while") => {
                self.advance();
                let cond = self.expr()?;
                self.expect(TokenKind::Op, ":")?;
                let body = self.block(&["end"])?;
                self.advance();
                StmtKind::While { cond, body }
            }
            (TokenKind::Keyword, "return") => {
                self.advance();
                let value = match self.peek().kind {
                    TokenKind::Newline | TokenKind::Eof => None,
                    TokenKind::Keyword if self.at_kw("end") || self.at_kw("elif") || self.at_kw("else") => None,
                    _ => Some(self.expr()?),
                };
                StmtKind::Return(value)
            }
            (TokenKind::Ident, _) if self.peek_at(1).is(TokenKind::Op, "=") => {
                let name = self.advance().text.clone();
                self.advance();
                StmtKind::Assign {
                    target: Target::Var(name),
                    value: self.expr()?,
                }
            }
            (TokenKind::Ident, _) if self.peek_at(1).is(TokenKind::Op, "[") && self.index_assignment_ahead() => {
                let name = self.advance().text.clone();
                self.advance();
                let index = self.expr()?;
                self.expect(TokenKind::Op, "]")?;
                self.expect(TokenKind::Op, "=")?;
                StmtKind::Assign {
                    target: Target::Index { name, index },
                    value: self.expr()?,
                }
            }
            (TokenKind::Keyword, "end" | "elif" | "else") => {
                return Err(ScriptError::syntax(line, format!("unexpected '{}'", t.text)))
            }
            _ => StmtKind::Expr(self.expr()?),
        };
        self.end_of_statement()?;
        Ok(Stmt { kind, line })
    }

    /// Whether `name[...]` at the cursor is followed by `=` (an index assignment).
    fn index_assignment_ahead(&self) -> bool {
        let mut depth = 0usize;
        for (k, t) in self.tokens[self.pos + 1..].iter().enumerate() {
            match (t.kind, t.text.as_str()) {
                (TokenKind::Op, "[" | "(") => depth += 1,
                (TokenKind::Op, "]" | ")") => {
                    depth = depth.saturating_sub(1);
                    if depth == 0 {
                        return self.peek_at(k + 2).is(TokenKind::Op, "=");
                    }
                }
                (TokenKind::Newline | TokenKind::Eof, _) => return false,
                _ => {}
            }
        }
        false
    }

    fn funcdef(&mut self) -> Result<StmtKind, ScriptError> {
        self.advance();
        let name = self.ident("function name")?.text.clone();
        self.expect(TokenKind::Op, "(")?;
        let mut params = Vec::new();
        if !self.at_op(")") {
            loop {
                let p = self.ident("parameter name")?;
                if params.contains(&p.text) {
                    return Err(ScriptError::syntax(p.line, format!("duplicate parameter '{}'", p.text)));
                }
                params.push(p.text.clone());
                if !self.at_op(",") {
                    break;
                }
                self.advance();
            }
        }
        self.expect(TokenKind::Op, ")")?;
        self.expect(TokenKind::Op, ":")?;
        let body = self.block(&["end"])?;
        self.advance();
        Ok(StmtKind::FuncDef { name, params, body })
    }

    fn if_stmt(&mut self) -> Result<StmtKind, ScriptError> {
        self.advance();
        let mut arms = Vec::new();
        let mut else_body = None;
        let cond = self.expr()?;
        self.expect(TokenKind::Op, ":")?;
        arms.push((cond, self.block(&["elif", "else", "end"])?));
        loop {
            let kw = self.advance();
            match kw.text.as_str() {
                "elif" => {
                    let cond = self.expr()?;
                    self.expect(TokenKind::Op, ":")?;
                    arms.push((cond, self.block(&["elif", "else", "end"])?));
                }
                "else" => {
                    self.expect(TokenKind::Op, ":")?;
                    else_body = Some(self.block(&["end"])?);
                    self.advance();
                    break;
                }
                _ => break,
            }
        }
        Ok(StmtKind::If { arms, else_body })
    }

    pub fn expr(&mut self) -> Result<Expr, ScriptError> {
        self.binary(PREC_OR)
    }

    fn binary_op(&self, level: u8) -> Option<BinOp> {
        let t = self.peek();
        let op = match (t.kind, t.text.as_str()) {
            (TokenKind::Keyword, "or") => BinOp::Or,
            (TokenKind::Keyword, "and") => BinOp::And,
            (TokenKind::Op, "==") => BinOp::Eq,
            (TokenKind::Op, "!=") => BinOp::Ne,
            (TokenKind::Op, "<") => BinOp::Lt,
            (TokenKind::Op, "<=") => BinOp::Le,
            (TokenKind::Op, ">") => BinOp::Gt,
            (TokenKind::Op, ">=") => BinOp::Ge,
            (TokenKind::Op, "+") => BinOp::Add,
            (TokenKind::Op, "-") => BinOp::Sub,
            (TokenKind::Op, "*") => BinOp::Mul,
            (TokenKind::Op, "/") => BinOp::Div,
            (TokenKind::Op, "%") => BinOp::Mod,
            _ => return None,
        };
        (op.precedence() == level).then_some(op)
    }

    fn operand(&mut self, level: u8) -> Result<Expr, ScriptError> {
        match level {
            PREC_OR => self.binary(PREC_AND),
            PREC_AND => self.not_expr(),
            PREC_CMP => self.binary(PREC_ADD),
            PREC_ADD => self.binary(PREC_MUL),
            _ => self.unary(),
        }
    }

    /// Left-associative binary operators at one precedence level.
    fn binary(&mut self, level: u8) -> Result<Expr, ScriptError> {
        let mut lhs = self.operand(level)?;
        while let Some(op) = self.binary_op(level) {
            let line = self.advance().line;
            let rhs = self.operand(level)?;
            lhs = Expr::new(
                ExprKind::Binary {
                    op,
                    lhs: Box::new(lhs),
                    rhs: Box::new(rhs),
                },
                line,
            );
        }
        Ok(lhs)
    }

    fn not_expr(&mut self) -> Result<Expr, ScriptError> {
        if self.at_kw("not") {
            let line = self.advance().line;
            let operand = self.not_expr()?;
            return Ok(Expr::new(
                ExprKind::Unary {
                    op: UnaryOp::Not,
                    operand: Box::new(operand),
                },
                line,
            ));
        }
        self.binary(PREC_CMP)
    }

    fn unary(&mut self) -> Result<Expr, ScriptError> {
        if self.at_op("-") {
            let line = self.advance().line;
            let operand = self.unary()?;
            return Ok(Expr::new(
                ExprKind::Unary {
                    op: UnaryOp::Neg,
                    operand: Box::new(operand),
                },
                line,
            ));
        }
        self.postfix()
    }

    fn postfix(&mut self) -> Result<Expr, ScriptError> {
        let mut e = self.atom()?;
        while self.at_op("[") {
            let line = self.advance().line;
            let index = self.expr()?;
            self.expect(TokenKind::Op, "]")?;
            e = Expr::new(
                ExprKind::Index {
                    base: Box::new(e),
                    index: Box::new(index),
                },
                line,
            );
        }
        Ok(e)
    }

    fn atom(&mut self) -> Result<Expr, ScriptError> {
        let t = self.peek();
        let line = t.line;
        let kind = match (t.kind, t.text.as_str()) {
            (TokenKind::Number, text) => {
                self.advance();
                ExprKind::Number(text.parse().expect("lexer validated number"))
            }
            (TokenKind::Str, text) => {
                self.advance();
                ExprKind::Str(text.to_string())
            }
            (TokenKind::Keyword, "True") => {
                self.advance();
                ExprKind::Bool(true)
            }
            (TokenKind::Keyword, "False") => {
                self.advance();
                ExprKind::Bool(false)
            }
            (TokenKind::Ident, name) => {
                self.advance();
                if self.at_op("(") {
                    self.advance();
                    ExprKind::Call {
                        name: name.to_string(),
                        args: self.args()?,
                    }
                } else {
                    ExprKind::Var(name.to_string())
                }
            }
            (TokenKind::Op, "(") => {
                self.advance();
                let inner = self.expr()?;
                self.expect(TokenKind::Op, ")")?;
                return Ok(inner);
            }
            (TokenKind::Op, "[") => {
                self.advance();
                let mut items = Vec::new();
                if !self.at_op("]") {
                    loop {
                        items.push(self.expr()?);
                        if !self.at_op(",") {
                            break;
                        }
                        self.advance();
                    }
                }
                self.expect(TokenKind::Op, "]")?;
                ExprKind::List(items)
            }
            _ => return Err(self.error_here("expression")),
        };
        Ok(Expr::new(kind, line))
    }

    fn args(&mut self) -> Result<Vec<Arg>, ScriptError> {
        let mut args = Vec::new();
        if !self.at_op(")") {
            loop {
                let name = if self.peek().kind == TokenKind::Ident && self.peek_at(1).is(TokenKind::Op, "=") {
                    let n = self.advance().text.clone();
                    self.advance();
                    Some(n)
                } else {
                    None
                };
                args.push(Arg {
                    name,
                    value: self.expr()?,
                });
                if !self.at_op(",") {
                    break;
                }
                self.advance();
            }
        }
        self.expect(TokenKind::Op, ")")?;
        Ok(args)
    }
}
