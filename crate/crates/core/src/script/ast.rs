use std::fmt::{self, Write};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Or,
    And,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Add,
    Sub,
    Mul,
    Div,
    Mod,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Or => "or",
            BinOp::And => "and",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Mod => "%",
        }
    }

    pub(crate) fn precedence(self) -> u8 {
        match self {
            BinOp::Or => PREC_OR,
            BinOp::And => PREC_AND,
            BinOp::Eq | BinOp::Ne | BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => PREC_CMP,
            BinOp::Add | BinOp::Sub => PREC_ADD,
            BinOp::Mul | BinOp::Div | BinOp::Mod => PREC_MUL,
        }
    }
}

pub(crate) const PREC_OR: u8 = 1;
pub(crate) const PREC_AND: u8 = 2;
pub(crate) const PREC_NOT: u8 = 3;
pub(crate) const PREC_CMP: u8 = 4;
pub(crate) const PREC_ADD: u8 = 5;
pub(crate) const PREC_MUL: u8 = 6;
pub(crate) const PREC_NEG: u8 = 7;
const PREC_ATOM: u8 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Not,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    pub kind: ExprKind,
    pub line: usize,
}

/// Call argument; `name` is set for keyword arguments (`a=0.1`).
#[derive(Debug, Clone, PartialEq)]
pub struct Arg {
    pub name: Option<String>,
    pub value: Expr,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExprKind {
    Number(f64),
    Str(String),
    Bool(bool),
    Var(String),
    Call { name: String, args: Vec<Arg> },
    Binary { op: BinOp, lhs: Box<Expr>, rhs: Box<Expr> },
    Unary { op: UnaryOp, operand: Box<Expr> },
    /// `[a, b, c]` — parsed so URScript pose code is readable, rejected at run time.
    List(Vec<Expr>),
    /// `base[index]` — parsed, rejected at run time.
    Index { base: Box<Expr>, index: Box<Expr> },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Var(String),
    Index { name: String, index: Expr },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stmt {
    pub kind: StmtKind,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StmtKind {
    FuncDef { name: String, params: Vec<String>, body: Vec<Stmt> },
    Assign { target: Target, value: Expr },
    Expr(Expr),
    If { arms: Vec<(Expr, Vec<Stmt>)>, else_body: Option<Vec<Stmt>> },
    While { cond: Expr, body: Vec<Stmt> },
    Return(Option<Expr>),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Program {
    pub body: Vec<Stmt>,
}

impl Program {
    pub fn functions(&self) -> impl Iterator<Item = &str> {
        self.body.iter().filter_map(|s| match &s.kind {
            StmtKind::FuncDef { name, .. } => Some(name.as_str()),
            _ => None,
        })
    }
}

impl Expr {
    pub fn new(kind: ExprKind, line: usize) -> Self {
        Expr { kind, line }
    }

    fn precedence(&self) -> u8 {
        match &self.kind {
            ExprKind::Binary { op, .. } => op.precedence(),
            ExprKind::Unary { op: UnaryOp::Not, .. } => PREC_NOT,
            ExprKind::Unary { op: UnaryOp::Neg, .. } => PREC_NEG,
            _ => PREC_ATOM,
        }
    }

    fn write_prec(&self, out: &mut String, min: u8) {
        let wrap = self.precedence() < min;
        if wrap {
            out.push('(');
        }
        match &self.kind {
            ExprKind::Number(v) => write!(out, "{v}").unwrap(),
            ExprKind::Str(s) => write_string(out, s),
            ExprKind::Bool(b) => out.push_str(if *b { "True" } else { "False" }),
            ExprKind::Var(n) => out.push_str(n),
            ExprKind::Call { name, args } => {
                out.push_str(name);
                out.push('(');
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    if let Some(n) = &a.name {
                        out.push_str(n);
                        out.push('=');
                    }
                    a.value.write_prec(out, 0);
                }
                out.push(')');
            }
            ExprKind::Binary { op, lhs, rhs } => {
                let p = op.precedence();
                lhs.write_prec(out, p);
                write!(out, " {} ", op.symbol()).unwrap();
                rhs.write_prec(out, p + 1);
            }
            ExprKind::Unary { op: UnaryOp::Not, operand } => {
                out.push_str("not ");
                operand.write_prec(out, PREC_NOT);
            }
            ExprKind::Unary { op: UnaryOp::Neg, operand } => {
                out.push('-');
                operand.write_prec(out, PREC_NEG);
            }
            ExprKind::List(items) => {
                out.push('[');
                for (i, e) in items.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    e.write_prec(out, 0);
                }
                out.push(']');
            }
            ExprKind::Index { base, index } => {
                base.write_prec(out, PREC_ATOM);
                out.push('[');
                index.write_prec(out, 0);
                out.push(']');
            }
        }
        if wrap {
            out.push(')');
        }
    }
}

fn write_string(out: &mut String, s: &str) {
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out.push('"');
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        self.write_prec(&mut s, 0);
        f.write_str(&s)
    }
}

fn write_block(out: &mut String, body: &[Stmt], indent: usize) {
    for s in body {
        s.write(out, indent);
    }
}

impl Stmt {
    fn write(&self, out: &mut String, indent: usize) {
        let pad = "  ".repeat(indent);
        out.push_str(&pad);
        match &self.kind {
            StmtKind::FuncDef { name, params, body } => {
                writeln!(out, "def {name}({}):", params.join(", ")).unwrap();
                write_block(out, body, indent + 1);
                writeln!(out, "{pad}end").unwrap();
            }
            StmtKind::Assign { target, value } => match target {
                Target::Var(n) => writeln!(out, "{n} = {value}").unwrap(),
                Target::Index { name, index } => writeln!(out, "{name}[{index}] = {value}").unwrap(),
            },
            StmtKind::Expr(e) => writeln!(out, "{e}").unwrap(),
            StmtKind::If { arms, else_body } => {
                for (i, (cond, body)) in arms.iter().enumerate() {
                    if i == 0 {
                        writeln!(out, "if {cond}:").unwrap();
                    } else {
                        writeln!(out, "{pad}elif {cond}:").unwrap();
                    }
                    write_block(out, body, indent + 1);
                }
                if let Some(body) = else_body {
                    writeln!(out, "{pad}else:").unwrap();
                    write_block(out, body, indent + 1);
                }
                writeln!(out, "{pad}end").unwrap();
            }
            StmtKind::While { cond, body } => {
                writeln!(out, "while {cond}:").unwrap();
                write_block(out, body, indent + 1);
                writeln!(out, "{pad}end").unwrap();
            }
            StmtKind::Return(None) => out.push_str("return\n"),
            StmtKind::Return(Some(e)) => writeln!(out, "return {e}").unwrap(),
        }
    }
}

/// Source text that parses back to the same tree (up to line numbers).
pub fn pretty_print(program: &Program) -> String {
    let mut out = String::new();
    write_block(&mut out, &program.body, 0);
    out
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&pretty_print(self))
    }
}
