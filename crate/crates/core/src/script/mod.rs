//! A small URScript dialect: enough to run extension snippets on the simulated controller.
//!
//! Blocks are delimited by `:` … `end`, numbers are doubles, and the only way a
//! snippet can affect the outside world is through the builtins installed in its
//! [`Env`].

mod ast;
mod eval;
mod lexer;
mod parser;

use thiserror::Error;

pub use ast::{pretty_print, Arg, BinOp, Expr, ExprKind, Program, Stmt, StmtKind, Target, UnaryOp};
pub use eval::{
    evaluate, Builtin, CollectingHost, Env, ScriptHost, Value, CORE_BUILTINS, DEFAULT_STEP_BUDGET,
};
pub use lexer::{tokenize, Token, TokenKind, KEYWORDS};
pub use parser::parse;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScriptError {
    #[error("line {line}, column {column}: {message}")]
    Lex { line: usize, column: usize, message: String },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: {message}")]
    Runtime { line: usize, message: String },
    #[error("{0}")]
    Builtin(String),
}

impl ScriptError {
    pub(crate) fn lex(line: usize, column: usize, message: impl Into<String>) -> Self {
        ScriptError::Lex {
            line,
            column,
            message: message.into(),
        }
    }

    pub(crate) fn syntax(line: usize, message: impl Into<String>) -> Self {
        ScriptError::Syntax {
            line,
            message: message.into(),
        }
    }

    pub(crate) fn runtime(line: usize, message: impl Into<String>) -> Self {
        ScriptError::Runtime {
            line,
            message: message.into(),
        }
    }

    /// Source line the error refers to; 0 for errors not tied to source.
    pub fn line(&self) -> usize {
        match self {
            ScriptError::Lex { line, .. } | ScriptError::Syntax { line, .. } | ScriptError::Runtime { line, .. } => {
                *line
            }
            ScriptError::Builtin(_) => 0,
        }
    }
}

/// Tokenize and parse in one step.
pub fn compile(source: &str) -> Result<Program, ScriptError> {
    parse(&tokenize(source)?)
}
