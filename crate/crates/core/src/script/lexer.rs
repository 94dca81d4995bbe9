use super::ScriptError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Ident,
    Number,
    Str,
    Op,
    Keyword,
    Newline,
    Eof,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub kind: TokenKind,
    /// Source text; for strings, the unescaped contents.
    pub text: String,
    pub line: usize,
    pub column: usize,
}

impl Token {
    pub fn is(&self, kind: TokenKind, text: &str) -> bool {
        self.kind == kind && self.text == text
    }
}

pub const KEYWORDS: &[&str] = &[
    "def", "end", "if", "elif", "else", "while", "return", "and", "or", "not", "True", "False",
];

const TWO_CHAR_OPS: &[&str] = &["==", "!=", "<=", ">="];
const ONE_CHAR_OPS: &str = "=<>+-*/%(),:[]";

/// Splits source into tokens. Newlines inside brackets are not statement separators.
/// The stream always ends with an `Eof` token placed on the last line that holds a token.
pub fn tokenize(source: &str) -> Result<Vec<Token>, ScriptError> {
    let chars: Vec<char> = source.chars().collect();
    let mut tokens: Vec<Token> = Vec::new();
    let (mut i, mut line, mut col) = (0, 1, 1);
    let mut depth = 0usize;
    while i < chars.len() {
        let c = chars[i];
        let (start_line, start_col) = (line, col);
        let mut push = |kind, text: String| {
            tokens.push(Token {
                kind,
                text,
                line: start_line,
                column: start_col,
            })
        };
        match c {
            '\n' => {
                if depth == 0 {
                    push(TokenKind::Newline, "\n".into());
                }
                i += 1;
                line += 1;
                col = 1;
            }
            ' ' | '\t' | '\r' => {
                i += 1;
                col += 1;
            }
            '#' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                    col += 1;
                }
            }
            '"' | '\'' => {
                let quote = c;
                let mut text = String::new();
                i += 1;
                col += 1;
                loop {
                    match chars.get(i) {
                        None | Some('\n') => {
                            return Err(ScriptError::lex(start_line, start_col, "unterminated string"))
                        }
                        Some(&ch) if ch == quote => {
                            i += 1;
                            col += 1;
                            break;
                        }
                        Some('\\') => {
                            let esc = match chars.get(i + 1) {
                                Some('n') => '\n',
                                Some('t') => '\t',
                                Some('\\') => '\\',
                                Some('"') => '"',
                                Some('\'') => '\'',
                                _ => return Err(ScriptError::lex(line, col, "invalid escape sequence")),
                            };
                            text.push(esc);
                            i += 2;
                            col += 2;
                        }
                        Some(&ch) => {
                            text.push(ch);
                            i += 1;
                            col += 1;
                        }
                    }
                }
                push(TokenKind::Str, text);
            }
            c if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    i += 1;
                }
                if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                    let mut j = i + 1;
                    if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                        j += 1;
                    }
                    if j < chars.len() && chars[j].is_ascii_digit() {
                        i = j;
                        while i < chars.len() && chars[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text: String = chars[start..i].iter().collect();
                if text.parse::<f64>().is_err() {
                    return Err(ScriptError::lex(start_line, start_col, format!("malformed number '{text}'")));
                }
                col += i - start;
                push(TokenKind::Number, text);
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                let text: String = chars[start..i].iter().collect();
                col += i - start;
                let kind = if KEYWORDS.contains(&text.as_str()) {
                    TokenKind::Keyword
                } else {
                    TokenKind::Ident
                };
                push(kind, text);
            }
            _ => {
                let pair: String = chars[i..(i + 2).min(chars.len())].iter().collect();
                if TWO_CHAR_OPS.contains(&pair.as_str()) {
                    push(TokenKind::Op, pair);
                    i += 2;
                    col += 2;
                } else if ONE_CHAR_OPS.contains(c) {
                    match c {
                        '(' | '[' => depth += 1,
                        ')' | ']' => depth = depth.saturating_sub(1),
                        _ => {}
                    }
                    push(TokenKind::Op, c.to_string());
                    i += 1;
                    col += 1;
                } else {
                    return Err(ScriptError::lex(line, col, format!("illegal character '{c}'")));
                }
            }
        }
    }
    let last_line = tokens
        .iter()
        .rev()
        .find(|t| t.kind != TokenKind::Newline)
        .map_or(1, |t| t.line);
    tokens.push(Token {
        kind: TokenKind::Eof,
        text: String::new(),
        line: last_line,
        column: 1,
    });
    Ok(tokens)
}
