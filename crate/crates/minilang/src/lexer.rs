//! Tokenizer for MiniLang source text.

use std::fmt;

use crate::error::{Diagnostic, Pos};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TokenKind {
    Ident(String),
    Int(i64),
    Str(String),
    Keyword(Keyword),
    Punct(Punct),
    Eof,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Keyword {
    Fn,
    Let,
    If,
    Else,
    While,
    Return,
    True,
    False,
    Int,
    Bool,
    String,
}

/// Reserved words of the language, in the order they appear in [`Keyword`].
pub const KEYWORDS: &[&str] = &[
    "fn", "let", "if", "else", "while", "return", "true", "false", "int", "bool", "string",
];

impl Keyword {
    fn from_word(word: &str) -> Option<Self> {
        Some(match word {
            "fn" => Keyword::Fn,
            "let" => Keyword::Let,
            "if" => Keyword::If,
            "else" => Keyword::Else,
            "while" => Keyword::While,
            "return" => Keyword::Return,
            "true" => Keyword::True,
            "false" => Keyword::False,
            "int" => Keyword::Int,
            "bool" => Keyword::Bool,
            "string" => Keyword::String,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        KEYWORDS[self as usize]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Punct {
    LParen,
    RParen,
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Comma,
    Semi,
    Colon,
    Arrow,
    Plus,
    Minus,
    Star,
    Slash,
    Percent,
    EqEq,
    NotEq,
    Lt,
    Le,
    Gt,
    Ge,
    AndAnd,
    OrOr,
    Bang,
    Assign,
}

impl Punct {
    pub fn as_str(self) -> &'static str {
        match self {
            Punct::LParen => "(",
            Punct::RParen => ")",
            Punct::LBrace => "{",
            Punct::RBrace => "}",
            Punct::LBracket => "[",
            Punct::RBracket => "]",
            Punct::Comma => ",",
            Punct::Semi => ";",
            Punct::Colon => ":",
            Punct::Arrow => "->",
            Punct::Plus => "+",
            Punct::Minus => "-",
            Punct::Star => "*",
            Punct::Slash => "/",
            Punct::Percent => "%",
            Punct::EqEq => "==",
            Punct::NotEq => "!=",
            Punct::Lt => "<",
            Punct::Le => "<=",
            Punct::Gt => ">",
            Punct::Ge => ">=",
            Punct::AndAnd => "&&",
            Punct::OrOr => "||",
            Punct::Bang => "!",
            Punct::Assign => "=",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub kind: TokenKind,
    pub pos: Pos,
}

impl fmt::Display for TokenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokenKind::Ident(name) => write!(f, "identifier `{name}`"),
            TokenKind::Int(v) => write!(f, "integer `{v}`"),
            TokenKind::Str(_) => write!(f, "string literal"),
            TokenKind::Keyword(k) => write!(f, "`{}`", k.as_str()),
            TokenKind::Punct(p) => write!(f, "`{}`", p.as_str()),
            TokenKind::Eof => write!(f, "end of input"),
        }
    }
}

impl TokenKind {
    /// Surface text of the token as it would be written in source.
    pub fn text(&self) -> String {
        match self {
            TokenKind::Ident(name) => name.clone(),
            TokenKind::Int(v) => v.to_string(),
            TokenKind::Str(s) => serde_json::to_string(s).unwrap_or_default(),
            TokenKind::Keyword(k) => k.as_str().to_string(),
            TokenKind::Punct(p) => p.as_str().to_string(),
            TokenKind::Eof => String::new(),
        }
    }
}

struct Lexer<'a> {
    src: &'a str,
    bytes: &'a [u8],
    offset: usize,
    line: u32,
    col: u32,
}

impl<'a> Lexer<'a> {
    fn pos(&self) -> Pos {
        Pos { line: self.line, col: self.col }
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.offset).copied()
    }

    fn peek_at(&self, ahead: usize) -> Option<u8> {
        self.bytes.get(self.offset + ahead).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let ch = self.src[self.offset..].chars().next()?;
        self.offset += ch.len_utf8();
        if ch == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(ch)
    }

    fn skip_trivia(&mut self) {
        loop {
            match self.peek() {
                Some(b' ' | b'\t' | b'\r' | b'\n') => {
                    self.bump();
                }
                Some(b'/') if self.peek_at(1) == Some(b'/') => {
                    while let Some(b) = self.peek() {
                        if b == b'\n' {
                            break;
                        }
                        self.bump();
                    }
                }
                _ => return,
            }
        }
    }

    fn next_token(&mut self) -> Result<Token, Diagnostic> {
        self.skip_trivia();
        let pos = self.pos();
        let Some(b) = self.peek() else {
            return Ok(Token { kind: TokenKind::Eof, pos });
        };
        let kind = if b.is_ascii_alphabetic() || b == b'_' {
            let start = self.offset;
            while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || c == b'_') {
                self.bump();
            }
            let word = &self.src[start..self.offset];
            match Keyword::from_word(word) {
                Some(k) => TokenKind::Keyword(k),
                None => TokenKind::Ident(word.to_string()),
            }
        } else if b.is_ascii_digit() {
            let start = self.offset;
            while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                self.bump();
            }
            let digits = &self.src[start..self.offset];
            let value = digits
                .parse::<i64>()
                .map_err(|_| Diagnostic::new(pos, format!("integer literal `{digits}` out of range")))?;
            TokenKind::Int(value)
        } else if b == b'"' {
            self.bump();
            let mut out = String::new();
            loop {
                match self.bump() {
                    None | Some('\n') => {
                        return Err(Diagnostic::new(pos, "unterminated string literal"));
                    }
                    Some('"') => break,
                    Some('\\') => {
                        let esc = self.bump();
                        out.push(match esc {
                            Some('n') => '\n',
                            Some('t') => '\t',
                            Some('"') => '"',
                            Some('\\') => '\\',
                            _ => {
                                return Err(Diagnostic::new(self.pos(), "unknown escape sequence"));
                            }
                        });
                    }
                    Some(c) => out.push(c),
                }
            }
            TokenKind::Str(out)
        } else {
            TokenKind::Punct(self.punct(pos)?)
        };
        Ok(Token { kind, pos })
    }

    fn punct(&mut self, pos: Pos) -> Result<Punct, Diagnostic> {
        let two = |a: u8, b: u8| (a, b);
        let first = self.peek().unwrap_or(0);
        let second = self.peek_at(1).unwrap_or(0);
        let double = match two(first, second) {
            (b'-', b'>') => Some(Punct::Arrow),
            (b'=', b'=') => Some(Punct::EqEq),
            (b'!', b'=') => Some(Punct::NotEq),
            (b'<', b'=') => Some(Punct::Le),
            (b'>', b'=') => Some(Punct::Ge),
            (b'&', b'&') => Some(Punct::AndAnd),
            (b'|', b'|') => Some(Punct::OrOr),
            _ => None,
        };
        if let Some(p) = double {
            self.bump();
            self.bump();
            return Ok(p);
        }
        let single = match first {
            b'(' => Punct::LParen,
            b')' => Punct::RParen,
            b'{' => Punct::LBrace,
            b'}' => Punct::RBrace,
            b'[' => Punct::LBracket,
            b']' => Punct::RBracket,
            b',' => Punct::Comma,
            b';' => Punct::Semi,
            b':' => Punct::Colon,
            b'+' => Punct::Plus,
            b'-' => Punct::Minus,
            b'*' => Punct::Star,
            b'/' => Punct::Slash,
            b'%' => Punct::Percent,
            b'<' => Punct::Lt,
            b'>' => Punct::Gt,
            b'!' => Punct::Bang,
            b'=' => Punct::Assign,
            _ => {
                let ch = self.src[self.offset..].chars().next().unwrap_or('?');
                return Err(Diagnostic::new(pos, format!("unexpected character `{ch}`")));
            }
        };
        self.bump();
        Ok(single)
    }
}

/// Splits source text into tokens, ending with a single [`TokenKind::Eof`].
pub fn tokenize(src: &str) -> Result<Vec<Token>, Diagnostic> {
    let mut lexer = Lexer { src, bytes: src.as_bytes(), offset: 0, line: 1, col: 1 };
    let mut out = Vec::new();
    loop {
        let tok = lexer.next_token()?;
        let eof = tok.kind == TokenKind::Eof;
        out.push(tok);
        if eof {
            return Ok(out);
        }
    }
}

/// Best-effort surface tokens for arbitrary text: MiniLang tokens when the text
/// lexes, otherwise maximal runs of word characters and single punctuation marks.
pub fn surface_tokens(src: &str) -> Vec<String> {
    if let Ok(tokens) = tokenize(src) {
        return tokens
            .into_iter()
            .filter(|t| t.kind != TokenKind::Eof)
            .map(|t| t.kind.text())
            .collect();
    }
    let mut out = Vec::new();
    let mut word = String::new();
    for ch in src.chars() {
        if ch.is_alphanumeric() || ch == '_' {
            word.push(ch);
            continue;
        }
        if !word.is_empty() {
            out.push(std::mem::take(&mut word));
        }
        if !ch.is_whitespace() {
            out.push(ch.to_string());
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}
