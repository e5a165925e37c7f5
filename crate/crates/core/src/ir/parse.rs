//! Parser for the textual IR.
//!
//! The format is line-oriented: one declaration or statement per line, `#`
//! starts a comment outside of string literals. The parser never panics on
//! malformed input; every failure is a [`ParseError`] with line and column.

use std::collections::BTreeMap;

use thiserror::Error;

use super::{
    Arg, Const, FieldDecl, FieldRef, IRClass, IRMethod, IRProgram, IRStatement, InvokeKind,
    LocalDecl, MethodSig, Operand, Relop,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseErrorKind {
    Syntax,
    DuplicateClass,
    DuplicateField,
    DuplicateLocal,
    DuplicateLabel,
    DuplicateCase,
    DanglingLabel,
    UndeclaredLocal,
    ReservedName,
    ArityMismatch,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("line {line}, column {column}: {message}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl ParseError {
    fn new(kind: ParseErrorKind, line: usize, column: usize, message: impl Into<String>) -> Self {
        Self {
            kind,
            line,
            column,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    /// Identifier or dotted/hashed path such as `x`, `a.b.C`, `a.b.C#f`.
    Word(String),
    Int(i64),
    Float(f64),
    Str(String),
    Punct(char),
    Relop(Relop),
    Assign,
}

impl Token {
    fn describe(&self) -> String {
        match self {
            Token::Word(w) => format!("`{w}`"),
            Token::Int(v) => format!("`{v}`"),
            Token::Float(v) => format!("`{v}`"),
            Token::Str(_) => "string literal".into(),
            Token::Punct(c) => format!("`{c}`"),
            Token::Relop(r) => format!("`{r}`"),
            Token::Assign => "`=`".into(),
        }
    }
}

fn is_word_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_' || c == '$'
}

fn is_word_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '$' || c == '.' || c == '#'
}

/// Tokenize one line. Columns are 1-based char offsets.
fn lex_line(line: &str, line_no: usize) -> Result<Vec<(Token, usize)>, ParseError> {
    let mut tokens = Vec::new();
    let chars: Vec<char> = line.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c == '#' {
            // Comment only when `#` starts a token; `a.b#f` is handled by the
            // word lexer below because words never start with `#`.
            break;
        }
        if is_word_start(c) {
            let start = i;
            while i < chars.len() && is_word_char(chars[i]) {
                i += 1;
            }
            let word: String = chars[start..i].iter().collect();
            tokens.push((Token::Word(word), col));
            continue;
        }
        if c.is_ascii_digit() || (c == '-' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()))
        {
            let start = i;
            i += 1;
            let mut is_float = false;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                if chars[i] == '.' {
                    is_float = true;
                }
                i += 1;
            }
            let text: String = chars[start..i].iter().collect();
            let token = if is_float {
                Token::Float(text.parse().map_err(|_| {
                    ParseError::new(
                        ParseErrorKind::Syntax,
                        line_no,
                        col,
                        format!("bad float literal `{text}`"),
                    )
                })?)
            } else {
                Token::Int(text.parse().map_err(|_| {
                    ParseError::new(
                        ParseErrorKind::Syntax,
                        line_no,
                        col,
                        format!("bad integer literal `{text}`"),
                    )
                })?)
            };
            tokens.push((token, col));
            continue;
        }
        if c == '"' {
            i += 1;
            let mut s = String::new();
            let mut closed = false;
            while i < chars.len() {
                match chars[i] {
                    '\\' => {
                        let esc = chars.get(i + 1).copied();
                        match esc {
                            Some('n') => s.push('\n'),
                            Some('t') => s.push('\t'),
                            Some('"') => s.push('"'),
                            Some('\\') => s.push('\\'),
                            _ => {
                                return Err(ParseError::new(
                                    ParseErrorKind::Syntax,
                                    line_no,
                                    i + 1,
                                    "bad escape in string literal",
                                ))
                            }
                        }
                        i += 2;
                    }
                    '"' => {
                        closed = true;
                        i += 1;
                        break;
                    }
                    other => {
                        s.push(other);
                        i += 1;
                    }
                }
            }
            if !closed {
                return Err(ParseError::new(
                    ParseErrorKind::Syntax,
                    line_no,
                    col,
                    "unterminated string literal",
                ));
            }
            tokens.push((Token::Str(s), col));
            continue;
        }
        match c {
            '=' => {
                if chars.get(i + 1) == Some(&'=') {
                    tokens.push((Token::Relop(Relop::Eq), col));
                    i += 2;
                } else {
                    tokens.push((Token::Assign, col));
                    i += 1;
                }
            }
            '!' => {
                if chars.get(i + 1) == Some(&'=') {
                    tokens.push((Token::Relop(Relop::Ne), col));
                    i += 2;
                } else {
                    return Err(ParseError::new(
                        ParseErrorKind::Syntax,
                        line_no,
                        col,
                        "unexpected `!`",
                    ));
                }
            }
            '<' => {
                if chars.get(i + 1) == Some(&'=') {
                    tokens.push((Token::Relop(Relop::Le), col));
                    i += 2;
                } else {
                    tokens.push((Token::Relop(Relop::Lt), col));
                    i += 1;
                }
            }
            '>' => {
                if chars.get(i + 1) == Some(&'=') {
                    tokens.push((Token::Relop(Relop::Ge), col));
                    i += 2;
                } else {
                    tokens.push((Token::Relop(Relop::Gt), col));
                    i += 1;
                }
            }
            '(' | ')' | '{' | '}' | '[' | ']' | '*' | ',' | ':' => {
                tokens.push((Token::Punct(c), col));
                i += 1;
            }
            other => {
                return Err(ParseError::new(
                    ParseErrorKind::Syntax,
                    line_no,
                    col,
                    format!("unexpected character `{other}`"),
                ))
            }
        }
    }
    Ok(tokens)
}

/// Cursor over one line of tokens.
struct Line {
    tokens: Vec<(Token, usize)>,
    pos: usize,
    line_no: usize,
    end_col: usize,
}

impl Line {
    fn lex(text: &str, line_no: usize) -> Result<Self, ParseError> {
        let tokens = lex_line(text, line_no)?;
        let end_col = text.chars().count() + 1;
        Ok(Self {
            tokens,
            pos: 0,
            line_no,
            end_col,
        })
    }

    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|(t, _)| t)
    }

    fn col(&self) -> usize {
        self.tokens
            .get(self.pos)
            .map(|(_, c)| *c)
            .unwrap_or(self.end_col)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).map(|(t, _)| t.clone());
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn err(&self, message: impl Into<String>) -> ParseError {
        ParseError::new(ParseErrorKind::Syntax, self.line_no, self.col(), message)
    }

    fn expect_word(&mut self, what: &str) -> Result<String, ParseError> {
        match self.next() {
            Some(Token::Word(w)) => Ok(w),
            Some(t) => Err(ParseError::new(
                ParseErrorKind::Syntax,
                self.line_no,
                self.tokens[self.pos - 1].1,
                format!("expected {what}, found {}", t.describe()),
            )),
            None => Err(self.err(format!("expected {what}"))),
        }
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<(), ParseError> {
        let w = self.expect_word(&format!("`{kw}`"))?;
        if w == kw {
            Ok(())
        } else {
            Err(ParseError::new(
                ParseErrorKind::Syntax,
                self.line_no,
                self.tokens[self.pos - 1].1,
                format!("expected `{kw}`, found `{w}`"),
            ))
        }
    }

    fn expect_punct(&mut self, c: char) -> Result<(), ParseError> {
        match self.next() {
            Some(Token::Punct(p)) if p == c => Ok(()),
            Some(t) => Err(ParseError::new(
                ParseErrorKind::Syntax,
                self.line_no,
                self.tokens[self.pos - 1].1,
                format!("expected `{c}`, found {}", t.describe()),
            )),
            None => Err(self.err(format!("expected `{c}`"))),
        }
    }

    fn eat_punct(&mut self, c: char) -> bool {
        if self.peek() == Some(&Token::Punct(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_assign(&mut self) -> Result<(), ParseError> {
        match self.next() {
            Some(Token::Assign) => Ok(()),
            Some(t) => Err(ParseError::new(
                ParseErrorKind::Syntax,
                self.line_no,
                self.tokens[self.pos - 1].1,
                format!("expected `=`, found {}", t.describe()),
            )),
            None => Err(self.err("expected `=`")),
        }
    }

    fn expect_end(&self) -> Result<(), ParseError> {
        if self.pos == self.tokens.len() {
            Ok(())
        } else {
            Err(self.err(format!(
                "trailing input: {}",
                self.tokens[self.pos].0.describe()
            )))
        }
    }

    /// Type name: a word plus any number of `[]` suffixes.
    fn expect_type(&mut self) -> Result<String, ParseError> {
        let mut ty = self.expect_word("type name")?;
        while self.eat_punct('[') {
            self.expect_punct(']')?;
            ty.push_str("[]");
        }
        Ok(ty)
    }
}

const RESERVED_LOCALS: &[&str] = &[
    "this", "null", "const", "new", "invoke", "goto", "return", "label", "nop", "if", "switch",
    "default", "on", "with",
];

fn check_local_name(name: &str, line: &Line) -> Result<(), ParseError> {
    if RESERVED_LOCALS.contains(&name) {
        return Err(ParseError::new(
            ParseErrorKind::ReservedName,
            line.line_no,
            1,
            format!("`{name}` is reserved and cannot be declared as a local"),
        ));
    }
    if let Some(rest) = name.strip_prefix('p') {
        if rest.chars().all(|c| c.is_ascii_digit()) && !rest.is_empty() {
            return Err(ParseError::new(
                ParseErrorKind::ReservedName,
                line.line_no,
                1,
                format!("`{name}` is reserved for parameter binding"),
            ));
        }
    }
    Ok(())
}

/// Split `base.some.Class#field` into the base local and the field reference.
fn split_field_access(word: &str, line: &Line) -> Result<(String, FieldRef), ParseError> {
    let Some(dot) = word.find('.') else {
        return Err(line.err(format!(
            "field access `{word}` needs a base local (`base.Class#field`)"
        )));
    };
    let (base, rest) = word.split_at(dot);
    let field = parse_field_ref(&rest[1..], line)?;
    if base.is_empty() {
        return Err(line.err("empty base local in field access"));
    }
    Ok((base.to_string(), field))
}

fn parse_field_ref(text: &str, line: &Line) -> Result<FieldRef, ParseError> {
    let Some(hash) = text.find('#') else {
        return Err(line.err(format!("expected `Class#field`, found `{text}`")));
    };
    let (class_name, field_name) = (&text[..hash], &text[hash + 1..]);
    if class_name.is_empty() || field_name.is_empty() || field_name.contains('#') {
        return Err(line.err(format!("malformed field reference `{text}`")));
    }
    Ok(FieldRef::new(class_name, field_name))
}

/// `Class#name` word followed by a parenthesized parameter type list.
fn parse_method_sig(line: &mut Line) -> Result<MethodSig, ParseError> {
    let word = line.expect_word("method signature")?;
    let Some(hash) = word.find('#') else {
        return Err(line.err(format!("expected `Class#name(params)`, found `{word}`")));
    };
    let (class_name, name) = (&word[..hash], &word[hash + 1..]);
    if class_name.is_empty() || name.is_empty() || name.contains('#') {
        return Err(line.err(format!("malformed method signature `{word}`")));
    }
    line.expect_punct('(')?;
    let mut params = Vec::new();
    if !line.eat_punct(')') {
        loop {
            params.push(line.expect_type()?);
            if line.eat_punct(')') {
                break;
            }
            line.expect_punct(',')?;
        }
    }
    Ok(MethodSig::new(class_name, name, params))
}

/// Parser state for the method currently being read.
struct MethodBuilder {
    method: IRMethod,
    branch_targets: Vec<(String, usize)>, // label, line for diagnostics
    declared: Vec<String>,
}

impl MethodBuilder {
    fn is_known_local(&self, name: &str) -> bool {
        if name == "this" {
            return true;
        }
        if let Some(rest) = name.strip_prefix('p') {
            if let Ok(i) = rest.parse::<usize>() {
                if rest.chars().all(|c| c.is_ascii_digit()) {
                    return i < self.method.params.len();
                }
            }
        }
        self.declared.iter().any(|l| l == name)
    }

    fn check_local(&self, name: &str, line: &Line) -> Result<(), ParseError> {
        if self.is_known_local(name) {
            Ok(())
        } else {
            Err(ParseError::new(
                ParseErrorKind::UndeclaredLocal,
                line.line_no,
                1,
                format!(
                    "local `{name}` is not declared in method `{}`",
                    self.method.name
                ),
            ))
        }
    }
}

struct Parser {
    program: IRProgram,
    current_class: Option<IRClass>,
    current_method: Option<MethodBuilder>,
}

impl Parser {
    fn new() -> Self {
        Self {
            program: IRProgram::default(),
            current_class: None,
            current_method: None,
        }
    }

    fn finish_method(&mut self, line_no: usize) -> Result<(), ParseError> {
        let mut builder = self.current_method.take().expect("method in progress");
        // Methods may not fall off the end; complete them with a bare return.
        if builder
            .method
            .body
            .last()
            .map(|s| s.falls_through())
            .unwrap_or(true)
        {
            builder
                .method
                .body
                .push(IRStatement::Return { value: None });
        }
        for (label, at_line) in &builder.branch_targets {
            if !builder.method.labels.contains_key(label) {
                return Err(ParseError::new(
                    ParseErrorKind::DanglingLabel,
                    *at_line,
                    1,
                    format!("branch target `{label}` has no matching `label` statement"),
                ));
            }
        }
        let class = self.current_class.as_mut().expect("class in progress");
        let _ = line_no;
        class.methods.push(builder.method);
        Ok(())
    }

    fn finish_class(&mut self, line_no: usize) -> Result<(), ParseError> {
        let class = self.current_class.take().expect("class in progress");
        if self.program.classes.iter().any(|c| c.name == class.name) {
            return Err(ParseError::new(
                ParseErrorKind::DuplicateClass,
                line_no,
                1,
                format!("duplicate class `{}`", class.name),
            ));
        }
        self.program.classes.push(class);
        Ok(())
    }

    fn parse_line(&mut self, raw: &str, line_no: usize) -> Result<(), ParseError> {
        let mut line = Line::lex(raw, line_no)?;
        let Some(first) = line.peek().cloned() else {
            return Ok(());
        };

        if first == Token::Punct('}') {
            line.next();
            line.expect_end()?;
            if self.current_method.is_some() {
                self.finish_method(line_no)?;
            } else if self.current_class.is_some() {
                self.finish_class(line_no)?;
            } else {
                return Err(line.err("unmatched `}`"));
            }
            return Ok(());
        }

        let keyword = match &first {
            Token::Word(w) => w.clone(),
            t => return Err(line.err(format!("unexpected {}", t.describe()))),
        };

        if self.current_method.is_some() {
            // `local` declarations and statements.
            if keyword == "local" {
                line.next();
                let ty = line.expect_type()?;
                let name = line.expect_word("local name")?;
                line.expect_end()?;
                check_local_name(&name, &line)?;
                let builder = self.current_method.as_mut().unwrap();
                if builder.declared.iter().any(|l| l == &name) {
                    return Err(ParseError::new(
                        ParseErrorKind::DuplicateLocal,
                        line_no,
                        1,
                        format!("duplicate local `{name}`"),
                    ));
                }
                builder.declared.push(name.clone());
                builder.method.locals.push(LocalDecl { name, ty });
                return Ok(());
            }
            let stmt = self.parse_statement(&mut line, line_no)?;
            line.expect_end()?;
            let builder = self.current_method.as_mut().unwrap();
            if let IRStatement::Label { name } = &stmt {
                let idx = builder.method.body.len();
                if builder.method.labels.insert(name.clone(), idx).is_some() {
                    return Err(ParseError::new(
                        ParseErrorKind::DuplicateLabel,
                        line_no,
                        1,
                        format!("duplicate label `{name}`"),
                    ));
                }
            }
            builder.method.body.push(stmt);
            return Ok(());
        }

        if let Some(class) = &mut self.current_class {
            match keyword.as_str() {
                "field" => {
                    line.next();
                    let ty = line.expect_type()?;
                    let name = line.expect_word("field name")?;
                    line.expect_end()?;
                    if class.fields.iter().any(|f| f.name == name) {
                        return Err(ParseError::new(
                            ParseErrorKind::DuplicateField,
                            line_no,
                            1,
                            format!("duplicate field `{name}` in class `{}`", class.name),
                        ));
                    }
                    class.fields.push(FieldDecl { name, ty });
                    Ok(())
                }
                "method" => {
                    line.next();
                    let ret = line.expect_type()?;
                    let name = line.expect_word("method name")?;
                    line.expect_punct('(')?;
                    let mut params = Vec::new();
                    if !line.eat_punct(')') {
                        loop {
                            params.push(line.expect_type()?);
                            if line.eat_punct(')') {
                                break;
                            }
                            line.expect_punct(',')?;
                        }
                    }
                    line.expect_punct('{')?;
                    line.expect_end()?;
                    self.current_method = Some(MethodBuilder {
                        method: IRMethod {
                            class_name: class.name.clone(),
                            name,
                            params,
                            ret,
                            locals: Vec::new(),
                            body: Vec::new(),
                            labels: BTreeMap::new(),
                        },
                        branch_targets: Vec::new(),
                        declared: Vec::new(),
                    });
                    Ok(())
                }
                other => Err(line.err(format!(
                    "expected `field`, `method` or `}}`, found `{other}`"
                ))),
            }
        } else {
            match keyword.as_str() {
                "class" => {
                    line.next();
                    let name = line.expect_word("class name")?;
                    line.expect_keyword("extends")?;
                    let superclass = line.expect_word("superclass name")?;
                    let mut interfaces = Vec::new();
                    if line.peek() == Some(&Token::Word("implements".into())) {
                        line.next();
                        loop {
                            interfaces.push(line.expect_word("interface name")?);
                            if !line.eat_punct(',') {
                                break;
                            }
                        }
                    }
                    line.expect_punct('{')?;
                    line.expect_end()?;
                    self.current_class = Some(IRClass {
                        name,
                        superclass,
                        interfaces,
                        fields: Vec::new(),
                        methods: Vec::new(),
                    });
                    Ok(())
                }
                "entry" => {
                    line.next();
                    let sig = parse_method_sig(&mut line)?;
                    line.expect_end()?;
                    self.program.entry_hints.push(sig);
                    Ok(())
                }
                other => Err(line.err(format!("expected `class` or `entry`, found `{other}`"))),
            }
        }
    }

    fn parse_statement(
        &mut self,
        line: &mut Line,
        line_no: usize,
    ) -> Result<IRStatement, ParseError> {
        let first = match line.peek() {
            Some(Token::Word(w)) => w.clone(),
            _ => return Err(line.err("expected a statement")),
        };
        match first.as_str() {
            "goto" => {
                line.next();
                let target = line.expect_word("label")?;
                self.record_target(target.clone(), line_no);
                Ok(IRStatement::Goto { target })
            }
            "return" => {
                line.next();
                let value = match line.peek() {
                    Some(Token::Word(w)) => {
                        let w = w.clone();
                        line.next();
                        self.check_local(&w, line)?;
                        Some(w)
                    }
                    _ => None,
                };
                Ok(IRStatement::Return { value })
            }
            "label" => {
                line.next();
                let name = line.expect_word("label name")?;
                Ok(IRStatement::Label { name })
            }
            "nop" => {
                line.next();
                Ok(IRStatement::Nop)
            }
            "if" => {
                line.next();
                let lhs = line.expect_word("local")?;
                self.check_local(&lhs, line)?;
                let relop = match line.next() {
                    Some(Token::Relop(r)) => r,
                    _ => return Err(line.err("expected a comparison operator")),
                };
                let rhs = match line.next() {
                    Some(Token::Word(w)) => {
                        self.check_local(&w, line)?;
                        Operand::Local(w)
                    }
                    Some(Token::Int(v)) => Operand::Int(v),
                    _ => return Err(line.err("expected a local or integer operand")),
                };
                line.expect_keyword("goto")?;
                let target = line.expect_word("label")?;
                self.record_target(target.clone(), line_no);
                Ok(IRStatement::IfCmp {
                    lhs,
                    relop,
                    rhs,
                    target,
                })
            }
            "switch" => {
                line.next();
                let operand = line.expect_word("local")?;
                self.check_local(&operand, line)?;
                line.expect_punct('{')?;
                let mut cases: Vec<(i64, String)> = Vec::new();
                let mut default = None;
                loop {
                    match line.next() {
                        Some(Token::Punct('}')) => break,
                        Some(Token::Int(v)) => {
                            line.expect_punct(':')?;
                            let label = line.expect_word("label")?;
                            if cases.iter().any(|(c, _)| *c == v) {
                                return Err(ParseError::new(
                                    ParseErrorKind::DuplicateCase,
                                    line_no,
                                    1,
                                    format!("duplicate switch case `{v}`"),
                                ));
                            }
                            self.record_target(label.clone(), line_no);
                            cases.push((v, label));
                        }
                        Some(Token::Word(w)) if w == "default" => {
                            line.expect_punct(':')?;
                            let label = line.expect_word("label")?;
                            if default.is_some() {
                                return Err(line.err("duplicate `default` case"));
                            }
                            self.record_target(label.clone(), line_no);
                            default = Some(label);
                        }
                        _ => return Err(line.err("expected a case, `default` or `}`")),
                    }
                }
                let Some(default) = default else {
                    return Err(line.err("switch needs a `default` case"));
                };
                Ok(IRStatement::Switch {
                    operand,
                    cases,
                    default,
                })
            }
            "invoke" => self.parse_invoke(None, line),
            _ => self.parse_assignment(line),
        }
    }

    fn parse_assignment(&mut self, line: &mut Line) -> Result<IRStatement, ParseError> {
        let lhs = line.expect_word("statement")?;
        if lhs.contains('#') {
            // store-field: base.Class#field = src
            let (base, field) = split_field_access(&lhs, line)?;
            self.check_local(&base, line)?;
            line.expect_assign()?;
            let src = line.expect_word("source local")?;
            self.check_local(&src, line)?;
            return Ok(IRStatement::StoreField { base, field, src });
        }
        if line.eat_punct('[') {
            // store-array: base[*] = src
            line.expect_punct('*')?;
            line.expect_punct(']')?;
            self.check_local(&lhs, line)?;
            line.expect_assign()?;
            let src = line.expect_word("source local")?;
            self.check_local(&src, line)?;
            return Ok(IRStatement::StoreArray { base: lhs, src });
        }
        self.check_local(&lhs, line)?;
        line.expect_assign()?;
        match line.peek().cloned() {
            Some(Token::Word(w)) if w == "const" => {
                line.next();
                let value = match line.next() {
                    Some(Token::Int(v)) => Const::Int(v),
                    Some(Token::Float(v)) => Const::Float(v),
                    Some(Token::Str(s)) => Const::Str(s),
                    Some(Token::Word(w)) if w == "null" => Const::Null,
                    _ => return Err(line.err("expected a literal after `const`")),
                };
                Ok(IRStatement::AssignConst { dest: lhs, value })
            }
            Some(Token::Word(w)) if w == "new" => {
                line.next();
                // array allocations spell the element type: `new float[]`
                let class_name = line.expect_type()?;
                Ok(IRStatement::NewObject {
                    dest: lhs,
                    class_name,
                })
            }
            Some(Token::Word(w)) if w == "invoke" => self.parse_invoke(Some(lhs), line),
            Some(Token::Word(w)) if w.contains('#') => {
                line.next();
                let (base, field) = split_field_access(&w, line)?;
                self.check_local(&base, line)?;
                Ok(IRStatement::LoadField {
                    dest: lhs,
                    base,
                    field,
                })
            }
            Some(Token::Word(w)) => {
                line.next();
                self.check_local(&w, line)?;
                if line.eat_punct('[') {
                    line.expect_punct('*')?;
                    line.expect_punct(']')?;
                    Ok(IRStatement::LoadArray { dest: lhs, base: w })
                } else {
                    Ok(IRStatement::AssignLocal { dest: lhs, src: w })
                }
            }
            _ => Err(line.err("expected `const`, `new`, `invoke`, a local or a field access")),
        }
    }

    fn parse_invoke(
        &mut self,
        result: Option<String>,
        line: &mut Line,
    ) -> Result<IRStatement, ParseError> {
        line.expect_keyword("invoke")?;
        let kind = match line.expect_word("invoke kind")?.as_str() {
            "static" => InvokeKind::Static,
            "virtual" => InvokeKind::Virtual,
            "interface" => InvokeKind::Interface,
            other => return Err(line.err(format!("unknown invoke kind `{other}`"))),
        };
        let sig = parse_method_sig(line)?;
        let receiver = if line.peek() == Some(&Token::Word("on".into())) {
            line.next();
            let r = line.expect_word("receiver local")?;
            self.check_local(&r, line)?;
            Some(r)
        } else {
            None
        };
        if kind == InvokeKind::Static && receiver.is_some() {
            return Err(line.err("static invoke takes no receiver"));
        }
        if kind != InvokeKind::Static && receiver.is_none() {
            return Err(line.err(format!("{kind} invoke needs `on <receiver>`")));
        }
        line.expect_keyword("with")?;
        line.expect_punct('(')?;
        let mut args = Vec::new();
        if !line.eat_punct(')') {
            loop {
                let arg = match line.next() {
                    Some(Token::Word(w)) if w == "null" => Arg::Const(Const::Null),
                    Some(Token::Word(w)) => {
                        self.check_local(&w, line)?;
                        Arg::Local(w)
                    }
                    Some(Token::Int(v)) => Arg::Const(Const::Int(v)),
                    Some(Token::Float(v)) => Arg::Const(Const::Float(v)),
                    Some(Token::Str(s)) => Arg::Const(Const::Str(s)),
                    _ => return Err(line.err("expected an argument")),
                };
                args.push(arg);
                if line.eat_punct(')') {
                    break;
                }
                line.expect_punct(',')?;
            }
        }
        if args.len() != sig.params.len() {
            return Err(ParseError::new(
                ParseErrorKind::ArityMismatch,
                line.line_no,
                1,
                format!(
                    "`{sig}` takes {} argument(s), {} given",
                    sig.params.len(),
                    args.len()
                ),
            ));
        }
        Ok(IRStatement::Invoke {
            result,
            kind,
            sig,
            receiver,
            args,
        })
    }

    fn check_local(&self, name: &str, line: &Line) -> Result<(), ParseError> {
        self.current_method
            .as_ref()
            .expect("statement outside method")
            .check_local(name, line)
    }

    fn record_target(&mut self, label: String, line_no: usize) {
        self.current_method
            .as_mut()
            .expect("statement outside method")
            .branch_targets
            .push((label, line_no));
    }
}

/// Parse a whole program. Unresolvable invoked methods are not an error; they
/// resolve to external stubs later.
pub fn parse_program(text: &str) -> Result<IRProgram, ParseError> {
    let mut parser = Parser::new();
    for (idx, raw) in text.lines().enumerate() {
        parser.parse_line(raw, idx + 1)?;
    }
    let last_line = text.lines().count().max(1);
    if parser.current_method.is_some() {
        return Err(ParseError::new(
            ParseErrorKind::Syntax,
            last_line,
            1,
            "unclosed method body",
        ));
    }
    if parser.current_class.is_some() {
        return Err(ParseError::new(
            ParseErrorKind::Syntax,
            last_line,
            1,
            "unclosed class body",
        ));
    }
    Ok(parser.program)
}
