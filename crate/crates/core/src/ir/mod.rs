//! Three-address intermediate representation for analyzed apps.
//!
//! A program is a set of classes with fields and methods; method bodies are flat
//! statement lists in three-address form with labels for branch targets. The
//! textual format is parsed by [`parse_program`] and printed back by
//! [`print_program`]; the two round-trip.

mod parse;
mod print;

pub use parse::{parse_program, ParseError, ParseErrorKind};
pub use print::print_program;

use std::collections::BTreeMap;
use std::fmt;

/// Fully qualified reference to a class field, written `Class#field` in the
/// textual form.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FieldRef {
    pub class_name: String,
    pub field_name: String,
}

impl FieldRef {
    pub fn new(class_name: impl Into<String>, field_name: impl Into<String>) -> Self {
        Self {
            class_name: class_name.into(),
            field_name: field_name.into(),
        }
    }
}

impl fmt::Display for FieldRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.class_name, self.field_name)
    }
}

/// Method signature: declaring class, name and parameter types. Return types
/// are not part of call-site syntax and therefore not part of the signature.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MethodSig {
    pub class_name: String,
    pub name: String,
    pub params: Vec<String>,
}

impl MethodSig {
    pub fn new(
        class_name: impl Into<String>,
        name: impl Into<String>,
        params: Vec<String>,
    ) -> Self {
        Self {
            class_name: class_name.into(),
            name: name.into(),
            params,
        }
    }
}

impl fmt::Display for MethodSig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}#{}({})",
            self.class_name,
            self.name,
            self.params.join(",")
        )
    }
}

/// Constant literal.
#[derive(Debug, Clone, PartialEq)]
pub enum Const {
    Int(i64),
    Float(f64),
    Str(String),
    Null,
}

impl fmt::Display for Const {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Const::Int(v) => write!(f, "{v}"),
            Const::Float(v) => write!(f, "{v:?}"),
            Const::Str(s) => write!(f, "\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\"")),
            Const::Null => write!(f, "null"),
        }
    }
}

/// Comparison operand of an `if` statement: a local or an integer literal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Operand {
    Local(String),
    Int(i64),
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Local(l) => write!(f, "{l}"),
            Operand::Int(v) => write!(f, "{v}"),
        }
    }
}

/// Invoke argument: a local or a constant literal. Constant integer arguments
/// keep their literal value so type constants stay resolvable.
#[derive(Debug, Clone, PartialEq)]
pub enum Arg {
    Local(String),
    Const(Const),
}

impl fmt::Display for Arg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arg::Local(l) => write!(f, "{l}"),
            Arg::Const(c) => write!(f, "{c}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum InvokeKind {
    Static,
    Virtual,
    Interface,
}

impl fmt::Display for InvokeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InvokeKind::Static => write!(f, "static"),
            InvokeKind::Virtual => write!(f, "virtual"),
            InvokeKind::Interface => write!(f, "interface"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relop {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl fmt::Display for Relop {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Relop::Eq => "==",
            Relop::Ne => "!=",
            Relop::Lt => "<",
            Relop::Le => "<=",
            Relop::Gt => ">",
            Relop::Ge => ">=",
        };
        write!(f, "{s}")
    }
}

/// One three-address statement. Arrays are tracked at whole-array granularity,
/// so array accesses carry only the base local.
#[derive(Debug, Clone, PartialEq)]
pub enum IRStatement {
    AssignConst {
        dest: String,
        value: Const,
    },
    AssignLocal {
        dest: String,
        src: String,
    },
    LoadField {
        dest: String,
        base: String,
        field: FieldRef,
    },
    StoreField {
        base: String,
        field: FieldRef,
        src: String,
    },
    LoadArray {
        dest: String,
        base: String,
    },
    StoreArray {
        base: String,
        src: String,
    },
    NewObject {
        dest: String,
        class_name: String,
    },
    Invoke {
        result: Option<String>,
        kind: InvokeKind,
        sig: MethodSig,
        receiver: Option<String>,
        args: Vec<Arg>,
    },
    IfCmp {
        lhs: String,
        relop: Relop,
        rhs: Operand,
        target: String,
    },
    Switch {
        operand: String,
        cases: Vec<(i64, String)>,
        default: String,
    },
    Goto {
        target: String,
    },
    Return {
        value: Option<String>,
    },
    Label {
        name: String,
    },
    Nop,
}

impl IRStatement {
    /// Local written by this statement, if any.
    pub fn def_local(&self) -> Option<&str> {
        match self {
            IRStatement::AssignConst { dest, .. }
            | IRStatement::AssignLocal { dest, .. }
            | IRStatement::LoadField { dest, .. }
            | IRStatement::LoadArray { dest, .. }
            | IRStatement::NewObject { dest, .. } => Some(dest),
            IRStatement::Invoke { result, .. } => result.as_deref(),
            _ => None,
        }
    }

    /// True when control can continue to the textually next statement.
    pub fn falls_through(&self) -> bool {
        !matches!(
            self,
            IRStatement::Goto { .. } | IRStatement::Return { .. } | IRStatement::Switch { .. }
        )
    }
}

impl fmt::Display for IRStatement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IRStatement::AssignConst { dest, value } => write!(f, "{dest} = const {value}"),
            IRStatement::AssignLocal { dest, src } => write!(f, "{dest} = {src}"),
            IRStatement::LoadField { dest, base, field } => write!(f, "{dest} = {base}.{field}"),
            IRStatement::StoreField { base, field, src } => write!(f, "{base}.{field} = {src}"),
            IRStatement::LoadArray { dest, base } => write!(f, "{dest} = {base}[*]"),
            IRStatement::StoreArray { base, src } => write!(f, "{base}[*] = {src}"),
            IRStatement::NewObject { dest, class_name } => write!(f, "{dest} = new {class_name}"),
            IRStatement::Invoke {
                result,
                kind,
                sig,
                receiver,
                args,
            } => {
                if let Some(r) = result {
                    write!(f, "{r} = ")?;
                }
                write!(f, "invoke {kind} {sig}")?;
                if let Some(recv) = receiver {
                    write!(f, " on {recv}")?;
                }
                let rendered: Vec<String> = args.iter().map(|a| a.to_string()).collect();
                write!(f, " with ({})", rendered.join(", "))
            }
            IRStatement::IfCmp {
                lhs,
                relop,
                rhs,
                target,
            } => {
                write!(f, "if {lhs} {relop} {rhs} goto {target}")
            }
            IRStatement::Switch {
                operand,
                cases,
                default,
            } => {
                write!(f, "switch {operand} {{ ")?;
                for (value, label) in cases {
                    write!(f, "{value}:{label} ")?;
                }
                write!(f, "default:{default} }}")
            }
            IRStatement::Goto { target } => write!(f, "goto {target}"),
            IRStatement::Return { value } => match value {
                Some(v) => write!(f, "return {v}"),
                None => write!(f, "return"),
            },
            IRStatement::Label { name } => write!(f, "label {name}"),
            IRStatement::Nop => write!(f, "nop"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldDecl {
    pub name: String,
    pub ty: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocalDecl {
    pub name: String,
    pub ty: String,
}

/// Parsed method. Parameters bind to the implicit locals `p0..pN-1`; instance
/// state is reachable through the implicit `this` local.
#[derive(Debug, Clone, PartialEq)]
pub struct IRMethod {
    pub class_name: String,
    pub name: String,
    pub params: Vec<String>,
    pub ret: String,
    pub locals: Vec<LocalDecl>,
    pub body: Vec<IRStatement>,
    /// label name -> index of the `label` statement in `body`
    pub labels: BTreeMap<String, usize>,
}

impl IRMethod {
    pub fn sig(&self) -> MethodSig {
        MethodSig::new(
            self.class_name.clone(),
            self.name.clone(),
            self.params.clone(),
        )
    }

    /// Name of the implicit local bound to parameter `i`.
    pub fn param_local(i: usize) -> String {
        format!("p{i}")
    }

    /// Declared type of a local, covering implicit `this`/`pN` locals.
    pub fn local_type(&self, name: &str) -> Option<&str> {
        if name == "this" {
            return Some(&self.class_name);
        }
        if let Some(rest) = name.strip_prefix('p') {
            if let Ok(i) = rest.parse::<usize>() {
                if i < self.params.len() {
                    return Some(&self.params[i]);
                }
            }
        }
        self.locals
            .iter()
            .find(|l| l.name == name)
            .map(|l| l.ty.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IRClass {
    pub name: String,
    pub superclass: String,
    pub interfaces: Vec<String>,
    pub fields: Vec<FieldDecl>,
    pub methods: Vec<IRMethod>,
}

impl IRClass {
    pub fn method(&self, name: &str, params: &[String]) -> Option<&IRMethod> {
        self.methods
            .iter()
            .find(|m| m.name == name && m.params == params)
    }
}

/// Result of method resolution: a parsed body or a framework stub.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MethodResolution<'a> {
    Internal(&'a IRMethod),
    External,
}

impl<'a> MethodResolution<'a> {
    pub fn internal(self) -> Option<&'a IRMethod> {
        match self {
            MethodResolution::Internal(m) => Some(m),
            MethodResolution::External => None,
        }
    }
}

/// A parsed program: immutable after parsing and safe to share across threads.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IRProgram {
    pub classes: Vec<IRClass>,
    /// Extra method signatures flagged as callback entry points via `entry` lines.
    pub entry_hints: Vec<MethodSig>,
}

impl IRProgram {
    pub fn class(&self, name: &str) -> Option<&IRClass> {
        self.classes.iter().find(|c| c.name == name)
    }

    /// Exact-signature lookup with a superclass walk for inherited methods.
    /// Total: methods that are not parsed anywhere resolve to `External`.
    pub fn resolve_method(&self, sig: &MethodSig) -> MethodResolution<'_> {
        let mut current = sig.class_name.as_str();
        loop {
            match self.class(current) {
                Some(class) => {
                    if let Some(m) = class.method(&sig.name, &sig.params) {
                        return MethodResolution::Internal(m);
                    }
                    current = class.superclass.as_str();
                }
                None => return MethodResolution::External,
            }
        }
    }

    /// Reflexive subtype check across declared superclasses and interfaces.
    /// Only parsed classes contribute edges; unknown names end the walk.
    pub fn is_subtype(&self, sub: &str, sup: &str) -> bool {
        if sub == sup {
            return true;
        }
        let Some(class) = self.class(sub) else {
            return false;
        };
        if self.is_subtype(&class.superclass, sup) {
            return true;
        }
        class.interfaces.iter().any(|i| self.is_subtype(i, sup))
    }

    /// Parsed classes compatible with `name` under class-hierarchy dispatch.
    pub fn subtypes_of(&self, name: &str) -> Vec<&IRClass> {
        self.classes
            .iter()
            .filter(|c| self.is_subtype(&c.name, name))
            .collect()
    }

    /// Declared type of a field, when its class is parsed.
    pub fn field_decl_type(&self, field: &FieldRef) -> Option<&str> {
        self.class(&field.class_name)?
            .fields
            .iter()
            .find(|f| f.name == field.field_name)
            .map(|f| f.ty.as_str())
    }

    pub fn methods(&self) -> impl Iterator<Item = &IRMethod> {
        self.classes.iter().flat_map(|c| c.methods.iter())
    }
}
