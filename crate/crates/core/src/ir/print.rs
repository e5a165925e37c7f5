//! Canonical text form of a parsed program. `parse_program(print_program(p))`
//! yields a program structurally equal to `p`.

use std::fmt::Write;

use super::IRProgram;

pub fn print_program(program: &IRProgram) -> String {
    let mut out = String::new();
    for hint in &program.entry_hints {
        writeln!(out, "entry {hint}").unwrap();
    }
    for class in &program.classes {
        write!(out, "class {} extends {}", class.name, class.superclass).unwrap();
        if !class.interfaces.is_empty() {
            write!(out, " implements {}", class.interfaces.join(",")).unwrap();
        }
        writeln!(out, " {{").unwrap();
        for field in &class.fields {
            writeln!(out, "  field {} {}", field.ty, field.name).unwrap();
        }
        for method in &class.methods {
            writeln!(
                out,
                "  method {} {}({}) {{",
                method.ret,
                method.name,
                method.params.join(",")
            )
            .unwrap();
            for local in &method.locals {
                writeln!(out, "    local {} {}", local.ty, local.name).unwrap();
            }
            for stmt in &method.body {
                writeln!(out, "    {stmt}").unwrap();
            }
            writeln!(out, "  }}").unwrap();
        }
        writeln!(out, "}}").unwrap();
    }
    out
}
