//! Forward taint analysis: facts, the per-statement transfer function, and
//! the inter-procedural worklist engine.

mod engine;

pub use engine::{analyze, analyze_with_options, AnalysisOptions, AnalysisResult, AnalysisStats};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::config::{SourceSinkConfig, StatementRole};
use crate::ir::{Arg, FieldRef, IRStatement};

/// Field chain bound; chains longer than this truncate to a wildcard tail.
pub const DEFAULT_ACCESS_PATH_DEPTH: usize = 3;

/// A variable, possibly extended by a bounded chain of fields, holding
/// source-derived data. `array_tainted` marks values whose array elements
/// (rather than the value itself) are tainted; `truncated` marks a chain cut
/// at the depth bound, standing for every longer extension.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AccessPath {
    pub base: String,
    pub chain: Vec<FieldRef>,
    pub array_tainted: bool,
    pub truncated: bool,
}

impl AccessPath {
    pub fn local(base: impl Into<String>) -> Self {
        Self {
            base: base.into(),
            chain: Vec::new(),
            array_tainted: false,
            truncated: false,
        }
    }

    pub fn rebased(&self, new_base: &str) -> Self {
        Self {
            base: new_base.to_string(),
            ..self.clone()
        }
    }

    /// Access path for `base.field = <this>`: prepend the field, truncating at
    /// `depth`. A truncated path drops the array flag; the wildcard tail
    /// already covers it.
    fn prepended(&self, base: &str, field: &FieldRef, depth: usize) -> Self {
        let mut chain = Vec::with_capacity(self.chain.len() + 1);
        chain.push(field.clone());
        chain.extend(self.chain.iter().cloned());
        if chain.len() > depth {
            chain.truncate(depth);
            Self {
                base: base.to_string(),
                chain,
                array_tainted: false,
                truncated: true,
            }
        } else {
            Self {
                base: base.to_string(),
                chain,
                array_tainted: self.array_tainted,
                truncated: self.truncated,
            }
        }
    }
}

impl std::fmt::Display for AccessPath {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.base)?;
        for field in &self.chain {
            write!(f, ".{}", field.field_name)?;
        }
        if self.truncated {
            write!(f, ".*")?;
        }
        if self.array_tainted {
            write!(f, "[*]")?;
        }
        Ok(())
    }
}

/// Which configured source a fact descends from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SourceRef {
    Method(usize),
    Field(usize),
}

/// A statement position: method number (assigned by the engine) plus the
/// 0-based statement index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ProgramPoint {
    pub method: u32,
    pub stmt: u32,
}

impl ProgramPoint {
    pub fn new(method: u32, stmt: usize) -> Self {
        Self {
            method,
            stmt: stmt as u32,
        }
    }
}

/// One taint abstraction: an access path tainted by a named source created at
/// a specific statement. Identity includes the origin so that flows from
/// distinct source statements stay distinct.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TaintFact {
    pub path: AccessPath,
    pub source: SourceRef,
    pub origin: ProgramPoint,
}

/// Base-insensitive heap taint recorded at a field store; with heap merging
/// enabled, loads of the same field on any base pick it up.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct HeapTaint {
    pub source: SourceRef,
    pub origin: ProgramPoint,
    pub array_tainted: bool,
    pub truncated: bool,
}

pub(crate) type HeapMap = BTreeMap<FieldRef, BTreeMap<HeapTaint, u32>>;

/// Provenance of an output fact of one transfer step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum FactParent {
    /// Propagated from the n-th input fact.
    In(usize),
    /// Generated fresh at this statement (a source).
    Origin,
    /// Generated from a merged heap taint.
    Heap(FieldRef, HeapTaint),
}

#[derive(Debug, Default)]
pub(crate) struct TransferOutput {
    pub facts: Vec<(TaintFact, FactParent)>,
    /// Heap taints this statement records, with the input fact they came from.
    pub heap_writes: Vec<(FieldRef, HeapTaint, usize)>,
}

impl TransferOutput {
    fn push(&mut self, fact: TaintFact, parent: FactParent) {
        if !self.facts.iter().any(|(f, _)| f == &fact) {
            self.facts.push((fact, parent));
        }
    }
}

/// Per-statement flow rules. Assignments copy taint between access paths and
/// strongly update the overwritten local; field and array stores update the
/// heap weakly. Calls are treated with the external default summary (any
/// tainted argument or receiver taints the return value) when
/// `apply_call_summary` is set; the engine turns it off for call sites with
/// parsed callees, which it wires explicitly.
pub(crate) fn local_transfer(
    stmt: &IRStatement,
    point: ProgramPoint,
    in_facts: &[TaintFact],
    config: &SourceSinkConfig,
    depth: usize,
    heap: Option<&HeapMap>,
    apply_call_summary: bool,
) -> TransferOutput {
    let mut out = TransferOutput::default();
    let killed = stmt.def_local();
    let keep = |fact: &TaintFact| killed != Some(fact.path.base.as_str());

    for (i, fact) in in_facts.iter().enumerate() {
        if keep(fact) {
            out.push(fact.clone(), FactParent::In(i));
        }
    }

    match stmt {
        IRStatement::AssignLocal { dest, src } => {
            for (i, fact) in in_facts.iter().enumerate() {
                if fact.path.base == *src {
                    out.push(
                        TaintFact {
                            path: fact.path.rebased(dest),
                            ..fact.clone()
                        },
                        FactParent::In(i),
                    );
                }
            }
        }
        IRStatement::LoadField { dest, base, field } => {
            if let StatementRole::FieldSource(idx) = classify(config, stmt) {
                let spec = &config.field_sources[idx];
                out.push(
                    TaintFact {
                        path: AccessPath {
                            base: dest.clone(),
                            chain: Vec::new(),
                            array_tainted: spec.is_array_typed(),
                            truncated: false,
                        },
                        source: SourceRef::Field(idx),
                        origin: point,
                    },
                    FactParent::Origin,
                );
            }
            for (i, fact) in in_facts.iter().enumerate() {
                if fact.path.base != *base {
                    continue;
                }
                if fact.path.chain.is_empty() {
                    if fact.path.array_tainted {
                        continue; // element taint does not flow through field reads
                    }
                    out.push(
                        TaintFact {
                            path: AccessPath {
                                base: dest.clone(),
                                chain: Vec::new(),
                                array_tainted: false,
                                truncated: fact.path.truncated,
                            },
                            ..fact.clone()
                        },
                        FactParent::In(i),
                    );
                } else if fact.path.chain.first() == Some(field) {
                    out.push(
                        TaintFact {
                            path: AccessPath {
                                base: dest.clone(),
                                chain: fact.path.chain[1..].to_vec(),
                                array_tainted: fact.path.array_tainted,
                                truncated: fact.path.truncated,
                            },
                            ..fact.clone()
                        },
                        FactParent::In(i),
                    );
                }
            }
            if let Some(heap) = heap {
                if let Some(taints) = heap.get(field) {
                    for taint in taints.keys() {
                        out.push(
                            TaintFact {
                                path: AccessPath {
                                    base: dest.clone(),
                                    chain: Vec::new(),
                                    array_tainted: taint.array_tainted,
                                    truncated: taint.truncated,
                                },
                                source: taint.source,
                                origin: taint.origin,
                            },
                            FactParent::Heap(field.clone(), taint.clone()),
                        );
                    }
                }
            }
        }
        IRStatement::StoreField { base, field, src } => {
            for (i, fact) in in_facts.iter().enumerate() {
                if fact.path.base != *src {
                    continue;
                }
                out.push(
                    TaintFact {
                        path: fact.path.prepended(base, field, depth),
                        ..fact.clone()
                    },
                    FactParent::In(i),
                );
                out.heap_writes.push((
                    field.clone(),
                    HeapTaint {
                        source: fact.source,
                        origin: fact.origin,
                        array_tainted: fact.path.chain.is_empty() && fact.path.array_tainted,
                        truncated: fact.path.truncated || !fact.path.chain.is_empty(),
                    },
                    i,
                ));
            }
        }
        IRStatement::LoadArray { dest, base } => {
            for (i, fact) in in_facts.iter().enumerate() {
                if fact.path.base == *base && fact.path.chain.is_empty() {
                    out.push(
                        TaintFact {
                            path: AccessPath {
                                base: dest.clone(),
                                chain: Vec::new(),
                                array_tainted: false,
                                truncated: fact.path.truncated,
                            },
                            ..fact.clone()
                        },
                        FactParent::In(i),
                    );
                }
            }
        }
        IRStatement::StoreArray { base, src } => {
            for (i, fact) in in_facts.iter().enumerate() {
                if fact.path.base != *src {
                    continue;
                }
                let truncated =
                    fact.path.truncated || !fact.path.chain.is_empty() || fact.path.array_tainted;
                out.push(
                    TaintFact {
                        path: AccessPath {
                            base: base.clone(),
                            chain: Vec::new(),
                            array_tainted: true,
                            truncated,
                        },
                        ..fact.clone()
                    },
                    FactParent::In(i),
                );
            }
        }
        IRStatement::Invoke {
            result,
            sig,
            receiver,
            args,
            ..
        } => match classify(config, stmt) {
            StatementRole::MethodSource(idx) => {
                if let Some(result) = result {
                    out.push(
                        TaintFact {
                            path: AccessPath::local(result.clone()),
                            source: SourceRef::Method(idx),
                            origin: point,
                        },
                        FactParent::Origin,
                    );
                }
            }
            _ => {
                if apply_call_summary && !config.is_sanitizer(sig) {
                    if let Some(result) = result {
                        let mut inputs: Vec<&str> = args
                            .iter()
                            .filter_map(|a| match a {
                                Arg::Local(l) => Some(l.as_str()),
                                Arg::Const(_) => None,
                            })
                            .collect();
                        if let Some(recv) = receiver {
                            inputs.push(recv.as_str());
                        }
                        for (i, fact) in in_facts.iter().enumerate() {
                            if inputs.contains(&fact.path.base.as_str()) {
                                out.push(
                                    TaintFact {
                                        path: AccessPath::local(result.clone()),
                                        ..fact.clone()
                                    },
                                    FactParent::In(i),
                                );
                            }
                        }
                    }
                }
            }
        },
        // const/new assignments only kill; control flow is identity
        _ => {}
    }
    out
}

fn classify(config: &SourceSinkConfig, stmt: &IRStatement) -> StatementRole {
    crate::config::classify_statement(config, stmt)
}

/// Pure per-statement transfer over fact sets, with the default access-path
/// depth, no heap merging and the external call summary.
pub fn transfer(
    stmt: &IRStatement,
    point: ProgramPoint,
    in_facts: &BTreeSet<TaintFact>,
    config: &SourceSinkConfig,
) -> BTreeSet<TaintFact> {
    let in_vec: Vec<TaintFact> = in_facts.iter().cloned().collect();
    local_transfer(
        stmt,
        point,
        &in_vec,
        config,
        DEFAULT_ACCESS_PATH_DEPTH,
        None,
        true,
    )
    .facts
    .into_iter()
    .map(|(f, _)| f)
    .collect()
}

/// A statement reference resolved to report form.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StmtRef {
    pub method: String,
    pub index: usize,
    pub stmt: String,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LeakSource {
    /// `field` or `method`.
    pub kind: String,
    pub signature: String,
    pub origin: StmtRef,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LeakSink {
    pub signature: String,
    /// `receiver` or `argN`.
    pub position: String,
    pub site: StmtRef,
}

/// One source-to-sink flow with its witness statement path. Flows are counted
/// per (source origin statement, sink statement, tainted position).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LeakFlow {
    pub source: LeakSource,
    pub sink: LeakSink,
    pub witness_path: Vec<StmtRef>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::default_sensor_config;
    use crate::ir::parse_program;

    fn facts(list: &[TaintFact]) -> BTreeSet<TaintFact> {
        list.iter().cloned().collect()
    }

    fn field_fact(base: &str, source: usize) -> TaintFact {
        TaintFact {
            path: AccessPath::local(base),
            source: SourceRef::Field(source),
            origin: ProgramPoint::new(0, 0),
        }
    }

    #[test]
    fn source_field_load_gains_array_tainted_fact() {
        let config = default_sensor_config();
        let program = parse_program(
            "class a.A extends java.lang.Object {\n  method void m(android.hardware.SensorEvent) {\n    local float[] v\n    v = p0.android.hardware.SensorEvent#values\n    return\n  }\n}\n",
        )
        .unwrap();
        let stmt = &program.classes[0].methods[0].body[0];
        let out = transfer(stmt, ProgramPoint::new(0, 0), &BTreeSet::new(), &config);
        assert_eq!(out.len(), 1);
        let fact = out.iter().next().unwrap();
        assert_eq!(fact.path.base, "v");
        assert!(fact.path.array_tainted);
        assert_eq!(fact.source, SourceRef::Field(0));
    }

    #[test]
    fn constant_overwrite_kills_local_fact() {
        let config = default_sensor_config();
        let stmt = IRStatement::AssignConst {
            dest: "x".into(),
            value: crate::ir::Const::Int(0),
        };
        let out = transfer(
            &stmt,
            ProgramPoint::new(0, 1),
            &facts(&[field_fact("x", 0)]),
            &config,
        );
        assert!(out.is_empty());
    }

    #[test]
    fn copy_preserves_field_chain() {
        let config = default_sensor_config();
        let mut fact = field_fact("x", 0);
        fact.path.chain = vec![FieldRef::new("a.A", "a"), FieldRef::new("a.B", "b")];
        let stmt = IRStatement::AssignLocal {
            dest: "y".into(),
            src: "x".into(),
        };
        let out = transfer(
            &stmt,
            ProgramPoint::new(0, 1),
            &facts(&[fact.clone()]),
            &config,
        );
        assert!(out.contains(&fact), "source fact is preserved");
        let copied = out
            .iter()
            .find(|f| f.path.base == "y")
            .expect("copied fact");
        assert_eq!(copied.path.chain, fact.path.chain);
    }

    #[test]
    fn strong_update_spares_other_bases() {
        let config = default_sensor_config();
        let mut on_other = field_fact("z", 0);
        on_other.path.chain = vec![FieldRef::new("a.A", "f")];
        let stmt = IRStatement::AssignConst {
            dest: "x".into(),
            value: crate::ir::Const::Int(0),
        };
        let out = transfer(
            &stmt,
            ProgramPoint::new(0, 1),
            &facts(&[field_fact("x", 0), on_other.clone()]),
            &config,
        );
        assert_eq!(out, facts(&[on_other]));
    }

    #[test]
    fn chain_deeper_than_bound_truncates_to_wildcard() {
        let fact = TaintFact {
            path: AccessPath {
                base: "x".into(),
                chain: vec![
                    FieldRef::new("a.A", "f1"),
                    FieldRef::new("a.A", "f2"),
                    FieldRef::new("a.A", "f3"),
                ],
                array_tainted: false,
                truncated: false,
            },
            source: SourceRef::Field(0),
            origin: ProgramPoint::new(0, 0),
        };
        let path = fact.path.prepended("y", &FieldRef::new("a.A", "f0"), 3);
        assert_eq!(path.chain.len(), 3);
        assert!(path.truncated);
        assert_eq!(path.chain[0], FieldRef::new("a.A", "f0"));
    }

    #[test]
    fn external_summary_taints_result_from_tainted_arg() {
        let config = default_sensor_config();
        let stmt = IRStatement::Invoke {
            result: Some("r".into()),
            kind: crate::ir::InvokeKind::Static,
            sig: crate::ir::MethodSig::new("java.lang.String", "valueOf", vec!["float".into()]),
            receiver: None,
            args: vec![Arg::Local("x".into())],
        };
        let out = transfer(
            &stmt,
            ProgramPoint::new(0, 2),
            &facts(&[field_fact("x", 0)]),
            &config,
        );
        assert!(out.iter().any(|f| f.path.base == "r"));
    }
}
