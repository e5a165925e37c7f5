//! Concrete taint-tracking interpreter.
//!
//! Executes IR programs directly: values carry taint tags attached at
//! configured source reads, and every sink call records which tags reach its
//! sensitive positions. The interpreter shares nothing with the static engine
//! beyond the IR, the configuration, and method resolution; it is the
//! independent oracle the static results are checked against.
//!
//! Framework behavior is modeled deterministically: external calls return a
//! fresh opaque object whose taint is the union of the argument and receiver
//! taints, and external integer-returning sources (such as `getType()`)
//! return a per-run scenario value so that branch-dependent code is covered
//! by running every scenario.

use std::collections::{BTreeMap, BTreeSet};

use seeker::config::{classify_statement, SinkPosition, SourceSinkConfig, StatementRole};
use seeker::ir::{
    Arg, Const, FieldRef, IRMethod, IRProgram, IRStatement, InvokeKind, MethodSig, Operand, Relop,
};

const STEP_CAP: usize = 1_000_000;
const CALL_DEPTH_CAP: usize = 128;

/// A dynamically observed leak, positioned like the static engine's flows.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct DynLeak {
    pub source_kind: String,
    pub source_signature: String,
    pub origin_method: String,
    pub origin_index: usize,
    pub sink_signature: String,
    pub position: String,
    pub sink_method: String,
    pub sink_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct Tag {
    source_kind: &'static str,
    source_signature: String,
    origin_method: String,
    origin_index: usize,
}

type Tags = BTreeSet<Tag>;

#[derive(Debug, Clone)]
enum Value {
    Int(i64, Tags),
    Float(f64, Tags),
    Str(String, Tags),
    Null,
    Ref(usize, Tags),
}

impl Value {
    fn tags(&self) -> Tags {
        match self {
            Value::Int(_, t) | Value::Float(_, t) | Value::Str(_, t) | Value::Ref(_, t) => {
                t.clone()
            }
            Value::Null => Tags::new(),
        }
    }

    fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(v, _) => Some(*v),
            _ => None,
        }
    }

    fn with_tags(self, tags: Tags) -> Value {
        match self {
            Value::Int(v, _) => Value::Int(v, tags),
            Value::Float(v, _) => Value::Float(v, tags),
            Value::Str(v, _) => Value::Str(v, tags),
            Value::Ref(v, _) => Value::Ref(v, tags),
            Value::Null => Value::Null,
        }
    }
}

#[derive(Debug, Default)]
struct Obj {
    /// Unparsed classes and framework-synthesized objects stay opaque.
    class: Option<String>,
    fields: BTreeMap<String, Value>,
    array_elem: Option<Value>,
}

struct Interp<'a> {
    program: &'a IRProgram,
    config: &'a SourceSinkConfig,
    heap: Vec<Obj>,
    leaks: BTreeSet<DynLeak>,
    steps: usize,
    /// Value returned by external integer-returning calls in this run.
    scenario_int: i64,
}

impl<'a> Interp<'a> {
    fn new(program: &'a IRProgram, config: &'a SourceSinkConfig, scenario_int: i64) -> Self {
        Self {
            program,
            config,
            heap: Vec::new(),
            leaks: BTreeSet::new(),
            steps: 0,
            scenario_int,
        }
    }

    fn alloc(&mut self, class: Option<String>) -> usize {
        self.heap.push(Obj {
            class,
            ..Obj::default()
        });
        self.heap.len() - 1
    }

    fn fresh_opaque(&mut self, tags: Tags) -> Value {
        let id = self.alloc(None);
        Value::Ref(id, tags)
    }

    /// Taint reachable from a value: its own tags plus everything stored in
    /// objects it references.
    fn reachable_tags(&self, value: &Value) -> Tags {
        let mut tags = value.tags();
        let mut visited = BTreeSet::new();
        let mut stack = Vec::new();
        if let Value::Ref(id, _) = value {
            stack.push(*id);
        }
        while let Some(id) = stack.pop() {
            if !visited.insert(id) {
                continue;
            }
            let obj = &self.heap[id];
            let mut walk = |v: &Value| {
                tags.extend(v.tags());
                if let Value::Ref(inner, _) = v {
                    stack.push(*inner);
                }
            };
            for v in obj.fields.values() {
                walk(v);
            }
            if let Some(v) = &obj.array_elem {
                walk(v);
            }
        }
        tags
    }

    fn synth_param(&mut self, ty: &str) -> Value {
        match ty {
            "int" | "long" | "short" | "byte" | "boolean" | "char" => Value::Int(0, Tags::new()),
            "float" | "double" => Value::Float(0.0, Tags::new()),
            "java.lang.String" => Value::Str(String::new(), Tags::new()),
            _ => self.fresh_opaque(Tags::new()),
        }
    }

    /// Value a configured source produces, typed by the declared return/field
    /// type, tagged with the source identity and anything the taint derives
    /// from.
    fn source_value(&mut self, ty: Option<&str>, tag: Tag, extra: Tags) -> Value {
        let mut tags = extra;
        tags.insert(tag);
        match ty {
            Some(t) if t.ends_with("[]") => {
                let id = self.alloc(None);
                self.heap[id].array_elem = Some(Value::Float(0.0, tags));
                Value::Ref(id, Tags::new())
            }
            Some("int") | Some("long") => Value::Int(self.scenario_int, tags),
            Some("float") | Some("double") => Value::Float(1.0, tags),
            Some("java.lang.String") => Value::Str("sensor".into(), tags),
            _ => self.fresh_opaque(tags),
        }
    }

    fn call(
        &mut self,
        method: &IRMethod,
        this: Option<Value>,
        args: Vec<Value>,
        depth: usize,
    ) -> Value {
        assert!(depth < CALL_DEPTH_CAP, "interpreter call depth exceeded");
        let mut locals: BTreeMap<String, Value> = BTreeMap::new();
        if let Some(this) = this {
            locals.insert("this".into(), this);
        }
        for (i, arg) in args.into_iter().enumerate() {
            locals.insert(IRMethod::param_local(i), arg);
        }
        let method_name = method.sig().to_string();
        let mut pc = 0usize;
        loop {
            self.steps += 1;
            assert!(
                self.steps < STEP_CAP,
                "interpreter step cap exceeded (non-loop-free program?)"
            );
            assert!(pc < method.body.len(), "fell off method body");
            let stmt = &method.body[pc];
            match stmt {
                IRStatement::AssignConst { dest, value } => {
                    let v = match value {
                        Const::Int(v) => Value::Int(*v, Tags::new()),
                        Const::Float(v) => Value::Float(*v, Tags::new()),
                        Const::Str(s) => Value::Str(s.clone(), Tags::new()),
                        Const::Null => Value::Null,
                    };
                    locals.insert(dest.clone(), v);
                }
                IRStatement::AssignLocal { dest, src } => {
                    let v = locals.get(src).cloned().unwrap_or(Value::Null);
                    locals.insert(dest.clone(), v);
                }
                IRStatement::LoadField { dest, base, field } => {
                    let v = self.load_field(&locals, base, field, &method_name, pc);
                    locals.insert(dest.clone(), v);
                }
                IRStatement::StoreField { base, field, src } => {
                    let value = locals.get(src).cloned().unwrap_or(Value::Null);
                    if let Some(Value::Ref(id, _)) = locals.get(base) {
                        self.heap[*id].fields.insert(field.to_string(), value);
                    }
                }
                IRStatement::LoadArray { dest, base } => {
                    let v = match locals.get(base) {
                        Some(Value::Ref(id, ref_tags)) => {
                            let elem = self.heap[*id].array_elem.clone().unwrap_or(Value::Null);
                            let mut tags = elem.tags();
                            tags.extend(ref_tags.clone());
                            elem.with_tags(tags)
                        }
                        _ => Value::Null,
                    };
                    locals.insert(dest.clone(), v);
                }
                IRStatement::StoreArray { base, src } => {
                    let value = locals.get(src).cloned().unwrap_or(Value::Null);
                    if let Some(Value::Ref(id, _)) = locals.get(base) {
                        self.heap[*id].array_elem = Some(value);
                    }
                }
                IRStatement::NewObject { dest, class_name } => {
                    let id = self.alloc(Some(class_name.clone()));
                    locals.insert(dest.clone(), Value::Ref(id, Tags::new()));
                }
                IRStatement::Invoke { result, .. } => {
                    let ret = self.invoke(stmt, &locals, &method_name, pc, depth);
                    if let Some(result) = result {
                        locals.insert(result.clone(), ret);
                    }
                }
                IRStatement::IfCmp {
                    lhs,
                    relop,
                    rhs,
                    target,
                } => {
                    let left = locals.get(lhs).cloned().unwrap_or(Value::Null);
                    let right = match rhs {
                        Operand::Int(v) => Value::Int(*v, Tags::new()),
                        Operand::Local(l) => locals.get(l).cloned().unwrap_or(Value::Null),
                    };
                    if compare(&left, *relop, &right) {
                        pc = method.labels[target];
                        continue;
                    }
                }
                IRStatement::Switch {
                    operand,
                    cases,
                    default,
                } => {
                    let v = locals.get(operand).and_then(|v| v.as_int());
                    let label = cases
                        .iter()
                        .find(|(c, _)| Some(*c) == v)
                        .map(|(_, l)| l)
                        .unwrap_or(default);
                    pc = method.labels[label];
                    continue;
                }
                IRStatement::Goto { target } => {
                    pc = method.labels[target];
                    continue;
                }
                IRStatement::Return { value } => {
                    return value
                        .as_ref()
                        .and_then(|v| locals.get(v).cloned())
                        .unwrap_or(Value::Null);
                }
                IRStatement::Label { .. } | IRStatement::Nop => {}
            }
            pc += 1;
        }
    }

    fn load_field(
        &mut self,
        locals: &BTreeMap<String, Value>,
        base: &str,
        field: &FieldRef,
        method_name: &str,
        pc: usize,
    ) -> Value {
        let Some(Value::Ref(id, ref_tags)) = locals.get(base) else {
            return Value::Null;
        };
        let (id, ref_tags) = (*id, ref_tags.clone());
        if let Some(idx) = self.config.field_source_index(field) {
            // a fresh sensor reading, tagged per read site
            let spec = &self.config.field_sources[idx];
            let declared = spec
                .declared_type
                .clone()
                .or_else(|| self.program.field_decl_type(field).map(|t| t.to_string()));
            let tag = Tag {
                source_kind: "field",
                source_signature: field.to_string(),
                origin_method: method_name.to_string(),
                origin_index: pc,
            };
            return self.source_value(declared.as_deref(), tag, ref_tags);
        }
        if let Some(v) = self.heap[id].fields.get(&field.to_string()) {
            return v.clone();
        }
        let parsed_class = self.heap[id]
            .class
            .as_deref()
            .is_some_and(|c| self.program.class(c).is_some());
        if parsed_class {
            Value::Null // uninitialized field of a program object
        } else {
            // unknown framework field: memoize a fresh opaque derived value
            let v = self.fresh_opaque(ref_tags);
            self.heap[id].fields.insert(field.to_string(), v.clone());
            v
        }
    }

    fn invoke(
        &mut self,
        stmt: &IRStatement,
        locals: &BTreeMap<String, Value>,
        method_name: &str,
        pc: usize,
        depth: usize,
    ) -> Value {
        let IRStatement::Invoke {
            kind,
            sig,
            receiver,
            args,
            ..
        } = stmt
        else {
            unreachable!()
        };
        let recv_value = receiver
            .as_ref()
            .map(|r| locals.get(r).cloned().unwrap_or(Value::Null));
        let arg_values: Vec<Value> = args
            .iter()
            .map(|arg| match arg {
                Arg::Local(l) => locals.get(l).cloned().unwrap_or(Value::Null),
                Arg::Const(Const::Int(v)) => Value::Int(*v, Tags::new()),
                Arg::Const(Const::Float(v)) => Value::Float(*v, Tags::new()),
                Arg::Const(Const::Str(s)) => Value::Str(s.clone(), Tags::new()),
                Arg::Const(Const::Null) => Value::Null,
            })
            .collect();

        // sinks observe the values arriving at their sensitive positions
        if let StatementRole::Sink { positions, .. } = classify_statement(self.config, stmt) {
            for position in positions {
                let observed = match position {
                    SinkPosition::Receiver => recv_value.as_ref(),
                    SinkPosition::Arg(i) => arg_values.get(i),
                };
                let Some(observed) = observed else { continue };
                for tag in self.reachable_tags(observed) {
                    self.leaks.insert(DynLeak {
                        source_kind: tag.source_kind.to_string(),
                        source_signature: tag.source_signature,
                        origin_method: tag.origin_method,
                        origin_index: tag.origin_index,
                        sink_signature: sig.to_string(),
                        position: position.to_string(),
                        sink_method: method_name.to_string(),
                        sink_index: pc,
                    });
                }
            }
        }

        // dispatch: static by signature, virtual/interface by runtime class
        let target: Option<&IRMethod> = match kind {
            InvokeKind::Static => self.program.resolve_method(sig).internal(),
            InvokeKind::Virtual | InvokeKind::Interface => match &recv_value {
                Some(Value::Ref(id, _)) => match self.heap[*id].class.clone() {
                    Some(class) => self
                        .program
                        .resolve_method(&MethodSig::new(
                            class,
                            sig.name.clone(),
                            sig.params.clone(),
                        ))
                        .internal(),
                    None => None,
                },
                _ => None,
            },
        };
        if let Some(target) = target {
            return self.call(target, recv_value, arg_values, depth + 1);
        }

        // threads execute sequentially: external start() runs a parsed run()
        if sig.name == "start" && sig.params.is_empty() {
            if let Some(Value::Ref(id, _)) = &recv_value {
                if let Some(class) = self.heap[*id].class.clone() {
                    let run = MethodSig::new(class, "run".to_string(), Vec::new());
                    if let Some(run_method) = self.program.resolve_method(&run).internal() {
                        self.call(run_method, recv_value, Vec::new(), depth + 1);
                        return Value::Null;
                    }
                }
            }
        }

        // external framework call
        if let StatementRole::MethodSource(idx) = classify_statement(self.config, stmt) {
            let ret = self.config.method_sources[idx].ret.clone();
            let tag = Tag {
                source_kind: "method",
                source_signature: sig.to_string(),
                origin_method: method_name.to_string(),
                origin_index: pc,
            };
            return self.source_value(Some(ret.as_str()), tag, Tags::new());
        }
        if self.config.is_sanitizer(sig) {
            return Value::Null;
        }
        // default summary: return derives from arguments and receiver
        let mut tags = Tags::new();
        for v in arg_values.iter().chain(recv_value.iter()) {
            tags.extend(self.reachable_tags(v));
        }
        self.fresh_opaque(tags)
    }
}

fn compare(left: &Value, relop: Relop, right: &Value) -> bool {
    match (left.as_int(), right.as_int()) {
        (Some(a), Some(b)) => match relop {
            Relop::Eq => a == b,
            Relop::Ne => a != b,
            Relop::Lt => a < b,
            Relop::Le => a <= b,
            Relop::Gt => a > b,
            Relop::Ge => a >= b,
        },
        _ => match (left, right, relop) {
            (Value::Null, Value::Null, Relop::Eq) => true,
            (Value::Null, Value::Null, Relop::Ne) => false,
            (Value::Ref(a, _), Value::Ref(b, _), Relop::Eq) => a == b,
            (Value::Ref(a, _), Value::Ref(b, _), Relop::Ne) => a != b,
            (_, _, Relop::Ne) => true,
            _ => false,
        },
    }
}

fn entry_methods(program: &IRProgram) -> Vec<(&str, Vec<&IRMethod>)> {
    let default_names = [
        "onSensorChanged",
        "onAccuracyChanged",
        "onCreate",
        "onResume",
        "onPause",
    ];
    let mut per_class = Vec::new();
    for class in &program.classes {
        let mut methods: Vec<&IRMethod> = class
            .methods
            .iter()
            .filter(|m| {
                default_names.contains(&m.name.as_str())
                    || program.entry_hints.iter().any(|h| {
                        h.class_name == class.name && h.name == m.name && h.params == m.params
                    })
            })
            .collect();
        if !methods.is_empty() {
            methods.sort_by_key(|m| m.sig().to_string());
            per_class.push((class.name.as_str(), methods));
        }
    }
    per_class
}

/// Scenario values for external integers: every integer constant mentioned in
/// the program plus zero, so each comparison and switch case gets exercised.
fn scenario_values(program: &IRProgram) -> Vec<i64> {
    let mut values = BTreeSet::from([0i64]);
    for method in program.methods() {
        for stmt in &method.body {
            match stmt {
                IRStatement::AssignConst {
                    value: Const::Int(v),
                    ..
                } => {
                    values.insert(*v);
                }
                IRStatement::IfCmp {
                    rhs: Operand::Int(v),
                    ..
                } => {
                    values.insert(*v);
                }
                IRStatement::Switch { cases, .. } => {
                    values.extend(cases.iter().map(|(v, _)| *v));
                }
                IRStatement::Invoke { args, .. } => {
                    values.extend(args.iter().filter_map(|a| match a {
                        Arg::Const(Const::Int(v)) => Some(*v),
                        _ => None,
                    }));
                }
                _ => {}
            }
        }
    }
    values.into_iter().take(64).collect()
}

/// Run the program concretely under every scenario and return all observed
/// leaks. Each class with callbacks gets one shared instance; `onCreate` runs
/// once, then the remaining callbacks run two rounds, so heap state written
/// by one callback is visible to the others regardless of order.
pub fn dynamic_leaks(program: &IRProgram, config: &SourceSinkConfig) -> BTreeSet<DynLeak> {
    let mut all = BTreeSet::new();
    for scenario in scenario_values(program) {
        let mut interp = Interp::new(program, config, scenario);
        let entries = entry_methods(program);
        let mut receivers = Vec::new();
        for (class, _) in &entries {
            let id = interp.alloc(Some((*class).to_string()));
            receivers.push(id);
        }
        let dispatch = |interp: &mut Interp<'_>, method: &IRMethod, receiver: usize| {
            let args: Vec<Value> = method
                .params
                .clone()
                .iter()
                .map(|ty| interp.synth_param(ty))
                .collect();
            interp.call(method, Some(Value::Ref(receiver, Tags::new())), args, 0);
        };
        for ((_, methods), receiver) in entries.iter().zip(&receivers) {
            for method in methods.iter().filter(|m| m.name == "onCreate") {
                dispatch(&mut interp, method, *receiver);
            }
        }
        for _round in 0..2 {
            for ((_, methods), receiver) in entries.iter().zip(&receivers) {
                for method in methods.iter().filter(|m| m.name != "onCreate") {
                    dispatch(&mut interp, method, *receiver);
                }
            }
        }
        all.extend(interp.leaks);
    }
    all
}
