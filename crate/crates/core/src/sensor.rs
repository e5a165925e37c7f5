//! Sensor type inference for detected leaks.
//!
//! Field-triggered flows only say that sensor data leaked, not which sensor
//! produced it. Two strategies recover the type: the single-registration rule
//! (a class registering exactly one identifiable sensor ties all its leaks to
//! that sensor) and branch-guard analysis (a leak dominated by a comparison of
//! `sensorEvent.sensor.getType()` against a constant is tied to that
//! constant's sensor).

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};

use crate::config::{display_name, SensorTypeTable, SourceSinkConfig};
use crate::graphs::{build_cfg, dominating_guards, Cfg, EdgeKind};
use crate::ir::{Arg, Const, IRMethod, IRProgram, IRStatement, MethodSig, Operand, Relop};
use crate::taint::LeakFlow;

const SENSOR_MANAGER: &str = "android.hardware.SensorManager";
const SENSOR_CLASS: &str = "android.hardware.Sensor";
const SENSOR_EVENT: &str = "android.hardware.SensorEvent";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegistrationApi {
    GetDefaultSensor,
    GetSensorList,
}

/// One `getDefaultSensor(int)`/`getSensorList(int)` call site. The type
/// constant is known only when intraprocedural constant propagation resolves
/// the argument; `getSensorList(TYPE_ALL)` yields a wildcard registration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SensorRegistration {
    /// Class containing the registering method.
    pub class_name: String,
    pub method: MethodSig,
    pub stmt_index: usize,
    pub type_constant: Option<i64>,
    pub via: RegistrationApi,
}

impl SensorRegistration {
    pub fn is_wildcard(&self) -> bool {
        self.type_constant.is_some_and(SensorTypeTable::is_wildcard)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Verdict {
    /// Exactly one sensor name from the type table, in display form.
    Inferred(String),
    Ambiguous(Vec<String>),
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Evidence {
    SingleSensorRule,
    BranchGuard,
    /// The type constant was explicit at the source call site.
    ConstantArgument,
    None,
}

impl Evidence {
    pub fn as_str(self) -> &'static str {
        match self {
            Evidence::SingleSensorRule => "single-sensor-rule",
            Evidence::BranchGuard => "branch-guard",
            Evidence::ConstantArgument => "constant-argument",
            Evidence::None => "none",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SensorAttribution {
    pub verdict: Verdict,
    pub evidence: Evidence,
    /// Set when the single-registration rule suggested a different sensor
    /// than the winning branch guard.
    pub conflict_with: Option<String>,
}

impl SensorAttribution {
    fn unknown() -> Self {
        Self {
            verdict: Verdict::Unknown,
            evidence: Evidence::None,
            conflict_with: None,
        }
    }
}

/// Intraprocedural constant propagation: integer constant value of each local
/// at each statement entry. `None` means unreachable; a missing local or a
/// `None` value means non-constant.
type ConstEnv = BTreeMap<String, Option<i64>>;

fn const_envs(method: &IRMethod, cfg: &Cfg) -> Vec<Option<ConstEnv>> {
    let n = method.body.len();
    let mut envs: Vec<Option<ConstEnv>> = vec![None; n];
    if n == 0 {
        return envs;
    }
    envs[0] = Some(ConstEnv::new());
    let mut worklist: VecDeque<usize> = VecDeque::from([0]);
    while let Some(i) = worklist.pop_front() {
        let Some(env) = envs[i].clone() else { continue };
        let mut out = env;
        match &method.body[i] {
            IRStatement::AssignConst { dest, value } => {
                let v = match value {
                    Const::Int(v) => Some(*v),
                    _ => None,
                };
                out.insert(dest.clone(), v);
            }
            IRStatement::AssignLocal { dest, src } => {
                let v = out.get(src).copied().flatten();
                out.insert(dest.clone(), v);
            }
            other => {
                if let Some(dest) = other.def_local() {
                    out.insert(dest.to_string(), None);
                }
            }
        }
        for &(succ, _) in &cfg.succs[i] {
            let merged = match &envs[succ] {
                None => out.clone(),
                Some(existing) => {
                    let mut merged = ConstEnv::new();
                    for key in existing.keys().chain(out.keys()) {
                        let a = existing.get(key).copied().flatten();
                        let b = out.get(key).copied().flatten();
                        merged.insert(key.clone(), if a == b { a } else { None });
                    }
                    merged
                }
            };
            if envs[succ].as_ref() != Some(&merged) {
                envs[succ] = Some(merged);
                worklist.push_back(succ);
            }
        }
    }
    envs
}

fn const_of_arg(envs: &[Option<ConstEnv>], stmt_idx: usize, arg: &Arg) -> Option<i64> {
    match arg {
        Arg::Const(Const::Int(v)) => Some(*v),
        Arg::Local(l) => envs.get(stmt_idx)?.as_ref()?.get(l).copied().flatten(),
        _ => None,
    }
}

fn const_of_operand(envs: &[Option<ConstEnv>], stmt_idx: usize, operand: &Operand) -> Option<i64> {
    match operand {
        Operand::Int(v) => Some(*v),
        Operand::Local(l) => envs.get(stmt_idx)?.as_ref()?.get(l).copied().flatten(),
    }
}

/// Find every sensor registration call in the program, resolving constant
/// type arguments intraprocedurally and grouping by enclosing class.
pub fn collect_registrations(program: &IRProgram) -> Vec<SensorRegistration> {
    let mut registrations = Vec::new();
    for class in &program.classes {
        for method in &class.methods {
            let mut envs: Option<Vec<Option<ConstEnv>>> = None;
            for (i, stmt) in method.body.iter().enumerate() {
                let IRStatement::Invoke { sig, args, .. } = stmt else {
                    continue;
                };
                if sig.class_name != SENSOR_MANAGER || sig.params != ["int"] {
                    continue;
                }
                let via = match sig.name.as_str() {
                    "getDefaultSensor" => RegistrationApi::GetDefaultSensor,
                    "getSensorList" => RegistrationApi::GetSensorList,
                    _ => continue,
                };
                let envs = envs.get_or_insert_with(|| const_envs(method, &build_cfg(method)));
                registrations.push(SensorRegistration {
                    class_name: class.name.clone(),
                    method: method.sig(),
                    stmt_index: i,
                    type_constant: const_of_arg(envs, i, &args[0]),
                    via,
                });
            }
        }
    }
    registrations
}

/// Distinct identifiable sensor names registered by a class: known,
/// non-wildcard constants present in the table, in display form.
fn class_sensor_names(
    class_name: &str,
    registrations: &[SensorRegistration],
    table: &SensorTypeTable,
) -> Vec<String> {
    let mut names = BTreeSet::new();
    for reg in registrations {
        if reg.class_name != class_name || reg.is_wildcard() {
            continue;
        }
        if let Some(constant) = reg.type_constant {
            if let Some(entry) = table.lookup_constant(constant) {
                names.insert(display_name(&entry.name).to_string());
            }
        }
    }
    names.into_iter().collect()
}

/// The single-registration rule: when the leak's enclosing class registers
/// exactly one identifiable sensor, every sensor leak in the class is
/// associated with it. Returns `None` when the rule does not apply.
pub fn infer_single(
    leak_class: &str,
    registrations: &[SensorRegistration],
    table: &SensorTypeTable,
) -> Option<String> {
    let names = class_sensor_names(leak_class, registrations, table);
    if names.len() == 1 {
        names.into_iter().next()
    } else {
        None
    }
}

/// What a local's value is, traced backwards through copies to its unique
/// reaching definition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ValueOrigin {
    /// Result of `Sensor#getType()` on a sensor tied to the current event.
    GetTypeOnSensor,
    /// The `Sensor` object delivered with the event (`event.sensor` or a
    /// `Sensor`-typed parameter).
    SensorObject,
    /// The `SensorEvent` callback parameter.
    EventParam,
    Other,
}

fn unique_reaching_def(
    method: &IRMethod,
    cfg: &Cfg,
    use_stmt: usize,
    local: &str,
) -> Result<Option<usize>, ()> {
    // walk backwards from the use; each path stops at the first def
    let mut defs = BTreeSet::new();
    let mut reached_entry = false;
    let mut seen = HashSet::new();
    let mut queue: VecDeque<usize> = cfg.preds[use_stmt].iter().copied().collect();
    if use_stmt == 0 {
        reached_entry = true;
    }
    for &p in &cfg.preds[use_stmt] {
        seen.insert(p);
    }
    while let Some(i) = queue.pop_front() {
        if method.body[i].def_local() == Some(local) {
            defs.insert(i);
            continue;
        }
        if i == 0 {
            reached_entry = true;
        }
        for &p in &cfg.preds[i] {
            if seen.insert(p) {
                queue.push_back(p);
            }
        }
    }
    match (defs.len(), reached_entry) {
        (0, _) => Ok(None), // parameter or undefined
        (1, false) => Ok(Some(*defs.iter().next().unwrap())),
        _ => Err(()), // several definitions reach; give up
    }
}

fn param_origin(method: &IRMethod, local: &str) -> ValueOrigin {
    // only the implicit p<N> locals are parameters; a declared local that was
    // never assigned is not
    let index = local
        .strip_prefix('p')
        .filter(|rest| !rest.is_empty() && rest.chars().all(|c| c.is_ascii_digit()))
        .and_then(|rest| rest.parse::<usize>().ok());
    let Some(index) = index else {
        return ValueOrigin::Other;
    };
    match method.params.get(index).map(String::as_str) {
        Some(SENSOR_EVENT) => ValueOrigin::EventParam,
        Some(SENSOR_CLASS) => ValueOrigin::SensorObject,
        _ => ValueOrigin::Other,
    }
}

fn value_origin(
    method: &IRMethod,
    cfg: &Cfg,
    use_stmt: usize,
    local: &str,
    fuel: usize,
) -> ValueOrigin {
    if fuel == 0 {
        return ValueOrigin::Other;
    }
    let def = match unique_reaching_def(method, cfg, use_stmt, local) {
        Ok(Some(def)) => def,
        Ok(None) => return param_origin(method, local),
        Err(()) => return ValueOrigin::Other,
    };
    match &method.body[def] {
        IRStatement::AssignLocal { src, .. } => value_origin(method, cfg, def, src, fuel - 1),
        IRStatement::LoadField { base, field, .. } => {
            if field.class_name == SENSOR_EVENT
                && field.field_name == "sensor"
                && value_origin(method, cfg, def, base, fuel - 1) == ValueOrigin::EventParam
            {
                ValueOrigin::SensorObject
            } else {
                ValueOrigin::Other
            }
        }
        IRStatement::Invoke {
            sig,
            receiver: Some(receiver),
            ..
        } => {
            if sig.class_name == SENSOR_CLASS
                && sig.name == "getType"
                && sig.params.is_empty()
                && value_origin(method, cfg, def, receiver, fuel - 1) == ValueOrigin::SensorObject
            {
                ValueOrigin::GetTypeOnSensor
            } else {
                ValueOrigin::Other
            }
        }
        _ => ValueOrigin::Other,
    }
}

/// Branch-guard inference: inspect the conditionals dominating the leak
/// origin; a guard comparing a `getType()` result (reached via the event
/// parameter) against a constant resolves the sensor type on the branch the
/// origin sits on. Innermost resolving guard wins.
pub fn infer_branch(
    method: &IRMethod,
    cfg: &Cfg,
    origin_stmt: usize,
    table: &SensorTypeTable,
) -> Option<String> {
    let guards = dominating_guards(cfg, origin_stmt);
    let envs = const_envs(method, cfg);
    for (guard, edge) in guards.iter().rev() {
        let resolved = match (&method.body[*guard], edge) {
            (IRStatement::Switch { operand, .. }, EdgeKind::Case(value)) => {
                if value_origin(method, cfg, *guard, operand, 32) == ValueOrigin::GetTypeOnSensor {
                    Some(*value)
                } else {
                    None
                }
            }
            (
                IRStatement::IfCmp {
                    lhs, relop, rhs, ..
                },
                edge,
            ) => {
                let constant_holds_on_edge = matches!(
                    (relop, edge),
                    (Relop::Eq, EdgeKind::Taken) | (Relop::Ne, EdgeKind::Fallthrough)
                );
                if !constant_holds_on_edge {
                    None
                } else {
                    // one side compares the getType() result, the other a constant
                    let lhs_is_type =
                        value_origin(method, cfg, *guard, lhs, 32) == ValueOrigin::GetTypeOnSensor;
                    let rhs_is_type = matches!(rhs, Operand::Local(l)
                        if value_origin(method, cfg, *guard, l, 32) == ValueOrigin::GetTypeOnSensor);
                    if lhs_is_type {
                        const_of_operand(&envs, *guard, rhs)
                    } else if rhs_is_type {
                        envs.get(*guard)
                            .and_then(|e| e.as_ref())
                            .and_then(|e| e.get(lhs).copied().flatten())
                    } else {
                        None
                    }
                }
            }
            _ => None,
        };
        if let Some(constant) = resolved {
            if let Some(entry) = table.lookup_constant(constant) {
                return Some(display_name(&entry.name).to_string());
            }
        }
    }
    None
}

/// Attribute every flow. Field-triggered flows get the single-registration
/// rule and then branch-guard analysis (branch evidence wins on conflict and
/// the disagreement is flagged); method-triggered flows resolve only when the
/// source call carries an explicit type constant.
pub fn attribute_all(
    flows: &[LeakFlow],
    program: &IRProgram,
    config: &SourceSinkConfig,
) -> Vec<SensorAttribution> {
    let table = &config.sensor_table;
    let registrations = collect_registrations(program);

    let mut methods_by_name: HashMap<String, &IRMethod> = HashMap::new();
    for method in program.methods() {
        methods_by_name.insert(method.sig().to_string(), method);
    }
    let mut cfg_cache: HashMap<String, Cfg> = HashMap::new();

    flows
        .iter()
        .map(|flow| {
            let Some(method) = methods_by_name.get(&flow.source.origin.method) else {
                return SensorAttribution::unknown();
            };
            let origin_idx = flow.source.origin.index;
            if flow.source.kind == "field" {
                let cfg = cfg_cache
                    .entry(flow.source.origin.method.clone())
                    .or_insert_with(|| build_cfg(method));
                let single = infer_single(&method.class_name, &registrations, table);
                let branch = infer_branch(method, cfg, origin_idx, table);
                match (branch, single) {
                    (Some(b), single) => SensorAttribution {
                        conflict_with: single.filter(|s| s != &b),
                        verdict: Verdict::Inferred(b),
                        evidence: Evidence::BranchGuard,
                    },
                    (None, Some(s)) => SensorAttribution {
                        verdict: Verdict::Inferred(s),
                        evidence: Evidence::SingleSensorRule,
                        conflict_with: None,
                    },
                    (None, None) => {
                        let candidates =
                            class_sensor_names(&method.class_name, &registrations, table);
                        if candidates.is_empty() {
                            SensorAttribution::unknown()
                        } else {
                            SensorAttribution {
                                verdict: Verdict::Ambiguous(candidates),
                                evidence: Evidence::None,
                                conflict_with: None,
                            }
                        }
                    }
                }
            } else {
                // method-triggered: only an explicit int type constant resolves
                let IRStatement::Invoke { sig, args, .. } = &method.body[origin_idx] else {
                    return SensorAttribution::unknown();
                };
                if sig.params != ["int"] {
                    return SensorAttribution::unknown();
                }
                let cfg = cfg_cache
                    .entry(flow.source.origin.method.clone())
                    .or_insert_with(|| build_cfg(method));
                let envs = const_envs(method, cfg);
                match const_of_arg(&envs, origin_idx, &args[0]) {
                    Some(c) if !SensorTypeTable::is_wildcard(c) => match table.lookup_constant(c) {
                        Some(entry) => SensorAttribution {
                            verdict: Verdict::Inferred(display_name(&entry.name).to_string()),
                            evidence: Evidence::ConstantArgument,
                            conflict_with: None,
                        },
                        None => SensorAttribution::unknown(),
                    },
                    _ => SensorAttribution::unknown(),
                }
            }
        })
        .collect()
}
