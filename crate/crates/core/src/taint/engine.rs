//! Inter-procedural fixpoint: propagates facts over each method's CFG, maps
//! argument taint into callees and return taint back to call sites, and
//! records source-to-sink flows with witness traces.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::time::{Duration, Instant};

use crate::config::{classify_statement, SinkPosition, SourceSinkConfig, StatementRole};
use crate::graphs::{build_callgraph, build_cfg, EntryPointModel};
use crate::ir::{Arg, FieldRef, IRMethod, IRProgram, IRStatement};

use super::{
    local_transfer, FactParent, HeapMap, LeakFlow, LeakSink, LeakSource, ProgramPoint, SourceRef,
    StmtRef, TaintFact, DEFAULT_ACCESS_PATH_DEPTH,
};

#[derive(Debug, Clone, Copy)]
pub struct AnalysisOptions {
    /// Treat a tainted store to `Class#field` as tainting loads of the same
    /// field on any base. Preserves cross-object heap flows without alias
    /// analysis, at the cost of false positives.
    pub heap_merge: bool,
    pub access_path_depth: usize,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            heap_merge: true,
            access_path_depth: DEFAULT_ACCESS_PATH_DEPTH,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct AnalysisStats {
    pub iterations: u64,
    pub methods_analyzed: usize,
}

#[derive(Debug, Clone)]
pub struct AnalysisResult {
    pub flows: Vec<LeakFlow>,
    /// False when the time budget expired; `flows` then holds partial results.
    pub complete: bool,
    pub stats: AnalysisStats,
}

/// Run the analysis with the default options and a time budget.
pub fn analyze(
    program: &IRProgram,
    config: &SourceSinkConfig,
    entry_model: &EntryPointModel,
    budget: Duration,
) -> AnalysisResult {
    analyze_with_options(
        program,
        config,
        entry_model,
        Instant::now().checked_add(budget),
        AnalysisOptions::default(),
    )
}

pub fn analyze_with_options(
    program: &IRProgram,
    config: &SourceSinkConfig,
    entry_model: &EntryPointModel,
    deadline: Option<Instant>,
    options: AnalysisOptions,
) -> AnalysisResult {
    let mut engine = Engine::new(program, config, entry_model, options);
    engine.seed();
    let complete = engine.run(deadline);
    let flows = engine.materialize_flows();
    AnalysisResult {
        flows,
        complete,
        stats: AnalysisStats {
            iterations: engine.iterations,
            methods_analyzed: engine.methods.len(),
        },
    }
}

struct MethodCtx<'p> {
    method: &'p IRMethod,
    /// Successor statement indices, from the CFG.
    succs: Vec<Vec<usize>>,
    /// Internal callee ids per statement index; empty = fully external call.
    call_targets: Vec<Vec<u32>>,
    /// Whether the external default summary applies at each statement: no
    /// parsed target, or the declared class is a framework class whose
    /// hierarchy may hide unparsed implementations.
    call_summary: Vec<bool>,
}

struct TraceNode {
    point: ProgramPoint,
    parent: Option<u32>,
}

type LeakKey = (SourceRef, ProgramPoint, ProgramPoint, SinkPosition);

struct Engine<'p> {
    config: &'p SourceSinkConfig,
    options: AnalysisOptions,
    methods: Vec<MethodCtx<'p>>,
    /// Call sites (caller id, stmt index) per callee id.
    callers: Vec<Vec<(u32, usize)>>,
    /// Facts holding at each statement entry, with their trace node.
    entry_facts: Vec<Vec<BTreeMap<TaintFact, u32>>>,
    heap: HeapMap,
    load_sites: BTreeMap<FieldRef, Vec<ProgramPoint>>,
    traces: Vec<TraceNode>,
    origin_nodes: HashMap<(ProgramPoint, TaintFact), u32>,
    worklist: VecDeque<ProgramPoint>,
    queued: HashSet<ProgramPoint>,
    leaks: BTreeMap<LeakKey, u32>,
    iterations: u64,
}

impl<'p> Engine<'p> {
    fn new(
        program: &'p IRProgram,
        config: &'p SourceSinkConfig,
        entry_model: &EntryPointModel,
        options: AnalysisOptions,
    ) -> Self {
        let callgraph = build_callgraph(program, entry_model);

        // assign dense ids to reachable methods in program order
        let mut method_refs: Vec<&IRMethod> = Vec::new();
        let mut id_of = HashMap::new();
        for method in program.methods() {
            let sig = method.sig();
            if callgraph.reachable.contains(&sig) {
                id_of.insert(sig, method_refs.len() as u32);
                method_refs.push(method);
            }
        }

        let mut methods = Vec::with_capacity(method_refs.len());
        let mut callers: Vec<Vec<(u32, usize)>> = vec![Vec::new(); method_refs.len()];
        for (id, method) in method_refs.iter().enumerate() {
            let cfg = build_cfg(method);
            let succs: Vec<Vec<usize>> = cfg
                .succs
                .iter()
                .map(|edges| edges.iter().map(|(t, _)| *t).collect())
                .collect();
            let sig = method.sig();
            let mut call_targets = vec![Vec::new(); method.body.len()];
            let mut call_summary = vec![false; method.body.len()];
            for (s, stmt) in method.body.iter().enumerate() {
                let IRStatement::Invoke { sig: callee_sig, .. } = stmt else {
                    continue;
                };
                if let Some(targets) = callgraph.edges.get(&(sig.clone(), s)) {
                    for target in targets {
                        let target_id = id_of[target];
                        call_targets[s].push(target_id);
                        callers[target_id as usize].push((id as u32, s));
                    }
                }
                call_summary[s] =
                    call_targets[s].is_empty() || program.class(&callee_sig.class_name).is_none();
            }
            methods.push(MethodCtx {
                method,
                succs,
                call_targets,
                call_summary,
            });
        }
        for list in &mut callers {
            list.sort();
            list.dedup();
        }

        let entry_facts = methods
            .iter()
            .map(|ctx| vec![BTreeMap::new(); ctx.method.body.len()])
            .collect();

        let mut load_sites: BTreeMap<FieldRef, Vec<ProgramPoint>> = BTreeMap::new();
        for (id, ctx) in methods.iter().enumerate() {
            for (s, stmt) in ctx.method.body.iter().enumerate() {
                if let IRStatement::LoadField { field, .. } = stmt {
                    load_sites
                        .entry(field.clone())
                        .or_default()
                        .push(ProgramPoint::new(id as u32, s));
                }
            }
        }

        Self {
            config,
            options,
            methods,
            callers,
            entry_facts,
            heap: HeapMap::new(),
            load_sites,
            traces: Vec::new(),
            origin_nodes: HashMap::new(),
            worklist: VecDeque::new(),
            queued: HashSet::new(),
            leaks: BTreeMap::new(),
            iterations: 0,
        }
    }

    fn seed(&mut self) {
        for m in 0..self.methods.len() {
            for s in 0..self.methods[m].method.body.len() {
                self.enqueue(ProgramPoint::new(m as u32, s));
            }
        }
    }

    fn enqueue(&mut self, point: ProgramPoint) {
        if self.queued.insert(point) {
            self.worklist.push_back(point);
        }
    }

    fn new_trace(&mut self, point: ProgramPoint, parent: Option<u32>) -> u32 {
        let id = self.traces.len() as u32;
        self.traces.push(TraceNode { point, parent });
        id
    }

    /// Merge a fact into the entry of `point`; enqueue on change.
    fn inject(&mut self, point: ProgramPoint, fact: TaintFact, parent: u32) {
        let map = &mut self.entry_facts[point.method as usize][point.stmt as usize];
        if map.contains_key(&fact) {
            return;
        }
        let id = self.traces.len() as u32;
        self.traces.push(TraceNode {
            point,
            parent: Some(parent),
        });
        self.entry_facts[point.method as usize][point.stmt as usize].insert(fact, id);
        self.enqueue(point);
    }

    fn origin_node(&mut self, point: ProgramPoint, fact: &TaintFact) -> u32 {
        if let Some(&id) = self.origin_nodes.get(&(point, fact.clone())) {
            return id;
        }
        let id = self.new_trace(point, None);
        self.origin_nodes.insert((point, fact.clone()), id);
        id
    }

    fn run(&mut self, deadline: Option<Instant>) -> bool {
        while let Some(point) = self.worklist.pop_front() {
            self.queued.remove(&point);
            self.iterations += 1;
            if let Some(deadline) = deadline {
                if Instant::now() >= deadline {
                    return false;
                }
            }
            self.process(point);
        }
        true
    }

    fn process(&mut self, point: ProgramPoint) {
        let m = point.method as usize;
        let s = point.stmt as usize;
        let in_pairs: Vec<(TaintFact, u32)> = self.entry_facts[m][s]
            .iter()
            .map(|(f, t)| (f.clone(), *t))
            .collect();
        let in_facts: Vec<TaintFact> = in_pairs.iter().map(|(f, _)| f.clone()).collect();
        let stmt = &self.methods[m].method.body[s];

        // leak checks against the facts holding at the sink call
        if let StatementRole::Sink { positions, .. } = classify_statement(self.config, stmt) {
            let IRStatement::Invoke { receiver, args, .. } = stmt else {
                unreachable!()
            };
            for position in positions {
                let local = match position {
                    SinkPosition::Receiver => receiver.as_deref(),
                    SinkPosition::Arg(i) => match args.get(i) {
                        Some(Arg::Local(l)) => Some(l.as_str()),
                        _ => None,
                    },
                };
                let Some(local) = local else { continue };
                for (fact, tid) in &in_pairs {
                    if fact.path.base == local {
                        self.leaks
                            .entry((fact.source, fact.origin, point, position))
                            .or_insert(*tid);
                    }
                }
            }
        }

        // parameter and receiver mapping into parsed callees
        let callee_ids = self.methods[m].call_targets[s].clone();
        if let IRStatement::Invoke { receiver, args, .. } = stmt {
            let receiver = receiver.clone();
            let args = args.clone();
            for callee in &callee_ids {
                let callee_entry = ProgramPoint::new(*callee, 0);
                for (fact, tid) in &in_pairs {
                    if let Some(recv) = &receiver {
                        if fact.path.base == *recv {
                            let mapped = TaintFact {
                                path: fact.path.rebased("this"),
                                ..fact.clone()
                            };
                            self.inject(callee_entry, mapped, *tid);
                        }
                    }
                    for (i, arg) in args.iter().enumerate() {
                        if let Arg::Local(l) = arg {
                            if fact.path.base == *l {
                                let param = IRMethod::param_local(i);
                                let mapped = TaintFact {
                                    path: fact.path.rebased(&param),
                                    ..fact.clone()
                                };
                                self.inject(callee_entry, mapped, *tid);
                            }
                        }
                    }
                }
            }
        }

        // return-value and by-reference mapping back to every call site
        if let IRStatement::Return { value } = stmt {
            let value = value.clone();
            let call_sites = self.callers[m].clone();
            for (caller, call_idx) in call_sites {
                let caller_ctx = &self.methods[caller as usize];
                let IRStatement::Invoke {
                    result,
                    receiver,
                    args,
                    ..
                } = &caller_ctx.method.body[call_idx]
                else {
                    continue;
                };
                let result = result.clone();
                let receiver = receiver.clone();
                let args = args.clone();
                let return_sites: Vec<usize> = caller_ctx.succs[call_idx].clone();
                for (fact, tid) in &in_pairs {
                    let mut mapped: Vec<TaintFact> = Vec::new();
                    if let (Some(v), Some(r)) = (&value, &result) {
                        if fact.path.base == *v {
                            mapped.push(TaintFact {
                                path: fact.path.rebased(r),
                                ..fact.clone()
                            });
                        }
                    }
                    if !fact.path.chain.is_empty() || fact.path.truncated || fact.path.array_tainted
                    {
                        // heap state written through `this` or a parameter is
                        // visible to the caller through its own reference
                        if fact.path.base == "this" {
                            if let Some(recv) = &receiver {
                                mapped.push(TaintFact {
                                    path: fact.path.rebased(recv),
                                    ..fact.clone()
                                });
                            }
                        }
                        for (i, arg) in args.iter().enumerate() {
                            if let Arg::Local(l) = arg {
                                if fact.path.base == IRMethod::param_local(i) {
                                    mapped.push(TaintFact {
                                        path: fact.path.rebased(l),
                                        ..fact.clone()
                                    });
                                }
                            }
                        }
                    }
                    for mapped_fact in mapped {
                        for &ret in &return_sites {
                            self.inject(ProgramPoint::new(caller, ret), mapped_fact.clone(), *tid);
                        }
                    }
                }
            }
        }

        let apply_summary = self.methods[m].call_summary[s];
        let heap_view = if self.options.heap_merge {
            Some(&self.heap)
        } else {
            None
        };
        let output = local_transfer(
            stmt,
            point,
            &in_facts,
            self.config,
            self.options.access_path_depth,
            heap_view,
            apply_summary,
        );

        if self.options.heap_merge {
            for (field, taint, in_idx) in &output.heap_writes {
                let entry = self.heap.entry(field.clone()).or_default();
                if entry.contains_key(taint) {
                    continue;
                }
                let parent = in_pairs[*in_idx].1;
                let node = self.traces.len() as u32;
                self.traces.push(TraceNode {
                    point,
                    parent: Some(parent),
                });
                self.heap
                    .get_mut(field)
                    .unwrap()
                    .insert(taint.clone(), node);
                // every load of this field may now produce a new fact
                if let Some(sites) = self.load_sites.get(field).cloned() {
                    for site in sites {
                        self.enqueue(site);
                    }
                }
            }
        }

        let succs = self.methods[m].succs[s].clone();
        if succs.is_empty() {
            return;
        }
        for (fact, parent) in output.facts {
            let parent_tid = match &parent {
                FactParent::In(i) => in_pairs[*i].1,
                FactParent::Origin => self.origin_node(point, &fact),
                FactParent::Heap(field, taint) => self.heap[field][taint],
            };
            for &succ in &succs {
                self.inject(ProgramPoint::new(m as u32, succ), fact.clone(), parent_tid);
            }
        }
    }

    fn stmt_ref(&self, point: ProgramPoint) -> StmtRef {
        let ctx = &self.methods[point.method as usize];
        StmtRef {
            method: ctx.method.sig().to_string(),
            index: point.stmt as usize,
            stmt: ctx.method.body[point.stmt as usize].to_string(),
        }
    }

    /// Walk trace links origin-to-sink; consecutive duplicate points collapse.
    fn reconstruct_path(&self, tid: u32) -> Vec<ProgramPoint> {
        let mut points = Vec::new();
        let mut current = Some(tid);
        while let Some(id) = current {
            let node = &self.traces[id as usize];
            points.push(node.point);
            current = node.parent;
        }
        points.reverse();
        points.dedup();
        points
    }

    fn materialize_flows(&self) -> Vec<LeakFlow> {
        let mut flows = Vec::with_capacity(self.leaks.len());
        for ((source, origin, sink_point, position), tid) in &self.leaks {
            let (kind, signature) = match source {
                SourceRef::Field(i) => ("field", self.config.field_sources[*i].field.to_string()),
                SourceRef::Method(i) => ("method", self.config.method_sources[*i].sig.to_string()),
            };
            let sink_stmt =
                &self.methods[sink_point.method as usize].method.body[sink_point.stmt as usize];
            let IRStatement::Invoke { sig, .. } = sink_stmt else {
                unreachable!("leaks are recorded at invoke statements");
            };
            let witness = self.reconstruct_path(*tid);
            debug_assert_eq!(
                witness.first(),
                Some(origin),
                "trace must start at the source"
            );
            let mut witness_path: Vec<StmtRef> =
                witness.into_iter().map(|p| self.stmt_ref(p)).collect();
            let sink_ref = self.stmt_ref(*sink_point);
            if witness_path.last() != Some(&sink_ref) {
                witness_path.push(sink_ref.clone());
            }
            flows.push(LeakFlow {
                source: LeakSource {
                    kind: kind.to_string(),
                    signature,
                    origin: self.stmt_ref(*origin),
                },
                sink: LeakSink {
                    signature: sig.to_string(),
                    position: position.to_string(),
                    site: sink_ref,
                },
                witness_path,
            });
        }
        flows
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::default_sensor_config;
    use crate::ir::parse_program;

    const LOG_LEAK: &str = "\
class a.b.b extends java.lang.Object implements android.hardware.SensorEventListener {
  method void onSensorChanged(android.hardware.SensorEvent) {
    local float[] v1
    local float[] v2
    local float[] v3
    local float x
    local float y
    local float z
    local java.lang.String sx
    local java.lang.String sy
    local java.lang.String sz
    local java.lang.String m1
    local java.lang.String m2
    local java.lang.String t
    v1 = p0.android.hardware.SensorEvent#values
    x = v1[*]
    v2 = p0.android.hardware.SensorEvent#values
    y = v2[*]
    v3 = p0.android.hardware.SensorEvent#values
    z = v3[*]
    sx = invoke static java.lang.String#valueOf(float) with (x)
    sy = invoke static java.lang.String#valueOf(float) with (y)
    sz = invoke static java.lang.String#valueOf(float) with (z)
    m1 = invoke virtual java.lang.String#concat(java.lang.String) on sx with (sy)
    m2 = invoke virtual java.lang.String#concat(java.lang.String) on m1 with (sz)
    t = const \"tag\"
    invoke static android.util.Log#v(java.lang.String,java.lang.String) with (t, m2)
    return
  }
}
";

    fn run(text: &str) -> AnalysisResult {
        let program = parse_program(text).unwrap();
        let config = default_sensor_config();
        analyze(
            &program,
            &config,
            &EntryPointModel::default_android(),
            Duration::from_secs(10),
        )
    }

    #[test]
    fn field_reads_into_one_log_call_yield_one_leak_per_origin() {
        let result = run(LOG_LEAK);
        assert!(result.complete);
        assert_eq!(result.flows.len(), 3, "one leak per values read");
        for flow in &result.flows {
            assert_eq!(flow.source.signature, "android.hardware.SensorEvent#values");
            assert!(flow.sink.signature.starts_with("android.util.Log#v"));
            assert_eq!(flow.sink.position, "arg1");
        }
        let origins: std::collections::BTreeSet<usize> =
            result.flows.iter().map(|f| f.source.origin.index).collect();
        assert_eq!(origins.len(), 3);
    }

    #[test]
    fn sources_without_sinks_produce_no_flows() {
        let result = run("\
class a.A extends java.lang.Object {
  method void onSensorChanged(android.hardware.SensorEvent) {
    local float[] v
    v = p0.android.hardware.SensorEvent#values
    return
  }
}
");
        assert!(result.complete);
        assert!(result.flows.is_empty());
    }

    #[test]
    fn constant_overwrite_before_sink_kills_the_flow() {
        let result = run("\
class a.A extends java.lang.Object {
  method void onSensorChanged(android.hardware.SensorEvent) {
    local float[] v
    local java.lang.String s
    local java.lang.String t
    v = p0.android.hardware.SensorEvent#values
    s = invoke static java.lang.String#valueOf(float[]) with (v)
    s = const \"clean\"
    t = const \"tag\"
    invoke static android.util.Log#v(java.lang.String,java.lang.String) with (t, s)
    return
  }
}
");
        assert!(result.flows.is_empty());
    }

    #[test]
    fn interprocedural_flow_crosses_call_and_return() {
        let result = run("\
class a.A extends java.lang.Object {
  method void onSensorChanged(android.hardware.SensorEvent) {
    local float[] v
    local java.lang.String s
    local java.lang.String t
    v = p0.android.hardware.SensorEvent#values
    s = invoke virtual a.A#format(float[]) on this with (v)
    t = const \"tag\"
    invoke static android.util.Log#v(java.lang.String,java.lang.String) with (t, s)
    return
  }
  method java.lang.String format(float[]) {
    local java.lang.String r
    r = invoke static java.lang.String#valueOf(float[]) with (p0)
    return r
  }
}
");
        assert_eq!(result.flows.len(), 1);
        let flow = &result.flows[0];
        let methods: Vec<&str> = flow
            .witness_path
            .iter()
            .map(|s| s.method.as_str())
            .collect();
        assert!(methods.contains(&"a.A#onSensorChanged(android.hardware.SensorEvent)"));
        assert!(methods.contains(&"a.A#format(float[])"));
        // call site precedes callee statements, which precede the return site
        let first_callee = methods
            .iter()
            .position(|m| m.ends_with("format(float[])"))
            .unwrap();
        let last_caller_before = methods[..first_callee]
            .iter()
            .rposition(|m| m.ends_with("onSensorChanged(android.hardware.SensorEvent)"))
            .unwrap();
        assert!(last_caller_before < first_callee);
        assert!(methods[first_callee..]
            .iter()
            .any(|m| m.ends_with("onSensorChanged(android.hardware.SensorEvent)")));
    }

    #[test]
    fn direct_flow_witness_walks_every_statement() {
        let result = run("\
class a.A extends java.lang.Object {
  method void onSensorChanged(android.hardware.SensorEvent) {
    local float[] v
    local java.lang.String m
    v = p0.android.hardware.SensorEvent#values
    m = invoke static java.lang.String#valueOf(float[]) with (v)
    invoke static android.util.Log#v(java.lang.String,java.lang.String) with (\"t\", m)
    return
  }
}
");
        assert_eq!(result.flows.len(), 1);
        let path = &result.flows[0].witness_path;
        assert_eq!(
            path.len(),
            3,
            "three-statement direct flow has a length-3 path"
        );
        assert_eq!(path[0].index, 0);
        assert_eq!(path[2].index, 2);
    }

    #[test]
    fn zero_budget_returns_incomplete() {
        let program = parse_program(LOG_LEAK).unwrap();
        let config = default_sensor_config();
        let result = analyze(
            &program,
            &config,
            &EntryPointModel::default_android(),
            Duration::ZERO,
        );
        assert!(!result.complete);
    }

    #[test]
    fn repeated_runs_are_identical() {
        let a = run(LOG_LEAK);
        let b = run(LOG_LEAK);
        assert_eq!(a.flows, b.flows);
    }

    #[test]
    fn receiver_position_sinks_match_receiver_taint() {
        let text = "\
class a.A extends java.lang.Object {
  method void onSensorChanged(android.hardware.SensorEvent) {
    local float[] v
    local java.lang.String m
    v = p0.android.hardware.SensorEvent#values
    m = invoke static java.lang.String#valueOf(float[]) with (v)
    invoke virtual net.Chan#push() on m with ()
    return
  }
}
";
        let program = parse_program(text).unwrap();
        let mut config = default_sensor_config();
        config.sinks.push(crate::config::SinkSpec {
            sig: crate::ir::MethodSig::new("net.Chan", "push", vec![]),
            ret: "void".into(),
            tainted_positions: vec![crate::config::SinkPosition::Receiver],
        });
        let result = analyze(
            &program,
            &config,
            &EntryPointModel::default_android(),
            Duration::from_secs(5),
        );
        assert_eq!(result.flows.len(), 1);
        assert_eq!(result.flows[0].sink.position, "receiver");
    }

    #[test]
    fn sanitizer_override_blocks_external_summary() {
        let text = "\
class a.A extends java.lang.Object {
  method void onSensorChanged(android.hardware.SensorEvent) {
    local float[] v
    local java.lang.String m
    v = p0.android.hardware.SensorEvent#values
    m = invoke static a.Scrub#anonymize(float[]) with (v)
    invoke static android.util.Log#v(java.lang.String,java.lang.String) with (\"t\", m)
    return
  }
}
";
        let program = parse_program(text).unwrap();
        let with_default = analyze(
            &program,
            &default_sensor_config(),
            &EntryPointModel::default_android(),
            Duration::from_secs(5),
        );
        assert_eq!(
            with_default.flows.len(),
            1,
            "plain external call propagates taint"
        );

        let mut config = default_sensor_config();
        config.sanitizers.insert(crate::ir::MethodSig::new(
            "a.Scrub",
            "anonymize",
            vec!["float[]".into()],
        ));
        let with_sanitizer = analyze(
            &program,
            &config,
            &EntryPointModel::default_android(),
            Duration::from_secs(5),
        );
        assert!(
            with_sanitizer.flows.is_empty(),
            "sanitized return carries no taint"
        );
    }
}
