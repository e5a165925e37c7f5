//! Declarative source, sink and sensor-type configuration.
//!
//! The file format is line-oriented and compatible with the common
//! `SourcesAndSinks.txt` convention:
//!
//! ```text
//! <android.hardware.Sensor: java.lang.String getName()> -> _SOURCE_
//! <android.hardware.SensorEvent: float[] values> -> _SOURCE_
//! <android.util.Log: int v(java.lang.String,java.lang.String)> -> _SINK_ positions(arg1)
//! ```
//!
//! Members with a parameter list are methods; members without one are fields.
//! The short form `Class#field -> _SOURCE_` is accepted for fields. A sink may
//! restrict which positions count as leaking via `positions(receiver, arg0, ...)`;
//! without it every argument position is sensitive. `_SANITIZER_` marks an
//! external method whose return value never carries taint. A `sensors:` line
//! starts a section of `constant,name,category` rows replacing the built-in
//! sensor type table.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

use crate::ir::{FieldRef, IRStatement, MethodSig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfigErrorKind {
    Malformed,
    DuplicateEntry,
    PositionOutOfArity,
    SourceSinkOverlap,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("line {line}: {message}")]
pub struct ConfigError {
    pub kind: ConfigErrorKind,
    pub line: usize,
    pub message: String,
}

impl ConfigError {
    fn new(kind: ConfigErrorKind, line: usize, message: impl Into<String>) -> Self {
        Self {
            kind,
            line,
            message: message.into(),
        }
    }
}

/// A method whose return value is sensitive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MethodSourceSpec {
    pub sig: MethodSig,
    pub ret: String,
}

/// A field whose read yields sensitive data.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldSourceSpec {
    pub field: FieldRef,
    pub declared_type: Option<String>,
}

impl FieldSourceSpec {
    /// Whether reads of this field produce an array value (elements tainted).
    pub fn is_array_typed(&self) -> bool {
        self.declared_type
            .as_deref()
            .is_some_and(|t| t.ends_with("[]"))
    }
}

/// Argument slot of a call that leaks when it receives tainted data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SinkPosition {
    Receiver,
    Arg(usize),
}

impl fmt::Display for SinkPosition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SinkPosition::Receiver => write!(f, "receiver"),
            SinkPosition::Arg(i) => write!(f, "arg{i}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SinkSpec {
    pub sig: MethodSig,
    pub ret: String,
    pub tainted_positions: Vec<SinkPosition>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SensorCategory {
    Motion,
    Position,
    Environment,
}

impl fmt::Display for SensorCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SensorCategory::Motion => write!(f, "Motion"),
            SensorCategory::Position => write!(f, "Position"),
            SensorCategory::Environment => write!(f, "Environment"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SensorTypeEntry {
    pub constant: i64,
    pub name: String,
    pub category: SensorCategory,
}

/// Mapping between sensor type constants, symbolic names and categories.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SensorTypeTable {
    pub entries: Vec<SensorTypeEntry>,
}

/// The `TYPE_ALL` wildcard passed to `getSensorList` to enumerate every sensor.
pub const TYPE_ALL: i64 = -1;

impl SensorTypeTable {
    pub fn lookup_constant(&self, constant: i64) -> Option<&SensorTypeEntry> {
        self.entries.iter().find(|e| e.constant == constant)
    }

    pub fn lookup_name(&self, name: &str) -> Option<&SensorTypeEntry> {
        self.entries
            .iter()
            .find(|e| e.name == name || display_name(&e.name) == name)
    }

    pub fn is_wildcard(constant: i64) -> bool {
        constant == TYPE_ALL
    }

    /// Table of the sensor types the platform exposes, keyed by the SDK
    /// `Sensor.TYPE_*` constants.
    pub fn builtin() -> Self {
        use SensorCategory::*;
        let raw: &[(i64, &str, SensorCategory)] = &[
            (1, "TYPE_ACCELEROMETER", Motion),
            (2, "TYPE_MAGNETIC_FIELD", Position),
            (3, "TYPE_ORIENTATION", Position),
            (4, "TYPE_GYROSCOPE", Motion),
            (5, "TYPE_LIGHT", Environment),
            (6, "TYPE_PRESSURE", Environment),
            (7, "TYPE_TEMPERATURE", Environment),
            (8, "TYPE_PROXIMITY", Position),
            (9, "TYPE_GRAVITY", Motion),
            (10, "TYPE_LINEAR_ACCELERATION", Motion),
            (11, "TYPE_ROTATION_VECTOR", Motion),
            (12, "TYPE_RELATIVE_HUMIDITY", Environment),
            (13, "TYPE_AMBIENT_TEMPERATURE", Environment),
            (14, "TYPE_MAGNETIC_FIELD_UNCALIBRATED", Position),
            (15, "TYPE_GAME_ROTATION_VECTOR", Position),
            (17, "TYPE_SIGNIFICANT_MOTION", Motion),
            (18, "TYPE_STEP_DETECTOR", Motion),
            (19, "TYPE_STEP_COUNTER", Motion),
            (20, "TYPE_GEOMAGNETIC_ROTATION_VECTOR", Position),
        ];
        Self {
            entries: raw
                .iter()
                .map(|(constant, name, category)| SensorTypeEntry {
                    constant: *constant,
                    name: (*name).to_string(),
                    category: *category,
                })
                .collect(),
        }
    }
}

/// Short human-readable form of a symbolic sensor name: `TYPE_PRESSURE` -> `PRESSURE`.
pub fn display_name(symbolic: &str) -> &str {
    symbolic.strip_prefix("TYPE_").unwrap_or(symbolic)
}

/// Role of a statement under a configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StatementRole {
    MethodSource(usize),
    FieldSource(usize),
    Sink {
        index: usize,
        positions: Vec<SinkPosition>,
    },
    None,
}

/// Immutable source/sink configuration; shareable across analysis tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSinkConfig {
    pub method_sources: Vec<MethodSourceSpec>,
    pub field_sources: Vec<FieldSourceSpec>,
    pub sinks: Vec<SinkSpec>,
    pub sanitizers: BTreeSet<MethodSig>,
    pub sensor_table: SensorTypeTable,
    pub warnings: Vec<String>,
}

impl SourceSinkConfig {
    fn empty() -> Self {
        Self {
            method_sources: Vec::new(),
            field_sources: Vec::new(),
            sinks: Vec::new(),
            sanitizers: BTreeSet::new(),
            sensor_table: SensorTypeTable::builtin(),
            warnings: Vec::new(),
        }
    }

    pub fn method_source_index(&self, sig: &MethodSig) -> Option<usize> {
        self.method_sources.iter().position(|s| &s.sig == sig)
    }

    pub fn field_source_index(&self, field: &FieldRef) -> Option<usize> {
        self.field_sources.iter().position(|s| &s.field == field)
    }

    pub fn sink_index(&self, sig: &MethodSig) -> Option<usize> {
        self.sinks.iter().position(|s| &s.sig == sig)
    }

    pub fn is_sanitizer(&self, sig: &MethodSig) -> bool {
        self.sanitizers.contains(sig)
    }
}

/// Classify a statement as source, sink or neither. Pure function of the
/// configuration and the statement.
pub fn classify_statement(config: &SourceSinkConfig, stmt: &IRStatement) -> StatementRole {
    match stmt {
        IRStatement::LoadField { field, .. } => match config.field_source_index(field) {
            Some(i) => StatementRole::FieldSource(i),
            None => StatementRole::None,
        },
        IRStatement::Invoke { result, sig, .. } => {
            if let Some(i) = config.sink_index(sig) {
                return StatementRole::Sink {
                    index: i,
                    positions: config.sinks[i].tainted_positions.clone(),
                };
            }
            if result.is_some() {
                if let Some(i) = config.method_source_index(sig) {
                    return StatementRole::MethodSource(i);
                }
            }
            StatementRole::None
        }
        _ => StatementRole::None,
    }
}

fn all_arg_positions(arity: usize) -> Vec<SinkPosition> {
    (0..arity).map(SinkPosition::Arg).collect()
}

/// Built-in configuration: the sensitive sensor sources (2 fields, 9 getter
/// methods on `Sensor`/`SensorManager`) plus standard logging, SMS, network
/// and file-write sinks, with the full sensor type table.
pub fn default_sensor_config() -> SourceSinkConfig {
    let mut config = SourceSinkConfig::empty();

    config.field_sources = vec![
        FieldSourceSpec {
            field: FieldRef::new("android.hardware.SensorEvent", "values"),
            declared_type: Some("float[]".into()),
        },
        FieldSourceSpec {
            field: FieldRef::new("android.hardware.SensorEvent", "timestamp"),
            declared_type: Some("long".into()),
        },
    ];

    let sensor = "android.hardware.Sensor";
    let manager = "android.hardware.SensorManager";
    let method = |class: &str, ret: &str, name: &str, params: &[&str]| MethodSourceSpec {
        sig: MethodSig::new(class, name, params.iter().map(|p| p.to_string()).collect()),
        ret: ret.into(),
    };
    config.method_sources = vec![
        method(sensor, "java.lang.String", "getName", &[]),
        method(sensor, "java.lang.String", "getVendor", &[]),
        method(sensor, "int", "getVersion", &[]),
        method(
            manager,
            "android.hardware.Sensor",
            "getDefaultSensor",
            &["int"],
        ),
        method(sensor, "float", "getMaximumRange", &[]),
        method(manager, "java.util.List", "getSensorList", &["int"]),
        method(sensor, "int", "getType", &[]),
        method(sensor, "float", "getResolution", &[]),
        method(sensor, "float", "getPower", &[]),
    ];

    let string2 = &["java.lang.String", "java.lang.String"];
    let log_sink = |name: &str| SinkSpec {
        sig: MethodSig::new(
            "android.util.Log",
            name,
            string2.iter().map(|p| p.to_string()).collect(),
        ),
        ret: "int".into(),
        // the message argument; log tags are constant identifiers
        tainted_positions: vec![SinkPosition::Arg(1)],
    };
    let sink = |class: &str, ret: &str, name: &str, params: &[&str]| {
        let params: Vec<String> = params.iter().map(|p| p.to_string()).collect();
        let positions = all_arg_positions(params.len());
        SinkSpec {
            sig: MethodSig::new(class, name, params),
            ret: ret.into(),
            tainted_positions: positions,
        }
    };
    config.sinks = vec![
        log_sink("v"),
        log_sink("d"),
        log_sink("i"),
        log_sink("w"),
        log_sink("e"),
        sink(
            "android.telephony.SmsManager",
            "void",
            "sendTextMessage",
            &[
                "java.lang.String",
                "java.lang.String",
                "java.lang.String",
                "android.app.PendingIntent",
                "android.app.PendingIntent",
            ],
        ),
        sink("java.io.OutputStream", "void", "write", &["byte[]"]),
        sink("java.io.FileOutputStream", "void", "write", &["byte[]"]),
        sink("java.io.Writer", "void", "write", &["java.lang.String"]),
        sink(
            "java.net.DatagramSocket",
            "void",
            "send",
            &["java.net.DatagramPacket"],
        ),
    ];

    validate(&mut config, 0).expect("built-in config is valid");
    config
}

fn validate(config: &mut SourceSinkConfig, _line: usize) -> Result<(), ConfigError> {
    for sink in &config.sinks {
        if config.method_sources.iter().any(|s| s.sig == sink.sig) {
            return Err(ConfigError::new(
                ConfigErrorKind::SourceSinkOverlap,
                0,
                format!("`{}` is declared as both source and sink", sink.sig),
            ));
        }
    }
    if config.method_sources.is_empty() && config.field_sources.is_empty() {
        config
            .warnings
            .push("configuration declares no sources".into());
    }
    if config.sinks.is_empty() {
        config
            .warnings
            .push("configuration declares no sinks".into());
    }
    Ok(())
}

enum Member {
    Method {
        sig: MethodSig,
        ret: String,
    },
    Field {
        field: FieldRef,
        declared_type: Option<String>,
    },
}

/// Parse the `<Class: type member>` form.
fn parse_angle_member(body: &str, line_no: usize) -> Result<Member, ConfigError> {
    let malformed =
        |msg: &str| ConfigError::new(ConfigErrorKind::Malformed, line_no, msg.to_string());
    let Some(colon) = body.find(':') else {
        return Err(malformed("expected `<Class: type member>`"));
    };
    let class = body[..colon].trim();
    let rest = body[colon + 1..].trim();
    if class.is_empty() {
        return Err(malformed("empty class name"));
    }
    let Some(space) = rest.find(' ') else {
        return Err(malformed("expected a type and a member name"));
    };
    let ty = rest[..space].trim().to_string();
    let member = rest[space + 1..].trim();
    if let Some(paren) = member.find('(') {
        let name = member[..paren].trim();
        let Some(close) = member.rfind(')') else {
            return Err(malformed("unterminated parameter list"));
        };
        let params_text = &member[paren + 1..close];
        let params: Vec<String> = if params_text.trim().is_empty() {
            Vec::new()
        } else {
            params_text
                .split(',')
                .map(|p| p.trim().to_string())
                .collect()
        };
        if name.is_empty() || params.iter().any(|p| p.is_empty()) {
            return Err(malformed("malformed method member"));
        }
        Ok(Member::Method {
            sig: MethodSig::new(class, name, params),
            ret: ty,
        })
    } else {
        if member.is_empty() || member.contains(' ') {
            return Err(malformed("malformed field member"));
        }
        Ok(Member::Field {
            field: FieldRef::new(class, member),
            declared_type: Some(ty),
        })
    }
}

fn parse_positions(
    text: &str,
    arity: usize,
    line_no: usize,
) -> Result<Vec<SinkPosition>, ConfigError> {
    let malformed = |msg: String| ConfigError::new(ConfigErrorKind::Malformed, line_no, msg);
    let inner = text
        .strip_prefix("positions(")
        .and_then(|t| t.strip_suffix(')'))
        .ok_or_else(|| malformed(format!("expected `positions(...)`, found `{text}`")))?;
    let mut positions = Vec::new();
    for part in inner.split(',') {
        let part = part.trim();
        let pos = if part == "receiver" {
            SinkPosition::Receiver
        } else if let Some(n) = part.strip_prefix("arg") {
            let i: usize = n
                .parse()
                .map_err(|_| malformed(format!("bad position `{part}`")))?;
            if i >= arity {
                return Err(ConfigError::new(
                    ConfigErrorKind::PositionOutOfArity,
                    line_no,
                    format!("position `arg{i}` exceeds arity {arity}"),
                ));
            }
            SinkPosition::Arg(i)
        } else {
            return Err(malformed(format!("bad position `{part}`")));
        };
        if !positions.contains(&pos) {
            positions.push(pos);
        }
    }
    positions.sort();
    Ok(positions)
}

/// Load a configuration from text. Every line is classified as a method
/// source, field source, sink, sanitizer, sensor table row or comment;
/// diagnostics carry the line number.
pub fn load_config(text: &str) -> Result<SourceSinkConfig, ConfigError> {
    let mut config = SourceSinkConfig::empty();
    let mut sensor_rows: Vec<SensorTypeEntry> = Vec::new();
    let mut in_sensors = false;
    let mut saw_sensor_section = false;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with('%') {
            continue;
        }
        if line == "sensors:" {
            in_sensors = true;
            saw_sensor_section = true;
            continue;
        }
        if in_sensors {
            let parts: Vec<&str> = line.split(',').map(|p| p.trim()).collect();
            if parts.len() != 3 {
                return Err(ConfigError::new(
                    ConfigErrorKind::Malformed,
                    line_no,
                    "sensor row must be `constant,name,category`",
                ));
            }
            let constant: i64 = parts[0].parse().map_err(|_| {
                ConfigError::new(
                    ConfigErrorKind::Malformed,
                    line_no,
                    format!("bad sensor constant `{}`", parts[0]),
                )
            })?;
            let category = match parts[2] {
                "Motion" => SensorCategory::Motion,
                "Position" => SensorCategory::Position,
                "Environment" => SensorCategory::Environment,
                other => {
                    return Err(ConfigError::new(
                        ConfigErrorKind::Malformed,
                        line_no,
                        format!("unknown sensor category `{other}`"),
                    ))
                }
            };
            if sensor_rows.iter().any(|e| e.constant == constant) {
                return Err(ConfigError::new(
                    ConfigErrorKind::DuplicateEntry,
                    line_no,
                    format!("duplicate sensor constant `{constant}`"),
                ));
            }
            if sensor_rows.iter().any(|e| e.name == parts[1]) {
                return Err(ConfigError::new(
                    ConfigErrorKind::DuplicateEntry,
                    line_no,
                    format!("duplicate sensor name `{}`", parts[1]),
                ));
            }
            sensor_rows.push(SensorTypeEntry {
                constant,
                name: parts[1].to_string(),
                category,
            });
            continue;
        }

        let Some(arrow) = line.find("->") else {
            return Err(ConfigError::new(
                ConfigErrorKind::Malformed,
                line_no,
                "expected `<member> -> _SOURCE_|_SINK_|_SANITIZER_`",
            ));
        };
        let member_text = line[..arrow].trim();
        let verdict_text = line[arrow + 2..].trim();

        let member = if let Some(stripped) = member_text.strip_prefix('<') {
            let Some(body) = stripped.strip_suffix('>') else {
                return Err(ConfigError::new(
                    ConfigErrorKind::Malformed,
                    line_no,
                    "unterminated `<...>` member",
                ));
            };
            parse_angle_member(body, line_no)?
        } else if member_text.contains('#') && !member_text.contains('(') {
            let hash = member_text.find('#').unwrap();
            let (class, field) = (&member_text[..hash], &member_text[hash + 1..]);
            if class.is_empty() || field.is_empty() || field.contains('#') {
                return Err(ConfigError::new(
                    ConfigErrorKind::Malformed,
                    line_no,
                    format!("malformed field `{member_text}`"),
                ));
            }
            Member::Field {
                field: FieldRef::new(class, field),
                declared_type: None,
            }
        } else {
            return Err(ConfigError::new(
                ConfigErrorKind::Malformed,
                line_no,
                format!("cannot parse member `{member_text}`"),
            ));
        };

        let (verdict, extra) = match verdict_text.split_once(char::is_whitespace) {
            Some((v, rest)) => (v.trim(), rest.trim()),
            None => (verdict_text, ""),
        };

        match (member, verdict) {
            (Member::Method { sig, ret }, "_SOURCE_") => {
                if config.method_sources.iter().any(|s| s.sig == sig) {
                    return Err(ConfigError::new(
                        ConfigErrorKind::DuplicateEntry,
                        line_no,
                        format!("duplicate method source `{sig}`"),
                    ));
                }
                config.method_sources.push(MethodSourceSpec { sig, ret });
            }
            (
                Member::Field {
                    field,
                    declared_type,
                },
                "_SOURCE_",
            ) => {
                if config.field_sources.iter().any(|s| s.field == field) {
                    return Err(ConfigError::new(
                        ConfigErrorKind::DuplicateEntry,
                        line_no,
                        format!("duplicate field source `{field}`"),
                    ));
                }
                config.field_sources.push(FieldSourceSpec {
                    field,
                    declared_type,
                });
            }
            (Member::Method { sig, ret }, "_SINK_") => {
                if config.sinks.iter().any(|s| s.sig == sig) {
                    return Err(ConfigError::new(
                        ConfigErrorKind::DuplicateEntry,
                        line_no,
                        format!("duplicate sink `{sig}`"),
                    ));
                }
                let positions = if extra.is_empty() {
                    all_arg_positions(sig.params.len())
                } else {
                    parse_positions(extra, sig.params.len(), line_no)?
                };
                config.sinks.push(SinkSpec {
                    sig,
                    ret,
                    tainted_positions: positions,
                });
            }
            (Member::Method { sig, .. }, "_SANITIZER_") => {
                config.sanitizers.insert(sig);
            }
            (Member::Field { .. }, "_SINK_") => {
                return Err(ConfigError::new(
                    ConfigErrorKind::Malformed,
                    line_no,
                    "fields cannot be sinks",
                ));
            }
            (_, other) => {
                return Err(ConfigError::new(
                    ConfigErrorKind::Malformed,
                    line_no,
                    format!("unknown classification `{other}`"),
                ));
            }
        }
    }

    if saw_sensor_section {
        config.sensor_table = SensorTypeTable {
            entries: sensor_rows,
        };
    }
    validate(&mut config, 0)?;
    Ok(config)
}

/// Canonical text form; `load_config(print_config(c))` equals `c`.
pub fn print_config(config: &SourceSinkConfig) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    for s in &config.field_sources {
        match &s.declared_type {
            Some(ty) => writeln!(
                out,
                "<{}: {} {}> -> _SOURCE_",
                s.field.class_name, ty, s.field.field_name
            )
            .unwrap(),
            None => writeln!(out, "{} -> _SOURCE_", s.field).unwrap(),
        }
    }
    for s in &config.method_sources {
        writeln!(
            out,
            "<{}: {} {}({})> -> _SOURCE_",
            s.sig.class_name,
            s.ret,
            s.sig.name,
            s.sig.params.join(",")
        )
        .unwrap();
    }
    for s in &config.sinks {
        let positions: Vec<String> = s.tainted_positions.iter().map(|p| p.to_string()).collect();
        writeln!(
            out,
            "<{}: {} {}({})> -> _SINK_ positions({})",
            s.sig.class_name,
            s.ret,
            s.sig.name,
            s.sig.params.join(","),
            positions.join(",")
        )
        .unwrap();
    }
    for sig in &config.sanitizers {
        writeln!(
            out,
            "<{}: void {}({})> -> _SANITIZER_",
            sig.class_name,
            sig.name,
            sig.params.join(",")
        )
        .unwrap();
    }
    writeln!(out, "sensors:").unwrap();
    for e in &config.sensor_table.entries {
        writeln!(out, "{},{},{}", e.constant, e.name, e.category).unwrap();
    }
    out
}
