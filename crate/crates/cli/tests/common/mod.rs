#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_crowdcorr"))
}

pub fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().unwrap()
}

pub fn data(name: &str) -> PathBuf {
    workspace_root().join("data").join(name)
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

pub fn run_ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

/// Runs in `cwd`, so relative output paths recorded in manifests match
/// across runs.
pub fn run_in(cwd: &Path, args: &[&str]) -> Output {
    std::fs::create_dir_all(cwd).unwrap();
    let out = bin().current_dir(cwd).args(args).output().expect("binary runs");
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

pub fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Region table of `side x side` grid cells `g{x}{y}` with equal populations.
pub fn grid_regions(side: usize, population: u64) -> String {
    let mut t = String::from("region_id,name,population,x,y\n");
    for y in 0..side {
        for x in 0..side {
            t += &format!("g{x}{y},cell,{population},{x},{y}\n");
        }
    }
    t
}

/// One line-list row. `care_offset` days after onset, or no care date.
pub fn case_row(
    id: &str,
    region: &str,
    age: f64,
    onset_day: u32,
    care_offset: Option<u32>,
    traveler: bool,
    label: &str,
) -> String {
    let care = care_offset.map_or(String::new(), |d| format!("2020-01-{:02}", onset_day + d));
    format!("{id},{region},{age},F,2020-01-{onset_day:02},{care},{},{label}\n", u8::from(traveler))
}

pub const CASE_HEADER: &str = "case_id,region_id,age,sex,onset_date,care_date,traveler,group_label\n";

/// Schema validation over the keyword subset used by the shipped schemas:
/// type, required, properties, additionalProperties, items, enum, anyOf,
/// minimum, maximum, minLength, maxLength and local `$ref`.
pub fn validate(instance: &Value, schema_name: &str) -> Result<(), String> {
    let path = workspace_root().join("schemas").join(format!("{schema_name}.schema.json"));
    let schema = read_json(&path);
    check(instance, &schema, &schema, "$")
}

fn type_ok(v: &Value, t: &str) -> bool {
    match t {
        "object" => v.is_object(),
        "array" => v.is_array(),
        "string" => v.is_string(),
        "boolean" => v.is_boolean(),
        "null" => v.is_null(),
        "integer" => v.is_i64() || v.is_u64(),
        "number" => v.is_number(),
        _ => false,
    }
}

fn check(v: &Value, schema: &Value, root: &Value, at: &str) -> Result<(), String> {
    if let Some(r) = schema.get("$ref").and_then(Value::as_str) {
        let name = r.strip_prefix("#/$defs/").ok_or_else(|| format!("unsupported $ref {r}"))?;
        return check(v, &root["$defs"][name], root, at);
    }
    if let Some(any) = schema.get("anyOf").and_then(Value::as_array) {
        if !any.iter().any(|s| check(v, s, root, at).is_ok()) {
            return Err(format!("{at}: matches no anyOf branch"));
        }
    }
    if let Some(t) = schema.get("type") {
        let ok = match t {
            Value::String(t) => type_ok(v, t),
            Value::Array(ts) => ts.iter().filter_map(Value::as_str).any(|t| type_ok(v, t)),
            _ => true,
        };
        if !ok {
            return Err(format!("{at}: expected type {t}, got {v}"));
        }
    }
    if let Some(e) = schema.get("enum").and_then(Value::as_array) {
        if !e.contains(v) {
            return Err(format!("{at}: {v} not in enum"));
        }
    }
    if let Some(x) = v.as_f64() {
        if let Some(min) = schema.get("minimum").and_then(Value::as_f64) {
            if x < min {
                return Err(format!("{at}: {x} < minimum {min}"));
            }
        }
        if let Some(max) = schema.get("maximum").and_then(Value::as_f64) {
            if x > max {
                return Err(format!("{at}: {x} > maximum {max}"));
            }
        }
    }
    if let Some(text) = v.as_str() {
        let len = text.chars().count() as u64;
        if schema.get("minLength").and_then(Value::as_u64).is_some_and(|m| len < m)
            || schema.get("maxLength").and_then(Value::as_u64).is_some_and(|m| len > m)
        {
            return Err(format!("{at}: string length {len} out of bounds"));
        }
    }
    if let Some(obj) = v.as_object() {
        for key in schema.get("required").and_then(Value::as_array).into_iter().flatten() {
            let key = key.as_str().unwrap();
            if !obj.contains_key(key) {
                return Err(format!("{at}: missing required `{key}`"));
            }
        }
        let props = schema.get("properties").and_then(Value::as_object);
        for (k, val) in obj {
            match props.and_then(|p| p.get(k)) {
                Some(sub) => check(val, sub, root, &format!("{at}.{k}"))?,
                None if schema.get("additionalProperties") == Some(&Value::Bool(false)) => {
                    return Err(format!("{at}: unexpected property `{k}`"));
                }
                None => {}
            }
        }
    }
    if let (Some(items), Some(arr)) = (schema.get("items"), v.as_array()) {
        for (i, val) in arr.iter().enumerate() {
            check(val, items, root, &format!("{at}[{i}]"))?;
        }
    }
    Ok(())
}
