//! Flag / config-file merging.
//!
//! Every subcommand's arguments are a serde-serializable clap struct. A JSON
//! config file may set any of them by field name (`max_epochs` or
//! `max-epochs`); a flag given on the command line always wins, then the
//! file, then the built-in default.

use std::fs;
use std::path::Path;

use clap::parser::ValueSource;
use clap::ArgMatches;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::Failure;

pub fn merge<A: Serialize + DeserializeOwned>(args: A, config: Option<&Path>, matches: &ArgMatches) -> Result<A, Failure> {
    let Some(path) = config else {
        return Ok(args);
    };
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("cannot read config file {}: {e}", path.display())))?;
    let file: Map<String, Value> = serde_json::from_str(&text)
        .map_err(|e| Failure::Usage(format!("config file {} is not a JSON object: {e}", path.display())))?;
    let Value::Object(mut resolved) = serde_json::to_value(&args).expect("arguments serialize") else {
        unreachable!("argument structs serialize to objects")
    };
    for (key, value) in file {
        let id = key.replace('-', "_");
        if id == "config" {
            continue;
        }
        if !resolved.contains_key(&id) {
            eprintln!("warning: config key `{key}` does not apply to this command; ignored");
            continue;
        }
        if matches.value_source(&id) != Some(ValueSource::CommandLine) {
            resolved.insert(id, value);
        }
    }
    serde_json::from_value(Value::Object(resolved))
        .map_err(|e| Failure::Usage(format!("config file {}: {e}", path.display())))
}
