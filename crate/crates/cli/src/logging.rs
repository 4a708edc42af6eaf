//! JSON-lines logging on stderr.

use std::io::Write;

use serde_json::json;

/// Target whose messages are already JSON objects and pass through verbatim.
pub const EVENT_TARGET: &str = "genb::event";

pub fn init(verbose: bool) {
    let default = if verbose { "debug" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(default))
        .format(|buf, record| {
            if record.target() == EVENT_TARGET {
                return writeln!(buf, "{}", record.args());
            }
            let line = json!({
                "level": record.level().as_str().to_ascii_lowercase(),
                "target": record.target(),
                "msg": record.args().to_string(),
            });
            writeln!(buf, "{line}")
        })
        .try_init()
        .ok();
}

/// Emits one structured event line.
pub fn event(value: serde_json::Value) {
    log::info!(target: EVENT_TARGET, "{value}");
}
