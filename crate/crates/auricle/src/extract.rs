//! Lenient extraction of structured blocks from model output.
//!
//! Model responses wrap their JSON payload in prose, code fences, or
//! both. The scanners here look inside fenced blocks first, then the
//! raw text, and return the first parseable value that satisfies the
//! caller's shape check.

use serde_json::Value;

/// First parseable JSON array for which `accept` holds. Fenced blocks
/// are scanned before the raw text.
pub fn first_json_array(text: &str, accept: impl Fn(&[Value]) -> bool) -> Option<Vec<Value>> {
    for region in candidate_regions(text) {
        if let Some(arr) = scan_region_for_array(region, &accept) {
            return Some(arr);
        }
    }
    None
}

/// First parseable JSON object for which `accept` holds.
pub fn first_json_object(
    text: &str,
    accept: impl Fn(&serde_json::Map<String, Value>) -> bool,
) -> Option<serde_json::Map<String, Value>> {
    for region in candidate_regions(text) {
        if let Some(obj) = scan_region_for_object(region, &accept) {
            return Some(obj);
        }
    }
    None
}

/// Regions to scan, in priority order: each fenced block interior, then
/// the full text.
fn candidate_regions(text: &str) -> Vec<&str> {
    let mut regions = Vec::new();
    let segments: Vec<&str> = text.split("```").collect();
    for (i, segment) in segments.iter().enumerate() {
        // Odd segments sit between fence markers.
        if i % 2 == 1 {
            regions.push(strip_fence_tag(segment));
        }
    }
    regions.push(text);
    regions
}

/// Drop a leading language tag such as `json\n`.
fn strip_fence_tag(block: &str) -> &str {
    match block.find('\n') {
        Some(pos) => {
            let first = block[..pos].trim();
            if first.chars().all(|c| c.is_ascii_alphanumeric()) {
                &block[pos + 1..]
            } else {
                block
            }
        }
        None => block,
    }
}

fn scan_region_for_array(region: &str, accept: &impl Fn(&[Value]) -> bool) -> Option<Vec<Value>> {
    for (pos, _) in region.match_indices('[') {
        if let Some(Value::Array(arr)) = parse_prefix(&region[pos..]) {
            if accept(&arr) {
                return Some(arr);
            }
        }
    }
    None
}

fn scan_region_for_object(
    region: &str,
    accept: &impl Fn(&serde_json::Map<String, Value>) -> bool,
) -> Option<serde_json::Map<String, Value>> {
    for (pos, _) in region.match_indices('{') {
        if let Some(Value::Object(obj)) = parse_prefix(&region[pos..]) {
            if accept(&obj) {
                return Some(obj);
            }
        }
    }
    None
}

/// Parse one JSON value from the start of `slice`, ignoring whatever
/// trails it.
fn parse_prefix(slice: &str) -> Option<Value> {
    let mut stream = serde_json::Deserializer::from_str(slice).into_iter::<Value>();
    match stream.next() {
        Some(Ok(value)) => Some(value),
        _ => None,
    }
}
