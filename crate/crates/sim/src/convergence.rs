use colier_core::persist::document_value;
use colier_core::SessionDocument;
use serde_json::Value;
use sha2::{Digest, Sha256};

/// Hex SHA-256 of the canonical serialization.
pub fn document_hash(doc: &SessionDocument) -> String {
    hex::encode(Sha256::digest(doc.canonical_bytes()))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Divergence {
    /// Index of the first replica that differs from the server.
    pub client: usize,
    /// First differing location, e.g. `layers[0].opacity`.
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Convergence {
    pub converged: bool,
    pub divergence: Option<Divergence>,
}

/// Byte-compares every replica with the server document. Holds vacuously
/// for no replicas.
pub fn check_convergence(server: &SessionDocument, clients: &[&SessionDocument]) -> Convergence {
    let expected = server.canonical_bytes();
    let Some(client) = clients.iter().position(|c| c.canonical_bytes() != expected) else {
        return Convergence { converged: true, divergence: None };
    };
    let path = first_difference(&document_value(server), &document_value(clients[client]), String::new())
        .unwrap_or_default();
    Convergence { converged: false, divergence: Some(Divergence { client, path }) }
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_owned()
    } else {
        format!("{path}.{key}")
    }
}

fn first_difference(a: &Value, b: &Value, path: String) -> Option<String> {
    match (a, b) {
        (Value::Object(x), Value::Object(y)) => {
            for (k, v) in x {
                match y.get(k) {
                    Some(w) => {
                        if let Some(p) = first_difference(v, w, join(&path, k)) {
                            return Some(p);
                        }
                    }
                    None => return Some(join(&path, k)),
                }
            }
            y.keys().find(|k| !x.contains_key(*k)).map(|k| join(&path, k))
        }
        (Value::Array(x), Value::Array(y)) => {
            for (i, (v, w)) in x.iter().zip(y).enumerate() {
                if let Some(p) = first_difference(v, w, format!("{path}[{i}]")) {
                    return Some(p);
                }
            }
            (x.len() != y.len()).then(|| format!("{path}[{}]", x.len().min(y.len())))
        }
        _ => (a != b).then_some(path),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use colier_core::document::{Layer, LayerId};
    use serde_json::json;

    #[test]
    fn paths_name_the_deepest_difference() {
        let a = json!({"meta": {"w": 1}, "layers": [{"id": "a", "opacity": 1.0}]});
        let b = json!({"meta": {"w": 1}, "layers": [{"id": "a", "opacity": 0.5}]});
        assert_eq!(first_difference(&a, &b, String::new()).as_deref(), Some("layers[0].opacity"));
        let c = json!({"meta": {"w": 1}, "layers": []});
        assert_eq!(first_difference(&a, &c, String::new()).as_deref(), Some("layers[0]"));
        assert_eq!(first_difference(&a, &a, String::new()), None);
        assert_eq!(first_difference(&json!({}), &json!({"x": 1}), String::new()).as_deref(), Some("x"));
    }

    #[test]
    fn identical_and_empty_sets_converge() {
        let mut doc = SessionDocument::new("d", 4, 4, 0);
        doc.layers.push(Layer::new(LayerId::new("a"), "a"));
        let copy = doc.clone();
        assert_eq!(check_convergence(&doc, &[&copy, &copy]), Convergence { converged: true, divergence: None });
        assert!(check_convergence(&doc, &[]).converged);
        assert_eq!(document_hash(&doc), document_hash(&copy));
        assert_eq!(document_hash(&doc).len(), 64);
    }
}
