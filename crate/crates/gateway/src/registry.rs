use std::collections::BTreeMap;
use std::sync::Arc;

use crate::backend::ModelBackend;
use crate::endpoint::ServiceEndpoint;
use crate::error::GatewayError;
use crate::http::HttpBackend;

/// A backend selection such as `synth`, `synth:world.json`, `http` or a
/// bare `http://host:port` URL.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackendSpec {
    pub name: String,
    pub arg: Option<String>,
}

impl BackendSpec {
    pub fn parse(text: &str) -> Self {
        let text = text.trim();
        if text.starts_with("http://") || text.starts_with("https://") {
            return BackendSpec {
                name: "http".into(),
                arg: Some(text.to_string()),
            };
        }
        match text.split_once(':') {
            Some((name, arg)) => BackendSpec {
                name: name.to_string(),
                arg: Some(arg.to_string()),
            },
            None => BackendSpec {
                name: text.to_string(),
                arg: None,
            },
        }
    }
}

pub type BackendFactory =
    Arc<dyn Fn(&BackendSpec, &ServiceEndpoint) -> Result<Arc<dyn ModelBackend>, GatewayError> + Send + Sync>;

/// Named backend constructors, selected at runtime.
#[derive(Clone)]
pub struct BackendRegistry {
    factories: BTreeMap<String, BackendFactory>,
}

impl Default for BackendRegistry {
    fn default() -> Self {
        let mut r = BackendRegistry {
            factories: BTreeMap::new(),
        };
        r.register(
            "http",
            Arc::new(|spec: &BackendSpec, ep: &ServiceEndpoint| {
                let mut ep = ep.clone();
                if let Some(url) = &spec.arg {
                    ep.base_url = url.clone();
                }
                Ok(Arc::new(HttpBackend::new(&ep)) as Arc<dyn ModelBackend>)
            }),
        );
        r
    }
}

impl BackendRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, factory: BackendFactory) {
        self.factories.insert(name.to_string(), factory);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }

    pub fn create(&self, spec: &BackendSpec, ep: &ServiceEndpoint) -> Result<Arc<dyn ModelBackend>, GatewayError> {
        let factory = self
            .factories
            .get(&spec.name)
            .ok_or_else(|| GatewayError::UnknownBackend(spec.name.clone()))?;
        factory(spec, ep)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_specs() {
        assert_eq!(BackendSpec::parse("synth").arg, None);
        let s = BackendSpec::parse("synth:/tmp/w.json");
        assert_eq!((s.name.as_str(), s.arg.as_deref()), ("synth", Some("/tmp/w.json")));
        let h = BackendSpec::parse("http://127.0.0.1:9000");
        assert_eq!(h.name, "http");
        assert_eq!(h.arg.as_deref(), Some("http://127.0.0.1:9000"));
    }

    #[test]
    fn unknown_backend() {
        let r = BackendRegistry::new();
        assert!(r.names().any(|n| n == "http"));
        let err = r.create(&BackendSpec::parse("nope"), &ServiceEndpoint::default());
        assert!(matches!(err, Err(GatewayError::UnknownBackend(_))));
    }
}
