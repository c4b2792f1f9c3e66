//! W3C WebDriver client implementing [`AppDriver`] for real browsers.
//!
//! Covers the protocol slice this system needs: session create/delete,
//! navigation, page source, element lookup by CSS selector, click,
//! send-keys, script execution (form submit, synthetic events), screenshot
//! capture, and cookies for observation metadata. Conformance is
//! behavioral, not bit-exact.

use serde_json::{json, Value};

use crate::dom::Selector;
use crate::driver::{AppDriver, DriverError};
use crate::state::{sha256_hex, Action, ActionType, Observation};

const ENTER_KEY: &str = "\u{e007}";

#[derive(Debug, Clone)]
pub struct WebDriverConfig {
    /// WebDriver endpoint, e.g. `http://localhost:9515`.
    pub endpoint: String,
    pub start_url: String,
    /// Per-call deadline; a timeout is a transient driver error.
    pub timeout_ms: u64,
    pub browser_name: String,
}

impl WebDriverConfig {
    pub fn new(endpoint: impl Into<String>, start_url: impl Into<String>) -> WebDriverConfig {
        WebDriverConfig {
            endpoint: endpoint.into(),
            start_url: start_url.into(),
            timeout_ms: 10_000,
            browser_name: "chrome".into(),
        }
    }
}

pub struct WebDriverSession {
    config: WebDriverConfig,
    agent: ureq::Agent,
    session_id: String,
    started: std::time::Instant,
    user_agent: Option<String>,
}

fn map_transport_error(e: ureq::Error) -> DriverError {
    match &e {
        ureq::Error::Timeout(_) => DriverError::Transient(e.to_string()),
        ureq::Error::ConnectionFailed | ureq::Error::Io(_) => {
            DriverError::Unavailable(e.to_string())
        }
        _ => DriverError::Protocol(e.to_string()),
    }
}

impl WebDriverSession {
    /// Create a new browser session and navigate to the start URL.
    pub fn connect(config: WebDriverConfig) -> Result<WebDriverSession, DriverError> {
        let agent_config = ureq::Agent::config_builder()
            .timeout_global(Some(std::time::Duration::from_millis(config.timeout_ms)))
            .build();
        let agent = ureq::Agent::new_with_config(agent_config);
        let mut session = WebDriverSession {
            config,
            agent,
            session_id: String::new(),
            started: std::time::Instant::now(),
            user_agent: None,
        };
        session.open_session()?;
        Ok(session)
    }

    fn open_session(&mut self) -> Result<(), DriverError> {
        let body = json!({
            "capabilities": { "alwaysMatch": { "browserName": self.config.browser_name } }
        });
        let value = self.post_raw("/session", &body)?;
        let session_id = value["value"]["sessionId"]
            .as_str()
            .ok_or_else(|| DriverError::Protocol("session response without sessionId".into()))?;
        self.session_id = session_id.to_string();
        Ok(())
    }

    fn url(&self, path: &str) -> String {
        format!(
            "{}{}",
            self.config.endpoint.trim_end_matches('/'),
            path.replace("{id}", &self.session_id)
        )
    }

    fn post_raw(&self, path: &str, body: &Value) -> Result<Value, DriverError> {
        let mut response = self
            .agent
            .post(&self.url(path))
            .send_json(body)
            .map_err(map_transport_error)?;
        response
            .body_mut()
            .read_json()
            .map_err(|e| DriverError::Protocol(e.to_string()))
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value, DriverError> {
        self.post_raw(path, body)
    }

    fn get(&self, path: &str) -> Result<Value, DriverError> {
        let mut response = self
            .agent
            .get(&self.url(path))
            .call()
            .map_err(map_transport_error)?;
        response
            .body_mut()
            .read_json()
            .map_err(|e| DriverError::Protocol(e.to_string()))
    }

    fn delete(&self, path: &str) -> Result<(), DriverError> {
        self.agent
            .delete(&self.url(path))
            .call()
            .map_err(map_transport_error)?;
        Ok(())
    }

    /// Translate an attribute-based selector into a CSS selector plus an
    /// optional document-order index.
    fn to_css(selector: &str) -> (String, Option<usize>) {
        let parsed = Selector::parse(selector);
        let mut css = String::new();
        if let Some(tag) = &parsed.tag {
            css.push_str(tag);
        }
        if let Some(id) = &parsed.id {
            css.push('#');
            css.push_str(id);
        }
        if let Some(name) = &parsed.name {
            css.push_str(&format!("[name=\"{name}\"]"));
        }
        if css.is_empty() {
            css.push('*');
        }
        (css, parsed.nth)
    }

    fn find_element(&self, selector: &str) -> Result<String, DriverError> {
        let (css, nth) = Self::to_css(selector);
        let body = json!({ "using": "css selector", "value": css });
        let extract_ref = |elem: &Value| -> Option<String> {
            elem.as_object()?
                .values()
                .next()
                .and_then(Value::as_str)
                .map(String::from)
        };
        match nth {
            None => {
                let value = self.post("/session/{id}/element", &body)?;
                extract_ref(&value["value"]).ok_or_else(|| {
                    DriverError::NoSuchElement(format!("{selector:?} matched nothing"))
                })
            }
            Some(k) => {
                let value = self.post("/session/{id}/elements", &body)?;
                let list = value["value"].as_array().cloned().unwrap_or_default();
                list.get(k).and_then(extract_ref).ok_or_else(|| {
                    DriverError::NoSuchElement(format!("{selector:?} has no match #{k}"))
                })
            }
        }
    }

    fn element_post(&self, element: &str, verb: &str, body: &Value) -> Result<(), DriverError> {
        let path = format!("/session/{{id}}/element/{element}/{verb}");
        self.post(&path, body).map(|_| ())
    }

    fn execute_script(&self, script: &str, args: Value) -> Result<Value, DriverError> {
        self.post(
            "/session/{id}/execute/sync",
            &json!({ "script": script, "args": args }),
        )
    }

    fn current_url(&self) -> Result<String, DriverError> {
        let value = self.get("/session/{id}/url")?;
        value["value"]
            .as_str()
            .map(String::from)
            .ok_or_else(|| DriverError::Protocol("url response without value".into()))
    }
}

impl AppDriver for WebDriverSession {
    fn navigate(&mut self, url: &str) -> Result<(), DriverError> {
        self.post("/session/{id}/url", &json!({ "url": url }))
            .map(|_| ())
            .map_err(|e| match e {
                DriverError::Protocol(msg) => DriverError::NavigationFailed(msg),
                other => other,
            })
    }

    fn observe(&mut self) -> Result<Observation, DriverError> {
        let source = self.get("/session/{id}/source")?;
        let page_source = source["value"]
            .as_str()
            .ok_or_else(|| DriverError::Protocol("source response without value".into()))?
            .to_string();
        let url = self.current_url()?;

        let mut metadata = indexmap::IndexMap::new();
        metadata.insert("url".to_string(), url);
        metadata.insert("status".to_string(), "200".to_string());
        if let Ok(cookies) = self.get("/session/{id}/cookie") {
            if let Some(list) = cookies["value"].as_array() {
                let names: Vec<&str> = list
                    .iter()
                    .filter_map(|c| c["name"].as_str())
                    .collect();
                if !names.is_empty() {
                    metadata.insert("cookie_names".to_string(), names.join(";"));
                }
            }
        }
        if let Some(ua) = &self.user_agent {
            metadata.insert("user_agent".to_string(), ua.clone());
        }

        // Screenshots stay opaque: only a content digest is carried.
        let screenshot_ref = self
            .get("/session/{id}/screenshot")
            .ok()
            .and_then(|v| v["value"].as_str().map(|shot| {
                sha256_hex(&[b"statewalk-shot-v1", shot.as_bytes()])
            }));

        Ok(Observation {
            page_source,
            screenshot_ref,
            metadata,
            captured_at: self.now_ms(),
        })
    }

    fn perform(&mut self, action: &Action) -> Result<(), DriverError> {
        match action.action_type {
            ActionType::Navigate => {
                let target = action
                    .payload
                    .as_deref()
                    .ok_or_else(|| DriverError::Protocol("navigate without URL".into()))?;
                self.navigate(target)
            }
            ActionType::Click => {
                let element = self.find_element(&action.target_selector)?;
                self.element_post(&element, "click", &json!({}))
            }
            ActionType::FillField => {
                let element = self.find_element(&action.target_selector)?;
                self.element_post(&element, "clear", &json!({}))?;
                let text = action.payload.clone().unwrap_or_default();
                self.element_post(&element, "value", &json!({ "text": text }))
            }
            ActionType::KeyInput => {
                let element = self.find_element(&action.target_selector)?;
                let key = match action.payload.as_deref() {
                    Some("Enter") | None => ENTER_KEY.to_string(),
                    Some(other) => other.to_string(),
                };
                self.element_post(&element, "value", &json!({ "text": key }))
            }
            ActionType::SubmitForm => {
                let element = self.find_element(&action.target_selector)?;
                self.execute_script(
                    "arguments[0].requestSubmit ? arguments[0].requestSubmit() : arguments[0].submit();",
                    json!([{ "element-6066-11e4-a52e-4f735466cecf": element }]),
                )
                .map(|_| ())
            }
            ActionType::ScriptEvent => {
                let element = self.find_element(&action.target_selector)?;
                let event = action.payload.clone().unwrap_or_else(|| "click".into());
                self.execute_script(
                    "arguments[0].dispatchEvent(new Event(arguments[1], {bubbles: true}));",
                    json!([{ "element-6066-11e4-a52e-4f735466cecf": element }, event]),
                )
                .map(|_| ())
            }
        }
    }

    fn reset(&mut self) -> Result<(), DriverError> {
        let _ = self.delete("/session/{id}");
        self.open_session()?;
        self.navigate(&self.config.start_url.clone())
    }

    fn now_ms(&self) -> u64 {
        self.started.elapsed().as_millis() as u64
    }

    fn set_user_agent(&mut self, user_agent: &str) {
        // The W3C protocol does not switch user agents mid-session; the
        // value is recorded into observation metadata instead.
        self.user_agent = Some(user_agent.to_string());
    }
}

impl Drop for WebDriverSession {
    fn drop(&mut self) {
        if !self.session_id.is_empty() {
            let _ = self.delete("/session/{id}");
        }
    }
}
