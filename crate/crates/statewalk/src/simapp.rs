//! Deterministic in-process simulated web applications.
//!
//! A simapp definition declares pages (links, buttons, forms, search boxes,
//! optionally guarded on session variables), transitions keyed by action,
//! and initial session variables. Rendering instantiates a page template
//! into HTML plus metadata, so cart contents and login state visibly alter
//! the DOM. Everything evolves deterministically from (spec, seed, action
//! sequence); transient failures come from a schedule precomputed off the
//! seed, never sampled at call time.
//!
//! Transition action keys: `click:#<id>`, `submit:#<id>`, `key:#<id>`,
//! `nav:<path>`. Guards are emptiness tests on session variables:
//! `cart != ''` or `cart == ''`.

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use thiserror::Error;

use crate::dom::Dom;
use crate::driver::{AppDriver, DriverError};
use crate::state::{sha256_hex, Action, ActionType, Observation};

#[derive(Debug, Error)]
#[error("simapp spec invalid:\n{}", errors.join("\n"))]
pub struct SpecValidationError {
    pub errors: Vec<String>,
}

/// Guard expression: an emptiness test on one session variable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Guard {
    pub var: String,
    /// True for `var != ''`, false for `var == ''`.
    pub nonempty: bool,
}

impl Guard {
    pub fn parse(text: &str) -> Result<Guard, String> {
        let trimmed = text.trim();
        let (lhs, rhs, nonempty) = if let Some((l, r)) = trimmed.split_once("!=") {
            (l, r, true)
        } else if let Some((l, r)) = trimmed.split_once("==") {
            (l, r, false)
        } else {
            return Err(format!("guard {text:?} must use == or !="));
        };
        let lhs = lhs.trim();
        let literal = rhs.trim();
        if literal != "''" && literal != "\"\"" {
            return Err(format!("guard {text:?} must compare against the empty string ''"));
        }
        if lhs.is_empty() || !lhs.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(format!("guard {text:?} has an invalid variable name"));
        }
        Ok(Guard {
            var: lhs.to_string(),
            nonempty,
        })
    }

    pub fn eval(&self, vars: &IndexMap<String, String>) -> bool {
        let value = vars.get(&self.var).map(String::as_str).unwrap_or("");
        !value.is_empty() == self.nonempty
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct LinkSpec {
    pub id: String,
    pub href: String,
    #[serde(default)]
    pub text: String,
    #[serde(default)]
    pub when: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ButtonSpec {
    pub id: String,
    #[serde(default)]
    pub text: String,
    #[serde(default)]
    pub when: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    #[serde(default = "default_field_type", rename = "type")]
    pub field_type: String,
    /// Session variable the field writes when filled.
    #[serde(default)]
    pub var: Option<String>,
}

fn default_field_type() -> String {
    "text".to_string()
}

#[derive(Debug, Clone, Deserialize)]
pub struct FormSpec {
    pub id: String,
    #[serde(default)]
    pub action: String,
    #[serde(default)]
    pub fields: Vec<FieldSpec>,
    #[serde(default)]
    pub when: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct SearchBoxSpec {
    pub id: String,
    pub name: String,
    #[serde(default)]
    pub var: Option<String>,
    #[serde(default)]
    pub when: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct StateSpec {
    pub id: String,
    pub path: String,
    #[serde(default)]
    pub title: String,
    /// Dynamic text with `{var}` interpolation; never structural.
    #[serde(default)]
    pub text: String,
    #[serde(default)]
    pub links: Vec<LinkSpec>,
    #[serde(default)]
    pub buttons: Vec<ButtonSpec>,
    #[serde(default)]
    pub forms: Vec<FormSpec>,
    #[serde(default)]
    pub search_boxes: Vec<SearchBoxSpec>,
    /// Disambiguates direct navigation when several states share a path.
    #[serde(default)]
    pub enter_when: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct TransitionSpec {
    pub from: String,
    /// `click:#id`, `submit:#id`, `key:#id`, or `nav:/path`.
    pub action: String,
    pub to: String,
    #[serde(default)]
    pub when: Option<String>,
    /// Session-variable updates applied when the transition fires.
    #[serde(default)]
    pub set: IndexMap<String, String>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct FlakinessSpec {
    pub probability: f64,
    pub seed: u64,
    /// Action-type names or action-key prefixes; empty means all actions.
    #[serde(default)]
    pub affected: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct SimAppSpec {
    pub name: String,
    pub base_url: String,
    pub initial_state: String,
    #[serde(default)]
    pub session_vars: IndexMap<String, String>,
    /// Metadata key published from a session variable when it is non-empty.
    #[serde(default)]
    pub metadata_vars: IndexMap<String, String>,
    #[serde(default)]
    pub flakiness: Option<FlakinessSpec>,
    #[serde(default)]
    pub action_costs_ms: IndexMap<String, u64>,
    pub states: Vec<StateSpec>,
    #[serde(default)]
    pub transitions: Vec<TransitionSpec>,
}

impl SimAppSpec {
    pub fn state(&self, id: &str) -> Option<&StateSpec> {
        self.states.iter().find(|s| s.id == id)
    }

    pub fn cost_ms(&self, kind: &str) -> u64 {
        if let Some(&cost) = self.action_costs_ms.get(kind) {
            return cost;
        }
        match kind {
            "navigate" => 40,
            "click" => 30,
            "fill" => 10,
            "submit" => 60,
            "key" => 30,
            "script" => 15,
            "observe" => 5,
            "reset" => 25,
            _ => 20,
        }
    }

    /// Transitions leaving a state, in declaration order.
    pub fn transitions_from<'a>(&'a self, state_id: &'a str) -> impl Iterator<Item = &'a TransitionSpec> {
        self.transitions.iter().filter(move |t| t.from == state_id)
    }
}

/// Parse and validate a spec, reporting every problem at once.
pub fn load_spec(text: &str) -> Result<SimAppSpec, SpecValidationError> {
    let spec: SimAppSpec = toml::from_str(text).map_err(|e| SpecValidationError {
        errors: vec![format!("parse error: {e}")],
    })?;
    let mut errors = Vec::new();

    let mut seen_states = Vec::new();
    for state in &spec.states {
        if seen_states.contains(&&state.id) {
            errors.push(format!("duplicate state id {:?}", state.id));
        }
        seen_states.push(&state.id);
        if !state.path.starts_with('/') {
            errors.push(format!("state {:?} path must start with '/'", state.id));
        }
        let mut element_ids = Vec::new();
        let mut check_id = |id: &str| {
            if element_ids.contains(&id.to_string()) {
                errors.push(format!("state {:?} has duplicate element id {id:?}", state.id));
            }
            element_ids.push(id.to_string());
        };
        for link in &state.links {
            check_id(&link.id);
        }
        for button in &state.buttons {
            check_id(&button.id);
        }
        for form in &state.forms {
            check_id(&form.id);
        }
        for sbox in &state.search_boxes {
            check_id(&sbox.id);
        }
        let guards = state
            .links
            .iter()
            .filter_map(|l| l.when.as_deref())
            .chain(state.buttons.iter().filter_map(|b| b.when.as_deref()))
            .chain(state.forms.iter().filter_map(|f| f.when.as_deref()))
            .chain(state.search_boxes.iter().filter_map(|s| s.when.as_deref()))
            .chain(state.enter_when.as_deref());
        for guard_text in guards {
            check_guard(&spec, guard_text, &format!("state {:?}", state.id), &mut errors);
        }
        for form in &state.forms {
            for field in &form.fields {
                if let Some(var) = &field.var {
                    if !spec.session_vars.contains_key(var) {
                        errors.push(format!(
                            "state {:?} form {:?} field {:?} writes undeclared var {var:?}",
                            state.id, form.id, field.name
                        ));
                    }
                }
            }
        }
        for sbox in &state.search_boxes {
            if let Some(var) = &sbox.var {
                if !spec.session_vars.contains_key(var) {
                    errors.push(format!(
                        "state {:?} search box {:?} writes undeclared var {var:?}",
                        state.id, sbox.id
                    ));
                }
            }
        }
    }

    if spec.state(&spec.initial_state).is_none() {
        errors.push(format!("initial_state {:?} is not a declared state", spec.initial_state));
    }

    for t in &spec.transitions {
        if spec.state(&t.from).is_none() {
            errors.push(format!("transition from undeclared state {:?}", t.from));
        }
        if spec.state(&t.to).is_none() {
            errors.push(format!(
                "transition {:?} -> {:?} targets an undeclared state",
                t.from, t.to
            ));
        }
        let well_formed = ["click:#", "submit:#", "key:#"]
            .iter()
            .any(|p| t.action.starts_with(p) && t.action.len() > p.len())
            || (t.action.starts_with("nav:/") && t.action.len() > 4);
        if !well_formed {
            errors.push(format!(
                "transition {:?} -> {:?} has malformed action key {:?}",
                t.from, t.to, t.action
            ));
        }
        if let Some(guard_text) = &t.when {
            check_guard(
                &spec,
                guard_text,
                &format!("transition {:?} -> {:?}", t.from, t.to),
                &mut errors,
            );
        }
        for var in t.set.keys() {
            if !spec.session_vars.contains_key(var) {
                errors.push(format!(
                    "transition {:?} -> {:?} sets undeclared var {var:?}",
                    t.from, t.to
                ));
            }
        }
    }

    for (key, var) in &spec.metadata_vars {
        if !spec.session_vars.contains_key(var) {
            errors.push(format!("metadata key {key:?} maps undeclared var {var:?}"));
        }
    }

    if let Some(flaky) = &spec.flakiness {
        if !(0.0..=1.0).contains(&flaky.probability) {
            errors.push(format!("flakiness probability {} outside [0,1]", flaky.probability));
        }
    }

    if url::Url::parse(&spec.base_url).is_err() {
        errors.push(format!("base_url {:?} is not an absolute URL", spec.base_url));
    }

    if errors.is_empty() {
        Ok(spec)
    } else {
        Err(SpecValidationError { errors })
    }
}

fn check_guard(spec: &SimAppSpec, text: &str, context: &str, errors: &mut Vec<String>) {
    match Guard::parse(text) {
        Ok(guard) => {
            if !spec.session_vars.contains_key(&guard.var) {
                errors.push(format!("{context}: guard references undeclared var {:?}", guard.var));
            }
        }
        Err(e) => errors.push(format!("{context}: {e}")),
    }
}

/// Mutable session over an immutable spec.
#[derive(Debug, Clone)]
pub struct SimSession {
    pub current: String,
    pub vars: IndexMap<String, String>,
    /// Total steps performed; indexes the flakiness schedule and rotates
    /// the session token.
    pub counter: u64,
    /// Synthetic monotonic clock in ms.
    pub clock_ms: u64,
}

impl SimSession {
    pub fn new(spec: &SimAppSpec) -> SimSession {
        SimSession {
            current: spec.initial_state.clone(),
            vars: spec.session_vars.clone(),
            counter: 0,
            clock_ms: 0,
        }
    }
}

fn interpolate(template: &str, vars: &IndexMap<String, String>) -> String {
    let mut out = template.to_string();
    for (key, value) in vars {
        out = out.replace(&format!("{{{key}}}"), value);
    }
    out
}

/// Render the session's current state into an observation.
pub fn render(spec: &SimAppSpec, session: &SimSession) -> Observation {
    let state = spec
        .state(&session.current)
        .expect("session state exists in spec");
    let guard_ok = |when: &Option<String>| {
        when.as_deref()
            .map(|g| Guard::parse(g).map(|g| g.eval(&session.vars)).unwrap_or(false))
            .unwrap_or(true)
    };

    let mut html = String::new();
    html.push_str("<html><head><title>");
    html.push_str(&state.title);
    html.push_str("</title></head><body><h1>");
    html.push_str(&state.title);
    html.push_str("</h1>");
    if !state.text.is_empty() {
        html.push_str("<p>");
        html.push_str(&interpolate(&state.text, &session.vars));
        html.push_str("</p>");
    }
    for link in state.links.iter().filter(|l| guard_ok(&l.when)) {
        html.push_str(&format!(
            "<a id=\"{}\" href=\"{}\">{}</a>",
            link.id, link.href, link.text
        ));
    }
    for button in state.buttons.iter().filter(|b| guard_ok(&b.when)) {
        html.push_str(&format!("<button id=\"{}\">{}</button>", button.id, button.text));
    }
    for sbox in state.search_boxes.iter().filter(|s| guard_ok(&s.when)) {
        html.push_str(&format!(
            "<input type=\"search\" id=\"{}\" name=\"{}\">",
            sbox.id, sbox.name
        ));
    }
    for form in state.forms.iter().filter(|f| guard_ok(&f.when)) {
        html.push_str(&format!("<form id=\"{}\" action=\"{}\">", form.id, form.action));
        for field in &form.fields {
            html.push_str(&format!(
                "<input type=\"{}\" name=\"{}\" id=\"{}-{}\">",
                field.field_type, field.name, form.id, field.name
            ));
        }
        html.push_str("<input type=\"submit\" value=\"Send\"></form>");
    }
    html.push_str("</body></html>");

    let mut metadata = IndexMap::new();
    metadata.insert(
        "url".to_string(),
        format!("{}{}", spec.base_url.trim_end_matches('/'), state.path),
    );
    metadata.insert("status".to_string(), "200".to_string());
    metadata.insert("session_token".to_string(), format!("token-{:06}", session.counter));
    for (key, var) in &spec.metadata_vars {
        let value = session.vars.get(var).map(String::as_str).unwrap_or("");
        if !value.is_empty() {
            metadata.insert(key.clone(), value.to_string());
        }
    }

    Observation {
        screenshot_ref: Some(sha256_hex(&[b"statewalk-shot-v1", html.as_bytes()])),
        page_source: html,
        metadata,
        captured_at: session.clock_ms,
    }
}

/// Flakiness schedule precomputed from the spec and session seeds.
#[derive(Debug, Clone, Default)]
pub struct FlakySchedule {
    flags: Vec<bool>,
    affected: Vec<String>,
}

pub const FLAKY_SCHEDULE_LEN: usize = 65_536;

impl FlakySchedule {
    pub fn from_spec(spec: &SimAppSpec, session_seed: u64) -> FlakySchedule {
        match &spec.flakiness {
            None => FlakySchedule::default(),
            Some(flaky) => {
                let mut rng = ChaCha8Rng::seed_from_u64(flaky.seed ^ session_seed);
                let flags = (0..FLAKY_SCHEDULE_LEN)
                    .map(|_| rng.random::<f64>() < flaky.probability)
                    .collect();
                FlakySchedule {
                    flags,
                    affected: flaky.affected.clone(),
                }
            }
        }
    }

    /// Whether the step consuming schedule slot `slot` fails, for an action
    /// described by (type name, action key).
    pub fn fails(&self, slot: u64, type_name: &str, action_key: &str) -> bool {
        if self.flags.is_empty() {
            return false;
        }
        if !self.flags[(slot as usize) % self.flags.len()] {
            return false;
        }
        self.affected.is_empty()
            || self
                .affected
                .iter()
                .any(|a| a == type_name || action_key.starts_with(a.as_str()))
    }
}

/// Apply one action to a session. The session is updated in place; errors
/// leave it unchanged apart from the consumed schedule slot and clock.
pub fn step(
    spec: &SimAppSpec,
    session: &mut SimSession,
    schedule: &FlakySchedule,
    action: &Action,
) -> Result<(), DriverError> {
    let type_name = action.action_type.to_string();
    session.clock_ms += spec.cost_ms(&type_name);

    let slot = session.counter;
    session.counter += 1;
    if schedule.fails(slot, &type_name, &action.key()) {
        return Err(DriverError::Transient(format!(
            "injected fault at step {slot} for {}",
            action.key()
        )));
    }

    match action.action_type {
        ActionType::Navigate => {
            let target = action.payload.as_deref().unwrap_or("");
            navigate_session(spec, session, target)
        }
        ActionType::FillField => {
            let rendered = render(spec, session);
            let dom = Dom::parse(&rendered.page_source)
                .map_err(|e| DriverError::Protocol(e.to_string()))?;
            let elem = dom
                .resolve(&action.target_selector)
                .map_err(|e| DriverError::NoSuchElement(e.to_string()))?;
            let field_name = elem.attr("name").unwrap_or("").to_string();
            let state = spec.state(&session.current).expect("current state exists");
            let var = state
                .forms
                .iter()
                .flat_map(|f| f.fields.iter())
                .find(|f| f.name == field_name)
                .and_then(|f| f.var.clone())
                .or_else(|| {
                    state
                        .search_boxes
                        .iter()
                        .find(|s| s.name == field_name)
                        .and_then(|s| s.var.clone())
                });
            if let Some(var) = var {
                session
                    .vars
                    .insert(var, action.payload.clone().unwrap_or_default());
            }
            Ok(())
        }
        ActionType::Click | ActionType::SubmitForm | ActionType::KeyInput => {
            let rendered = render(spec, session);
            let dom = Dom::parse(&rendered.page_source)
                .map_err(|e| DriverError::Protocol(e.to_string()))?;
            let elem = dom
                .resolve(&action.target_selector)
                .map_err(|e| DriverError::NoSuchElement(e.to_string()))?;
            let Some(id) = elem.id() else {
                return Ok(()); // anonymous elements never trigger transitions
            };
            let prefix = match action.action_type {
                ActionType::Click => "click",
                ActionType::SubmitForm => "submit",
                _ => "key",
            };
            let key = format!("{prefix}:#{id}");
            apply_transition(spec, session, &key);
            Ok(())
        }
        ActionType::ScriptEvent => {
            // Script events are accepted but never transition.
            Ok(())
        }
    }
}

/// Fire the first matching transition whose guard passes; guarded-but-
/// unsatisfied or missing transitions leave the session unchanged.
fn apply_transition(spec: &SimAppSpec, session: &mut SimSession, key: &str) {
    let transition = spec
        .transitions_from(&session.current)
        .find(|t| t.action == key && guard_passes(&t.when, &session.vars));
    if let Some(t) = transition {
        for (var, value) in &t.set {
            session.vars.insert(var.clone(), value.clone());
        }
        session.current = t.to.clone();
    }
}

fn guard_passes(when: &Option<String>, vars: &IndexMap<String, String>) -> bool {
    when.as_deref()
        .map(|g| Guard::parse(g).map(|g| g.eval(vars)).unwrap_or(false))
        .unwrap_or(true)
}

fn navigate_session(
    spec: &SimAppSpec,
    session: &mut SimSession,
    target: &str,
) -> Result<(), DriverError> {
    let base = url::Url::parse(&spec.base_url)
        .map_err(|e| DriverError::Protocol(format!("bad base_url: {e}")))?;
    let resolved = base
        .join(target)
        .map_err(|e| DriverError::NavigationFailed(format!("{target:?}: {e}")))?;
    if resolved.origin() != base.origin() {
        return Err(DriverError::NavigationFailed(format!(
            "cross-origin navigation to {resolved}"
        )));
    }
    let path = resolved.path().to_string();

    // An explicit nav transition wins; otherwise resolve by path and
    // enter_when guards, in declaration order.
    let key = format!("nav:{path}");
    if spec
        .transitions_from(&session.current)
        .any(|t| t.action == key && guard_passes(&t.when, &session.vars))
    {
        apply_transition(spec, session, &key);
        return Ok(());
    }
    let target_state = spec
        .states
        .iter()
        .filter(|s| s.path == path)
        .find(|s| guard_passes(&s.enter_when, &session.vars));
    match target_state {
        Some(state) => {
            session.current = state.id.clone();
            Ok(())
        }
        None => Err(DriverError::NavigationFailed(format!("no page at {path}"))),
    }
}

/// In-process driver over a simapp.
#[derive(Debug, Clone)]
pub struct SimDriver {
    spec: SimAppSpec,
    session: SimSession,
    schedule: FlakySchedule,
    seed: u64,
    user_agents_seen: Vec<String>,
}

impl SimDriver {
    pub fn new(spec: SimAppSpec, seed: u64) -> SimDriver {
        let session = SimSession::new(&spec);
        let schedule = FlakySchedule::from_spec(&spec, seed);
        SimDriver {
            spec,
            session,
            schedule,
            seed,
            user_agents_seen: Vec::new(),
        }
    }

    pub fn spec(&self) -> &SimAppSpec {
        &self.spec
    }

    pub fn session(&self) -> &SimSession {
        &self.session
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn user_agents_seen(&self) -> &[String] {
        &self.user_agents_seen
    }

    pub fn start_url(&self) -> String {
        let state = self
            .spec
            .state(&self.spec.initial_state)
            .expect("validated spec has an initial state");
        format!("{}{}", self.spec.base_url.trim_end_matches('/'), state.path)
    }
}

impl AppDriver for SimDriver {
    fn navigate(&mut self, url: &str) -> Result<(), DriverError> {
        let action = Action {
            action_type: ActionType::Navigate,
            target_selector: String::new(),
            target_attributes: Default::default(),
            payload: Some(url.to_string()),
            description: format!("navigate {url}"),
        };
        step(&self.spec, &mut self.session, &self.schedule, &action)
    }

    fn observe(&mut self) -> Result<Observation, DriverError> {
        self.session.clock_ms += self.spec.cost_ms("observe");
        Ok(render(&self.spec, &self.session))
    }

    fn perform(&mut self, action: &Action) -> Result<(), DriverError> {
        step(&self.spec, &mut self.session, &self.schedule, action)
    }

    fn reset(&mut self) -> Result<(), DriverError> {
        self.session.clock_ms += self.spec.cost_ms("reset");
        self.session.current = self.spec.initial_state.clone();
        self.session.vars = self.spec.session_vars.clone();
        // Counter and clock stay monotone across resets; they belong to the
        // driver session, not the application state.
        Ok(())
    }

    fn now_ms(&self) -> u64 {
        self.session.clock_ms
    }

    fn set_user_agent(&mut self, user_agent: &str) {
        self.user_agents_seen.push(user_agent.to_string());
    }
}

/// Bundled fixture sources by name.
pub fn bundled_fixture(name: &str) -> Option<&'static str> {
    match name {
        "ecommerce" => Some(include_str!("../fixtures/ecommerce.simapp")),
        "linkmaze" => Some(include_str!("../fixtures/linkmaze.simapp")),
        "flaky" => Some(include_str!("../fixtures/flaky.simapp")),
        _ => None,
    }
}

/// Load a bundled fixture by name, or a spec file from disk.
pub fn load_target(target: &str) -> Result<SimAppSpec, SpecValidationError> {
    if let Some(source) = bundled_fixture(target) {
        return load_spec(source);
    }
    let text = std::fs::read_to_string(target).map_err(|e| SpecValidationError {
        errors: vec![format!("cannot read simapp spec {target:?}: {e}")],
    })?;
    load_spec(&text)
}
