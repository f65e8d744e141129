//! HTTP driver: each test is a fixed sequence of GET requests whose paths
//! contain `{VAR}` placeholders. The test's execution time is the wall-clock
//! sum of the sequence.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{DriverError, TestDriver};
use crate::codec::{InputSpace, TestPoint};
use crate::sim::{oracle_label, ExecutedTest};

/// A placeholder computed from an input variable, e.g. `CN = cat<CID>`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DerivedBinding {
    /// Input variable the value is derived from.
    pub from: String,
    /// Prefix put in front of the source value when no lookup entry matches.
    #[serde(default)]
    pub prefix: String,
    /// Explicit source-value → substituted-value table.
    #[serde(default)]
    pub lookup: BTreeMap<String, String>,
}

impl DerivedBinding {
    fn resolve(&self, raw: &str) -> String {
        self.lookup
            .get(raw)
            .cloned()
            .unwrap_or_else(|| format!("{}{raw}", self.prefix))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpDriverConfig {
    pub base_url: String,
    pub request_template: Vec<String>,
    /// Per-request timeout in seconds.
    #[serde(default = "default_timeout")]
    pub timeout: f64,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub derived: BTreeMap<String, DerivedBinding>,
}

fn default_timeout() -> f64 {
    30.0
}

fn default_threshold() -> f64 {
    crate::sim::DEFAULT_THRESHOLD
}

impl HttpDriverConfig {
    /// The three-request RUBiS template with `CN` derived as `cat<CID>`.
    pub fn rubis(base_url: impl Into<String>) -> Self {
        let mut derived = BTreeMap::new();
        derived.insert(
            "CN".to_owned(),
            DerivedBinding {
                from: "CID".into(),
                prefix: "cat".into(),
                lookup: BTreeMap::new(),
            },
        );
        Self {
            base_url: base_url.into(),
            request_template: vec![
                "/SearchItemsByRegion.php?category={CID}&categoryName={CN}&region={RID}".into(),
                "/ViewItem.php?itemId={IID}".into(),
                "/ViewUserInfo.php?userId={UID}".into(),
            ],
            timeout: default_timeout(),
            threshold: default_threshold(),
            derived,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Segment {
    Literal(String),
    Placeholder(String),
}

fn parse_template(template: &str) -> Result<Vec<Segment>, DriverError> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        if open > 0 {
            out.push(Segment::Literal(rest[..open].to_owned()));
        }
        let close = rest[open..]
            .find('}')
            .ok_or_else(|| DriverError::Config(format!("unclosed placeholder in `{template}`")))?;
        let name = &rest[open + 1..open + close];
        if name.is_empty() {
            return Err(DriverError::Config(format!("empty placeholder in `{template}`")));
        }
        out.push(Segment::Placeholder(name.to_owned()));
        rest = &rest[open + close + 1..];
    }
    if !rest.is_empty() {
        out.push(Segment::Literal(rest.to_owned()));
    }
    Ok(out)
}

/// Percent-encodes everything outside the RFC 3986 unreserved set.
fn url_encode(value: &str) -> String {
    let mut out = String::with_capacity(value.len());
    for b in value.bytes() {
        if b.is_ascii_alphanumeric() || matches!(b, b'-' | b'_' | b'.' | b'~') {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

pub struct HttpDriver {
    config: HttpDriverConfig,
    space: InputSpace,
    templates: Vec<Vec<Segment>>,
    agent: ureq::Agent,
    executions: u64,
}

impl HttpDriver {
    /// Checks that every placeholder resolves to an input variable or a
    /// derived binding over one.
    pub fn new(config: HttpDriverConfig, space: InputSpace) -> Result<Self, DriverError> {
        if config.request_template.is_empty() {
            return Err(DriverError::Config("request template is empty".into()));
        }
        if config.timeout.is_nan() || config.timeout <= 0.0 {
            return Err(DriverError::Config("timeout must be positive".into()));
        }
        let names = space.variable_names();
        for (key, binding) in &config.derived {
            if !names.contains(&binding.from.as_str()) {
                return Err(DriverError::Config(format!(
                    "derived binding `{key}` refers to unknown variable `{}`",
                    binding.from
                )));
            }
        }
        let templates = config
            .request_template
            .iter()
            .map(|t| parse_template(t))
            .collect::<Result<Vec<_>, _>>()?;
        for seg in templates.iter().flatten() {
            if let Segment::Placeholder(name) = seg {
                if !names.contains(&name.as_str()) && !config.derived.contains_key(name) {
                    return Err(DriverError::Config(format!("placeholder `{{{name}}}` is not bound")));
                }
            }
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout)))
            .build()
            .into();
        Ok(Self {
            config,
            space,
            templates,
            agent,
            executions: 0,
        })
    }

    /// Fully substituted request URLs for one test, in template order.
    pub fn urls(&self, point: &TestPoint) -> Result<Vec<String>, DriverError> {
        self.space.check(point)?;
        let raw: BTreeMap<&str, String> = self
            .space
            .variable_names()
            .into_iter()
            .zip(self.space.format_point(point))
            .collect();
        let base = self.config.base_url.trim_end_matches('/');
        Ok(self
            .templates
            .iter()
            .map(|segments| {
                let mut url = base.to_owned();
                for seg in segments {
                    match seg {
                        Segment::Literal(s) => url.push_str(s),
                        Segment::Placeholder(name) => {
                            let value = match raw.get(name.as_str()) {
                                Some(v) => v.clone(),
                                None => {
                                    let b = &self.config.derived[name];
                                    b.resolve(&raw[b.from.as_str()])
                                }
                            };
                            url.push_str(&url_encode(&value));
                        }
                    }
                }
                url
            })
            .collect())
    }

    /// Issues the template's requests sequentially and labels the total time.
    pub fn execute_http(&self, point: &TestPoint) -> Result<ExecutedTest, DriverError> {
        let urls = self.urls(point)?;
        let mut elapsed = 0.0;
        for (request, url) in urls.iter().enumerate() {
            let start = Instant::now();
            let outcome = self
                .agent
                .get(url)
                .call()
                .and_then(|mut resp| resp.body_mut().read_to_vec().map(|_| ()));
            elapsed += start.elapsed().as_secs_f64();
            if let Err(e) = outcome {
                return Err(DriverError::Request {
                    request,
                    url: url.clone(),
                    message: e.to_string(),
                    partial_time: elapsed,
                });
            }
        }
        Ok(ExecutedTest {
            point: point.clone(),
            t_exe: elapsed,
            label: oracle_label(elapsed, self.config.threshold),
        })
    }
}

impl TestDriver for HttpDriver {
    fn execute(&mut self, points: &[TestPoint]) -> Vec<Result<ExecutedTest, DriverError>> {
        points
            .iter()
            .map(|p| {
                self.executions += 1;
                self.execute_http(p)
            })
            .collect()
    }

    fn executions(&self) -> u64 {
        self.executions
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::default_benchmark;

    #[test]
    fn rubis_template_substitution() {
        let space = default_benchmark(1).space;
        let d = HttpDriver::new(HttpDriverConfig::rubis("http://sut:8080/rubis/"), space).unwrap();
        let urls = d.urls(&TestPoint::new(vec![7, 12, 3, 49])).unwrap();
        assert_eq!(
            urls,
            vec![
                "http://sut:8080/rubis/SearchItemsByRegion.php?category=7&categoryName=cat7&region=12",
                "http://sut:8080/rubis/ViewItem.php?itemId=3",
                "http://sut:8080/rubis/ViewUserInfo.php?userId=49",
            ]
        );
        assert!(d.urls(&TestPoint::new(vec![0, 1, 1, 1])).is_err());
    }

    #[test]
    fn lookup_table_and_encoding() {
        let space = default_benchmark(1).space;
        let mut cfg = HttpDriverConfig::rubis("http://h");
        cfg.derived
            .get_mut("CN")
            .unwrap()
            .lookup
            .insert("2".into(), "Books & Media".into());
        let d = HttpDriver::new(cfg, space).unwrap();
        let urls = d.urls(&TestPoint::new(vec![2, 1, 1, 1])).unwrap();
        assert!(urls[0].contains("categoryName=Books%20%26%20Media"), "{}", urls[0]);
    }

    #[test]
    fn unbound_placeholders_are_rejected() {
        let space = default_benchmark(1).space;
        let mut cfg = HttpDriverConfig::rubis("http://h");
        cfg.derived.clear();
        assert!(matches!(
            HttpDriver::new(cfg, space.clone()),
            Err(DriverError::Config(_))
        ));
        let mut cfg = HttpDriverConfig::rubis("http://h");
        cfg.request_template.push("/x?{oops".into());
        assert!(matches!(HttpDriver::new(cfg, space), Err(DriverError::Config(_))));
    }

    #[test]
    fn parse_template_segments() {
        assert_eq!(
            parse_template("/a?x={X}&y={Y}").unwrap(),
            vec![
                Segment::Literal("/a?x=".into()),
                Segment::Placeholder("X".into()),
                Segment::Literal("&y=".into()),
                Segment::Placeholder("Y".into()),
            ]
        );
        assert!(parse_template("/{}").is_err());
    }
}
